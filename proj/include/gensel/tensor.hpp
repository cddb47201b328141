#pragma once

// Dense row-major float64 tensors with tape-free reverse-mode differentiation.
//
// Every op records its parents and a backward closure when gradient recording
// is enabled on the calling thread and at least one input requires a gradient.
// `backward()` walks the recorded graph once; calling it again on any node of
// a consumed graph is a ContractError.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gensel/errors.hpp"

namespace gensel {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view. Only valid on leaves (tensors without a recorded history).
  std::span<double> data_mut();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  void backward() const;

  /// Same values, no history, no gradient requirement.
  Tensor detach() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Row-major boolean visibility matrix; `allowed(i, j)` means query i may see key j.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allow;

  bool allowed(std::size_t i, std::size_t j) const { return allow[i * cols + j] != 0; }
  static AttentionMask causal(std::size_t n);
  static AttentionMask all(std::size_t rows, std::size_t cols);
};

// Elementwise binary ops. `b` may be a scalar or have a shape equal to a
// trailing suffix of `a`'s shape; it is broadcast over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor abs(const Tensor& x);

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

/// y = xW + b over the last axis of x. `b` may be undefined (no bias).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Max-shifted softmax along `axis` (negative values count from the back).
Tensor softmax(const Tensor& x, int axis);

/// Normalizes over the last axis with epsilon inside the square root.
inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

/// Valid cross-correlation, no padding. x: [C_in,H,W], kernels: [C_out,C_in,k,k].
Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, const Tensor& bias = Tensor());

/// Scaled dot-product attention split over `heads` column groups.
/// Q: [L_q,D], K and V: [L_k,D]. Masked keys get exactly zero weight; a query
/// with no visible key produces a zero output row.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const AttentionMask* mask = nullptr);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [L,D] -> [D]
Tensor mean_rows(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor l1(const Tensor& a, const Tensor& b);

/// Gathers rows of `table` [V,D] -> [ids.size(), D].
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids);

/// out = base; out.row(rows[i]) += weights[i] * vec. `base` is viewed as
/// [numel/D, D] with D = vec.numel().
Tensor scatter_add_rows(const Tensor& base, const Tensor& vec, const std::vector<std::size_t>& rows,
                        const std::vector<double>& weights);

/// Depthwise causal convolution over time. x: [L,E], w: [E,k], b: [E].
/// y[l,e] = b[e] + sum_j w[e,j] * x[l-k+1+j, e] with zero history.
Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

/// Selective state-space scan.
///   x, delta: [L,E]; a: [E,N]; b, c: [L,N]; d: [E]
///   h_l = exp(delta_l * a) * h_{l-1} + delta_l * b_l * x_l
///   y_l = c_l . h_l + d * x_l
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d);

}  // namespace gensel
