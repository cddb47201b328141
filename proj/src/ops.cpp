#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "gensel/tensor.hpp"

namespace gensel {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (any) {
      node->requires_grad = true;
      for (const auto& t : inputs) node->parents.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of parent i, or nullptr when that parent takes no gradient.
double* grad_of(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return p->grad_buffer().data();
}

const double* data_of(Node& self, std::size_t i) { return self.parents[i]->data.data(); }

void require_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string(what) + ": undefined tensor argument");
}

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = b.numel() == 1;
  if (!ok && bs.size() <= as.size()) ok = std::equal(bs.begin(), bs.end(), as.end() - static_cast<long>(bs.size()));
  if (!ok) throw DimensionError(std::string(name) + ": cannot broadcast " + shape_str(bs) + " onto " + shape_str(as));
  const std::size_t n = a.numel();
  const std::size_t inner = b.numel();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = pb[i % inner];
    switch (op) {
      case BinOp::kAdd: out[i] = pa[i] + y; break;
      case BinOp::kSub: out[i] = pa[i] - y; break;
      case BinOp::kMul: out[i] = pa[i] * y; break;
    }
  }
  return make_result(as, std::move(out), {a, b}, [op, n, inner](Node& self) {
    const double* g = self.grad.data();
    const double* pa = data_of(self, 0);
    const double* pb = data_of(self, 1);
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += op == BinOp::kMul ? g[i] * pb[i % inner] : g[i];
    }
    if (double* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = op == BinOp::kAdd ? g[i] : op == BinOp::kSub ? -g[i] : g[i] * pa[i];
        gb[i % inner] += d;
      }
    }
  });
}

// Unary op with derivative expressed through input x and output y.
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df, const char* name) {
  require_defined(x, name);
  const std::size_t n = x.numel();
  const double* px = x.data().data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(px[i]);
  return make_result(x.shape(), std::move(out), {x}, [n, df](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const double* g = self.grad.data();
    const double* px = data_of(self, 0);
    const double* py = self.data.data();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * df(px[i], py[i]);
  });
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) throw DimensionError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

double stable_softplus(double v) { return v > 30.0 ? v : (v < -30.0 ? std::exp(v) : std::log1p(std::exp(v))); }
double logistic(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul, "mul"); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v * s; }, [s](double, double) { return s; }, "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; }, "relu");
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, logistic, [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; }, "exp");
}

Tensor softplus(const Tensor& x) {
  return unary(x, stable_softplus, [](double v, double) { return logistic(v); }, "softplus");
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v * logistic(v); },
      [](double v, double) {
        const double s = logistic(v);
        return s * (1.0 + v * (1.0 - s));
      },
      "silu");
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }, "abs");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    const double* pa = data_of(self, 0);
    const double* pb = data_of(self, 1);
    if (double* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (double* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t din = w.dim(0), dout = w.dim(1);
  if (b.defined() && (b.numel() != dout)) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const std::size_t rows = x.numel() / din;
  const double* px = x.data().data();
  const double* pw = w.data().data();
  const double* pb = b.defined() ? b.data().data() : nullptr;
  std::vector<double> out(rows * dout, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* y = out.data() + r * dout;
    if (pb) std::copy(pb, pb + dout, y);
    for (std::size_t p = 0; p < din; ++p) {
      const double xv = px[r * din + p];
      const double* wrow = pw + p * dout;
      for (std::size_t j = 0; j < dout; ++j) y[j] += xv * wrow[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = dout;
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  const bool has_bias = b.defined();
  return make_result(std::move(shape), std::move(out), inputs, [rows, din, dout, has_bias](Node& self) {
    const double* g = self.grad.data();
    const double* px = data_of(self, 0);
    const double* pw = data_of(self, 1);
    if (double* gx = grad_of(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < din; ++p) {
          double acc = 0.0;
          const double* wrow = pw + p * dout;
          const double* grow = g + r * dout;
          for (std::size_t j = 0; j < dout; ++j) acc += grow[j] * wrow[j];
          gx[r * din + p] += acc;
        }
    }
    if (double* gw = grad_of(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < din; ++p) {
          const double xv = px[r * din + p];
          double* gwrow = gw + p * dout;
          const double* grow = g + r * dout;
          for (std::size_t j = 0; j < dout; ++j) gwrow[j] += xv * grow[j];
        }
    }
    if (has_bias) {
      if (double* gb = grad_of(self, 2)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < dout; ++j) gb[j] += g[r * dout + j];
      }
    }
  });
}

Tensor softmax(const Tensor& x, int axis_in) {
  require_defined(x, "softmax");
  const auto& s = x.shape();
  const std::size_t axis = normalize_axis(axis_in, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  const double* px = x.data().data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(px[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  return make_result(s, std::move(out), {x}, [outer, inner, n](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const double* g = self.grad.data();
    const double* y = self.data.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match feature width " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  const double* px = x.data().data();
  const double* pg = gain.data().data();
  const double* pb = bias.data().data();
  std::vector<double> out(x.numel());
  // Saved per-row inverse std and normalized input for the backward pass.
  auto inv = std::make_shared<std::vector<double>>(rows);
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * is;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * pg[j] + pb[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias}, [rows, d, inv, xhat](Node& self) {
    const double* g = self.grad.data();
    const double* pg = data_of(self, 1);
    double* gx = grad_of(self, 0);
    double* gg = grad_of(self, 1);
    double* gb = grad_of(self, 2);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xh = xhat->data() + r * d;
      const double* gr = g + r * d;
      if (gg || gb) {
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += gr[j] * xh[j];
          if (gb) gb[j] += gr[j];
        }
      }
      if (gx) {
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = gr[j] * pg[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh *= inv_d;
        mean_dxh_xh *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dxh = gr[j] * pg[j];
          gx[r * d + j] += (*inv)[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, const Tensor& bias) {
  require_defined(x, "conv2d");
  require_defined(kernels, "conv2d");
  if (x.rank() != 3 || kernels.rank() != 4 || kernels.dim(1) != x.dim(0) || kernels.dim(2) != kernels.dim(3)) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " does not match kernels " +
                         shape_str(kernels.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
  if (k > h || k > w) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != cout) throw DimensionError("conv2d: bias does not match output channels");
  const std::size_t ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  const double* px = x.data().data();
  const double* pk = kernels.data().data();
  const double* pb = bias.defined() ? bias.data().data() : nullptr;
  std::vector<double> out(cout * ho * wo, 0.0);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = pb ? pb[co] : 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v)
              acc += pk[((co * cin + ci) * k + u) * k + v] * px[(ci * h + i * stride + u) * w + j * stride + v];
        out[(co * ho + i) * wo + j] = acc;
      }
  std::vector<Tensor> inputs{x, kernels};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result({cout, ho, wo}, std::move(out), inputs,
                     [cin, h, w, cout, k, ho, wo, stride, has_bias](Node& self) {
                       const double* g = self.grad.data();
                       const double* px = data_of(self, 0);
                       const double* pk = data_of(self, 1);
                       double* gx = grad_of(self, 0);
                       double* gk = grad_of(self, 1);
                       double* gb = has_bias ? grad_of(self, 2) : nullptr;
                       for (std::size_t co = 0; co < cout; ++co)
                         for (std::size_t i = 0; i < ho; ++i)
                           for (std::size_t j = 0; j < wo; ++j) {
                             const double gv = g[(co * ho + i) * wo + j];
                             if (gb) gb[co] += gv;
                             for (std::size_t ci = 0; ci < cin; ++ci)
                               for (std::size_t u = 0; u < k; ++u)
                                 for (std::size_t v = 0; v < k; ++v) {
                                   const std::size_t xi = (ci * h + i * stride + u) * w + j * stride + v;
                                   const std::size_t ki = ((co * cin + ci) * k + u) * k + v;
                                   if (gx) gx[xi] += gv * pk[ki];
                                   if (gk) gk[ki] += gv * px[xi];
                                 }
                           }
                     });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const AttentionMask* mask) {
  require_defined(q, "multi_head_attention");
  require_defined(k, "multi_head_attention");
  require_defined(v, "multi_head_attention");
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(1) != v.dim(1) ||
      k.dim(0) != v.dim(0)) {
    throw DimensionError("multi_head_attention: incompatible shapes Q" + shape_str(q.shape()) + " K" +
                         shape_str(k.shape()) + " V" + shape_str(v.shape()));
  }
  const std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (mask && (mask->rows != lq || mask->cols != lk)) {
    throw DimensionError("multi_head_attention: mask " + std::to_string(mask->rows) + "x" +
                         std::to_string(mask->cols) + " does not match " + std::to_string(lq) + "x" +
                         std::to_string(lk));
  }
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* pq = q.data().data();
  const double* pk = k.data().data();
  const double* pv = v.data().data();
  const bool keep = grad_enabled() && (q.requires_grad() || k.requires_grad() || v.requires_grad());
  auto probs = std::make_shared<std::vector<double>>(keep ? heads * lq * lk : 0);
  std::optional<AttentionMask> mask_copy;
  if (mask) mask_copy = *mask;
  std::vector<double> out(lq * d, 0.0);
  std::vector<double> p(lk);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const std::size_t off = hd * dh;
    for (std::size_t i = 0; i < lq; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < lk; ++j) {
        if (mask && !mask->allowed(i, j)) continue;
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += pq[i * d + off + t] * pk[j * d + off + t];
        s *= sc;
        p[j] = s;
        mx = std::max(mx, s);
        any = true;
      }
      if (!any) continue;
      double total = 0.0;
      for (std::size_t j = 0; j < lk; ++j) {
        if (mask && !mask->allowed(i, j)) continue;
        p[j] = std::exp(p[j] - mx);
        total += p[j];
      }
      double* orow = out.data() + i * d + off;
      for (std::size_t j = 0; j < lk; ++j) {
        if (mask && !mask->allowed(i, j)) continue;
        const double w = p[j] / total;
        if (keep) (*probs)[(hd * lq + i) * lk + j] = w;
        const double* vrow = pv + j * d + off;
        for (std::size_t t = 0; t < dh; ++t) orow[t] += w * vrow[t];
      }
    }
  }
  return make_result({lq, d}, std::move(out), {q, k, v},
                     [lq, lk, d, dh, heads, sc, probs, mask_copy](Node& self) {
                       const double* g = self.grad.data();
                       const double* pq = data_of(self, 0);
                       const double* pk = data_of(self, 1);
                       const double* pv = data_of(self, 2);
                       double* gq = grad_of(self, 0);
                       double* gk = grad_of(self, 1);
                       double* gv = grad_of(self, 2);
                       std::vector<double> dp(lk);
                       for (std::size_t hd = 0; hd < heads; ++hd) {
                         const std::size_t off = hd * dh;
                         for (std::size_t i = 0; i < lq; ++i) {
                           const double* prow = probs->data() + (hd * lq + i) * lk;
                           const double* grow = g + i * d + off;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < lk; ++j) {
                             if (mask_copy && !mask_copy->allowed(i, j)) continue;
                             double acc = 0.0;
                             for (std::size_t t = 0; t < dh; ++t) acc += grow[t] * pv[j * d + off + t];
                             dp[j] = acc;
                             dot += acc * prow[j];
                             if (gv) {
                               for (std::size_t t = 0; t < dh; ++t) gv[j * d + off + t] += prow[j] * grow[t];
                             }
                           }
                           for (std::size_t j = 0; j < lk; ++j) {
                             if (mask_copy && !mask_copy->allowed(i, j)) continue;
                             const double ds = prow[j] * (dp[j] - dot) * sc;
                             if (ds == 0.0) continue;
                             for (std::size_t t = 0; t < dh; ++t) {
                               if (gq) gq[i * d + off + t] += ds * pk[j * d + off + t];
                               if (gk) gk[j * d + off + t] += ds * pq[i * d + off + t];
                             }
                           }
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (gensel::numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const auto d = x.data();
  const std::size_t n = x.numel();
  return make_result(std::move(shape), std::vector<double>(d.begin(), d.end()), {x}, [n](Node& self) {
    if (double* gx = grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute");
  const auto& s = x.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw DimensionError("permute: axes length does not match rank of " + shape_str(s));
  std::vector<bool> used(r, false);
  for (auto a : axes) {
    if (a >= r || used[a]) throw DimensionError("permute: invalid axis permutation");
    used[a] = true;
  }
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[axes[i]];
  const std::size_t n = x.numel();
  // src[i] = input flat index of output flat index i.
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < r; ++a) off += idx[a] * in_stride[axes[a]];
    (*src)[i] = off;
    for (std::size_t a = r; a-- > 0;) {
      if (++idx[a] < out_shape[a]) break;
      idx[a] = 0;
    }
  }
  const double* px = x.data().data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = px[(*src)[i]];
  return make_result(std::move(out_shape), std::move(out), {x}, [n, src](Node& self) {
    if (double* gx = grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i) gx[(*src)[i]] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  const std::size_t total_axis = out_shape[axis];
  std::vector<double> out(gensel::numel(out_shape));
  auto extents = std::make_shared<std::vector<std::size_t>>();
  std::size_t at = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    extents->push_back(ext);
    const double* pd = p.data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(pd + o * ext * inner, pd + (o + 1) * ext * inner, out.data() + (o * total_axis + at) * inner);
    at += ext;
  }
  return make_result(std::move(out_shape), std::move(out), parts, [outer, inner, total_axis, extents](Node& self) {
    std::size_t at = 0;
    for (std::size_t pi = 0; pi < extents->size(); ++pi) {
      const std::size_t ext = (*extents)[pi];
      if (double* gp = grad_of(self, pi)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t t = 0; t < ext * inner; ++t) gp[o * ext * inner + t] += self.grad[(o * total_axis + at) * inner + t];
      }
      at += ext;
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(x, "slice");
  const auto& s = x.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t ext = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  const double* px = x.data().data();
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(px + (o * ext + start) * inner, px + (o * ext + start + length) * inner, out.data() + o * length * inner);
  return make_result(std::move(out_shape), std::move(out), {x}, [outer, inner, ext, start, length](Node& self) {
    if (double* gx = grad_of(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t t = 0; t < length * inner; ++t) gx[(o * ext + start) * inner + t] += self.grad[o * length * inner + t];
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const std::size_t n = x.numel();
  return make_result({1}, {acc}, {x}, [n](Node& self) {
    if (double* gx = grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_rows(const Tensor& x) {
  require_defined(x, "mean_rows");
  if (x.rank() != 2) throw DimensionError("mean_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t l = x.dim(0), d = x.dim(1);
  const double* px = x.data().data();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += px[i * d + j];
  for (auto& v : out) v /= static_cast<double>(l);
  return make_result({d}, std::move(out), {x}, [l, d](Node& self) {
    if (double* gx = grad_of(self, 0))
      for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += self.grad[j] / static_cast<double>(l);
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_defined(a, "mse");
  require_defined(b, "mse");
  if (a.shape() != b.shape()) throw DimensionError("mse: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t n = a.numel();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  return make_result({1}, {acc / static_cast<double>(n)}, {a, b}, [n](Node& self) {
    const double* pa = data_of(self, 0);
    const double* pb = data_of(self, 1);
    const double f = 2.0 * self.grad[0] / static_cast<double>(n);
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = f * (pa[i] - pb[i]);
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

Tensor l1(const Tensor& a, const Tensor& b) {
  require_defined(a, "l1");
  require_defined(b, "l1");
  if (a.shape() != b.shape()) throw DimensionError("l1: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t n = a.numel();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(pa[i] - pb[i]);
  return make_result({1}, {acc / static_cast<double>(n)}, {a, b}, [n](Node& self) {
    const double* pa = data_of(self, 0);
    const double* pb = data_of(self, 1);
    const double f = self.grad[0] / static_cast<double>(n);
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = pa[i] - pb[i];
      const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
      if (ga) ga[i] += f * sgn;
      if (gb) gb[i] -= f * sgn;
    }
  });
}

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  require_defined(table, "embedding");
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw ContractError("embedding: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  const double* pt = table.data().data();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary");
    std::copy(pt + ids[i] * d, pt + (ids[i] + 1) * d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {table}, [ids, d](Node& self) {
    if (double* gt = grad_of(self, 0))
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor scatter_add_rows(const Tensor& base, const Tensor& vec, const std::vector<std::size_t>& rows,
                        const std::vector<double>& weights) {
  require_defined(base, "scatter_add_rows");
  require_defined(vec, "scatter_add_rows");
  const std::size_t d = vec.numel();
  if (base.shape().back() != d) {
    throw DimensionError("scatter_add_rows: vector " + shape_str(vec.shape()) + " does not match base " +
                         shape_str(base.shape()));
  }
  if (rows.size() != weights.size()) throw ContractError("scatter_add_rows: rows/weights length mismatch");
  const std::size_t nrows = base.numel() / d;
  for (auto r : rows)
    if (r >= nrows) throw DimensionError("scatter_add_rows: row " + std::to_string(r) + " out of range");
  const auto bd = base.data();
  std::vector<double> out(bd.begin(), bd.end());
  const double* pv = vec.data().data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[rows[i] * d + j] += weights[i] * pv[j];
  const std::size_t n = base.numel();
  return make_result(base.shape(), std::move(out), {base, vec}, [rows, weights, d, n](Node& self) {
    const double* g = self.grad.data();
    if (double* gb = grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
    if (double* gv = grad_of(self, 1))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gv[j] += weights[i] * g[rows[i] * d + j];
  });
}

Tensor causal_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_defined(x, "causal_conv1d");
  require_defined(w, "causal_conv1d");
  require_defined(b, "causal_conv1d");
  if (x.rank() != 2 || w.rank() != 2 || w.dim(0) != x.dim(1) || b.numel() != x.dim(1)) {
    throw DimensionError("causal_conv1d: x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) + " b" +
                         shape_str(b.shape()));
  }
  const std::size_t l = x.dim(0), e = x.dim(1), k = w.dim(1);
  const double* px = x.data().data();
  const double* pw = w.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(l * e);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t c = 0; c < e; ++c) {
      double acc = pb[c];
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(t) - static_cast<long>(k - 1) + static_cast<long>(j);
        if (src >= 0) acc += pw[c * k + j] * px[static_cast<std::size_t>(src) * e + c];
      }
      out[t * e + c] = acc;
    }
  return make_result({l, e}, std::move(out), {x, w, b}, [l, e, k](Node& self) {
    const double* g = self.grad.data();
    const double* px = data_of(self, 0);
    const double* pw = data_of(self, 1);
    double* gx = grad_of(self, 0);
    double* gw = grad_of(self, 1);
    double* gb = grad_of(self, 2);
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t c = 0; c < e; ++c) {
        const double gv = g[t * e + c];
        if (gb) gb[c] += gv;
        for (std::size_t j = 0; j < k; ++j) {
          const long src = static_cast<long>(t) - static_cast<long>(k - 1) + static_cast<long>(j);
          if (src < 0) continue;
          const std::size_t si = static_cast<std::size_t>(src) * e + c;
          if (gx) gx[si] += gv * pw[c * k + j];
          if (gw) gw[c * k + j] += gv * px[si];
        }
      }
  });
}

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      const Tensor& d) {
  for (const Tensor* t : {&x, &delta, &a, &b, &c, &d}) require_defined(*t, "selective_scan");
  if (x.rank() != 2 || delta.shape() != x.shape() || a.rank() != 2 || a.dim(0) != x.dim(1) || b.rank() != 2 ||
      b.dim(0) != x.dim(0) || b.dim(1) != a.dim(1) || c.shape() != b.shape() || d.numel() != x.dim(1)) {
    throw DimensionError("selective_scan: inconsistent shapes x" + shape_str(x.shape()) + " delta" +
                         shape_str(delta.shape()) + " A" + shape_str(a.shape()) + " B" + shape_str(b.shape()) +
                         " C" + shape_str(c.shape()) + " D" + shape_str(d.shape()));
  }
  const std::size_t l = x.dim(0), e = x.dim(1), n = a.dim(1);
  const double* px = x.data().data();
  const double* pdl = delta.data().data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  const double* pc = c.data().data();
  const double* pd = d.data().data();
  bool keep = grad_enabled();
  if (keep) {
    keep = false;
    for (const Tensor* t : {&x, &delta, &a, &b, &c, &d}) keep = keep || t->requires_grad();
  }
  auto states = std::make_shared<std::vector<double>>(keep ? l * e * n : 0);
  std::vector<double> h(e * n, 0.0);
  std::vector<double> out(l * e);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t ch = 0; ch < e; ++ch) {
      const double dl = pdl[t * e + ch];
      const double xv = px[t * e + ch];
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        double& hs = h[ch * n + s];
        hs = std::exp(dl * pa[ch * n + s]) * hs + dl * pb[t * n + s] * xv;
        acc += pc[t * n + s] * hs;
        if (keep) (*states)[(t * e + ch) * n + s] = hs;
      }
      out[t * e + ch] = acc + pd[ch] * xv;
    }
  return make_result({l, e}, std::move(out), {x, delta, a, b, c, d}, [l, e, n, states](Node& self) {
    const double* g = self.grad.data();
    const double* px = data_of(self, 0);
    const double* pdl = data_of(self, 1);
    const double* pa = data_of(self, 2);
    const double* pb = data_of(self, 3);
    const double* pc = data_of(self, 4);
    const double* pd = data_of(self, 5);
    double* gx = grad_of(self, 0);
    double* gdl = grad_of(self, 1);
    double* ga = grad_of(self, 2);
    double* gb = grad_of(self, 3);
    double* gc = grad_of(self, 4);
    double* gd = grad_of(self, 5);
    const auto& hs = *states;
    // carry[ch,s] = dLoss/dh_t contributed by steps after t.
    std::vector<double> carry(e * n, 0.0);
    for (std::size_t t = l; t-- > 0;)
      for (std::size_t ch = 0; ch < e; ++ch) {
        const double gy = g[t * e + ch];
        const double dl = pdl[t * e + ch];
        const double xv = px[t * e + ch];
        if (gd) gd[ch] += gy * xv;
        if (gx) gx[t * e + ch] += gy * pd[ch];
        double gdelta = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const double h_t = hs[(t * e + ch) * n + s];
          const double h_prev = t > 0 ? hs[((t - 1) * e + ch) * n + s] : 0.0;
          const double gh = carry[ch * n + s] + gy * pc[t * n + s];
          if (gc) gc[t * n + s] += gy * h_t;
          const double decay = std::exp(dl * pa[ch * n + s]);
          const double g_decay = gh * h_prev;
          gdelta += g_decay * decay * pa[ch * n + s] + gh * pb[t * n + s] * xv;
          if (ga) ga[ch * n + s] += g_decay * decay * dl;
          if (gb) gb[t * n + s] += gh * dl * xv;
          if (gx) gx[t * e + ch] += gh * dl * pb[t * n + s];
          carry[ch * n + s] = gh * decay;
        }
        if (gdl) gdl[t * e + ch] += gdelta;
      }
  });
}

}  // namespace gensel
