#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "gensel/tensor.hpp"

namespace gensel {

/// Named learnable tensors with deterministic, order-independent initialization.
///
/// Uniform parameters draw from U(-s, s), s = sqrt(1 / fan_in), using the
/// keyed stream (seed, path), so a parameter's initial value depends only on
/// the store seed, its path and its shape.
class ParamStore {
 public:
  static constexpr int kFormatVersion = 1;

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor uniform(const std::string& path, Shape shape, std::size_t fan_in);
  Tensor constant(const std::string& path, Shape shape, double value);
  Tensor values(const std::string& path, Shape shape, std::vector<double> data);

  bool contains(const std::string& path) const { return params_.count(path) != 0; }
  const Tensor& get(const std::string& path) const;
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t scalar_count() const;

  std::vector<Tensor> with_prefix(const std::string& prefix) const;
  void zero_grad();
  /// Overwrites every value of `path` (shape preserved).
  void assign(const std::string& path, const std::vector<double>& data);
  void fill(const std::string& path, double value);

  /// Text checkpoint: a header line {"format_version":1,"seed":...,"count":...}
  /// followed by one JSON record {path, shape, values} per parameter in path order.
  void save(std::ostream& os) const;
  void save_file(const std::string& path) const;
  /// Loads values into already-registered parameters; paths and shapes must match exactly.
  void load(std::istream& is);
  void load_file(const std::string& path);

 private:
  Tensor insert(const std::string& path, Tensor t);

  std::uint64_t seed_;
  std::map<std::string, Tensor> params_;
};

}  // namespace gensel
