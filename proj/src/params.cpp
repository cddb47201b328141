#include "gensel/params.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gensel/rng.hpp"

namespace gensel {

using nlohmann::json;

Tensor ParamStore::insert(const std::string& path, Tensor t) {
  if (path.empty()) throw ContractError("parameter path must not be empty");
  if (params_.count(path)) throw ContractError("duplicate parameter path '" + path + "'");
  t.set_requires_grad(true);
  params_.emplace(path, t);
  return t;
}

Tensor ParamStore::uniform(const std::string& path, Shape shape, std::size_t fan_in) {
  if (fan_in == 0) throw ConfigError("fan_in must be positive for '" + path + "'");
  const double s = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::vector<double> data(gensel::numel(shape));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = (2.0 * keyed_uniform(seed_, path, i) - 1.0) * s;
  return insert(path, Tensor(std::move(shape), std::move(data)));
}

Tensor ParamStore::constant(const std::string& path, Shape shape, double value) {
  return insert(path, Tensor::full(std::move(shape), value));
}

Tensor ParamStore::values(const std::string& path, Shape shape, std::vector<double> data) {
  return insert(path, Tensor(std::move(shape), std::move(data)));
}

const Tensor& ParamStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ContractError("unknown parameter '" + path + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::vector<Tensor> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& [path, t] : params_)
    if (path.compare(0, prefix.size(), prefix) == 0) out.push_back(t);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

void ParamStore::assign(const std::string& path, const std::vector<double>& data) {
  Tensor t = get(path);
  auto dst = t.data_mut();
  if (dst.size() != data.size()) {
    throw DimensionError("assign to '" + path + "': expected " + std::to_string(dst.size()) + " values, got " +
                         std::to_string(data.size()));
  }
  std::copy(data.begin(), data.end(), dst.begin());
}

void ParamStore::fill(const std::string& path, double value) {
  Tensor t = get(path);
  auto dst = t.data_mut();
  std::fill(dst.begin(), dst.end(), value);
}

void ParamStore::save(std::ostream& os) const {
  os << json{{"format_version", kFormatVersion}, {"seed", seed_}, {"count", params_.size()}}.dump() << '\n';
  for (const auto& [path, t] : params_) {
    json rec;
    rec["path"] = path;
    rec["shape"] = t.shape();
    const auto d = t.data();
    rec["values"] = std::vector<double>(d.begin(), d.end());
    os << rec.dump() << '\n';
  }
}

void ParamStore::save_file(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint '" + path + "' for writing");
  save(os);
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

void ParamStore::load(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(is, line)) throw ParseError(1, "missing checkpoint header");
  ++lineno;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(lineno, std::string("invalid checkpoint header: ") + e.what());
  }
  if (!header.is_object() || header.value("format_version", -1) != kFormatVersion) {
    throw ParseError(lineno, "unsupported checkpoint format_version");
  }
  std::set<std::string> loaded;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      const auto path = rec.at("path").get<std::string>();
      const auto shape = rec.at("shape").get<Shape>();
      const auto values = rec.at("values").get<std::vector<double>>();
      auto it = params_.find(path);
      if (it == params_.end()) throw ParseError(lineno, "checkpoint parameter '" + path + "' is not part of this model");
      if (it->second.shape() != shape) {
        throw ParseError(lineno, "checkpoint shape " + shape_str(shape) + " for '" + path + "' does not match model " +
                                     shape_str(it->second.shape()));
      }
      if (values.size() != numel(shape)) throw ParseError(lineno, "value count does not match shape for '" + path + "'");
      assign(path, values);
      loaded.insert(path);
    } catch (const json::exception& e) {
      throw ParseError(lineno, std::string("malformed checkpoint record: ") + e.what());
    }
  }
  for (const auto& [path, _] : params_) {
    if (!loaded.count(path)) throw ParseError(lineno, "checkpoint is missing parameter '" + path + "'");
  }
}

void ParamStore::load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  load(is);
}

}  // namespace gensel
