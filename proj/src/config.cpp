#include "gensel/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gensel/errors.hpp"

namespace gensel {

namespace {

using nlohmann::json;

// Reads the keys of one object, remembering which were consumed so that
// leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + name_ + "." + key + "' has the wrong type");
    }
  }

  template <typename F>
  void sub(const char* key, F&& body) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Section s(j_.at(key), name_.empty() ? key : name_ + "." + key);
    body(s);
    s.finish();
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + (name_.empty() ? k : name_ + "." + k) + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

WorldConfig RunConfig::world(Family f) const {
  WorldConfig w;
  w.family = f;
  w.agents = agents[static_cast<std::size_t>(f)];
  w.horizon = horizon;
  w.dt = dt;
  w.ttc_threshold = metrics.ttc_threshold;
  w.max_attempts = max_attempts;
  return w;
}

FatgConfig RunConfig::fatg() const {
  FatgConfig f;
  f.grid = grid;
  f.horizon = horizon;
  f.dt = dt;
  f.heads = model.heads;
  f.ffn_mult = model.ffn_mult;
  f.mamba_state = model.mamba_state;
  f.rollout_steps = rollout_steps;
  return f;
}

VloeConfig RunConfig::vloe() const {
  VloeConfig v;
  v.C = grid.C;
  v.grid_h = grid.H;
  v.grid_w = grid.W;
  v.horizon = horizon;
  v.heads = model.heads;
  v.metric_queries = model.metric_queries;
  v.conv_stride = model.conv_stride;
  v.d_lm = model.d_lm;
  v.lm_heads = model.lm_heads;
  v.lm_layers = model.lm_layers;
  v.max_length = model.max_length;
  return v;
}

void validate(const RunConfig& c) {
  require(c.grid.H > 0 && c.grid.W > 0, "grid H and W must be positive");
  require(c.grid.Lx > 0 && c.grid.Ly > 0, "grid extents must be positive");
  require(c.grid.C >= kBevLayers + 2, "grid C must be at least " + std::to_string(kBevLayers + 2));
  require(c.horizon > 0 && c.dt > 0, "horizon T and dt must be positive");
  require(!c.rollout_steps.empty(), "rollout_steps must not be empty");
  for (std::size_t i = 0; i < c.rollout_steps.size(); ++i)
    require(c.rollout_steps[i] > (i == 0 ? 0.0 : c.rollout_steps[i - 1]), "rollout_steps must be positive and increasing");
  require(c.anchors > 0, "anchors.N must be positive");
  require(c.model.heads > 0 && c.grid.C % c.model.heads == 0, "model.heads must divide grid C");
  require(c.model.lm_heads > 0 && c.model.d_lm % c.model.lm_heads == 0, "model.lm_heads must divide model.d_lm");
  require(c.model.ffn_mult > 0 && c.model.mamba_state > 0 && c.model.metric_queries > 0, "model sizes must be positive");
  require(c.model.conv_stride >= 2, "model.conv_stride must be at least 2");
  require(c.metrics.supersample >= 1, "metrics.supersample must be at least 1");
  require(c.metrics.ttc_threshold > 0, "metrics.ttc_threshold must be positive");
  const auto& w = c.metrics.weights;
  require(w.progress >= 0 && w.ttc >= 0 && w.comfort >= 0 && w.progress + w.ttc + w.comfort > 0,
          "metric weights must be non-negative with a positive sum");
  require(c.training.learning_rate > 0, "training.learning_rate must be positive");
  require(c.training.evaluator_batch > 0, "training.evaluator_batch must be positive");
  require(c.training.clip_norm > 0, "training.clip_norm must be positive");
  require(c.training.optimizer == "gd" || c.training.optimizer == "adam", "training.optimizer must be \"gd\" or \"adam\"");
  require(c.threads > 0, "threads must be positive");
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  {
    Section root(j, "");
    root.sub("grid", [&](Section& s) {
      s.read("H", c.grid.H);
      s.read("W", c.grid.W);
      s.read("L_x", c.grid.Lx);
      s.read("L_y", c.grid.Ly);
      s.read("C", c.grid.C);
    });
    root.sub("horizon", [&](Section& s) {
      s.read("T", c.horizon);
      s.read("dt", c.dt);
    });
    root.read("rollout_steps", c.rollout_steps);
    root.sub("anchors", [&](Section& s) {
      s.read("N", c.anchors);
      s.read("max_iters", c.kmeans_iters);
    });
    root.sub("model", [&](Section& s) {
      s.read("heads", c.model.heads);
      s.read("ffn_mult", c.model.ffn_mult);
      s.read("mamba_state", c.model.mamba_state);
      s.read("metric_queries", c.model.metric_queries);
      s.read("conv_stride", c.model.conv_stride);
      s.read("d_lm", c.model.d_lm);
      s.read("lm_heads", c.model.lm_heads);
      s.read("lm_layers", c.model.lm_layers);
      s.read("max_length", c.model.max_length);
    });
    root.sub("metrics", [&](Section& s) {
      auto& m = c.metrics;
      s.read("supersample", m.supersample);
      s.read("ttc_threshold", m.ttc_threshold);
      s.read("max_lon_accel", m.max_lon_accel);
      s.read("max_lat_accel", m.max_lat_accel);
      s.read("max_jerk", m.max_jerk);
      s.read("max_yaw_rate", m.max_yaw_rate);
      s.read("min_moving_speed", m.min_moving_speed);
      s.read("min_expert_progress", m.min_expert_progress);
      s.read("extended", m.extended);
      s.sub("weights", [&](Section& w) {
        w.read("progress", m.weights.progress);
        w.read("ttc", m.weights.ttc);
        w.read("comfort", m.weights.comfort);
      });
    });
    root.sub("world", [&](Section& s) {
      s.sub("agents", [&](Section& a) {
        a.read("straight_road", c.agents[0]);
        a.read("intersection", c.agents[1]);
        a.read("dense_traffic", c.agents[2]);
      });
      s.read("max_attempts", c.max_attempts);
    });
    root.sub("training", [&](Section& s) {
      auto& t = c.training;
      s.read("generator_steps", t.generator_steps);
      s.read("evaluator_steps", t.evaluator_steps);
      s.read("evaluator_batch", t.evaluator_batch);
      s.read("learning_rate", t.learning_rate);
      s.read("clip_norm", t.clip_norm);
      s.read("optimizer", t.optimizer);
      s.read("w_wam", t.w_wam);
      s.read("w_imit", t.w_imit);
      s.read("w_score", t.w_score);
    });
    root.sub("seeds", [&](Section& s) {
      s.read("data", c.data_seed);
      s.read("model", c.model_seed);
    });
    root.read("threads", c.threads);
    root.sub("paths", [&](Section& s) {
      auto& p = c.paths;
      s.read("scenarios", p.scenarios);
      s.read("anchors", p.anchors);
      s.read("checkpoint", p.checkpoint);
      s.read("results", p.results);
      s.read("report", p.report);
      s.read("loss_log", p.loss_log);
    });
    root.finish();
  }
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
  const auto& m = c.metrics;
  const auto& t = c.training;
  json j = {
      {"grid", {{"H", c.grid.H}, {"W", c.grid.W}, {"L_x", c.grid.Lx}, {"L_y", c.grid.Ly}, {"C", c.grid.C}}},
      {"horizon", {{"T", c.horizon}, {"dt", c.dt}}},
      {"rollout_steps", c.rollout_steps},
      {"anchors", {{"N", c.anchors}, {"max_iters", c.kmeans_iters}}},
      {"model",
       {{"heads", c.model.heads},
        {"ffn_mult", c.model.ffn_mult},
        {"mamba_state", c.model.mamba_state},
        {"metric_queries", c.model.metric_queries},
        {"conv_stride", c.model.conv_stride},
        {"d_lm", c.model.d_lm},
        {"lm_heads", c.model.lm_heads},
        {"lm_layers", c.model.lm_layers},
        {"max_length", c.model.max_length}}},
      {"metrics",
       {{"supersample", m.supersample},
        {"ttc_threshold", m.ttc_threshold},
        {"max_lon_accel", m.max_lon_accel},
        {"max_lat_accel", m.max_lat_accel},
        {"max_jerk", m.max_jerk},
        {"max_yaw_rate", m.max_yaw_rate},
        {"min_moving_speed", m.min_moving_speed},
        {"min_expert_progress", m.min_expert_progress},
        {"extended", m.extended},
        {"weights", {{"progress", m.weights.progress}, {"ttc", m.weights.ttc}, {"comfort", m.weights.comfort}}}}},
      {"world",
       {{"agents", {{"straight_road", c.agents[0]}, {"intersection", c.agents[1]}, {"dense_traffic", c.agents[2]}}},
        {"max_attempts", c.max_attempts}}},
      {"training",
       {{"generator_steps", t.generator_steps},
        {"evaluator_steps", t.evaluator_steps},
        {"evaluator_batch", t.evaluator_batch},
        {"learning_rate", t.learning_rate},
        {"clip_norm", t.clip_norm},
        {"optimizer", t.optimizer},
        {"w_wam", t.w_wam},
        {"w_imit", t.w_imit},
        {"w_score", t.w_score}}},
      {"seeds", {{"data", c.data_seed}, {"model", c.model_seed}}},
      {"threads", c.threads},
      {"paths",
       {{"scenarios", c.paths.scenarios},
        {"anchors", c.paths.anchors},
        {"checkpoint", c.paths.checkpoint},
        {"results", c.paths.results},
        {"report", c.paths.report},
        {"loss_log", c.paths.loss_log}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace gensel
