#pragma once

// Run configuration: one JSON file, every key optional, unknown keys rejected.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gensel/bev.hpp"
#include "gensel/fatg.hpp"
#include "gensel/metrics.hpp"
#include "gensel/vloe.hpp"
#include "gensel/world.hpp"

namespace gensel {

struct ModelConfig {
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t mamba_state = 8;
  std::size_t metric_queries = 4;
  std::size_t conv_stride = 4;
  std::size_t d_lm = 64;
  std::size_t lm_heads = 4;
  std::size_t lm_layers = 2;
  std::size_t max_length = 128;
};

struct TrainingConfig {
  std::size_t generator_steps = 500;
  std::size_t evaluator_steps = 500;
  std::size_t evaluator_batch = 8;  // scenarios per evaluator step
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  std::string optimizer = "adam";  // "adam" or "gd"
  double w_wam = 1.0;
  double w_imit = 1.0;
  double w_score = 1.0;
};

struct PathsConfig {
  std::string scenarios = "scenarios.jsonl";
  std::string anchors = "anchors.jsonl";
  std::string checkpoint = "checkpoint.jsonl";
  std::string results = "results.jsonl";
  std::string report = "report.txt";
  std::string loss_log = "loss.jsonl";
};

struct RunConfig {
  GridSpec grid;
  std::size_t horizon = 8;
  double dt = 0.5;
  std::vector<double> rollout_steps{2.0, 4.0};
  std::size_t anchors = 32;
  std::size_t kmeans_iters = 100;
  ModelConfig model;
  MetricConfig metrics;
  std::array<std::size_t, 3> agents{2, 3, 6};  // per family: straight road, intersection, dense traffic
  std::size_t max_attempts = 40;
  TrainingConfig training;
  std::uint64_t data_seed = 0;
  std::uint64_t model_seed = 0;
  std::size_t threads = 1;
  PathsConfig paths;

  WorldConfig world(Family f) const;
  FatgConfig fatg() const;
  VloeConfig vloe() const;
};

/// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);
void validate(const RunConfig& cfg);

}  // namespace gensel
