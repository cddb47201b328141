#pragma once

// Dataset generation, anchor fitting, two-phase training, episode evaluation
// and reporting on top of the generator and evaluator modules.

#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "gensel/anchors.hpp"
#include "gensel/config.hpp"
#include "gensel/fatg.hpp"
#include "gensel/metrics.hpp"
#include "gensel/params.hpp"
#include "gensel/vloe.hpp"
#include "gensel/world.hpp"

namespace gensel {

/// Runs body(i) for every i in [0, n) on up to `threads` workers. Callers write
/// results by index, so output never depends on scheduling. If any call throws,
/// the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

// ---- data ----

/// Scenario i of a dataset has seed base + i; its family is seed mod 3.
Family family_for_seed(std::uint64_t seed);
std::vector<ScenarioRecord> generate_dataset(const RunConfig& cfg, std::size_t count, std::uint64_t seed, std::size_t threads = 1);

/// Even seeds train, odd seeds are held out.
bool is_training_seed(std::uint64_t seed);
std::vector<ScenarioRecord> training_split(const std::vector<ScenarioRecord>& all);
std::vector<ScenarioRecord> heldout_split(const std::vector<ScenarioRecord>& all);

/// K-means over the expert trajectories, seeded by the data seed.
AnchorVocabulary fit_anchor_vocabulary(const RunConfig& cfg, const std::vector<ScenarioRecord>& scenarios, std::size_t n);

/// Encoded BEV features of the scene at time t, [H, W, C].
Tensor scene_features(const ScenarioRecord& sc, double t, const GridSpec& g);

// ---- model ----

struct Model {
  explicit Model(const RunConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  RunConfig cfg;
  ParamStore store;
  Fatg fatg;
  Vloe vloe;
};

/// Candidates for one scene. With `bypass_wam` the future features are the
/// current ones (s_{t+k} := s_t) for both decoding and scoring.
CandidateSet generate_candidate_set(const Model& m, const Tensor& grid, const AnchorVocabulary& vocab, const EgoStatus& ego,
                                    bool bypass_wam = false);

// ---- training ----

struct LossTerms {
  double wam = 0.0;
  double imit = 0.0;
  double score = 0.0;
  double total(const TrainingConfig& t) const { return t.w_wam * wam + t.w_imit * imit + t.w_score * score; }
};

struct TrainLogEntry {
  std::string phase;  // "generator" or "evaluator"
  std::size_t step = 0;
  std::uint64_t scenario = 0;
  LossTerms loss;
  double grad_norm = 0.0;
};

/// Plain gradient descent or Adam, both after global-norm clipping.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, const TrainingConfig& cfg);
  /// Applies one update from the accumulated gradients, clears them and
  /// returns the pre-clipping gradient norm.
  double step();

 private:
  std::vector<Tensor> params_;
  TrainingConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Mean loss terms over a probe set, without gradients. The score term uses
/// the current generator's candidates.
LossTerms probe_loss(const Model& m, const std::vector<ScenarioRecord>& scenarios, const AnchorVocabulary& vocab);

/// Phase 1 trains the generator on the expert-nearest anchor of one scenario
/// per step; phase 2 trains the evaluator on frozen generator output. Each
/// step's losses go to `log` as one JSON line. Throws DivergenceError on a
/// non-finite loss.
std::vector<TrainLogEntry> train_model(Model& m, const std::vector<ScenarioRecord>& scenarios, const AnchorVocabulary& vocab,
                                       std::ostream* log = nullptr);

std::string train_log_line(const TrainLogEntry& e);

// ---- evaluation ----

enum class Selector { vloe, oracle, random, first };
std::string to_string(Selector s);
Selector selector_from_string(const std::string& s);

struct EvalOptions {
  Selector selector = Selector::vloe;
  bool bypass_wam = false;
};

struct CandidateRecord {
  std::size_t id = 0;
  std::size_t anchor = 0;
  MetricReport report;
  double predicted = std::numeric_limits<double>::quiet_NaN();  // evaluator aggregate, vloe selector only
};

struct EpisodeResult {
  std::uint64_t scenario = 0;
  Selector selector = Selector::vloe;
  std::size_t chosen = 0;
  std::size_t oracle_best = 0;
  double regret = 0.0;  // pdms(oracle best) - pdms(chosen)
  MetricReport chosen_report;
  std::vector<CandidateRecord> candidates;
};

EpisodeResult evaluate_episode(const Model& m, const ScenarioRecord& sc, const AnchorVocabulary& vocab, const EvalOptions& opts);
std::vector<EpisodeResult> evaluate_episodes(const Model& m, const std::vector<ScenarioRecord>& scenarios,
                                             const AnchorVocabulary& vocab, const EvalOptions& opts, std::size_t threads);

// ---- reporting ----

struct Summary {
  std::string selector;
  std::size_t episodes = 0;
  double nc = 0, dac = 0, ttc = 0, comf = 0, ep = 0, ddc = 0, lk = 0, tlc = 0, pdms = 0;
  double regret = 0;
};

/// One summary per selector, in order of first appearance.
std::vector<Summary> summarize(const std::vector<EpisodeResult>& episodes);

/// Results file: each episode's candidate records followed by its episode
/// record, then one summary record per selector.
void write_results(std::ostream& os, const std::vector<EpisodeResult>& episodes);
void write_results_file(const std::string& path, const std::vector<EpisodeResult>& episodes);
/// Reads the episode records back (candidate and summary records are skipped).
std::vector<EpisodeResult> read_results(std::istream& is);
std::vector<EpisodeResult> read_results_file(const std::string& path);

/// Fixed-width table, percentages with one decimal.
std::string format_report(const std::vector<Summary>& summaries);
std::string report_json(const std::vector<Summary>& summaries);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace gensel
