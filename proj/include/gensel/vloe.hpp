#pragma once

// Candidate evaluator: scene and trajectory tokens are spliced into a text
// prompt at sentinel positions, a small causal language model reads the
// sequence, and the hidden state of a trailing score token is mapped to four
// objective scores.

#include <array>
#include <string>
#include <vector>

#include "gensel/fatg.hpp"
#include "gensel/metrics.hpp"

namespace gensel {

inline constexpr int kSceneSentinel = -200;
inline constexpr int kTrajSentinel = -201;

/// Fixed 64-word vocabulary; the score token takes id 64.
class PromptVocabulary {
 public:
  PromptVocabulary();
  std::size_t size() const { return words_.size(); }
  int score_token() const { return static_cast<int>(words_.size()); }
  int unknown() const { return 0; }
  int id(const std::string& word) const;
  const std::string& word(int id) const;

  /// Whitespace tokenization. Each `<scene>` literal becomes `n_scene`
  /// sentinel ids and each `<traj>` literal `n_traj` sentinel ids.
  std::vector<int> tokenize(const std::string& text, std::size_t n_scene, std::size_t n_traj) const;

 private:
  std::vector<std::string> words_;
};

/// The prompt text with the command filled in.
std::string render_prompt(const std::string& tmpl, Command command);
extern const char* const kDefaultPromptTemplate;

struct SequenceItem {
  enum Kind { kText, kScene, kTraj } kind = kText;
  std::size_t index = 0;  // vocabulary id for text, embedding row otherwise
};

struct ReasoningSequence {
  std::vector<SequenceItem> items;
  Tensor scene;  // [N_s, C]
  Tensor traj;   // [K, C]
  AttentionMask mask;
  std::size_t score_position = 0;

  std::size_t length() const { return items.size(); }
};

/// Replaces sentinel ids by embedding rows in order and appends the score
/// token. Throws ContractError naming both counts when they disagree.
ReasoningSequence assemble_reasoning_sequence(const std::vector<int>& prompt, const Tensor& scene, const Tensor& traj,
                                              const PromptVocabulary& vocab);

struct ScoreVector {
  ObjectiveScores objectives;
  double aggregate = 0.0;
};

ScoreVector make_score(const Tensor& squashed, const MetricConfig& mcfg = {});

/// Argmax of the aggregates, ties to the lowest index.
std::size_t select_candidate(const std::vector<double>& aggregates);
std::size_t select_candidate(const std::vector<ScoreVector>& scores);

struct VloeConfig {
  std::size_t C = 16;  // scene/trajectory token width (the BEV channel count)
  std::size_t grid_h = 64;
  std::size_t grid_w = 64;
  std::size_t horizon = 8;
  std::size_t heads = 4;
  std::size_t metric_queries = 4;
  std::size_t conv_stride = 4;
  std::size_t d_lm = 64;
  std::size_t lm_heads = 4;
  std::size_t lm_layers = 2;
  std::size_t max_length = 128;
  std::string prompt_template = kDefaultPromptTemplate;
};

/// Per-candidate trajectory descriptor: scaled poses followed by the current
/// and future variant features sampled at the waypoints, [3T + 2CT].
Tensor candidate_descriptor(const Trajectory& traj, const Tensor& s_t, const Tensor& s_tk, const GridSpec& g);

class Vloe {
 public:
  Vloe(ParamStore& store, const VloeConfig& cfg, const std::string& prefix = "vloe");

  const VloeConfig& config() const { return cfg_; }
  const PromptVocabulary& vocabulary() const { return vocab_; }
  std::size_t scene_token_count() const { return scene_tokens_; }

  /// Concatenates along channels, compresses with stride-s convolutions,
  /// projects with Linear-ReLU-LayerNorm and refines with self-attention.
  Tensor encode_scene_tokens(const Tensor& s_t, const Tensor& s_tk) const;
  /// Projects each descriptor and lets the metric queries attend over them -> [K, C].
  Tensor encode_traj_tokens(const std::vector<Tensor>& descriptors) const;

  std::vector<int> prompt_ids(Command command) const;
  ReasoningSequence assemble(Command command, const Tensor& scene, const Tensor& traj) const;

  /// Final-layer hidden states of every position, [L, D_lm].
  Tensor critic_hidden(const ReasoningSequence& seq) const;
  Tensor critic_infer(const ReasoningSequence& seq) const;
  /// Sigmoid of the head logits: safety, comfort, efficiency, compliance.
  Tensor score_head(const Tensor& h_eval) const;

  /// Shared scene context from the variant means, one sequence per candidate.
  std::vector<Tensor> score_candidates(const CandidateSet& set, Command command, const GridSpec& g) const;
  /// Same, from precomputed scene context and descriptors.
  std::vector<Tensor> score_descriptors(const Tensor& scene, const std::vector<Tensor>& descriptors, Command command) const;

  void zero_head(ParamStore& store) const;

 private:
  VloeConfig cfg_;
  std::string prefix_;
  PromptVocabulary vocab_;
  std::size_t scene_tokens_ = 0;
  std::vector<Tensor> conv_w_, conv_b_;
  nn::Linear scene_proj_;
  nn::LayerNorm scene_norm_;
  nn::Attention scene_attn_;
  nn::Linear traj_proj_;
  nn::LayerNorm traj_norm_;
  Tensor metric_queries_;
  nn::Attention traj_attn_;
  Tensor word_embed_;
  nn::Linear scene_adapter_, traj_adapter_;
  Tensor positions_;
  std::vector<nn::TransformerLayer> lm_;
  nn::LayerNorm lm_norm_;
  nn::Linear head_;
};

/// Mean over the variants of a set, [H, W, C].
Tensor variant_mean(const SceneVariantSet& s);

}  // namespace gensel
