#include "gensel/vloe.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace gensel {

const char* const kDefaultPromptTemplate =
    "given the current and future scene : <scene> . evaluate the candidate trajectory : <traj> . "
    "command : {command} . score the plan for safety , comfort , efficiency and compliance .";

namespace {

const char* const kWords[] = {
    "<unk>", ".",        ",",       ":",          "evaluate", "the",        "candidate", "trajectory",
    "for",   "safety",   "comfort", "efficiency", "and",      "compliance", "scene",     "command",
    "go",    "straight", "turn",    "left",       "right",    "ego",        "vehicle",   "given",
    "future", "current", "bev",     "score",      "plan",     "is",         "a",         "of",
    "in",    "on",       "with",    "to",         "lane",     "traffic",    "light",     "agents",
    "road",  "intersection", "drive", "keep",     "avoid",    "collision",  "progress",  "route",
    "stop",  "red",      "green",   "speed",      "slow",     "fast",       "at",        "this",
    "rate",  "from",     "features", "metric",    "queries",  "area",       "drivable",  "comfortable",
};
static_assert(sizeof(kWords) / sizeof(kWords[0]) == 64);

constexpr double kPositionScale = 0.1;

}  // namespace

PromptVocabulary::PromptVocabulary() : words_(std::begin(kWords), std::end(kWords)) {}

int PromptVocabulary::id(const std::string& word) const {
  const auto it = std::find(words_.begin(), words_.end(), word);
  return it == words_.end() ? unknown() : static_cast<int>(it - words_.begin());
}

const std::string& PromptVocabulary::word(int id) const {
  static const std::string score = "<score_feature>";
  if (id == score_token()) return score;
  return words_.at(static_cast<std::size_t>(id));
}

std::vector<int> PromptVocabulary::tokenize(const std::string& text, std::size_t n_scene, std::size_t n_traj) const {
  std::vector<int> ids;
  std::istringstream is(text);
  std::string w;
  while (is >> w) {
    if (w == "<scene>") {
      ids.insert(ids.end(), n_scene, kSceneSentinel);
    } else if (w == "<traj>") {
      ids.insert(ids.end(), n_traj, kTrajSentinel);
    } else {
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
      ids.push_back(id(w));
    }
  }
  return ids;
}

std::string render_prompt(const std::string& tmpl, Command command) {
  std::string phrase = command == Command::straight ? "go straight" : command == Command::left ? "turn left" : "turn right";
  std::string out = tmpl;
  const std::string key = "{command}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + phrase.size()))
    out.replace(pos, key.size(), phrase);
  return out;
}

ReasoningSequence assemble_reasoning_sequence(const std::vector<int>& prompt, const Tensor& scene, const Tensor& traj,
                                              const PromptVocabulary& vocab) {
  const std::size_t n_scene = scene.defined() ? scene.dim(0) : 0;
  const std::size_t n_traj = traj.defined() ? traj.dim(0) : 0;
  const auto scene_slots = static_cast<std::size_t>(std::count(prompt.begin(), prompt.end(), kSceneSentinel));
  const auto traj_slots = static_cast<std::size_t>(std::count(prompt.begin(), prompt.end(), kTrajSentinel));
  if (scene_slots != n_scene || traj_slots != n_traj) {
    throw ContractError("prompt has " + std::to_string(scene_slots) + " scene and " + std::to_string(traj_slots) +
                        " trajectory placeholders for " + std::to_string(n_scene) + " scene and " +
                        std::to_string(n_traj) + " trajectory embeddings");
  }
  ReasoningSequence seq;
  seq.scene = scene;
  seq.traj = traj;
  std::size_t si = 0, ti = 0;
  for (int id : prompt) {
    if (id == kSceneSentinel) {
      seq.items.push_back({SequenceItem::kScene, si++});
    } else if (id == kTrajSentinel) {
      seq.items.push_back({SequenceItem::kTraj, ti++});
    } else {
      if (id < 0 || id >= vocab.score_token()) throw ContractError("prompt id " + std::to_string(id) + " outside the vocabulary");
      seq.items.push_back({SequenceItem::kText, static_cast<std::size_t>(id)});
    }
  }
  seq.items.push_back({SequenceItem::kText, static_cast<std::size_t>(vocab.score_token())});
  seq.score_position = seq.items.size() - 1;
  seq.mask = AttentionMask::causal(seq.items.size());
  return seq;
}

ScoreVector make_score(const Tensor& squashed, const MetricConfig& mcfg) {
  if (squashed.numel() != 4) throw DimensionError("score vector needs 4 components, got " + shape_str(squashed.shape()));
  const auto d = squashed.data();
  ScoreVector s;
  s.objectives = {d[0], d[1], d[2], d[3]};
  s.aggregate = objective_aggregate(s.objectives, mcfg);
  return s;
}

std::size_t select_candidate(const std::vector<double>& aggregates) {
  if (aggregates.empty()) throw ContractError("cannot select from an empty candidate list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < aggregates.size(); ++i)
    if (aggregates[i] > aggregates[best]) best = i;
  return best;
}

std::size_t select_candidate(const std::vector<ScoreVector>& scores) {
  std::vector<double> agg;
  for (const auto& s : scores) agg.push_back(s.aggregate);
  return select_candidate(agg);
}

Tensor candidate_descriptor(const Trajectory& traj, const Tensor& s_t, const Tensor& s_tk, const GridSpec& g) {
  std::vector<double> poses;
  for (const auto& p : traj.poses) {
    poses.push_back(p.x * kPositionScale);
    poses.push_back(p.y * kPositionScale);
    poses.push_back(p.heading);
  }
  const std::size_t T = traj.poses.size();
  const Tensor now = reshape(sample_grid(s_t, traj, g), {T * s_t.dim(2)});
  const Tensor later = reshape(sample_grid(s_tk, traj, g), {T * s_tk.dim(2)});
  return concat({Tensor::vector(std::move(poses)), now, later}, 0);
}

Tensor variant_mean(const SceneVariantSet& s) {
  if (s.variants.empty()) throw ContractError("empty scene variant set");
  Tensor total = s.variants.front();
  for (std::size_t i = 1; i < s.variants.size(); ++i) total = add(total, s.variants[i]);
  return scale(total, 1.0 / static_cast<double>(s.variants.size()));
}

Vloe::Vloe(ParamStore& store, const VloeConfig& cfg, const std::string& prefix) : cfg_(cfg), prefix_(prefix) {
  const std::size_t C = cfg.C, D = cfg.d_lm;
  if (C == 0 || D == 0 || cfg.metric_queries == 0 || cfg.horizon == 0) throw ConfigError("evaluator dimensions must be positive");
  if (cfg.conv_stride < 2) throw ConfigError("scene convolution stride must be at least 2");
  const std::string p = prefix + ".";
  std::size_t h = cfg.grid_h, w = cfg.grid_w, channels = 2 * C;
  while (std::min(h, w) >= 2 * cfg.conv_stride) {
    const std::size_t i = conv_w_.size();
    const std::size_t k = cfg.conv_stride;
    conv_w_.push_back(store.uniform(p + "scene.conv" + std::to_string(i) + ".w", {C, channels, k, k}, channels * k * k));
    conv_b_.push_back(store.uniform(p + "scene.conv" + std::to_string(i) + ".b", {C}, channels * k * k));
    h = (h - k) / k + 1;
    w = (w - k) / k + 1;
    channels = C;
  }
  scene_tokens_ = h * w;
  scene_proj_ = nn::Linear(store, p + "scene.proj", channels, C);
  scene_norm_ = nn::LayerNorm(store, p + "scene.norm", C);
  scene_attn_ = nn::Attention(store, p + "scene.attn", C, cfg.heads);

  const std::size_t desc = 3 * cfg.horizon + 2 * C * cfg.horizon;
  traj_proj_ = nn::Linear(store, p + "traj.proj", desc, C);
  traj_norm_ = nn::LayerNorm(store, p + "traj.norm", C);
  metric_queries_ = store.uniform(p + "traj.queries", {cfg.metric_queries, C}, C);
  traj_attn_ = nn::Attention(store, p + "traj.attn", C, cfg.heads);

  word_embed_ = store.uniform(p + "lm.embed", {vocab_.size() + 1, D}, D);
  scene_adapter_ = nn::Linear(store, p + "lm.scene_adapter", C, D);
  traj_adapter_ = nn::Linear(store, p + "lm.traj_adapter", C, D);
  positions_ = store.uniform(p + "lm.positions", {cfg.max_length, D}, D);
  for (std::size_t l = 0; l < cfg.lm_layers; ++l)
    lm_.emplace_back(store, p + "lm.layer" + std::to_string(l), D, cfg.lm_heads, 4 * D);
  lm_norm_ = nn::LayerNorm(store, p + "lm.norm", D);
  head_ = nn::Linear(store, p + "head", D, 4);
}

Tensor Vloe::encode_scene_tokens(const Tensor& s_t, const Tensor& s_tk) const {
  if (s_t.shape() != s_tk.shape() || s_t.rank() != 3)
    throw DimensionError("scene inputs must share a [H, W, C] shape: " + shape_str(s_t.shape()) + " vs " + shape_str(s_tk.shape()));
  if (s_t.dim(0) != cfg_.grid_h || s_t.dim(1) != cfg_.grid_w || s_t.dim(2) != cfg_.C)
    throw DimensionError("scene input " + shape_str(s_t.shape()) + " does not match the evaluator grid");
  Tensor x = permute(concat({s_t, s_tk}, 2), {2, 0, 1});  // [2C, H, W]
  for (std::size_t i = 0; i < conv_w_.size(); ++i) {
    x = conv2d(x, conv_w_[i], cfg_.conv_stride, conv_b_[i]);
    if (i + 1 < conv_w_.size()) x = relu(x);
  }
  const std::size_t ch = x.dim(0);
  const Tensor tokens = permute(reshape(x, {ch, x.dim(1) * x.dim(2)}), {1, 0});
  const Tensor proj = scene_norm_(relu(scene_proj_(tokens)));
  return add(proj, scene_attn_(proj, proj));
}

Tensor Vloe::encode_traj_tokens(const std::vector<Tensor>& descriptors) const {
  if (descriptors.empty()) throw ContractError("no candidate trajectories to encode");
  std::vector<Tensor> rows;
  for (const auto& d : descriptors) rows.push_back(reshape(d, {1, d.numel()}));
  const Tensor proj = traj_norm_(relu(traj_proj_(concat(rows, 0))));
  return traj_attn_(metric_queries_, proj);
}

std::vector<int> Vloe::prompt_ids(Command command) const {
  return vocab_.tokenize(render_prompt(cfg_.prompt_template, command), scene_tokens_, cfg_.metric_queries);
}

ReasoningSequence Vloe::assemble(Command command, const Tensor& scene, const Tensor& traj) const {
  return assemble_reasoning_sequence(prompt_ids(command), scene, traj, vocab_);
}

Tensor Vloe::critic_hidden(const ReasoningSequence& seq) const {
  const std::size_t L = seq.length();
  if (L > cfg_.max_length)
    throw ContractError("reasoning sequence of length " + std::to_string(L) + " exceeds the maximum " + std::to_string(cfg_.max_length));
  // Consecutive items of one kind are embedded together.
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < L;) {
    std::size_t j = i;
    while (j < L && seq.items[j].kind == seq.items[i].kind) ++j;
    if (seq.items[i].kind == SequenceItem::kText) {
      std::vector<std::size_t> ids;
      for (std::size_t k = i; k < j; ++k) ids.push_back(seq.items[k].index);
      parts.push_back(embedding(word_embed_, ids));
    } else {
      const bool scene = seq.items[i].kind == SequenceItem::kScene;
      const Tensor& src = scene ? seq.scene : seq.traj;
      std::vector<std::size_t> rows;
      for (std::size_t k = i; k < j; ++k) rows.push_back(seq.items[k].index);
      const Tensor picked = embedding(src, rows);
      parts.push_back(scene ? scene_adapter_(picked) : traj_adapter_(picked));
    }
    i = j;
  }
  Tensor x = add(concat(parts, 0), slice(positions_, 0, 0, L));
  for (const auto& layer : lm_) x = layer(x, &seq.mask);
  return lm_norm_(x);
}

Tensor Vloe::critic_infer(const ReasoningSequence& seq) const {
  const Tensor h = critic_hidden(seq);
  return reshape(slice(h, 0, seq.score_position, 1), {cfg_.d_lm});
}

Tensor Vloe::score_head(const Tensor& h_eval) const { return sigmoid(head_(h_eval)); }

std::vector<Tensor> Vloe::score_descriptors(const Tensor& scene, const std::vector<Tensor>& descriptors,
                                            Command command) const {
  std::vector<Tensor> out;
  for (const auto& d : descriptors) out.push_back(score_head(critic_infer(assemble(command, scene, encode_traj_tokens({d})))));
  return out;
}

std::vector<Tensor> Vloe::score_candidates(const CandidateSet& set, Command command, const GridSpec& g) const {
  const Tensor scene = encode_scene_tokens(variant_mean(set.current), variant_mean(set.future));
  std::vector<Tensor> descriptors;
  for (std::size_t n = 0; n < set.candidates.size(); ++n)
    descriptors.push_back(candidate_descriptor(set.candidates[n].refined, set.current.variants[n], set.future.variants[n], g));
  return score_descriptors(scene, descriptors, command);
}

void Vloe::zero_head(ParamStore& store) const {
  store.fill(prefix_ + ".head.w", 0.0);
  store.fill(prefix_ + ".head.b", 0.0);
}

}  // namespace gensel
