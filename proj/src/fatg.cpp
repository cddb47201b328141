#include "gensel/fatg.hpp"

#include <cmath>

namespace gensel {

namespace {

constexpr double kPositionScale = 0.1;

GridSpec spec_of(const Tensor& grid, const GridSpec& base) {
  if (grid.rank() != 3) throw DimensionError("BEV grid must be [H, W, C], got " + shape_str(grid.shape()));
  GridSpec g = base;
  g.H = grid.dim(0);
  g.W = grid.dim(1);
  g.C = grid.dim(2);
  return g;
}

}  // namespace

Tensor ego_features(const EgoStatus& ego) {
  std::vector<double> f{ego.velocity * kPositionScale, ego.acceleration * 0.25, 0.0, 0.0, 0.0};
  f[2 + static_cast<std::size_t>(ego.command)] = 1.0;
  return Tensor::vector(std::move(f));
}

Tensor anchor_features(const Trajectory& anchor) {
  std::vector<double> f;
  f.reserve(anchor.poses.size() * 3);
  for (const auto& p : anchor.poses) {
    f.push_back(p.x * kPositionScale);
    f.push_back(p.y * kPositionScale);
    f.push_back(p.heading);
  }
  return Tensor({anchor.poses.size(), 3}, std::move(f));
}

Tensor inject_action(const Tensor& grid, const Tensor& token, const Trajectory& anchor, const GridSpec& base) {
  const GridSpec g = spec_of(grid, base);
  if (token.numel() != g.C)
    throw DimensionError("action token width " + std::to_string(token.numel()) + " does not match C=" + std::to_string(g.C));
  std::vector<std::size_t> rows;
  std::vector<double> weights;
  for (const auto& p : anchor.poses) {
    const GridPoint gp = project_to_bev(p.x, p.y, g);
    for (const auto& c : clip_footprint(bilinear_footprint(gp.h, gp.w), g)) {
      rows.push_back(c.h * g.W + c.w);
      weights.push_back(c.weight);
    }
  }
  return scatter_add_rows(grid, token, rows, weights);
}

Tensor SceneVariantSet::stacked() const {
  if (variants.empty()) throw ContractError("empty scene variant set");
  std::vector<Tensor> parts;
  for (const auto& v : variants) {
    Shape s{1};
    s.insert(s.end(), v.shape().begin(), v.shape().end());
    parts.push_back(reshape(v, s));
  }
  return concat(parts, 0);
}

Tensor sample_grid(const Tensor& grid, const Trajectory& traj, const GridSpec& base) {
  const GridSpec g = spec_of(grid, base);
  const std::size_t T = traj.poses.size(), cells = g.H * g.W;
  std::vector<double> wm(T * cells, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    const GridPoint gp = project_to_bev(traj.poses[i].x, traj.poses[i].y, g);
    for (const auto& c : clip_footprint(bilinear_footprint(gp.h, gp.w), g)) wm[i * cells + c.h * g.W + c.w] += c.weight;
  }
  return matmul(Tensor({T, cells}, std::move(wm)), reshape(grid, {cells, g.C}));
}

Fatg::Fatg(ParamStore& store, const FatgConfig& cfg, const std::string& prefix) : cfg_(cfg), prefix_(prefix) {
  const std::size_t C = cfg.grid.C, T = cfg.horizon, ffn = cfg.ffn_mult * C;
  if (C == 0 || T == 0) throw ConfigError("generator needs C > 0 and T > 0");
  if (cfg.rollout_steps.empty()) throw ConfigError("rollout steps must not be empty");
  for (std::size_t i = 0; i < cfg.rollout_steps.size(); ++i) {
    const double prev = i == 0 ? 0.0 : cfg.rollout_steps[i - 1];
    if (!(cfg.rollout_steps[i] > prev)) throw ConfigError("rollout steps must be positive and strictly increasing");
  }
  const std::string p = prefix + ".";
  act_in_ = nn::Linear(store, p + "action.in", 3, C);
  act_pos_ = store.uniform(p + "action.pos", {T, C}, C);
  act_attn_ = nn::TransformerLayer(store, p + "action.attn", C, cfg.heads, ffn);
  act_mlp1_ = nn::Linear(store, p + "action.mlp1", C + kEgoFeatures, C);
  act_mlp2_ = nn::Linear(store, p + "action.mlp2", C, C);

  nn::MambaConfig mc;
  mc.d_model = C;
  mc.d_state = cfg.mamba_state;
  wam_enc_ = nn::TransformerLayer(store, p + "wam.enc", C, cfg.heads, ffn);
  pre_norm1_ = nn::LayerNorm(store, p + "wam.prenorm1", C);
  pre_norm2_ = nn::LayerNorm(store, p + "wam.prenorm2", C);
  mamba1_ = nn::MambaBlock(store, p + "wam.mamba1", mc);
  mamba2_ = nn::MambaBlock(store, p + "wam.mamba2", mc);
  wam_dec_ = nn::TransformerLayer(store, p + "wam.dec", C, cfg.heads, ffn);
  wam_out_ = nn::Linear(store, p + "wam.out", C, C);

  time_embed_ = store.uniform(p + "decoder.time", {2, C}, C);
  dec_attn_ = nn::Attention(store, p + "decoder.attn", C, cfg.heads);
  off1_ = nn::Linear(store, p + "decoder.offset1", C, C);
  off2_ = nn::Linear(store, p + "decoder.offset2", C, 3 * T);
}

Tensor Fatg::encode_action_token(const Trajectory& anchor, const EgoStatus& ego) const {
  if (anchor.horizon() != cfg_.horizon)
    throw DimensionError("anchor has " + std::to_string(anchor.horizon()) + " poses, generator expects " +
                         std::to_string(cfg_.horizon));
  const Tensor x = add(act_in_(anchor_features(anchor)), act_pos_);
  const Tensor latent = mean_rows(act_attn_(x));
  return act_mlp2_(relu(act_mlp1_(concat({latent, ego_features(ego)}, 0))));
}

SceneVariantSet Fatg::build_scene_variants(const Tensor& grid, const AnchorVocabulary& vocab, const EgoStatus& ego) const {
  SceneVariantSet s;
  for (std::size_t n = 0; n < vocab.size(); ++n) {
    s.variants.push_back(inject_action(grid, encode_action_token(vocab.anchors[n], ego), vocab.anchors[n], cfg_.grid));
    s.anchor_ids.push_back(n);
  }
  return s;
}

Tensor Fatg::temporal_stage(const Tensor& z) const {
  const Tensor z1 = add(z, mamba1_(pre_norm1_(z)));
  return add(z1, mamba2_(pre_norm2_(z1)));
}

Tensor Fatg::wam_step(const Tensor& variant) const {
  const Shape shape = variant.shape();
  const GridSpec g = spec_of(variant, cfg_.grid);
  const Tensor tokens = reshape(variant, {g.H * g.W, g.C});
  const Tensor z_t = wam_enc_(tokens);
  const Tensor z_tk = temporal_stage(z_t);
  return reshape(wam_out_(wam_dec_(z_tk)), shape);
}

SceneVariantSet Fatg::wam_step(const SceneVariantSet& s, double k) const {
  SceneVariantSet out;
  out.anchor_ids = s.anchor_ids;
  out.t = s.t + k;
  for (const auto& v : s.variants) out.variants.push_back(wam_step(v));
  return out;
}

std::vector<SceneVariantSet> Fatg::wam_rollout(const SceneVariantSet& s) const {
  std::vector<SceneVariantSet> out;
  double prev = 0.0;
  for (double step : cfg_.rollout_steps) {
    out.push_back(wam_step(out.empty() ? s : out.back(), step - prev));
    prev = step;
  }
  return out;
}

std::vector<Tensor> Fatg::wam_rollout(const Tensor& variant) const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < cfg_.rollout_steps.size(); ++i) out.push_back(wam_step(out.empty() ? variant : out.back()));
  return out;
}

TrajectoryCandidate Fatg::decode_trajectory(const Tensor& token, const Tensor& s_t, const Tensor& s_tk,
                                            const Trajectory& anchor, std::size_t anchor_id) const {
  if (s_t.shape() != s_tk.shape())
    throw DimensionError("current and future features differ: " + shape_str(s_t.shape()) + " vs " + shape_str(s_tk.shape()));
  const GridSpec g = spec_of(s_t, cfg_.grid);
  const std::size_t C = g.C, T = cfg_.horizon;
  if (anchor.horizon() != T) throw DimensionError("anchor horizon does not match the generator");
  const Tensor now = add(reshape(s_t, {g.H * g.W, C}), reshape(slice(time_embed_, 0, 0, 1), {C}));
  const Tensor later = add(reshape(s_tk, {g.H * g.W, C}), reshape(slice(time_embed_, 0, 1, 1), {C}));
  const Tensor s_aug = concat({now, later}, 0);
  const Tensor query = reshape(token, {1, C});
  const Tensor hidden = add(query, dec_attn_(query, s_aug));
  const Tensor raw = reshape(off2_(relu(off1_(hidden))), {T, 3});
  const Tensor offsets = mul(tanh(raw), Tensor::vector({cfg_.offset_scale[0], cfg_.offset_scale[1], cfg_.offset_scale[2]}));

  TrajectoryCandidate c;
  c.anchor = anchor_id;
  c.offsets = offsets;
  c.hidden = reshape(hidden, {C});
  c.refined.dt = anchor.dt;
  const auto od = offsets.data();
  for (std::size_t i = 0; i < T; ++i) {
    const Pose& a = anchor.poses[i];
    c.refined.poses.push_back({a.x + od[3 * i], a.y + od[3 * i + 1], wrap_angle(a.heading + od[3 * i + 2])});
  }
  return c;
}

CandidateSet Fatg::generate_candidates(const Tensor& grid, const AnchorVocabulary& vocab, const EgoStatus& ego) const {
  if (vocab.size() == 0) throw ContractError("anchor vocabulary is empty");
  CandidateSet out;
  out.current.t = 0.0;
  out.future.t = cfg_.rollout_steps.back();
  for (std::size_t n = 0; n < vocab.size(); ++n) {
    Single one = generate_one(grid, vocab.anchors[n], n, ego);
    out.current.variants.push_back(one.variant);
    out.current.anchor_ids.push_back(n);
    out.future.variants.push_back(one.rollout.back());
    out.future.anchor_ids.push_back(n);
    out.candidates.push_back(std::move(one.candidate));
  }
  return out;
}

Fatg::Single Fatg::generate_one(const Tensor& grid, const Trajectory& anchor, std::size_t anchor_id,
                                const EgoStatus& ego) const {
  const Tensor token = encode_action_token(anchor, ego);
  const Tensor variant = inject_action(grid, token, anchor, cfg_.grid);
  Single out;
  out.variant = variant;
  out.rollout = wam_rollout(variant);
  out.candidate = decode_trajectory(token, variant, out.rollout.back(), anchor, anchor_id);
  return out;
}

void Fatg::zero_offset_head(ParamStore& store) const {
  store.fill(prefix_ + ".decoder.offset2.w", 0.0);
  store.fill(prefix_ + ".decoder.offset2.b", 0.0);
}

void Fatg::zero_mamba_outputs(ParamStore& store) const {
  for (const char* m : {".wam.mamba1", ".wam.mamba2"}) {
    store.fill(prefix_ + m + ".out_proj.w", 0.0);
    store.fill(prefix_ + m + ".out_proj.b", 0.0);
  }
}

}  // namespace gensel
