#pragma once

// Future-aware trajectory generator: anchors become action tokens, tokens are
// splatted into copies of the BEV feature grid (one scene variant per anchor),
// a Transformer / 2x Mamba / Transformer world model rolls each variant
// forward, and a cross-attention decoder refines every anchor from the current
// and rolled-out features.

#include <array>
#include <vector>

#include "gensel/anchors.hpp"
#include "gensel/bev.hpp"
#include "gensel/nn.hpp"
#include "gensel/params.hpp"

namespace gensel {

struct FatgConfig {
  GridSpec grid;
  std::size_t horizon = 8;
  double dt = 0.5;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t mamba_state = 8;
  std::vector<double> rollout_steps{2.0, 4.0};  // seconds after t, strictly increasing
  std::array<double, 3> offset_scale{2.0, 2.0, 0.3};  // tanh bound on (x, y, heading) offsets
};

/// Velocity, acceleration and a one-hot command.
inline constexpr std::size_t kEgoFeatures = 5;
Tensor ego_features(const EgoStatus& ego);

/// [T, 3] anchor pose features (positions scaled by 0.1, heading in radians).
Tensor anchor_features(const Trajectory& anchor);

/// Adds `token` at every waypoint's bilinear footprint. Waypoints whose whole
/// footprint lies outside the grid are skipped; partial footprints are
/// renormalized over their in-grid cells. The input is not modified.
Tensor inject_action(const Tensor& grid, const Tensor& token, const Trajectory& anchor, const GridSpec& g);

struct SceneVariantSet {
  std::vector<Tensor> variants;  // N x [H, W, C]
  std::vector<std::size_t> anchor_ids;
  double t = 0.0;

  std::size_t size() const { return variants.size(); }
  Tensor stacked() const;  // [N, H, W, C]
};

/// Bilinear samples of a [H, W, C] grid at each waypoint -> [T, C]. Waypoints
/// outside the grid sample zeros.
Tensor sample_grid(const Tensor& grid, const Trajectory& traj, const GridSpec& g);

struct TrajectoryCandidate {
  std::size_t anchor = 0;
  Trajectory refined;
  Tensor offsets;  // [T, 3], already bounded
  Tensor hidden;   // [C] decoder state, token + cross-attention readout
};

struct CandidateSet {
  std::vector<TrajectoryCandidate> candidates;
  SceneVariantSet current;  // S_{f,t}
  SceneVariantSet future;   // S_{f,t+k} after the last rollout step
};

class Fatg {
 public:
  Fatg(ParamStore& store, const FatgConfig& cfg, const std::string& prefix = "fatg");

  const FatgConfig& config() const { return cfg_; }

  Tensor encode_action_token(const Trajectory& anchor, const EgoStatus& ego) const;
  SceneVariantSet build_scene_variants(const Tensor& grid, const AnchorVocabulary& vocab, const EgoStatus& ego) const;
  /// One world-model step on a single [H, W, C] variant.
  Tensor wam_step(const Tensor& variant) const;
  /// The two residual Mamba updates on a token sequence [L, C].
  Tensor temporal_stage(const Tensor& z) const;
  SceneVariantSet wam_step(const SceneVariantSet& s, double k) const;
  /// The m-th element is the state after m + 1 steps.
  std::vector<SceneVariantSet> wam_rollout(const SceneVariantSet& s) const;
  std::vector<Tensor> wam_rollout(const Tensor& variant) const;

  TrajectoryCandidate decode_trajectory(const Tensor& token, const Tensor& s_t, const Tensor& s_tk,
                                        const Trajectory& anchor, std::size_t anchor_id = 0) const;

  CandidateSet generate_candidates(const Tensor& grid, const AnchorVocabulary& vocab, const EgoStatus& ego) const;
  /// Same pipeline for a single anchor; used for training on the executed variant.
  struct Single {
    TrajectoryCandidate candidate;
    Tensor variant;
    std::vector<Tensor> rollout;
  };
  Single generate_one(const Tensor& grid, const Trajectory& anchor, std::size_t anchor_id, const EgoStatus& ego) const;

  void zero_offset_head(ParamStore& store) const;
  void zero_mamba_outputs(ParamStore& store) const;

 private:
  FatgConfig cfg_;
  std::string prefix_;
  // action encoder
  nn::Linear act_in_;
  Tensor act_pos_;
  nn::TransformerLayer act_attn_;
  nn::Linear act_mlp1_, act_mlp2_;
  // world model
  nn::TransformerLayer wam_enc_;
  nn::LayerNorm pre_norm1_, pre_norm2_;
  nn::MambaBlock mamba1_, mamba2_;
  nn::TransformerLayer wam_dec_;
  nn::Linear wam_out_;
  // decoder
  Tensor time_embed_;  // [2, C]: current and future halves of s_aug
  nn::Attention dec_attn_;
  nn::Linear off1_, off2_;
};

}  // namespace gensel
