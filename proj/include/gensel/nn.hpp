#pragma once

// Parameterized layers shared by the trajectory generator and the evaluator.
// Each layer registers its tensors in a ParamStore under a dotted prefix and
// keeps handles to them; forward passes are const.

#include <string>

#include "gensel/params.hpp"
#include "gensel/tensor.hpp"

namespace gensel::nn {

struct Linear {
  Tensor w;
  Tensor b;

  Linear() = default;
  Linear(ParamStore& store, const std::string& path, std::size_t in, std::size_t out, bool bias = true);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& path, std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

/// Projected multi-head attention: out = W_o * MHA(W_q q, W_k kv, W_v kv).
struct Attention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  Attention() = default;
  Attention(ParamStore& store, const std::string& path, std::size_t width, std::size_t heads);
  Tensor operator()(const Tensor& query, const Tensor& context, const AttentionMask* mask = nullptr) const;
};

/// Pre-norm layer: x + Attn(LN x) then x + FFN(LN x), ReLU feed-forward.
struct TransformerLayer {
  LayerNorm ln_attn, ln_ffn;
  Attention attn;
  Linear ffn_in, ffn_out;

  TransformerLayer() = default;
  TransformerLayer(ParamStore& store, const std::string& path, std::size_t width, std::size_t heads,
                   std::size_t ffn_width);
  Tensor operator()(const Tensor& x, const AttentionMask* mask = nullptr) const;
};

struct MambaConfig {
  std::size_t d_model = 16;
  std::size_t d_state = 8;
  std::size_t expand = 2;
  std::size_t conv_kernel = 4;
  std::size_t dt_rank = 0;  // 0 -> ceil(d_model / 16)

  std::size_t inner() const { return expand * d_model; }
  std::size_t rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
};

/// Selective state-space block: input projection into a scan branch and a
/// gate branch, causal depthwise convolution, input-dependent (delta, B, C),
/// selective scan, SiLU gating, output projection. Returns the block output
/// only; residual wiring is the caller's.
struct MambaBlock {
  MambaConfig cfg;
  Linear in_proj;
  Tensor conv_w, conv_b;
  Linear x_proj;
  Linear dt_proj;
  Tensor a_log;
  Tensor d_skip;
  Linear out_proj;
  std::string path;

  MambaBlock() = default;
  MambaBlock(ParamStore& store, const std::string& path, const MambaConfig& cfg);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace gensel::nn
