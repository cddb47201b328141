#include "gensel/nn.hpp"

#include <cmath>

#include "gensel/rng.hpp"

namespace gensel::nn {

Linear::Linear(ParamStore& store, const std::string& path, std::size_t in, std::size_t out, bool bias) {
  w = store.uniform(path + ".w", {in, out}, in);
  if (bias) b = store.uniform(path + ".b", {out}, in);
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& path, std::size_t width) {
  gain = store.constant(path + ".gain", {width}, 1.0);
  bias = store.constant(path + ".bias", {width}, 0.0);
}

Attention::Attention(ParamStore& store, const std::string& path, std::size_t width, std::size_t heads_)
    : q(store, path + ".q", width, width),
      k(store, path + ".k", width, width),
      v(store, path + ".v", width, width),
      o(store, path + ".o", width, width),
      heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention '" + path + "': width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

Tensor Attention::operator()(const Tensor& query, const Tensor& context, const AttentionMask* mask) const {
  return o(multi_head_attention(q(query), k(context), v(context), heads, mask));
}

TransformerLayer::TransformerLayer(ParamStore& store, const std::string& path, std::size_t width, std::size_t heads,
                                   std::size_t ffn_width)
    : ln_attn(store, path + ".ln_attn", width),
      ln_ffn(store, path + ".ln_ffn", width),
      attn(store, path + ".attn", width, heads),
      ffn_in(store, path + ".ffn_in", width, ffn_width),
      ffn_out(store, path + ".ffn_out", ffn_width, width) {}

Tensor TransformerLayer::operator()(const Tensor& x, const AttentionMask* mask) const {
  const Tensor n1 = ln_attn(x);
  const Tensor h = add(x, attn(n1, n1, mask));
  return add(h, ffn_out(relu(ffn_in(ln_ffn(h)))));
}

MambaBlock::MambaBlock(ParamStore& store, const std::string& path_, const MambaConfig& cfg_)
    : cfg(cfg_), path(path_) {
  const std::size_t d = cfg.d_model, e = cfg.inner(), n = cfg.d_state, r = cfg.rank(), k = cfg.conv_kernel;
  if (d == 0 || e == 0 || n == 0 || k == 0) throw ConfigError("mamba '" + path + "': zero-sized dimension");
  in_proj = Linear(store, path + ".in_proj", d, 2 * e);
  conv_w = store.uniform(path + ".conv.w", {e, k}, k);
  conv_b = store.uniform(path + ".conv.b", {e}, k);
  x_proj = Linear(store, path + ".x_proj", e, r + 2 * n, false);
  dt_proj = Linear(store, path + ".dt_proj", r, e, false);
  // Step sizes start log-uniform in [1e-3, 1e-1] through an inverse-softplus bias.
  std::vector<double> dt_bias(e);
  for (std::size_t i = 0; i < e; ++i) {
    const double u = keyed_uniform(store.seed(), path + ".dt_proj.b", i);
    const double dt = std::exp(std::log(1e-3) + u * (std::log(1e-1) - std::log(1e-3)));
    dt_bias[i] = dt + std::log(-std::expm1(-dt));
  }
  dt_proj.b = store.values(path + ".dt_proj.b", {e}, std::move(dt_bias));
  std::vector<double> a(e * n);
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t s = 0; s < n; ++s) a[i * n + s] = std::log(static_cast<double>(s + 1));
  a_log = store.values(path + ".a_log", {e, n}, std::move(a));
  d_skip = store.constant(path + ".d", {e}, 1.0);
  out_proj = Linear(store, path + ".out_proj", e, d);
}

Tensor MambaBlock::operator()(const Tensor& x) const {
  const std::size_t e = cfg.inner(), n = cfg.d_state, r = cfg.rank();
  const Tensor xz = in_proj(x);
  const Tensor xs = silu(causal_conv1d(slice(xz, 1, 0, e), conv_w, conv_b));
  const Tensor gate = silu(slice(xz, 1, e, e));
  const Tensor dbc = x_proj(xs);
  const Tensor delta = softplus(dt_proj(slice(dbc, 1, 0, r)));
  const Tensor b = slice(dbc, 1, r, n);
  const Tensor c = slice(dbc, 1, r + n, n);
  const Tensor a = scale(exp(a_log), -1.0);
  const Tensor y = selective_scan(xs, delta, a, b, c, d_skip);
  return out_proj(mul(y, gate));
}

}  // namespace gensel::nn
