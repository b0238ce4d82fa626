#pragma once

// Cross-modal fusion adapter: visual queries attend over projected audio
// keys/values extended with learnable prefix rows, the attention output is
// refined by a bottleneck adapter, gated by a sigmoid modulation computed
// from audio, added to the visual stream and passed through a final
// fully connected layer.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lvad/init.hpp"
#include "lvad/ops.hpp"

namespace lvad {

struct CfaConfig {
  std::size_t d_visual = 1024;  // also the fused width
  std::size_t d_audio = 128;
  std::size_t heads = 4;
  std::size_t prefix_dim = 64;
  std::size_t bottleneck = 256;
  double dropout = 0.1;

  std::size_t d_model() const { return d_visual; }
  std::size_t d_head() const { return heads ? d_visual / heads : 0; }

  void validate() const {
    if (d_visual == 0 || d_audio == 0) throw ConfigError("cfa: feature widths must be positive");
    if (heads == 0 || d_visual % heads != 0) {
      throw ConfigError("cfa: head count " + std::to_string(heads) + " must divide the model width " +
                        std::to_string(d_visual));
    }
    if (bottleneck == 0) throw ConfigError("cfa: bottleneck width must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("cfa: dropout must lie in [0, 1)");
  }
};

/// Per-call switches shared by every forward pass.
struct ForwardMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
  bool audio_gate_off = false;     // force the modulation gate to zero
};

struct CfaParams {
  std::vector<Tensor> prefix_k;  // per head, prefix_dim x d_head
  std::vector<Tensor> prefix_v;
  Tensor w_q, w_k, w_v, w_o;
  Tensor down_w, down_b, up_w, up_b;
  Tensor w_mod;
  Tensor fc_w, fc_b;

  static CfaParams init(const CfaConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const auto dm = cfg.d_model();
    CfaParams p;
    for (std::size_t h = 0; h < cfg.heads && cfg.prefix_dim > 0; ++h) {
      p.prefix_k.push_back(zero_param({cfg.prefix_dim, cfg.d_head()}));
      p.prefix_v.push_back(zero_param({cfg.prefix_dim, cfg.d_head()}));
    }
    p.w_q = xavier_uniform(dm, cfg.d_visual, rng);
    p.w_k = xavier_uniform(dm, cfg.d_audio, rng);
    p.w_v = xavier_uniform(dm, cfg.d_audio, rng);
    p.w_o = xavier_uniform(dm, dm, rng);
    p.down_w = xavier_uniform(cfg.bottleneck, dm, rng);
    p.down_b = zero_param({1, cfg.bottleneck});
    p.up_w = xavier_uniform(dm, cfg.bottleneck, rng);
    p.up_b = zero_param({1, dm});
    p.w_mod = xavier_uniform(dm, cfg.d_audio, rng);
    p.fc_w = xavier_uniform(dm, dm, rng);
    p.fc_b = zero_param({1, dm});
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t h = 0; h < prefix_k.size(); ++h) {
      out.emplace_back("cfa.prefix_k." + std::to_string(h), prefix_k[h]);
      out.emplace_back("cfa.prefix_v." + std::to_string(h), prefix_v[h]);
    }
    out.emplace_back("cfa.w_q", w_q);
    out.emplace_back("cfa.w_k", w_k);
    out.emplace_back("cfa.w_v", w_v);
    out.emplace_back("cfa.w_o", w_o);
    out.emplace_back("cfa.down_w", down_w);
    out.emplace_back("cfa.down_b", down_b);
    out.emplace_back("cfa.up_w", up_w);
    out.emplace_back("cfa.up_b", up_b);
    out.emplace_back("cfa.w_mod", w_mod);
    out.emplace_back("cfa.fc_w", fc_w);
    out.emplace_back("cfa.fc_b", fc_b);
    return out;
  }
};

/// Intermediate per-head results of prefix_attention, for inspection.
struct AttentionTrace {
  std::vector<Tensor> weights;       // T x (T + prefix_dim), rows sum to 1
  std::vector<Tensor> head_outputs;  // T x d_head, before the output projection
};

/// Multi-head cross-modal attention with visual queries and audio
/// keys/values, each head's keys and values extended by its prefix rows.
inline Tensor prefix_attention(const Tensor& visual, const Tensor& audio, const CfaParams& p, const CfaConfig& cfg,
                               AttentionTrace* trace = nullptr) {
  if (cfg.heads == 0 || cfg.d_head() == 0) throw ConfigError("prefix_attention: zero-width attention heads");
  if (visual.rank() != 2 || audio.rank() != 2 || visual.rows() != audio.rows()) {
    throw DimensionError("prefix_attention: visual " + shape_str(visual.shape()) + " and audio " +
                         shape_str(audio.shape()) + " must be T x D with equal T");
  }
  const auto dh = cfg.d_head();
  auto q = linear(visual, p.w_q);
  auto k = linear(audio, p.w_k);
  auto v = linear(audio, p.w_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    auto qh = slice(q, 1, h * dh, dh);
    auto kh = slice(k, 1, h * dh, dh);
    auto vh = slice(v, 1, h * dh, dh);
    if (!p.prefix_k.empty()) {
      kh = concat({kh, p.prefix_k[h]}, 0);
      vh = concat({vh, p.prefix_v[h]}, 0);
    }
    auto weights = softmax(scalar_mul(matmul(qh, transpose(kh)), scale));
    auto out = matmul(weights, vh);
    if (trace) {
      trace->weights.push_back(weights);
      trace->head_outputs.push_back(out);
    }
    heads.push_back(out);
  }
  return linear(heads.size() == 1 ? heads[0] : concat(heads, 1), p.w_o);
}

/// up(dropout(GELU(down(x)))).
inline Tensor bottleneck_adapter(const Tensor& attended, const CfaParams& p, const CfaConfig& cfg,
                                 const ForwardMode& mode) {
  auto hidden = gelu(linear(attended, p.down_w, p.down_b));
  if (mode.training && cfg.dropout > 0.0) {
    if (!mode.rng) throw ContractError("bottleneck_adapter: training mode needs an RNG for dropout");
    hidden = dropout(hidden, cfg.dropout, *mode.rng, true);
  }
  return linear(hidden, p.up_w, p.up_b);
}

/// sigmoid(F_A W_mod^T), one gate value per fused feature.
inline Tensor modulation(const Tensor& audio, const CfaParams& p) { return sigmoid(linear(audio, p.w_mod)); }

/// fc(F_V + adapted * gate).
inline Tensor fuse(const Tensor& visual, const Tensor& adapted, const Tensor& gate, const CfaParams& p) {
  if (visual.shape() != adapted.shape() || adapted.shape() != gate.shape()) {
    throw DimensionError("fuse: visual, adapted and gate must share a shape");
  }
  return linear(add(visual, mul(adapted, gate)), p.fc_w, p.fc_b);
}

inline Tensor cfa_forward(const Tensor& visual, const Tensor& audio, const CfaParams& p, const CfaConfig& cfg,
                          const ForwardMode& mode) {
  if (visual.cols() != cfg.d_visual || audio.cols() != cfg.d_audio) {
    throw DimensionError("cfa: expected widths " + std::to_string(cfg.d_visual) + "/" +
                         std::to_string(cfg.d_audio) + ", got " + shape_str(visual.shape()) + "/" +
                         shape_str(audio.shape()));
  }
  auto adapted = bottleneck_adapter(prefix_attention(visual, audio, p, cfg), p, cfg, mode);
  auto gate = mode.audio_gate_off ? Tensor::zeros(adapted.shape()) : modulation(audio, p);
  return fuse(visual, adapted, gate, p);
}

}  // namespace lvad
