#pragma once

// Full scoring network: fusion adapter -> hyperbolic graph attention ->
// hyperbolic classifier.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lvad/cfa.hpp"
#include "lvad/classifier.hpp"
#include "lvad/hlgatt.hpp"

namespace lvad {

struct ModelConfig {
  CfaConfig cfa;
  HlgattConfig hlgatt;
  bool visual_only = false;  // ablation: modulation gate held at zero

  /// Keeps the shared widths consistent (the graph attention consumes the
  /// fused width).
  void sync() { hlgatt.d_in = cfa.d_model(); }

  void validate() const {
    cfa.validate();
    hlgatt.validate();
    if (hlgatt.d_in != cfa.d_model()) throw ConfigError("model: graph attention width differs from fused width");
  }
};

class Model {
public:
  Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.sync();
    config_.validate();
    std::mt19937_64 rng(seed);
    cfa_ = CfaParams::init(config_.cfa, rng);
    hlgatt_ = HlgattParams::init(config_.hlgatt, rng);
    classifier_ = ClassifierParams::init(config_.hlgatt.out_width(), rng);
  }

  const ModelConfig& config() const { return config_; }
  const CfaParams& cfa() const { return cfa_; }
  const HlgattParams& hlgatt() const { return hlgatt_; }
  const ClassifierParams& classifier() const { return classifier_; }
  CfaParams& cfa() { return cfa_; }
  HlgattParams& hlgatt() { return hlgatt_; }
  ClassifierParams& classifier() { return classifier_; }

  /// Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    auto out = cfa_.named();
    for (auto& entry : hlgatt_.named()) out.push_back(std::move(entry));
    for (auto& entry : classifier_.named()) out.push_back(std::move(entry));
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (auto t : parameters()) t.zero_grad();
  }

  /// T x 1 column of snippet scores.
  Tensor forward(const Tensor& visual, const Tensor& audio, const ForwardMode& mode) const {
    ForwardMode effective = mode;
    effective.audio_gate_off = mode.audio_gate_off || config_.visual_only;
    auto fused = cfa_forward(visual, audio, cfa_, config_.cfa, effective);
    auto features = hlgatt_forward(fused, hlgatt_, config_.hlgatt);
    return classify(features, classifier_, Curvature(config_.hlgatt.eta));
  }

  ScoreSeries score(const Tensor& visual, const Tensor& audio) const {
    NoGradGuard no_grad;
    auto s = forward(visual, audio, ForwardMode{});
    return {{s.data().begin(), s.data().end()}, kFramesPerSnippet};
  }

private:
  ModelConfig config_;
  CfaParams cfa_;
  HlgattParams hlgatt_;
  ClassifierParams classifier_;
};

}  // namespace lvad
