#pragma once

// Hyperbolic snippet classifier and the top-k multiple-instance objective.

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lvad/init.hpp"
#include "lvad/lorentz.hpp"

namespace lvad {

inline constexpr std::size_t kFramesPerSnippet = 16;

/// Per-snippet anomaly scores of one video.
struct ScoreSeries {
  std::vector<double> scores;
  std::size_t frames_per_snippet = kFramesPerSnippet;

  void validate() const {
    if (frames_per_snippet == 0) throw ContractError("score series: frames_per_snippet must be positive");
    for (double s : scores) {
      if (!(s >= 0.0 && s <= 1.0)) throw ContractError("score series: score outside [0, 1]");
    }
  }

  /// Each snippet score repeated over its frames.
  std::vector<double> frame_scores() const {
    std::vector<double> out;
    out.reserve(scores.size() * frames_per_snippet);
    for (double s : scores) out.insert(out.end(), frames_per_snippet, s);
    return out;
  }
};

using KRule = std::function<std::size_t(std::size_t)>;

/// k = floor(T / 16) + 1, capped at T.
inline std::size_t default_k(std::size_t snippets) { return std::min(snippets, snippets / 16 + 1); }

struct ClassifierParams {
  Tensor weight;  // 1 x width, spatial map of the Lorentz linear
  Tensor bias;    // 1 x 1

  static ClassifierParams init(std::size_t width, std::mt19937_64& rng) {
    return {xavier_uniform(1, width, rng), zero_param({1, 1})};
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    return {{"classifier.weight", weight}, {"classifier.bias", bias}};
  }
};

/// Lifts each row onto the hyperboloid, maps it with a Lorentz linear to a
/// single spatial coordinate and squashes that coordinate with a sigmoid.
/// Returns a T x 1 column of scores in (0, 1).
inline Tensor classify(const Tensor& features, const ClassifierParams& p, const Curvature& k) {
  auto lifted = exp_map_origin(features, k);
  auto mapped = lorentz_linear(lifted, p.weight, p.bias);
  return sigmoid(spatial_part(mapped.values));
}

/// Indices of the k largest entries, ties resolved towards the earlier index.
inline std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k) {
  if (k == 0 || k > scores.size()) {
    throw ContractError("topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

/// Differentiable mean of the k largest entries of a score tensor. The
/// selection itself is treated as constant.
inline Tensor topk_mean(const Tensor& scores, std::size_t k) {
  auto picked = topk_indices(scores.data(), k);
  auto mask = Tensor::zeros(scores.shape());
  for (auto i : picked) mask.mutable_data()[i] = 1.0 / static_cast<double>(k);
  return sum(mul(scores, mask));
}

inline double topk_mean(const ScoreSeries& series, std::size_t k) {
  auto picked = topk_indices(series.scores, k);
  double acc = 0.0;
  for (auto i : picked) acc += series.scores[i];
  return acc / static_cast<double>(k);
}

inline constexpr double kLossClamp = 1e-7;

/// Mean binary cross-entropy of bag-level scores against video labels.
inline Tensor mil_loss(const std::vector<std::pair<Tensor, int>>& bags) {
  if (bags.empty()) throw ContractError("mil_loss: empty batch");
  Tensor total;
  for (const auto& [score, label] : bags) {
    if (label != 0 && label != 1) throw ContractError("mil_loss: labels must be 0 or 1");
    auto c = clamp(score, kLossClamp, 1.0 - kLossClamp);
    auto term = label == 1 ? log(c) : log(add_scalar(scalar_mul(c, -1.0), 1.0));
    total = total.defined() ? add(total, term) : term;
  }
  return scalar_mul(total, -1.0 / static_cast<double>(bags.size()));
}

inline double mil_loss(const std::vector<std::pair<double, int>>& bags) {
  std::vector<std::pair<Tensor, int>> wrapped;
  for (const auto& [s, y] : bags) wrapped.emplace_back(Tensor::scalar(s), y);
  return mil_loss(wrapped).item();
}

}  // namespace lvad
