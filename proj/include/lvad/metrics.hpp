#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "lvad/errors.hpp"

namespace lvad {

/// Area under the precision-recall curve, stepping at every distinct score:
/// sum over thresholds t (descending) of (R(t) - R(t_prev)) * P(t), with
/// all frames scoring >= t predicted positive.
inline double average_precision(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  if (scores.size() != truth.size()) throw EvaluationError("average_precision: score/truth length mismatch");
  const auto positives = std::count(truth.begin(), truth.end(), std::uint8_t{1});
  if (positives == 0) throw EvaluationError("average_precision: no positive frames");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (truth[order[i]] ? tp : fp)++;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

struct ThresholdMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  // 0 when nothing is predicted positive
  double recall = 0.0;     // 0 when there are no positives
};

/// Frames with score >= threshold are predicted anomalous.
inline ThresholdMetrics threshold_metrics(std::span<const double> scores, std::span<const std::uint8_t> truth,
                                          double threshold = 0.5) {
  if (scores.size() != truth.size()) throw EvaluationError("threshold_metrics: score/truth length mismatch");
  if (scores.empty()) throw EvaluationError("threshold_metrics: no frames");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted) {
      (truth[i] ? tp : fp)++;
    } else {
      (truth[i] ? fn : tn)++;
    }
  }
  ThresholdMetrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return m;
}

}  // namespace lvad
