#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "lvad/tensor.hpp"

namespace lvad {

/// lr(epoch) = floor + 0.5 (lr0 - floor) (1 + cos(pi epoch / epochs)).
inline double cosine_lr(std::size_t epoch, std::size_t epochs, double lr0, double floor) {
  if (epochs == 0) throw ConfigError("cosine_lr: epochs must be positive");
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs);
  return floor + 0.5 * (lr0 - floor) * (1.0 + std::cos(phase));
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers follow the order of the
/// parameter list given at construction.
class Adam {
public:
  Adam(std::vector<Tensor> params, AdamOptions options = {}) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t n = 0; n < params_.size(); ++n) {
      auto& p = params_[n];
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto w = p.mutable_data();
      auto& m = m_[n];
      auto& v = v_[n];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
        v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.epsilon);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  /// Restores optimiser state saved from an identically shaped instance.
  void restore(std::size_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) throw ParseError("adam: state size mismatch");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace lvad
