#pragma once

#include <cmath>
#include <random>

#include "lvad/tensor.hpp"

namespace lvad {

/// Glorot-uniform weight matrix of shape [fan_out, fan_in], trainable.
inline Tensor xavier_uniform(std::size_t fan_out, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(fan_out * fan_in);
  for (auto& v : values) v = dist(rng);
  return Tensor({fan_out, fan_in}, std::move(values), true);
}

inline Tensor zero_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

}  // namespace lvad
