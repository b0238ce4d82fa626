#pragma once

// Lorentz (hyperboloid) model of hyperbolic space with curvature eta < 0.
//
// Points are rows x = (x0, x1, ..., xn) with <x, x>_L = 1/eta and x0 > 0,
// where <x, y>_L = -x0 y0 + sum_{i>=1} xi yi. Column 0 is the time
// component, the remaining columns are the spatial part.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lvad/ops.hpp"

namespace lvad {

/// Negative sectional curvature of the hyperboloid.
class Curvature {
public:
  explicit Curvature(double eta) : eta_(eta) {
    if (!(eta < 0.0) || !std::isfinite(eta)) throw ConfigError("curvature must be finite and negative");
  }
  double eta() const { return eta_; }
  /// sqrt(-eta)
  double sqrt_neg() const { return std::sqrt(-eta_); }
  /// 1/eta, the Lorentz self-product of every point on the manifold.
  double self_product() const { return 1.0 / eta_; }

private:
  double eta_;
};

/// A T x (1 + D) matrix whose rows lie on the hyperboloid.
struct LorentzPoints {
  Tensor values;
  Curvature curvature;

  std::size_t count() const { return values.rows(); }
  std::size_t spatial_dim() const { return values.cols() - 1; }
};

inline double lorentz_inner(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DimensionError("lorentz_inner: rows must share a dimension >= 2");
  }
  double acc = -x[0] * y[0];
  for (std::size_t i = 1; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

/// Tolerance for the on-manifold precondition of lorentz_distance; scaled
/// by the squared time component because rounding error grows with it.
inline constexpr double kManifoldContractTol = 1e-6;

inline void require_on_manifold(const char* op, std::span<const double> x, const Curvature& k) {
  const double dev = std::abs(lorentz_inner(x, x) - k.self_product());
  if (!(dev <= kManifoldContractTol * std::max(1.0, x[0] * x[0])) || !(x[0] > 0.0)) {
    throw ContractError(std::string(op) + ": point is off the hyperboloid (deviation " + std::to_string(dev) + ")");
  }
}

inline double lorentz_distance(std::span<const double> x, std::span<const double> y, const Curvature& k) {
  require_on_manifold("lorentz_distance", x, k);
  require_on_manifold("lorentz_distance", y, k);
  if (std::equal(x.begin(), x.end(), y.begin(), y.end())) return 0.0;  // arccosh is ill-conditioned at 1
  const double arg = std::max(k.eta() * lorentz_inner(x, y), 1.0);
  return std::acosh(arg) / k.sqrt_neg();
}

struct ManifoldReport {
  bool ok = true;
  double max_deviation = 0.0;
};

/// Largest |<x, x>_L - 1/eta| over the rows of `points`.
inline ManifoldReport manifold_check(const Tensor& points, const Curvature& k, double tol) {
  ManifoldReport report;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const auto row = points.row(i);
    const double dev = std::abs(lorentz_inner(row, row) - k.self_product());
    report.max_deviation = std::max(report.max_deviation, std::isfinite(dev) ? dev : INFINITY);
  }
  report.ok = report.max_deviation <= tol;
  return report;
}

inline ManifoldReport manifold_check(const LorentzPoints& p, double tol) {
  return manifold_check(p.values, p.curvature, tol);
}

/// Time column and spatial block of a point matrix.
inline Tensor time_part(const Tensor& points) { return slice(points, 1, 0, 1); }
inline Tensor spatial_part(const Tensor& points) { return slice(points, 1, 1, points.cols() - 1); }

/// Exponential map at the origin o = (1/sqrt(-eta), 0, ..., 0) applied to
/// each row of the tangent matrix v (T x D), giving T x (1 + D) points.
inline LorentzPoints exp_map_origin(const Tensor& v, const Curvature& k) {
  if (v.rank() != 2) throw DimensionError("exp_map_origin: expected a T x D matrix");
  for (double x : v.data()) {
    if (!std::isfinite(x)) throw NumericError("exp_map_origin: non-finite input");
  }
  // r^2 = -eta |v|^2. time = cosh(r) / sqrt(-eta), space = sinh(r)/r * v.
  auto r2 = scalar_mul(row_squared_norm(v), -k.eta());
  auto time = scalar_mul(cosh_of_sqrt(r2), 1.0 / k.sqrt_neg());
  auto space = mul(v, sinhc_of_sqrt(r2));
  for (double x : time.data()) {
    if (!std::isfinite(x)) throw NumericError("exp_map_origin: tangent vector too long, cosh overflowed");
  }
  return {concat({time, space}, 1), k};
}

/// Affine map on the spatial part with the time component recomputed from
/// the hyperboloid constraint. weight: D_out x D_in, bias: 1 x D_out.
inline LorentzPoints lorentz_linear(const LorentzPoints& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || weight.cols() != x.spatial_dim()) {
    throw DimensionError("lorentz_linear: weight " + shape_str(weight.shape()) + " does not accept spatial width " +
                         std::to_string(x.spatial_dim()));
  }
  if (bias.defined() && (bias.rank() != 2 || bias.rows() != 1 || bias.cols() != weight.rows())) {
    throw DimensionError("lorentz_linear: bias must be 1 x " + std::to_string(weight.rows()));
  }
  auto space = linear(spatial_part(x.values), weight, bias);
  auto time = sqrt(add_scalar(row_squared_norm(space), -1.0 / x.curvature.eta()));
  return {concat({time, space}, 1), x.curvature};
}

/// Pairwise Lorentz inner products, G_ij = <x_i, y_j>_L.
inline Tensor lorentz_gram(const Tensor& x, const Tensor& y) {
  if (x.cols() != y.cols()) throw DimensionError("lorentz_gram: point widths differ");
  auto spatial = matmul(spatial_part(x), transpose(spatial_part(y)));
  auto temporal = matmul(time_part(x), transpose(time_part(y)));
  return sub(spatial, temporal);
}

/// Pairwise geodesic distances between the rows of p. The diagonal is
/// exactly zero and carries no gradient.
inline Tensor distance_matrix(const LorentzPoints& p) {
  const auto& k = p.curvature;
  for (std::size_t i = 0; i < p.count(); ++i) require_on_manifold("distance_matrix", p.values.row(i), k);
  const auto n = p.count();
  auto off_diagonal = Tensor::full({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) off_diagonal.mutable_data()[i * n + i] = 0.0;
  auto arg = add(mul(scalar_mul(lorentz_gram(p.values, p.values), k.eta()), off_diagonal), Tensor::identity(n));
  return scalar_mul(arccosh(arg), 1.0 / k.sqrt_neg());
}

}  // namespace lvad
