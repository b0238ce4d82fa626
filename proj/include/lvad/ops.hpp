#pragma once

// The differentiable op set used by the model. Everything is eager: each
// call computes its value immediately and, when an input requires
// gradients, records how to push gradients back to its inputs.
//
// Broadcasting is deliberately narrow: binary elementwise ops accept equal
// shapes, a single-element operand, or two matrices where one side has a
// row or column extent of 1.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lvad/tensor.hpp"

namespace lvad {

namespace detail {

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

inline BroadcastPlan plan_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  BroadcastPlan plan;
  const auto n_a = a.numel();
  const auto n_b = b.numel();
  if (a.shape() == b.shape()) {
    plan.out = a.shape();
    plan.a_index.resize(n_a);
    std::iota(plan.a_index.begin(), plan.a_index.end(), std::size_t{0});
    plan.b_index = plan.a_index;
    return plan;
  }
  if (n_b == 1 && (n_a > 1 || a.rank() >= b.rank())) {
    plan.out = a.shape();
    plan.a_index.resize(n_a);
    std::iota(plan.a_index.begin(), plan.a_index.end(), std::size_t{0});
    plan.b_index.assign(n_a, 0);
    return plan;
  }
  if (n_a == 1) {
    plan.out = b.shape();
    plan.b_index.resize(n_b);
    std::iota(plan.b_index.begin(), plan.b_index.end(), std::size_t{0});
    plan.a_index.assign(n_b, 0);
    return plan;
  }
  if (a.rank() == 2 && b.rank() == 2) {
    auto pick = [&](std::size_t x, std::size_t y) -> std::size_t {
      if (x == y || y == 1) return x;
      if (x == 1) return y;
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                           shape_str(b.shape()));
    };
    const auto rows = pick(a.shape()[0], b.shape()[0]);
    const auto cols = pick(a.shape()[1], b.shape()[1]);
    plan.out = {rows, cols};
    plan.a_index.resize(rows * cols);
    plan.b_index.resize(rows * cols);
    const auto ar = a.shape()[0], ac = a.shape()[1], br = b.shape()[0], bc = b.shape()[1];
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        plan.a_index[i * cols + j] = (ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j);
        plan.b_index[i * cols + j] = (br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j);
      }
    }
    return plan;
  }
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
}

// f(a, b) -> value; da(a, b, y) and db(a, b, y) -> partial derivatives.
template <class F, class DA, class DB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  auto plan = plan_broadcast(op, a, b);
  const auto n = shape_numel(plan.out);
  std::vector<double> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t k = 0; k < n; ++k) out[k] = f(av[plan.a_index[k]], bv[plan.b_index[k]]);
  auto ai = plan.a_index;
  auto bi = plan.b_index;
  return make_result(op, plan.out, std::move(out), {a, b},
                     [ai = std::move(ai), bi = std::move(bi), da, db](Node& self) {
                       auto& pa = *self.parents[0];
                       auto& pb = *self.parents[1];
                       for (std::size_t k = 0; k < self.data.size(); ++k) {
                         const double x = pa.data[ai[k]];
                         const double y = pb.data[bi[k]];
                         const double g = self.grad[k];
                         if (pa.requires_grad) {
                           pa.ensure_grad();
                           pa.grad[ai[k]] += g * da(x, y, self.data[k]);
                         }
                         if (pb.requires_grad) {
                           pb.ensure_grad();
                           pb.grad[bi[k]] += g * db(x, y, self.data[k]);
                         }
                       }
                     });
}

// f(x) -> value; df(x, y) -> derivative given input and output.
template <class F, class DF>
Tensor unary_op(const char* op, const Tensor& x, F f, DF df) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t k = 0; k < xv.size(); ++k) out[k] = f(xv[k]);
  return make_result(op, x.shape(), std::move(out), {x}, [df](Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t k = 0; k < self.data.size(); ++k) p.grad[k] += self.grad[k] * df(p.data[k], self.data[k]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double sinhc(double r) {
  if (r < 1e-6) return 1.0 + r * r / 6.0;
  return std::sinh(r) / r;
}

}  // namespace detail

// ---- elementwise binary -------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return detail::binary_op(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// ---- scalar constants -----------------------------------------------------

inline Tensor scalar_mul(const Tensor& x, double s) {
  return detail::unary_op(
      "scalar_mul", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary_op(
      "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor operator*(const Tensor& x, double s) { return scalar_mul(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scalar_mul(x, s); }

// ---- elementwise unary ------------------------------------------------------

inline Tensor exp(const Tensor& x) {
  return detail::unary_op(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return detail::unary_op(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw DomainError("sqrt: negative argument " + std::to_string(v));
  }
  return detail::unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op("sigmoid", x, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
  return detail::unary_op(
      "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline Tensor gelu(const Tensor& x) {
  constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kBeta = 0.044715;
  return detail::unary_op(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kAlpha * (v + kBeta * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kAlpha * (v + kBeta * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kAlpha * (1.0 + 3.0 * kBeta * v * v);
      });
}

inline Tensor cosh(const Tensor& x) {
  return detail::unary_op(
      "cosh", x, [](double v) { return std::cosh(v); }, [](double v, double) { return std::sinh(v); });
}

inline Tensor sinh(const Tensor& x) {
  return detail::unary_op(
      "sinh", x, [](double v) { return std::sinh(v); }, [](double v, double) { return std::cosh(v); });
}

/// Arguments in [1 - kArccoshSlack, 1) are clamped to 1. Below
/// kArccoshFloor the derivative is taken as zero instead of diverging.
/// Anything lower than the slack is a domain error.
inline constexpr double kArccoshFloor = 1.0 + 1e-12;
inline constexpr double kArccoshSlack = 1e-6;

inline Tensor arccosh(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v >= 1.0 - kArccoshSlack)) throw DomainError("arccosh: argument " + std::to_string(v) + " < 1");
  }
  return detail::unary_op(
      "arccosh", x, [](double v) { return std::acosh(std::max(v, 1.0)); },
      [](double v, double) { return v < kArccoshFloor ? 0.0 : 1.0 / std::sqrt((v - 1.0) * (v + 1.0)); });
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary_op(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

/// cosh(sqrt(q)) for q >= 0; smooth in q, including at q = 0.
inline Tensor cosh_of_sqrt(const Tensor& q) {
  for (double v : q.data()) {
    if (v < 0.0) throw DomainError("cosh_of_sqrt: negative argument");
  }
  return detail::unary_op(
      "cosh_of_sqrt", q, [](double v) { return std::cosh(std::sqrt(v)); },
      [](double v, double) { return 0.5 * detail::sinhc(std::sqrt(v)); });
}

/// sinh(sqrt(q)) / sqrt(q) for q >= 0, equal to 1 at q = 0.
inline Tensor sinhc_of_sqrt(const Tensor& q) {
  for (double v : q.data()) {
    if (v < 0.0) throw DomainError("sinhc_of_sqrt: negative argument");
  }
  return detail::unary_op(
      "sinhc_of_sqrt", q, [](double v) { return detail::sinhc(std::sqrt(v)); },
      [](double v, double y) {
        if (v < 1e-4) return 1.0 / 6.0 + v / 60.0 + v * v / 2520.0 + v * v * v / 181440.0;
        return (std::cosh(std::sqrt(v)) - y) / (2.0 * v);
      });
}

// ---- shape ops ----------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += s * bv[p * n + j];
    }
  }
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb.data[p * n + j];
          pa.grad[i * k + p] += acc;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double s = pa.data[i * k + p];
          if (s == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += s * g[i * n + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank("transpose", x, 2);
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return detail::make_result("transpose", {c, r}, std::move(out), {x}, [r, c](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[j * r + i];
  });
}

/// Concatenates matrices along `axis` (0 = stack rows, 1 = append columns).
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::require_rank("concat", p, 2);
  const auto other = parts[0].shape()[1 - axis];
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.shape()[1 - axis] != other) throw DimensionError("concat: mismatched extents along the kept axis");
    total += p.shape()[axis];
  }
  Shape out_shape = axis == 0 ? Shape{total, other} : Shape{other, total};
  const auto out_cols = out_shape[1];
  std::vector<double> out(total * other);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const auto pr = p.rows(), pc = p.cols();
    const auto pv = p.data();
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const auto oi = axis == 0 ? i + offset : i;
        const auto oj = axis == 0 ? j : j + offset;
        out[oi * out_cols + oj] = pv[i * pc + j];
      }
    offset += p.shape()[axis];
  }
  return detail::make_result("concat", out_shape, std::move(out), parts,
                             [offsets, axis, out_cols](detail::Node& self) {
                               for (std::size_t n = 0; n < self.parents.size(); ++n) {
                                 auto& p = *self.parents[n];
                                 if (!p.requires_grad) continue;
                                 p.ensure_grad();
                                 const auto pr = p.shape[0], pc = p.shape[1];
                                 for (std::size_t i = 0; i < pr; ++i)
                                   for (std::size_t j = 0; j < pc; ++j) {
                                     const auto oi = axis == 0 ? i + offsets[n] : i;
                                     const auto oj = axis == 0 ? j : j + offsets[n];
                                     p.grad[i * pc + j] += self.grad[oi * out_cols + oj];
                                   }
                               }
                             });
}

/// Rows (axis 0) or columns (axis 1) [start, start + length) of a matrix.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  detail::require_rank("slice", x, 2);
  if (axis > 1) throw DimensionError("slice: axis must be 0 or 1");
  if (length == 0 || start + length > x.shape()[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") outside " + shape_str(x.shape()));
  }
  const auto r = x.rows(), c = x.cols();
  const auto orows = axis == 0 ? length : r;
  const auto ocols = axis == 0 ? c : length;
  std::vector<double> out(orows * ocols);
  const auto xv = x.data();
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j)
      out[i * ocols + j] = axis == 0 ? xv[(i + start) * c + j] : xv[i * c + j + start];
  return detail::make_result("slice", {orows, ocols}, std::move(out), {x},
                             [axis, start, c, orows, ocols](detail::Node& self) {
                               auto& p = *self.parents[0];
                               p.ensure_grad();
                               for (std::size_t i = 0; i < orows; ++i)
                                 for (std::size_t j = 0; j < ocols; ++j) {
                                   const auto src = axis == 0 ? (i + start) * c + j : i * c + j + start;
                                   p.grad[src] += self.grad[i * ocols + j];
                                 }
                             });
}

// ---- reductions -----------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result("sum", {}, {s}, {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

/// Sum of a matrix along `axis`, keeping the reduced extent as 1.
inline Tensor sum(const Tensor& x, std::size_t axis) {
  detail::require_rank("sum", x, 2);
  if (axis > 1) throw DimensionError("sum: axis must be 0 or 1");
  const auto r = x.rows(), c = x.cols();
  Shape out_shape = axis == 0 ? Shape{1, c} : Shape{r, 1};
  std::vector<double> out(axis == 0 ? c : r, 0.0);
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += xv[i * c + j];
  return detail::make_result("sum", out_shape, std::move(out), {x}, [axis, r, c](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[axis == 0 ? j : i];
  });
}

inline Tensor mean(const Tensor& x) { return scalar_mul(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor mean(const Tensor& x, std::size_t axis) {
  return scalar_mul(sum(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

inline Tensor squared_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return detail::make_result("squared_norm", {}, {s}, {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t k = 0; k < p.data.size(); ++k) p.grad[k] += 2.0 * p.data[k] * self.grad[0];
  });
}

/// Row-wise squared Euclidean norm of a matrix, shape [rows, 1].
inline Tensor row_squared_norm(const Tensor& x) {
  detail::require_rank("row_squared_norm", x, 2);
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r, 0.0);
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += xv[i * c + j] * xv[i * c + j];
  return detail::make_result("row_squared_norm", {r, 1}, std::move(out), {x}, [r, c](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += 2.0 * p.data[i * c + j] * self.grad[i];
  });
}

/// Softmax along the last axis of a vector or matrix.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("softmax: expected a vector or matrix");
  const auto c = x.shape().back();
  const auto r = x.numel() / c;
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = xv[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += out[i * c + j] = std::exp(xv[i * c + j] - mx);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return detail::make_result("softmax", x.shape(), std::move(out), {x}, [r, c](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.data[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
}

/// Inverted dropout. Identity (the same tensor) when not training or p == 0.
inline Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? scale : 0.0;
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = xv[k] * mask[k];
  return detail::make_result("dropout", x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t k = 0; k < mask.size(); ++k) p.grad[k] += self.grad[k] * mask[k];
  });
}

/// x W^T + b for x [n, in], W [out, in], b [1, out] (b may be undefined).
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {}) {
  auto y = matmul(x, transpose(weight));
  return bias.defined() ? add(y, bias) : y;
}

}  // namespace lvad
