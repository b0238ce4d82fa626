#pragma once

// Central finite differences and a self-check suite comparing them with the
// recorded reverse-mode gradients of every op and of the full model loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lvad/model.hpp"

namespace lvad {

/// (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x. The entries
/// of x are perturbed in place and restored, so f may also read x through
/// a captured handle. Graph recording is disabled while f runs.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  NoGradGuard no_grad;
  std::vector<double> grad(x.numel());
  auto values = x.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f(x);
    values[i] = saved - h;
    const double down = f(x);
    values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: non-finite function value at element " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

struct GradTolerance {
  double relative = 1e-4;
  double absolute = 1e-6;

  bool accepts(double analytic, double numeric) const {
    const double diff = std::abs(analytic - numeric);
    return diff <= absolute || diff <= relative * std::max(std::abs(analytic), std::abs(numeric));
  }
};

struct GradComparison {
  bool ok = true;
  double worst_relative = 0.0;  // max |a - n| / max(|a|, |n|) over rejected-or-largest entries
  std::size_t worst_index = 0;
};

inline GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                        const GradTolerance& tol) {
  if (analytic.size() != numeric.size()) throw DimensionError("compare_gradients: length mismatch");
  GradComparison c;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), tol.absolute});
    const double rel = diff / scale;
    if (!tol.accepts(analytic[i], numeric[i])) c.ok = false;
    if (rel > c.worst_relative) {
      c.worst_relative = rel;
      c.worst_index = i;
    }
  }
  return c;
}

/// A scalar function of several tensors, checked with respect to each.
struct GradCheckCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> loss;
};

struct GradCheckResult {
  std::string name;
  bool ok = true;
  double worst_relative = 0.0;
  std::size_t checked = 0;  // number of scalar partial derivatives compared
};

inline GradCheckResult run_gradcheck(const GradCheckCase& c, const GradTolerance& tol, double h = 1e-5) {
  for (auto t : c.inputs) t.zero_grad();
  backward(c.loss(c.inputs));
  GradCheckResult result{c.name};
  for (const auto& input : c.inputs) {
    auto numeric = finite_diff_grad([&](const Tensor&) { return c.loss(c.inputs).item(); }, input, h);
    auto cmp = compare_gradients(input.grad(), numeric.data(), tol);
    result.ok = result.ok && cmp.ok;
    result.worst_relative = std::max(result.worst_relative, cmp.worst_relative);
    result.checked += input.numel();
  }
  return result;
}

namespace detail {

inline Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Values in [-2, 2] kept at least `gap` away from zero.
inline Tensor offset_tensor(Shape shape, std::mt19937_64& rng, double gap = 1e-2) {
  std::uniform_real_distribution<double> dist(gap, 2.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? dist(rng) : -dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

/// Reduces any tensor to a scalar with fixed random weights so that
/// gradients are not hidden by symmetric sums (softmax rows, for one).
inline Tensor weighted_head(const Tensor& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = uniform_tensor(out.shape(), -1.0, 1.0, rng, false);
  return sum(mul(out, w));
}

}  // namespace detail

/// Small configuration used for the end-to-end checks: every module is
/// active, widths are tiny so that finite differences stay cheap.
inline ModelConfig gradcheck_model_config() {
  ModelConfig m;
  m.cfa.d_visual = 6;
  m.cfa.d_audio = 4;
  m.cfa.heads = 2;
  m.cfa.prefix_dim = 3;
  m.cfa.bottleneck = 5;
  m.cfa.dropout = 0.1;
  m.hlgatt.layers = 2;
  m.sync();
  return m;
}

/// Gives zero-initialised parameters (prefixes, biases) generic values so
/// that their gradients are exercised away from a special point.
inline void perturb_parameters(Model& model, std::mt19937_64& rng, double spread = 0.3) {
  std::uniform_real_distribution<double> dist(-spread, spread);
  for (auto& [name, t] : model.named_parameters()) {
    auto tensor = t;
    for (auto& v : tensor.mutable_data()) v += dist(rng);
  }
}

/// Every op of the engine, the geometric building blocks and the end-to-end
/// MIL loss of a 3-snippet bag.
inline std::vector<GradCheckCase> gradcheck_cases(std::uint64_t seed) {
  using detail::offset_tensor;
  using detail::uniform_tensor;
  using detail::weighted_head;
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> cases;
  auto unary = [&](std::string name, Tensor x, std::function<Tensor(const Tensor&)> f) {
    const auto head_seed = rng();
    cases.push_back({std::move(name), {x}, [f, head_seed](const std::vector<Tensor>& in) {
                       return weighted_head(f(in[0]), head_seed);
                     }});
  };
  auto binary = [&](std::string name, Tensor a, Tensor b, std::function<Tensor(const Tensor&, const Tensor&)> f) {
    const auto head_seed = rng();
    cases.push_back({std::move(name), {a, b}, [f, head_seed](const std::vector<Tensor>& in) {
                       return weighted_head(f(in[0], in[1]), head_seed);
                     }});
  };

  binary("add", uniform_tensor({3, 4}, -2, 2, rng), uniform_tensor({3, 4}, -2, 2, rng),
         [](auto& a, auto& b) { return add(a, b); });
  binary("add.row_broadcast", uniform_tensor({3, 4}, -2, 2, rng), uniform_tensor({1, 4}, -2, 2, rng),
         [](auto& a, auto& b) { return add(a, b); });
  binary("sub.column_broadcast", uniform_tensor({3, 4}, -2, 2, rng), uniform_tensor({3, 1}, -2, 2, rng),
         [](auto& a, auto& b) { return sub(a, b); });
  binary("mul", uniform_tensor({3, 4}, -2, 2, rng), uniform_tensor({3, 4}, -2, 2, rng),
         [](auto& a, auto& b) { return mul(a, b); });
  binary("mul.scalar_broadcast", uniform_tensor({3, 4}, -2, 2, rng), uniform_tensor({}, -2, 2, rng),
         [](auto& a, auto& b) { return mul(a, b); });
  binary("div", uniform_tensor({3, 4}, -2, 2, rng), uniform_tensor({3, 4}, 0.5, 2, rng),
         [](auto& a, auto& b) { return div(a, b); });
  unary("scalar_mul", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return scalar_mul(x, -1.7); });
  unary("add_scalar", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return add_scalar(x, 0.3); });
  binary("matmul", uniform_tensor({3, 4}, -2, 2, rng), uniform_tensor({4, 2}, -2, 2, rng),
         [](auto& a, auto& b) { return matmul(a, b); });
  unary("transpose", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return transpose(x); });
  binary("concat.rows", uniform_tensor({2, 3}, -2, 2, rng), uniform_tensor({4, 3}, -2, 2, rng),
         [](auto& a, auto& b) { return concat({a, b}, 0); });
  binary("concat.cols", uniform_tensor({3, 2}, -2, 2, rng), uniform_tensor({3, 1}, -2, 2, rng),
         [](auto& a, auto& b) { return concat({a, b}, 1); });
  unary("slice.rows", uniform_tensor({5, 3}, -2, 2, rng), [](auto& x) { return slice(x, 0, 1, 3); });
  unary("slice.cols", uniform_tensor({3, 5}, -2, 2, rng), [](auto& x) { return slice(x, 1, 2, 2); });
  unary("sum", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return mul(sum(x), sum(x)); });
  unary("sum.axis0", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return sum(x, 0); });
  unary("sum.axis1", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return sum(x, 1); });
  unary("mean", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return exp(mean(x)); });
  unary("exp", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return exp(x); });
  unary("log", uniform_tensor({3, 4}, 0.2, 2, rng), [](auto& x) { return log(x); });
  unary("sqrt", uniform_tensor({3, 4}, 0.2, 2, rng), [](auto& x) { return sqrt(x); });
  unary("sigmoid", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return sigmoid(x); });
  unary("softmax", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return softmax(x); });
  unary("gelu", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return gelu(x); });
  unary("relu", offset_tensor({3, 4}, rng), [](auto& x) { return relu(x); });
  unary("leaky_relu", offset_tensor({3, 4}, rng), [](auto& x) { return leaky_relu(x, -2.0); });
  unary("arccosh", uniform_tensor({3, 4}, 1.2, 3, rng), [](auto& x) { return arccosh(x); });
  unary("cosh", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return cosh(x); });
  unary("sinh", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return sinh(x); });
  unary("cosh_of_sqrt", uniform_tensor({3, 4}, 0.01, 2, rng), [](auto& x) { return cosh_of_sqrt(x); });
  unary("sinhc_of_sqrt", uniform_tensor({3, 4}, 0.01, 2, rng), [](auto& x) { return sinhc_of_sqrt(x); });
  unary("clamp", offset_tensor({3, 4}, rng), [](auto& x) { return clamp(x, -1.0, 1.0); });
  unary("squared_norm", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return squared_norm(x); });
  unary("row_squared_norm", uniform_tensor({3, 4}, -2, 2, rng), [](auto& x) { return row_squared_norm(x); });
  {
    const auto mask_seed = rng();
    unary("dropout", uniform_tensor({3, 4}, -2, 2, rng), [mask_seed](auto& x) {
      std::mt19937_64 mask_rng(mask_seed);  // same mask on every evaluation
      return dropout(x, 0.3, mask_rng, true);
    });
  }
  {
    auto x = uniform_tensor({3, 4}, -2, 2, rng);
    auto w = uniform_tensor({2, 4}, -2, 2, rng);
    auto b = uniform_tensor({1, 2}, -2, 2, rng);
    const auto head_seed = rng();
    cases.push_back({"linear", {x, w, b}, [head_seed](const std::vector<Tensor>& in) {
                       return detail::weighted_head(linear(in[0], in[1], in[2]), head_seed);
                     }});
  }

  // Hyperbolic building blocks.
  const Curvature k(-1.0);
  unary("exp_map_origin", uniform_tensor({3, 4}, -1, 1, rng), [k](auto& v) { return exp_map_origin(v, k).values; });
  {
    auto v = uniform_tensor({3, 4}, -1, 1, rng);
    auto w = uniform_tensor({3, 4}, -1, 1, rng);
    auto b = uniform_tensor({1, 3}, -1, 1, rng);
    const auto head_seed = rng();
    cases.push_back({"lorentz_linear", {v, w, b}, [k, head_seed](const std::vector<Tensor>& in) {
                       return detail::weighted_head(lorentz_linear(exp_map_origin(in[0], k), in[1], in[2]).values,
                                                    head_seed);
                     }});
  }
  unary("distance_matrix", uniform_tensor({4, 3}, -1, 1, rng),
        [k](auto& v) { return distance_matrix(exp_map_origin(v, k)); });
  unary("build_adjacency", uniform_tensor({4, 3}, -1, 1, rng),
        [k](auto& v) { return build_adjacency(exp_map_origin(v, k)); });
  {
    auto v = uniform_tensor({4, 3}, -1, 1, rng);
    auto w = uniform_tensor({3, 3}, -1, 1, rng);
    auto b = uniform_tensor({1, 3}, -1, 1, rng);
    const auto head_seed = rng();
    cases.push_back({"aggregate", {v, w, b}, [k, head_seed](const std::vector<Tensor>& in) {
                       auto points = exp_map_origin(in[0], k);
                       auto z = aggregate(points, build_adjacency(points), LorentzLayer{in[1], in[2]});
                       return detail::weighted_head(z.values, head_seed);
                     }});
  }
  binary("enhance", uniform_tensor({4, 3}, -1, 1, rng), uniform_tensor({}, -1, 1, rng),
         [k](auto& v, auto& gamma) { return enhance(exp_map_origin(v, k), gamma, 1e-6); });
  binary("dual_node_attention", uniform_tensor({3, 4}, -1, 1, rng), uniform_tensor({3, 4}, -1, 1, rng),
         [](auto& a, auto& b) { return dual_node_attention(softmax(leaky_relu(a, -2.0)), b); });
  {
    HlgattConfig cfg;
    cfg.d_in = 4;
    auto params = HlgattParams::init(cfg, rng);
    auto fused = uniform_tensor({3, 4}, -1, 1, rng);
    std::vector<Tensor> inputs{fused};
    for (auto& [name, t] : params.named()) inputs.push_back(t);
    const auto head_seed = rng();
    cases.push_back({"hlgatt_forward", inputs, [cfg, params, head_seed](const std::vector<Tensor>& in) {
                       return detail::weighted_head(hlgatt_forward(in[0], params, cfg), head_seed);
                     }});
  }

  // End-to-end MIL loss of a 3-snippet bag, with respect to the inputs and
  // every parameter, dropout off.
  for (int label : {0, 1}) {
    auto model = std::make_shared<Model>(gradcheck_model_config(), rng());
    perturb_parameters(*model, rng);
    const auto& cfg = model->config().cfa;
    auto visual = uniform_tensor({3, cfg.d_visual}, -1, 1, rng);
    auto audio = uniform_tensor({3, cfg.d_audio}, -1, 1, rng);
    std::vector<Tensor> inputs{visual, audio};
    for (auto& t : model->parameters()) inputs.push_back(t);
    cases.push_back({"model.mil_loss.label" + std::to_string(label), inputs, [model, label](const std::vector<Tensor>& in) {
                       auto scores = model->forward(in[0], in[1], ForwardMode{});
                       return mil_loss({{topk_mean(scores, default_k(scores.rows())), label}});
                     }});
  }
  return cases;
}

inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, const GradTolerance& tol) {
  std::vector<GradCheckResult> results;
  for (const auto& c : gradcheck_cases(seed)) results.push_back(run_gradcheck(c, tol));
  return results;
}

}  // namespace lvad
