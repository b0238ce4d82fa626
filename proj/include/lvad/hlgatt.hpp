#pragma once

// Hyperbolic Lorentzian graph attention.
//
// Fused snippet features are lifted onto the hyperboloid and processed by
// two parallel branches ("node A" and "node B") with independent weights.
// Each branch runs L rounds of
//   adjacency  A_ij = softmax_j(exp(-d_L(x_i, x_j)))
//   aggregate  z_i  = u_i / (sqrt(-eta) |‖u_i‖_L|),  u = A f_HL(x)
// and then the enhancement
//   Temp = sigmoid(z0) e^gamma + 1.1,  S = z[1..],
//   Y    = (Temp^2 - 1) / (|S|^2 + eps),  out = [Temp, S sqrt(Y)].
// Node A is passed through leaky-ReLU and a row softmax, and the branches
// are combined as ReLU((A_hat B_hat^T) B_hat).

#include <string>
#include <vector>

#include "lvad/init.hpp"
#include "lvad/lorentz.hpp"

namespace lvad {

struct HlgattConfig {
  std::size_t d_in = 1024;    // fused feature width
  std::size_t d_hyper = 0;    // spatial width after the Lorentz linears; 0 means d_in
  std::size_t layers = 2;
  double epsilon = 1e-6;
  double slope = -2.0;        // leaky-ReLU negative slope on node A
  double eta = -1.0;

  std::size_t hyper_width() const { return d_hyper ? d_hyper : d_in; }
  /// Width of the enhanced rows and of the module output.
  std::size_t out_width() const { return 1 + hyper_width(); }

  void validate() const {
    if (d_in == 0) throw ConfigError("hlgatt: input width must be positive");
    if (layers == 0) throw ConfigError("hlgatt: at least one layer is required");
    if (!(epsilon > 0.0)) throw ConfigError("hlgatt: epsilon must be positive");
    Curvature check(eta);
    (void)check;
  }
};

struct LorentzLayer {
  Tensor weight;  // d_out x d_in on the spatial part
  Tensor bias;    // 1 x d_out
};

struct HlgattBranch {
  std::vector<LorentzLayer> layers;
  Tensor gamma;  // trainable scalar temporal scale
};

struct HlgattParams {
  HlgattBranch node_a;
  HlgattBranch node_b;

  static HlgattParams init(const HlgattConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    auto branch = [&] {
      HlgattBranch b;
      std::size_t width = cfg.d_in;
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        b.layers.push_back({xavier_uniform(cfg.hyper_width(), width, rng), zero_param({1, cfg.hyper_width()})});
        width = cfg.hyper_width();
      }
      b.gamma = Tensor::scalar(0.0, true);
      return b;
    };
    HlgattParams p;
    p.node_a = branch();
    p.node_b = branch();
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto add_branch = [&](const std::string& tag, const HlgattBranch& b) {
      for (std::size_t l = 0; l < b.layers.size(); ++l) {
        out.emplace_back("hlgatt." + tag + ".w" + std::to_string(l), b.layers[l].weight);
        out.emplace_back("hlgatt." + tag + ".b" + std::to_string(l), b.layers[l].bias);
      }
      out.emplace_back("hlgatt." + tag + ".gamma", b.gamma);
    };
    add_branch("node_a", node_a);
    add_branch("node_b", node_b);
    return out;
  }
};

/// Row-stochastic similarity matrix softmax_j(exp(-d_L(x_i, x_j))).
inline Tensor build_adjacency(const LorentzPoints& points) {
  return softmax(exp(scalar_mul(distance_matrix(points), -1.0)));
}

/// Below this Lorentz norm an aggregate cannot be projected back.
inline constexpr double kMinAggregateNorm = 1e-12;

/// Neighbourhood aggregation of the Lorentz-linear images of `points`,
/// renormalised onto the hyperboloid.
inline LorentzPoints aggregate(const LorentzPoints& points, const Tensor& adjacency, const LorentzLayer& layer) {
  if (adjacency.rank() != 2 || adjacency.rows() != points.count() || adjacency.cols() != points.count()) {
    throw DimensionError("aggregate: adjacency " + shape_str(adjacency.shape()) + " does not match " +
                         std::to_string(points.count()) + " points");
  }
  const auto& k = points.curvature;
  auto mapped = lorentz_linear(points, layer.weight, layer.bias);
  auto u = matmul(adjacency, mapped.values);
  auto t = time_part(u);
  // |<u, u>_L| = u0^2 - |u_space|^2 for the timelike combinations produced here.
  auto norm_sq = sub(mul(t, t), row_squared_norm(spatial_part(u)));
  for (double v : norm_sq.data()) {
    if (!(v > kMinAggregateNorm * kMinAggregateNorm)) {
      throw DegenerateAggregateError("aggregate: Lorentz norm of a neighbourhood sum fell below 1e-12");
    }
  }
  auto denom = scalar_mul(sqrt(norm_sq), k.sqrt_neg());
  return {div(u, denom), k};
}

/// Temporal/spatial enhancement of aggregated points.
inline Tensor enhance(const LorentzPoints& z, const Tensor& gamma, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("enhance: epsilon must be positive");
  auto temp = add_scalar(mul(sigmoid(time_part(z.values)), exp(gamma)), 1.1);
  auto space = spatial_part(z.values);
  auto upsilon = div(add_scalar(mul(temp, temp), -1.0), add_scalar(row_squared_norm(space), epsilon));
  return concat({temp, mul(space, sqrt(upsilon))}, 1);
}

/// ReLU((node_a node_b^T / T) node_b) for T rows. node_a is expected to be activated and
/// row-normalised already.
inline Tensor dual_node_attention(const Tensor& node_a, const Tensor& node_b) {
  if (node_a.shape() != node_b.shape()) {
    throw DimensionError("dual_node_attention: branch outputs " + shape_str(node_a.shape()) + " and " +
                         shape_str(node_b.shape()) + " differ");
  }
  auto scores = scalar_mul(matmul(node_a, transpose(node_b)), 1.0 / static_cast<double>(node_b.rows()));
  return relu(matmul(scores, node_b));
}

struct HlgattTrace {
  Tensor lifted;                       // exp-mapped input
  std::vector<Tensor> adjacency_a, adjacency_b;
  std::vector<Tensor> layers_a, layers_b;  // aggregated points after each layer
  Tensor enhanced_a, enhanced_b;
};

inline Tensor hlgatt_forward(const Tensor& fused, const HlgattParams& p, const HlgattConfig& cfg,
                             HlgattTrace* trace = nullptr) {
  if (fused.rank() != 2 || fused.cols() != cfg.d_in) {
    throw DimensionError("hlgatt: expected T x " + std::to_string(cfg.d_in) + " input, got " +
                         shape_str(fused.shape()));
  }
  const Curvature k(cfg.eta);
  auto lifted = exp_map_origin(fused, k);
  auto run_branch = [&](const HlgattBranch& branch, std::vector<Tensor>* adj_log, std::vector<Tensor>* layer_log) {
    auto x = lifted;
    for (const auto& layer : branch.layers) {
      auto adjacency = build_adjacency(x);
      x = aggregate(x, adjacency, layer);
      if (adj_log) adj_log->push_back(adjacency);
      if (layer_log) layer_log->push_back(x.values);
    }
    return enhance(x, branch.gamma, cfg.epsilon);
  };
  auto a = run_branch(p.node_a, trace ? &trace->adjacency_a : nullptr, trace ? &trace->layers_a : nullptr);
  auto b = run_branch(p.node_b, trace ? &trace->adjacency_b : nullptr, trace ? &trace->layers_b : nullptr);
  if (trace) {
    trace->lifted = lifted.values;
    trace->enhanced_a = a;
    trace->enhanced_b = b;
  }
  return dual_node_attention(softmax(leaky_relu(a, cfg.slope)), b);
}

}  // namespace lvad
