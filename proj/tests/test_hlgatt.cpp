#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lvad/gradcheck.hpp"
#include "reference_equations.hpp"

using namespace lvad;

namespace {

const Curvature kUnit(-1.0);

LorentzPoints random_points(std::size_t n, std::size_t d, std::mt19937_64& rng, double spread = 1.0) {
  return exp_map_origin(detail::uniform_tensor({n, d}, -spread, spread, rng, false), kUnit);
}

LorentzLayer random_layer(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  return {detail::uniform_tensor({out, in}, -1, 1, rng, false), detail::uniform_tensor({1, out}, -1, 1, rng, false)};
}

HlgattParams perturbed_params(const HlgattConfig& cfg, std::mt19937_64& rng) {
  auto p = HlgattParams::init(cfg, rng);
  for (auto& [name, t] : p.named()) {
    auto tensor = t;
    for (auto& v : tensor.mutable_data()) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  }
  return p;
}

}  // namespace

TEST(Adjacency, IdenticalSnippetsGiveUniformRows) {
  auto row = exp_map_origin(Tensor::matrix({{0.4, -0.2, 1.0}}), kUnit).values.row(0);
  std::vector<double> values;
  for (int i = 0; i < 5; ++i) values.insert(values.end(), row.begin(), row.end());
  auto a = build_adjacency({Tensor::matrix(5, 4, values), kUnit});
  for (double v : a.data()) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(Adjacency, RowsAreDistributionsWithDominantDiagonal) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = 2 + trial % 7;
    auto a = build_adjacency(random_points(t, 4, rng, 2.0));
    for (std::size_t i = 0; i < t; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        EXPECT_GT(a(i, j), 0.0);
        EXPECT_LE(a(i, j), 1.0);
        EXPECT_GE(a(i, i), a(i, j));
        total += a(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Adjacency, OffManifoldInputIsAContractError) {
  EXPECT_THROW(build_adjacency({Tensor::matrix({{1, 0.5}, {1, 0}}), kUnit}), ContractError);
}

TEST(Aggregate, SingleSnippetIsTheNormalisedImage) {
  std::mt19937_64 rng(2);
  auto x = random_points(1, 3, rng);
  auto layer = random_layer(3, 3, rng);
  auto z = aggregate(x, Tensor::matrix({{1.0}}), layer);
  auto mapped = lorentz_linear(x, layer.weight, layer.bias);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(z.values(0, j), mapped.values(0, j), 1e-12);
  EXPECT_TRUE(manifold_check(z, 1e-6).ok);
}

TEST(Aggregate, OutputsLieOnTheHyperboloid) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_points(5, 4, rng, 1.5);
    auto z = aggregate(x, build_adjacency(x), random_layer(6, 4, rng));
    EXPECT_TRUE(manifold_check(z, 1e-6).ok);
  }
}

TEST(Aggregate, IdentityMapOnIdenticalSnippetsReturnsThePoint) {
  auto row = exp_map_origin(Tensor::matrix({{0.7, -0.3}}), kUnit).values.row(0);
  std::vector<double> values;
  for (int i = 0; i < 3; ++i) values.insert(values.end(), row.begin(), row.end());
  LorentzPoints x{Tensor::matrix(3, 3, values), kUnit};
  auto z = aggregate(x, Tensor::full({3, 3}, 1.0 / 3.0), {Tensor::identity(2), Tensor::zeros({1, 2})});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(z.values(i, j), row[j], 1e-12);
}

TEST(Aggregate, CancellingNeighbourhoodIsDegenerate) {
  auto row = exp_map_origin(Tensor::matrix({{0.7, -0.3}}), kUnit).values.row(0);
  LorentzPoints x{Tensor::matrix(2, 3, {row[0], row[1], row[2], row[0], row[1], row[2]}), kUnit};
  auto a = Tensor::matrix({{1.0, -1.0}, {0.5, 0.5}});
  EXPECT_THROW(aggregate(x, a, {Tensor::identity(2), Tensor::zeros({1, 2})}), DegenerateAggregateError);
}

TEST(Enhance, TemporalComponentAtZero) {
  LorentzPoints z{Tensor::matrix({{0.0, 1.0, 0.0}}), kUnit};
  auto out = enhance(z, Tensor::scalar(0.0), 1e-6);
  EXPECT_DOUBLE_EQ(out(0, 0), 1.6);
}

TEST(Enhance, TemporalComponentExceedsOnePointOne) {
  std::mt19937_64 rng(4);
  for (double gamma : {-30.0, -1.0, 0.0, 2.0}) {
    auto z = random_points(10, 3, rng, 3.0);
    auto out = enhance(z, Tensor::scalar(gamma), 1e-6);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_GT(out(i, 0), 1.1);
  }
}

TEST(Enhance, SelfProductClosedForm) {
  std::mt19937_64 rng(5);
  const double eps = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    auto z = random_points(4, 3, rng, 2.0);
    const double gamma = std::uniform_real_distribution<double>(-2, 2)(rng);
    auto out = enhance(z, Tensor::scalar(gamma), eps);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto zr = z.values.row(i);
      const double temp = ref::sigmoid(zr[0]) * std::exp(gamma) + 1.1;
      const double s2 = zr[1] * zr[1] + zr[2] * zr[2] + zr[3] * zr[3];
      const double upsilon = (temp * temp - 1.0) / (s2 + eps);
      EXPECT_NEAR(lorentz_inner(out.row(i), out.row(i)), -(1.0 + eps * upsilon), 1e-9);
    }
  }
}

TEST(Enhance, EpsilonMustBePositive) {
  LorentzPoints z{Tensor::matrix({{1.0, 0.0}}), kUnit};
  EXPECT_THROW(enhance(z, Tensor::scalar(0.0), 0.0), ConfigError);
}

TEST(DualAttention, OutputIsNonNegative) {
  std::mt19937_64 rng(6);
  auto a = softmax(leaky_relu(detail::uniform_tensor({5, 4}, -2, 2, rng, false), -2.0));
  auto out = dual_node_attention(a, detail::uniform_tensor({5, 4}, -2, 2, rng, false));
  for (double v : out.data()) EXPECT_GE(v, 0.0);
}

TEST(DualAttention, SingleSnippetIsAClippedMultipleOfNodeB) {
  auto a = Tensor::matrix({{0.2, 0.5, 0.3}});
  auto b = Tensor::matrix({{1.0, -2.0, 0.5}});
  auto out = dual_node_attention(a, b);
  const double s = 0.2 * 1.0 + 0.5 * -2.0 + 0.3 * 0.5;
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(out(0, j), std::max(0.0, s * b(0, j)));
}

TEST(DualAttention, ShapeMismatch) {
  EXPECT_THROW(dual_node_attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), DimensionError);
}

TEST(Hlgatt, MatchesTheStraightLineReference) {
  std::mt19937_64 rng(7);
  HlgattConfig cfg;
  cfg.d_in = 5;
  for (std::size_t hyper : {0u, 3u}) {
    cfg.d_hyper = hyper;
    auto p = perturbed_params(cfg, rng);
    auto fused = detail::uniform_tensor({4, 5}, -1, 1, rng, false);
    auto out = hlgatt_forward(fused, p, cfg);
    auto expected = ref::graph_attention(ref::from(fused), p, cfg);
    ASSERT_EQ(out.cols(), cfg.out_width());
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) EXPECT_NEAR(out(i, j), expected[i][j], 1e-9);
  }
}

TEST(Hlgatt, EveryLayerStaysOnTheHyperboloid) {
  std::mt19937_64 rng(8);
  HlgattConfig cfg;
  cfg.d_in = 6;
  cfg.layers = 3;
  auto p = HlgattParams::init(cfg, rng);
  HlgattTrace trace;
  hlgatt_forward(detail::uniform_tensor({7, 6}, -1, 1, rng, false), p, cfg, &trace);
  ASSERT_EQ(trace.layers_a.size(), 3u);
  for (const auto& layer : trace.layers_a) EXPECT_TRUE(manifold_check(layer, kUnit, 1e-6).ok);
  for (const auto& layer : trace.layers_b) EXPECT_TRUE(manifold_check(layer, kUnit, 1e-6).ok);
}

TEST(Hlgatt, EvaluationIsBitwiseDeterministic) {
  std::mt19937_64 rng(9);
  HlgattConfig cfg;
  cfg.d_in = 4;
  auto p = HlgattParams::init(cfg, rng);
  auto x = detail::uniform_tensor({5, 4}, -1, 1, rng, false);
  auto a = hlgatt_forward(x, p, cfg), b = hlgatt_forward(x, p, cfg);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Hlgatt, BranchesAreSeparate) {
  std::mt19937_64 rng(10);
  HlgattConfig cfg;
  cfg.d_in = 4;
  auto p = HlgattParams::init(cfg, rng);
  HlgattTrace trace;
  hlgatt_forward(detail::uniform_tensor({5, 4}, -1, 1, rng, false), p, cfg, &trace);
  double diff = 0.0;
  for (std::size_t i = 0; i < trace.enhanced_a.numel(); ++i) diff += std::abs(trace.enhanced_a[i] - trace.enhanced_b[i]);
  EXPECT_GT(diff, 1e-3);
}

TEST(Hlgatt, InputWidthIsChecked) {
  std::mt19937_64 rng(11);
  HlgattConfig cfg;
  cfg.d_in = 4;
  auto p = HlgattParams::init(cfg, rng);
  EXPECT_THROW(hlgatt_forward(Tensor::zeros({3, 5}), p, cfg), DimensionError);
}

TEST(Gradients, ScalarHeadOnTheOutputMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  HlgattConfig cfg;
  cfg.d_in = 4;
  for (int trial = 0; trial < 3; ++trial) {
    auto p = perturbed_params(cfg, rng);
    auto fused = detail::uniform_tensor({3, 4}, -1, 1, rng);
    std::vector<Tensor> inputs{fused};
    for (auto& [name, t] : p.named()) inputs.push_back(t);
    GradCheckCase c{"hlgatt", inputs, [p, cfg](const std::vector<Tensor>& in) {
                      return detail::weighted_head(hlgatt_forward(in[0], p, cfg), 23);
                    }};
    auto r = run_gradcheck(c, {});
    EXPECT_TRUE(r.ok) << r.worst_relative;
  }
}
