#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "lvad/train.hpp"

using namespace lvad;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("lvad_test_train_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Exhaustive threshold sweep: for every candidate threshold count true and
// false positives from scratch, then integrate precision over recall steps.
struct BruteForce {
  double ap = 0.0, precision = 0.0, recall = 0.0;
};

BruteForce brute_force(const std::vector<double>& scores, const std::vector<std::uint8_t>& truth) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  const double positives = static_cast<double>(std::count(truth.begin(), truth.end(), 1));
  BruteForce out;
  double prev_recall = 0.0;
  for (double th : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= th) (truth[i] ? tp : fp) += 1;
    out.ap += (tp / positives - prev_recall) * (tp / (tp + fp));
    prev_recall = tp / positives;
  }
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] >= 0.5) (truth[i] ? tp : fp) += 1;
  out.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  out.recall = positives > 0 ? tp / positives : 0.0;
  return out;
}

ModelConfig tiny_model(std::size_t dv, std::size_t da) {
  ModelConfig m;
  m.cfa.d_visual = dv;
  m.cfa.d_audio = da;
  m.cfa.heads = 2;
  m.cfa.prefix_dim = 4;
  m.cfa.bottleneck = 8;
  m.sync();
  return m;
}

std::vector<VideoFeatureBag> tiny_corpus(std::size_t per_class, std::uint64_t seed = 7) {
  SyntheticSpec s;
  s.seed = seed;
  s.n_normal = per_class;
  s.n_abnormal = per_class;
  s.d_visual = 8;
  s.d_audio = 4;
  s.t_min = 6;
  s.t_max = 12;
  return generate_synthetic_corpus(s);
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig c;
  c.batch_size = 2;
  c.epochs = epochs;
  c.seed = 3;
  c.model = tiny_model(8, 4);
  return c;
}

}  // namespace

TEST(Schedule, StartsAtTheBaseRate) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate, 5e-4);
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_EQ(c.epochs, 50u);
  EXPECT_NEAR(cosine_lr(0, 50, 5e-4, 1e-6), 5e-4, 1e-12);
}

TEST(Schedule, CosineFormula) {
  const double pi = 3.14159265358979323846;
  for (std::size_t e = 0; e < 50; ++e) {
    const double expected = 1e-6 + 0.5 * (5e-4 - 1e-6) * (1.0 + std::cos(pi * static_cast<double>(e) / 50.0));
    EXPECT_NEAR(cosine_lr(e, 50, 5e-4, 1e-6), expected, 1e-18);
  }
  EXPECT_NEAR(cosine_lr(25, 50, 5e-4, 1e-6), (5e-4 + 1e-6) / 2.0, 1e-15);
  EXPECT_THROW(cosine_lr(0, 0, 5e-4, 1e-6), ConfigError);
}

TEST(Adam, SingleStepByHand) {
  auto w = Tensor::scalar(1.0, true);
  Adam adam({w});
  backward(mul(scalar_mul(w, 1.5), w));  // d/dw 1.5 w^2 = 3 at w = 1
  adam.step(0.01);
  // m = 0.1 * 3, v = 0.001 * 9; bias corrected m_hat = 3, v_hat = 9.
  const double m_hat = (0.1 * 3.0) / (1.0 - 0.9);
  const double v_hat = (0.001 * 9.0) / (1.0 - 0.999);
  EXPECT_NEAR(w.item(), 1.0 - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8), 1e-15);
  EXPECT_NEAR(w.item(), 1.0 - 0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, SkipsParametersWithoutGradient) {
  auto a = Tensor::scalar(1.0, true), b = Tensor::scalar(2.0, true);
  Adam adam({a, b});
  backward(mul(a, a));
  adam.step(0.1);
  EXPECT_NE(a.item(), 1.0);
  EXPECT_EQ(b.item(), 2.0);
}

TEST(Metrics, PerfectScorer) {
  const std::vector<std::uint8_t> truth{0, 1, 1, 0, 1};
  const std::vector<double> scores{0, 1, 1, 0, 1};
  EXPECT_DOUBLE_EQ(average_precision(scores, truth), 1.0);
  auto m = threshold_metrics(scores, truth);
  EXPECT_DOUBLE_EQ(m.precision, 1.0);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
}

TEST(Metrics, ConstantScorerGivesTheBaseRate) {
  const std::vector<std::uint8_t> truth{0, 1, 0, 1, 0, 1, 0, 1};
  const std::vector<double> scores(8, 0.5);
  EXPECT_DOUBLE_EQ(average_precision(scores, truth), 0.5);
}

TEST(Metrics, NoPositivesIsAnEvaluationError) {
  EXPECT_THROW(average_precision(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{0, 0}), EvaluationError);
}

TEST(Metrics, MatchBruteForceOnSmallInstances) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + trial % 64;
    std::vector<double> scores(n);
    std::vector<std::uint8_t> truth(n);
    const int levels = 1 + trial % 7;  // coarse levels force ties
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
      truth[i] = std::bernoulli_distribution(0.4)(rng);
    }
    if (std::count(truth.begin(), truth.end(), 1) == 0) truth[0] = 1;
    auto expected = brute_force(scores, truth);
    auto m = threshold_metrics(scores, truth);
    EXPECT_NEAR(average_precision(scores, truth), expected.ap, 1e-12);
    EXPECT_EQ(m.precision, expected.precision);
    EXPECT_EQ(m.recall, expected.recall);
  }
}

TEST(Evaluate, NeedsFrameTruth) {
  Model model(tiny_model(8, 4), 1);
  VideoFeatureBag bag{"a", Tensor::zeros({2, 8}), Tensor::zeros({2, 4}), 0, std::nullopt};
  EXPECT_THROW(evaluate(model, {bag}), EvaluationError);
}

TEST(Evaluate, ScoreCurveMatchesEvaluationBitwise) {
  auto bags = tiny_corpus(2);
  Model model(tiny_model(8, 4), 5);
  auto result = evaluate(model, bags);
  auto dir = scratch_dir("curve");
  for (std::size_t b = 0; b < bags.size(); ++b) {
    export_score_curve(model, bags[b], dir / "curve.csv");
    std::ifstream in(dir / "curve.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "frame,score,truth");
    auto frames = result.series[b].frame_scores();
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string frame, score, truth;
      std::getline(ss, frame, ',');
      std::getline(ss, score, ',');
      std::getline(ss, truth, ',');
      const double s = std::stod(score);
      EXPECT_EQ(s, frames[rows]);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
      EXPECT_EQ(std::stoi(truth), (*bags[b].frame_truth)[rows]);
      ++rows;
    }
    EXPECT_EQ(rows, 16 * bags[b].snippets());
  }
}

TEST(Checkpoint, RoundTripReproducesMetricsBitwise) {
  auto bags = tiny_corpus(3);
  auto run = train(bags, tiny_train(2));
  auto dir = scratch_dir("ckpt");
  save_checkpoint(run.checkpoint, dir / "c.json");
  auto back = load_checkpoint(dir / "c.json");
  EXPECT_EQ(back.epoch, 2u);
  EXPECT_EQ(back.rng_state, run.checkpoint.rng_state);
  auto a = evaluate(run.checkpoint.model, bags), b = evaluate(back.model, bags);
  EXPECT_EQ(a.metrics.ap, b.metrics.ap);
  EXPECT_EQ(a.metrics.accuracy, b.metrics.accuracy);
  for (std::size_t i = 0; i < a.series.size(); ++i) EXPECT_EQ(a.series[i].scores, b.series[i].scores);
  write_metrics(a.metrics, dir / "a");
  write_metrics(b.metrics, dir / "b");
  EXPECT_EQ(read_file(dir / "a" / "metrics.csv"), read_file(dir / "b" / "metrics.csv"));
  EXPECT_EQ(read_file(dir / "a" / "metrics.txt"), read_file(dir / "b" / "metrics.txt"));
}

TEST(Checkpoint, CorruptFilesAreParseErrors) {
  auto dir = scratch_dir("ckpt_bad");
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), ParseError);
  std::ofstream(dir / "other.json") << R"({"format": "something", "version": 1})";
  EXPECT_THROW(load_checkpoint(dir / "other.json"), ParseError);
}

TEST(Metrics, FilesHaveTheDocumentedColumns) {
  auto dir = scratch_dir("metrics");
  write_metrics({0.5, 0.25, 1.0, 0.125}, dir);
  EXPECT_EQ(read_file(dir / "metrics.csv"), "ap,accuracy,precision,recall\n0.5,0.25,1,0.125\n");
  EXPECT_EQ(read_file(dir / "metrics.txt"), "ap=0.5\naccuracy=0.25\nprecision=1\nrecall=0.125\n");
}

TEST(Train, LossHalvesOnFourBagsWithinThirtyEpochs) {
  SyntheticSpec s;
  s.n_normal = 2;
  s.n_abnormal = 2;
  s.d_visual = 32;
  s.d_audio = 8;
  auto bags = generate_synthetic_corpus(s);
  // Default schedule, one bag per step; only the first 30 epochs count.
  TrainConfig c;
  c.batch_size = 1;
  c.model.cfa.d_visual = 32;
  c.model.cfa.d_audio = 8;
  c.model.sync();
  auto run = train(bags, c);
  ASSERT_GE(run.log.size(), 30u);
  EXPECT_LE(run.log[29].loss, 0.5 * run.log.front().loss);
}

TEST(Train, EqualSeedsGiveIdenticalLogs) {
  auto bags = tiny_corpus(3);
  auto dir = scratch_dir("determinism");
  auto a = train(bags, tiny_train(3)), b = train(bags, tiny_train(3));
  write_epoch_log(a.log, dir / "a.csv");
  write_epoch_log(b.log, dir / "b.csv");
  EXPECT_EQ(read_file(dir / "a.csv"), read_file(dir / "b.csv"));
  auto other = tiny_train(3);
  other.seed = 4;
  EXPECT_NE(train(bags, other).log.back().loss, a.log.back().loss);
}

TEST(Train, EpochLogColumns) {
  auto bags = tiny_corpus(2);
  auto cfg = tiny_train(2);
  cfg.eval_each_epoch = true;
  auto run = train(bags, cfg, &bags);
  auto dir = scratch_dir("log");
  write_epoch_log(run.log, dir / "log.csv");
  std::ifstream in(dir / "log.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "epoch,loss,lr,eval_ap");
  EXPECT_EQ(first.substr(0, 2), "0,");
  ASSERT_TRUE(run.log[0].eval_ap.has_value());
  EXPECT_DOUBLE_EQ(run.log[0].lr, 5e-4);
}

TEST(Train, NeedsBothLabels) {
  auto bags = tiny_corpus(2);
  std::vector<VideoFeatureBag> normal_only;
  for (auto& b : bags)
    if (b.label == 0) normal_only.push_back(b);
  EXPECT_THROW(train(normal_only, tiny_train(1)), ContractError);
}

TEST(Train, RejectsInvalidConfigs) {
  auto bags = tiny_corpus(1);
  auto c = tiny_train(1);
  c.epochs = 0;
  EXPECT_THROW(train(bags, c), ConfigError);
  c = tiny_train(1);
  c.batch_size = 0;
  EXPECT_THROW(train(bags, c), ConfigError);
  c = tiny_train(1);
  c.model.cfa.d_visual = 6;
  c.model.sync();
  EXPECT_THROW(train(bags, c), ConfigError);
}

TEST(Train, OverflowIsANumericError) {
  auto bags = tiny_corpus(1);
  bags[0].visual.mutable_data()[0] = 1e300;
  try {
    train(bags, tiny_train(1));
    FAIL() << "expected a failure";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("exp_map_origin"), std::string::npos) << e.what();
  }
}

TEST(Model, VisualOnlyIgnoresAudio) {
  auto cfg = tiny_model(8, 4);
  cfg.visual_only = true;
  Model model(cfg, 2);
  std::mt19937_64 rng(1);
  auto fv = Tensor::zeros({5, 8});
  for (auto& v : fv.mutable_data()) v = std::normal_distribution<double>()(rng);
  auto a1 = Tensor::zeros({5, 4}), a2 = Tensor::full({5, 4}, 3.0);
  EXPECT_EQ(model.score(fv, a1).scores, model.score(fv, a2).scores);
}
