#pragma once

// Training loop, checkpoints, evaluation and result files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lvad/data.hpp"
#include "lvad/metrics.hpp"
#include "lvad/model.hpp"
#include "lvad/optim.hpp"

namespace lvad {

struct TrainConfig {
  double learning_rate = 5e-4;
  double lr_floor = 1e-6;
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  bool eval_each_epoch = false;
  ModelConfig model;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (!(lr_floor >= 0.0 && lr_floor <= learning_rate)) throw ConfigError("train: lr floor must lie in [0, lr]");
    model.validate();
  }
};

/// Formats a double so that parsing it back yields the same bits.
inline std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- JSON mapping ------------------------------------------------------------

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"d_visual", m.cfa.d_visual},   {"d_audio", m.cfa.d_audio},   {"heads", m.cfa.heads},
          {"prefix_dim", m.cfa.prefix_dim}, {"bottleneck", m.cfa.bottleneck}, {"dropout", m.cfa.dropout},
          {"d_hyper", m.hlgatt.d_hyper},  {"layers", m.hlgatt.layers},  {"epsilon", m.hlgatt.epsilon},
          {"slope", m.hlgatt.slope},      {"eta", m.hlgatt.eta},        {"visual_only", m.visual_only}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.cfa.d_visual = j.at("d_visual").get<std::size_t>();
  m.cfa.d_audio = j.at("d_audio").get<std::size_t>();
  m.cfa.heads = j.at("heads").get<std::size_t>();
  m.cfa.prefix_dim = j.at("prefix_dim").get<std::size_t>();
  m.cfa.bottleneck = j.at("bottleneck").get<std::size_t>();
  m.cfa.dropout = j.at("dropout").get<double>();
  m.hlgatt.d_hyper = j.at("d_hyper").get<std::size_t>();
  m.hlgatt.layers = j.at("layers").get<std::size_t>();
  m.hlgatt.epsilon = j.at("epsilon").get<double>();
  m.hlgatt.slope = j.at("slope").get<double>();
  m.hlgatt.eta = j.at("eta").get<double>();
  m.visual_only = j.at("visual_only").get<bool>();
  m.sync();
  return m;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"lr_floor", c.lr_floor}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"seed", c.seed},         {"eval_each_epoch", c.eval_each_epoch},
          {"k_rule", "floor(T/16)+1"},        {"model", to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lr_floor = j.at("lr_floor").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.eval_each_epoch = j.at("eval_each_epoch").get<bool>();
  c.model = model_config_from_json(j.at("model"));
  return c;
}

// ---- checkpoint ----------------------------------------------------------------

struct Checkpoint {
  TrainConfig config;
  Model model;
  std::size_t epoch = 0;     // completed epochs
  std::string rng_state;     // textual mt19937_64 state
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : ckpt.model.named_parameters()) {
    params[name] = {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
  }
  nlohmann::json j = {{"format", "lvad-checkpoint"}, {"version", 1},
                      {"config", to_json(ckpt.config)}, {"epoch", ckpt.epoch},
                      {"rng_state", ckpt.rng_state},   {"params", params}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
    if (j.at("format") != "lvad-checkpoint" || j.at("version") != 1) {
      throw ParseError(path.string() + ": not a version 1 checkpoint");
    }
    auto config = train_config_from_json(j.at("config"));
    Checkpoint ckpt{config, Model(config.model, config.seed), j.at("epoch").get<std::size_t>(),
                    j.at("rng_state").get<std::string>()};
    const auto& params = j.at("params");
    for (auto& [name, t] : ckpt.model.named_parameters()) {
      const auto& entry = params.at(name);
      if (entry.at("shape").get<Shape>() != t.shape()) throw ParseError(path.string() + ": shape mismatch for " + name);
      auto values = entry.at("data").get<std::vector<double>>();
      if (values.size() != t.numel()) throw ParseError(path.string() + ": size mismatch for " + name);
      std::copy(values.begin(), values.end(), t.mutable_data().begin());
    }
    if (params.size() != ckpt.model.named_parameters().size()) throw ParseError(path.string() + ": unexpected parameters");
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---- evaluation ----------------------------------------------------------------

struct MetricsRecord {
  double ap = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct EvalResult {
  MetricsRecord metrics;
  std::vector<std::string> ids;
  std::vector<ScoreSeries> series;
};

inline EvalResult evaluate(const Model& model, const std::vector<VideoFeatureBag>& bags) {
  if (bags.empty()) throw EvaluationError("evaluate: no bags");
  EvalResult result;
  std::vector<double> scores;
  std::vector<std::uint8_t> truth;
  for (const auto& bag : bags) {
    if (!bag.frame_truth) throw EvaluationError("evaluate: bag " + bag.id + " has no frame truth");
    auto series = model.score(bag.visual, bag.audio);
    auto frames = series.frame_scores();
    scores.insert(scores.end(), frames.begin(), frames.end());
    truth.insert(truth.end(), bag.frame_truth->begin(), bag.frame_truth->end());
    result.ids.push_back(bag.id);
    result.series.push_back(std::move(series));
  }
  auto m = threshold_metrics(scores, truth, 0.5);
  result.metrics = {average_precision(scores, truth), m.accuracy, m.precision, m.recall};
  return result;
}

inline void write_metrics(const MetricsRecord& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream txt(dir / "metrics.txt", std::ios::trunc);
  txt << "ap=" << exact(m.ap) << "\naccuracy=" << exact(m.accuracy) << "\nprecision=" << exact(m.precision)
      << "\nrecall=" << exact(m.recall) << '\n';
  std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
  csv << "ap,accuracy,precision,recall\n"
      << exact(m.ap) << ',' << exact(m.accuracy) << ',' << exact(m.precision) << ',' << exact(m.recall) << '\n';
}

/// Frame-level score table: frame,score[,truth].
inline void write_score_curve(const ScoreSeries& series, const std::optional<std::vector<std::uint8_t>>& truth,
                              std::ostream& out) {
  auto frames = series.frame_scores();
  out << (truth ? "frame,score,truth\n" : "frame,score\n");
  for (std::size_t f = 0; f < frames.size(); ++f) {
    out << f << ',' << exact(frames[f]);
    if (truth) out << ',' << static_cast<int>((*truth)[f]);
    out << '\n';
  }
}

inline void export_score_curve(const Model& model, const VideoFeatureBag& bag, const std::filesystem::path& path) {
  auto series = model.score(bag.visual, bag.audio);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_score_curve(series, bag.frame_truth, out);
}

// ---- training -------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> eval_ap;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> log;
};

inline void write_epoch_log(const std::vector<EpochRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,loss,lr,eval_ap\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << exact(r.loss) << ',' << exact(r.lr) << ',';
    if (r.eval_ap) out << exact(*r.eval_ap);
    out << '\n';
  }
}

/// Mini-batch MIL training with Adam and a per-epoch cosine schedule. Bags
/// in a batch are processed one at a time and their gradients accumulated.
inline TrainResult train(const std::vector<VideoFeatureBag>& train_bags, const TrainConfig& config,
                         const std::vector<VideoFeatureBag>* eval_bags = nullptr, std::ostream* progress = nullptr,
                         const KRule& k_rule = default_k) {
  config.validate();
  const bool has_normal = std::any_of(train_bags.begin(), train_bags.end(), [](auto& b) { return b.label == 0; });
  const bool has_abnormal = std::any_of(train_bags.begin(), train_bags.end(), [](auto& b) { return b.label == 1; });
  if (!has_normal || !has_abnormal) throw ContractError("train: need at least one training bag of each label");
  for (const auto& bag : train_bags) {
    bag.validate();
    if (bag.visual.cols() != config.model.cfa.d_visual || bag.audio.cols() != config.model.cfa.d_audio) {
      throw ConfigError("train: bag " + bag.id + " widths do not match the model configuration");
    }
  }

  Model model(config.model, config.seed);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(model.parameters());
  std::vector<std::size_t> order(train_bags.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochRecord> log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config.epochs, config.learning_rate, config.lr_floor);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto stop = std::min(order.size(), start + config.batch_size);
      const double weight = 1.0 / static_cast<double>(stop - start);
      model.zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        const auto& bag = train_bags[order[i]];
        ForwardMode mode{true, &rng, false};
        auto scores = model.forward(bag.visual, bag.audio, mode);
        auto bag_score = topk_mean(scores, k_rule(bag.snippets()));
        auto loss = mil_loss({{bag_score, bag.label}});
        if (!std::isfinite(loss.item())) {
          auto culprit = first_nonfinite(loss);
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + " on bag " + bag.id +
                             "; first non-finite tensor: " + (culprit.empty() ? "loss" : culprit));
        }
        epoch_loss += loss.item();
        backward(scalar_mul(loss, weight));
      }
      adam.step(lr);
    }
    EpochRecord record{epoch, epoch_loss / static_cast<double>(order.size()), lr, std::nullopt};
    if (config.eval_each_epoch && eval_bags && !eval_bags->empty()) record.eval_ap = evaluate(model, *eval_bags).metrics.ap;
    if (progress) {
      *progress << "epoch " << epoch << " loss " << record.loss << " lr " << lr;
      if (record.eval_ap) *progress << " ap " << *record.eval_ap;
      *progress << '\n';
    }
    log.push_back(record);
  }
  std::ostringstream state;
  state << rng;
  return {Checkpoint{config, std::move(model), config.epochs, state.str()}, std::move(log)};
}

}  // namespace lvad
