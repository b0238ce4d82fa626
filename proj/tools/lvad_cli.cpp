// lvad: synthetic corpus generation, training, evaluation, scoring and the
// gradient self-check, as subcommands of one executable.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "lvad/gradcheck.hpp"
#include "lvad/train.hpp"

namespace fs = std::filesystem;

namespace {

struct GenDataArgs {
  fs::path out;
  lvad::SyntheticSpec spec;
  double test_fraction = 1.0 / 3.0;
};

struct TrainArgs {
  fs::path manifest;
  fs::path out;
  lvad::TrainConfig config;
  bool visual_only = false;
};

struct EvalArgs {
  fs::path checkpoint;
  fs::path manifest;
  fs::path out;
};

struct ScoreArgs {
  fs::path checkpoint;
  fs::path bag;
  fs::path out;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  double tol = 1e-4;
};

const auto kProbability = CLI::Validator(
    [](const std::string& s) -> std::string {
      const double v = std::stod(s);
      return v >= 0.0 && v < 1.0 ? "" : "must lie in [0, 1)";
    },
    "[0,1)");

const auto kNegative = CLI::Validator(
    [](const std::string& s) -> std::string { return std::stod(s) < 0.0 ? "" : "must be negative"; }, "<0");

void run_gen_data(const GenDataArgs& a) {
  auto bags = lvad::generate_synthetic_corpus(a.spec);
  auto manifest = lvad::write_corpus(bags, a.out, a.test_fraction);
  std::cout << "wrote " << bags.size() << " bags (" << manifest.select(lvad::Split::kTest).size() << " test) to "
            << a.out.string() << '\n';
}

void run_train(TrainArgs a) {
  auto manifest = lvad::load_manifest(a.manifest);
  auto train_bags = lvad::load_split(manifest, lvad::Split::kTrain);
  if (train_bags.empty()) throw lvad::ContractError("manifest has no train bags");
  auto test_bags = lvad::load_split(manifest, lvad::Split::kTest);

  auto& model = a.config.model;
  model.cfa.d_visual = train_bags.front().visual.cols();
  model.cfa.d_audio = train_bags.front().audio.cols();
  model.visual_only = a.visual_only;
  model.sync();

  fs::create_directories(a.out);
  auto result = lvad::train(train_bags, a.config, test_bags.empty() ? nullptr : &test_bags, &std::cout);
  lvad::save_checkpoint(result.checkpoint, a.out / "checkpoint.json");
  lvad::write_epoch_log(result.log, a.out / "epochs.csv");
  std::cout << "checkpoint: " << (a.out / "checkpoint.json").string() << '\n';
}

void run_eval(const EvalArgs& a) {
  auto ckpt = lvad::load_checkpoint(a.checkpoint);
  auto bags = lvad::load_split(lvad::load_manifest(a.manifest), lvad::Split::kTest);
  auto result = lvad::evaluate(ckpt.model, bags);
  lvad::write_metrics(result.metrics, a.out);
  fs::create_directories(a.out / "scores");
  for (std::size_t i = 0; i < bags.size(); ++i) {
    std::ofstream curve(a.out / "scores" / (result.ids[i] + ".csv"), std::ios::trunc);
    lvad::write_score_curve(result.series[i], bags[i].frame_truth, curve);
  }
  const auto& m = result.metrics;
  std::cout << "ap=" << m.ap << " accuracy=" << m.accuracy << " precision=" << m.precision << " recall=" << m.recall
            << '\n';
}

void run_score(const ScoreArgs& a) {
  auto ckpt = lvad::load_checkpoint(a.checkpoint);
  lvad::export_score_curve(ckpt.model, lvad::load_bag(a.bag), a.out);
}

int run_gradcheck(const GradcheckArgs& a) {
  if (!(a.tol > 0.0)) throw lvad::ConfigError("--tol must be positive");
  bool all_ok = true;
  for (const auto& r : lvad::run_gradcheck_suite(a.seed, {a.tol, 1e-6})) {
    std::printf("%-4s %-32s worst_rel=%.3e partials=%zu\n", r.ok ? "ok" : "FAIL", r.name.c_str(), r.worst_relative,
                r.checked);
    all_ok = all_ok && r.ok;
  }
  std::cout << (all_ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return all_ok ? 0 : 1;
}

// CLI11 only reads configuration files on the root app, so --config lives
// there and top-level keys are assigned to the train subcommand.
class TrainScopedConfig : public CLI::ConfigINI {
public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigINI::from_config(input);
    for (auto& item : items)
      if (item.parents.empty()) item.parents = {"train"};
    return items;
  }
};

int usage_error(const CLI::App& app, const std::string& message) {
  std::cerr << "error: " << message << "\n\n" << app.help();
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised audio-visual anomaly detection with hyperbolic graph attention"};
  app.require_subcommand(1, 1);
  app.get_formatter()->column_width(34);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic feature corpus and its manifest");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.spec.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--normal", gen.spec.n_normal, "Number of normal videos")->capture_default_str();
  gen_cmd->add_option("--abnormal", gen.spec.n_abnormal, "Number of abnormal videos")->capture_default_str();
  gen_cmd->add_option("--dv", gen.spec.d_visual, "Visual feature width")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--da", gen.spec.d_audio, "Audio feature width")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--t-min", gen.spec.t_min, "Fewest snippets per video")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--t-max", gen.spec.t_max, "Most snippets per video")->capture_default_str()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--rate", gen.spec.anomaly_rate, "Anomalous fraction of an abnormal video")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--separation", gen.spec.separation, "Norm of the anomaly shift in each modality")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--test-fraction", gen.test_fraction, "Share of each class placed in the test split")
      ->capture_default_str()
      ->check(kProbability);

  TrainArgs tr;
  app.set_config("--config", "", "key=value file of train options, named as their long flags (explicit flags win)");
  app.config_formatter(std::make_shared<TrainScopedConfig>());
  app.allow_config_extras(CLI::config_extras_mode::error);
  auto* train_cmd = app.add_subcommand("train", "Train a model on the train split of a manifest");
  train_cmd->fallthrough();
  train_cmd->allow_config_extras(CLI::config_extras_mode::error);
  train_cmd->footer("Options can also be read from a key=value file with --config FILE.");
  train_cmd->add_option("--manifest", tr.manifest, "Manifest file")->required();
  train_cmd->add_option("--out", tr.out, "Output directory for checkpoint.json and epochs.csv")->required();
  train_cmd->add_option("--lr", tr.config.learning_rate, "Initial learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr-floor", tr.config.lr_floor, "Learning rate reached at the end of the cosine schedule")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch", tr.config.batch_size, "Videos per optimiser step")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", tr.config.epochs, "Training epochs")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr.config.seed, "Initialisation, shuffling and dropout seed")->capture_default_str();
  train_cmd->add_option("--prefix-dim", tr.config.model.cfa.prefix_dim, "Prefix rows per attention head")->capture_default_str();
  train_cmd->add_option("--bottleneck", tr.config.model.cfa.bottleneck, "Adapter bottleneck width")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--dropout", tr.config.model.cfa.dropout, "Adapter dropout rate")->capture_default_str()->check(kProbability);
  train_cmd->add_option("--heads", tr.config.model.cfa.heads, "Attention heads")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--eta", tr.config.model.hlgatt.eta, "Curvature of the hyperboloid")->capture_default_str()->check(kNegative);
  train_cmd->add_option("--layers", tr.config.model.hlgatt.layers, "Graph attention layers per branch")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--slope", tr.config.model.hlgatt.slope, "Leaky-ReLU negative slope on node A")->capture_default_str();
  train_cmd->add_option("--epsilon", tr.config.model.hlgatt.epsilon, "Stabiliser of the spatial rescaling")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  train_cmd->add_flag("--visual-only", tr.visual_only, "Hold the audio modulation gate at zero")->capture_default_str();
  train_cmd->add_flag("--eval-each-epoch", tr.config.eval_each_epoch, "Log test-split AP after every epoch")
      ->capture_default_str();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Frame-level metrics and score curves on the test split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "Output directory for metrics and per-video scores")->required();

  ScoreArgs sc;
  auto* score_cmd = app.add_subcommand("score", "Per-frame score table for one feature file");
  score_cmd->add_option("--checkpoint", sc.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--bag", sc.bag, "Feature file")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--out", sc.out, "Output CSV path")->required();

  GradcheckArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare every gradient with central finite differences");
  grad_cmd->add_option("--seed", gc.seed, "Seed for the random test inputs")->capture_default_str();
  grad_cmd->add_option("--tol", gc.tol, "Relative tolerance")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto& active = app.get_subcommands();
    return usage_error(active.empty() ? app : *active.front(), e.what());
  }

  const CLI::App& active = *app.get_subcommands().front();
  try {
    if (gen_cmd->parsed()) run_gen_data(gen);
    if (train_cmd->parsed()) run_train(tr);
    if (eval_cmd->parsed()) run_eval(ev);
    if (score_cmd->parsed()) run_score(sc);
    if (grad_cmd->parsed()) return run_gradcheck(gc);
  } catch (const lvad::ConfigError& e) {
    return usage_error(active, e.what());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
