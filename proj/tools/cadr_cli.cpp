// cadr: command-line front end for dataset generation, training, evaluation and verification.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cadr/config.hpp"
#include "cadr/datagen.hpp"
#include "cadr/errors.hpp"
#include "cadr/estimator.hpp"
#include "cadr/experiment.hpp"
#include "cadr/metrics.hpp"
#include "cadr/trainer.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

// Config file (optional) plus --key=value overrides left over after CLI11 parsing.
cadr::KeyValueConfig gather_config(const std::string& config_path, const std::vector<std::string>& extras) {
  cadr::KeyValueConfig kv;
  if (!config_path.empty()) kv = cadr::KeyValueConfig::load(config_path);
  for (const auto& arg : extras) kv.apply_override(arg);
  return kv;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
}

std::vector<std::pair<std::string, cadr::TrainHistory>> load_histories(const std::vector<std::string>& paths) {
  std::vector<std::pair<std::string, cadr::TrainHistory>> out;
  for (const auto& p : paths) out.emplace_back(cadr::run_name_from_path(p), cadr::load_history(p));
  return out;
}

int cmd_generate(const std::string& config, const std::vector<std::string>& extras, const std::string& out_path,
                 const std::string& test_out) {
  const auto kv = gather_config(config, extras);
  kv.require_known({"class_count", "feature_dim", "samples_per_class", "class_separation", "noise_scale", "seed",
                    "test_per_class", "gamma_l", "gamma_u", "n_max", "mode", "n_random_labels"});
  const auto spec = cadr::synthetic_spec_from(kv);
  const auto mnar = cadr::mnar_config_from(kv);
  auto split = cadr::generate_synthetic_split(spec);
  auto train = cadr::apply_unlabeled_imbalance(cadr::apply_mnar_mask(split.train, mnar), mnar);
  cadr::save_dataset(train, out_path);
  if (!test_out.empty()) cadr::save_dataset(split.test, test_out);
  std::cerr << "wrote " << out_path << ": " << train.size() << " samples, " << train.labeled_count()
            << " labeled\n";
  return 0;
}

int cmd_train(const std::string& config, const std::vector<std::string>& extras, const std::string& data,
              const std::string& test, const std::string& history_path, const std::string& checkpoint,
              const std::string& prior_log, const std::string& imputation_log) {
  const auto kv = gather_config(config, extras);
  kv.require_known({cadr::RunConfig::keys().begin(), cadr::RunConfig::keys().end()});
  const auto cfg = cadr::RunConfig::from(kv);
  const auto train = cadr::load_dataset(data);
  std::optional<cadr::Dataset> test_set;
  if (!test.empty()) test_set = cadr::load_dataset(test);

  std::ofstream prior_out, imputation_out;
  if (!prior_log.empty()) {
    prior_out.open(prior_log);
    prior_out << "step";
    for (int c = 0; c < train.class_count; ++c) prior_out << ",prior_" << c;
    prior_out << "\n";
  }
  if (!imputation_log.empty()) {
    imputation_out.open(imputation_log);
    imputation_out << "step";
    for (int c = 0; c < train.class_count; ++c) imputation_out << ",accepted_" << c;
    for (int c = 0; c < train.class_count; ++c) imputation_out << ",threshold_" << c;
    imputation_out << "\n";
  }
  cadr::StepObserver observer;
  if (prior_out.is_open() || imputation_out.is_open()) {
    observer = [&](const cadr::StepInfo& info) {
      if (prior_out.is_open()) {
        prior_out << info.step;
        for (const double p : info.prior->probs) prior_out << ',' << p;
        prior_out << "\n";
      }
      if (imputation_out.is_open()) {
        imputation_out << info.step;
        for (const auto a : info.output->accepted_per_class) imputation_out << ',' << a;
        for (const double t : info.output->class_thresholds) imputation_out << ',' << t;
        imputation_out << "\n";
      }
    };
  }

  const auto result = cadr::run(train, test_set, cfg, observer);
  cadr::save_history(result.history, history_path);
  if (!checkpoint.empty()) cadr::save_checkpoint({result.params, result.velocity}, checkpoint);
  if (!result.history.records.empty()) {
    const auto& last = result.history.records.back();
    std::cerr << cadr::to_string(cfg.mode) << " step " << last.step << ": mean_acc " << last.mean_acc << ", gm_acc "
              << last.gm_acc << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data, const std::string& out) {
  const auto ckpt = cadr::load_checkpoint(checkpoint);
  const auto ds = cadr::load_dataset(data);
  if (static_cast<int>(ds.feature_dim()) != ckpt.params.input_dim() || ds.class_count != ckpt.params.classes()) {
    throw cadr::ConfigError("checkpoint and dataset dimensions differ");
  }
  write_text(out, cadr::metrics_json(cadr::evaluate(ckpt.params, ds)) + "\n");
  return 0;
}

int cmd_verify_dr(const std::string& config, const std::vector<std::string>& extras, const std::string& out) {
  const auto kv = gather_config(config, extras);
  kv.require_known({"scenario", "trials", "n_samples", "p_low", "p_high", "loss_low", "loss_high",
                    "imputation_noise", "perfect_imputation", "seed", "threads"});
  const int scenario = static_cast<int>(kv.get_int("scenario", 1));
  auto cfg = cadr::DrSimulationConfig::random(
      static_cast<std::size_t>(kv.get_int("n_samples", 64)), static_cast<std::size_t>(kv.get_int("trials", 100000)),
      kv.get_double("p_low", 0.2), kv.get_double("p_high", 0.9), kv.get_double("loss_low", 0.0),
      kv.get_double("loss_high", 1.0), kv.get_u64("seed", 0));
  cfg.imputation_noise = kv.get_double("imputation_noise", 0.0);
  cfg.threads = static_cast<unsigned>(kv.get_int("threads", 1));
  if (kv.get_bool("perfect_imputation", false)) cfg.unlabeled_losses = cfg.supervised_losses;
  const auto res = cadr::monte_carlo_unbiasedness(cfg, scenario);
  nlohmann::json j = {{"scenario", res.scenario},
                      {"trials", res.trials},
                      {"mean", res.mean},
                      {"stderr", res.standard_error},
                      {"pass", res.pass()}};
  write_text(out, j.dump() + "\n");
  return res.pass() ? 0 : 1;
}

int cmd_manifest(const std::string& path, unsigned parallel, const std::string& out) {
  const auto manifest = cadr::ExperimentManifest::load(path);
  write_text(out, cadr::comparison_csv(cadr::run_manifest(manifest, parallel)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-aware doubly robust semi-supervised learning workbench"};
  app.require_subcommand(1);

  std::string config, out, data, test, history = "history.csv", checkpoint, prior_log, imputation_log, test_out;
  std::vector<std::string> files;
  unsigned parallel = 1;

  auto* gen = app.add_subcommand("generate", "Synthesize a dataset and apply the labeling regime");
  gen->add_option("--config", config, "key=value config file");
  gen->add_option("--out", out, "output dataset path")->required();
  gen->add_option("--test-out", test_out, "held-out dataset path");
  gen->allow_extras();

  auto* train = app.add_subcommand("train", "Train a model and write its evaluation history");
  train->add_option("--config", config, "key=value config file");
  train->add_option("--data", data, "training dataset")->required();
  train->add_option("--test", test, "held-out dataset (defaults to the training set's ground truth)");
  train->add_option("--history", history, "history CSV output");
  train->add_option("--checkpoint", checkpoint, "checkpoint output");
  train->add_option("--prior-log", prior_log, "per-step class prior CSV");
  train->add_option("--imputation-log", imputation_log, "per-step accepted counts and thresholds CSV");
  train->allow_extras();

  auto* eval = app.add_subcommand("evaluate", "Metrics JSON for a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data, "dataset")->required();
  eval->add_option("--out", out, "output path (default stdout)");

  auto* verify = app.add_subcommand("verify-dr", "Monte Carlo check of the doubly robust identities");
  verify->add_option("--config", config, "key=value config file");
  verify->add_option("--out", out, "output path (default stdout)");
  verify->allow_extras();

  auto* report = app.add_subcommand("report", "Aggregate comparison table from history CSVs");
  report->add_option("histories", files, "history CSV files")->required();
  report->add_option("--out", out, "output path (default stdout)");

  auto* manifest = app.add_subcommand("manifest", "Run every [run <name>] section of a manifest");
  manifest->add_option("manifest", config, "manifest file")->required();
  manifest->add_option("--parallel", parallel, "concurrent runs");
  manifest->add_option("--out", out, "comparison CSV path (default stdout)");

  auto* plot = app.add_subcommand("plot-data", "Long-format CSV (step,run,metric,value) from histories");
  plot->add_option("histories", files, "history CSV files")->required();
  plot->add_option("--out", out, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(config, gen->remaining(), out, test_out);
    if (*train) {
      return cmd_train(config, train->remaining(), data, test, history, checkpoint, prior_log, imputation_log);
    }
    if (*eval) return cmd_evaluate(checkpoint, data, out);
    if (*verify) return cmd_verify_dr(config, verify->remaining(), out);
    if (*report) {
      write_text(out, cadr::comparison_csv(cadr::report_rows(load_histories(files))));
      return 0;
    }
    if (*manifest) return cmd_manifest(config, parallel, out);
    if (*plot) {
      write_text(out, cadr::plot_data(load_histories(files)));
      return 0;
    }
  } catch (const cadr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cadr::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
