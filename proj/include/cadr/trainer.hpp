#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cadr/config.hpp"
#include "cadr/datagen.hpp"
#include "cadr/estimator.hpp"
#include "cadr/metrics.hpp"
#include "cadr/model.hpp"
#include "cadr/propensity.hpp"

namespace cadr {

/// Ablation rows: which of CAP weighting, class-aware thresholds and the supplementary term are on.
enum class TrainMode { baseline, cap, cai, trivial_combo, cadr };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

bool uses_cap(TrainMode mode);
bool uses_class_aware_threshold(TrainMode mode);
ObjectiveTerms objective_terms(TrainMode mode);

enum class CapGradient { marginal, detached };

std::string to_string(CapGradient g);
CapGradient parse_cap_gradient(const std::string& text);

struct RunConfig {
  TrainMode mode = TrainMode::cadr;
  int max_iters = 3000;
  int labeled_batch = 64;
  int unlabeled_ratio = 7;
  double tau_o = 0.95;
  double beta = 0.5;
  double mu = 0.99;
  double lambda_u = 1.0;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int eval_every = 100;
  std::uint64_t seed = 0;
  int hidden = 64;
  /// Augmentation noise as multiples of the pooled training-feature standard deviation.
  double weak_noise = 0.05;
  double strong_noise = 0.15;
  double strong_mask = 0.25;
  /// Gradient through log P(y; theta): "marginal" differentiates the batch marginal (scaled by the
  /// EMA prior), "detached" treats the prior as a constant.
  CapGradient cap_gradient = CapGradient::marginal;
  /// Floor on |p| for labeled rows before inverting in the supplementary term.
  double min_propensity = kMinPropensity;
  /// Freezes the prior at uniform (diagnostics for the degenerate cases).
  bool force_uniform_prior = false;

  void validate() const;
  static RunConfig from(const KeyValueConfig& kv);
  KeyValueConfig to_config() const;
  static const std::vector<std::string>& keys();
};

struct TrainState {
  ModelParams<float> params;
  OptimizerState<float> optimizer;
  ClassPrior prior;
  AugmentConfig augment;
  std::size_t step = 0;

  static TrainState initial(int input_dim, int classes, const RunConfig& cfg, double feature_std);
};

struct StepOutput {
  LossReport report;
  std::vector<std::uint64_t> accepted_per_class;  // unlabeled rows whose pseudo-label was accepted
  std::vector<double> class_thresholds;
};

/// One iteration: augment, forward, prior update, targets, objective for `cfg.mode`, one SGD step.
StepOutput train_step(TrainState& state, const Matrix<float>& labeled, std::span<const int> labels,
                      const Matrix<float>& unlabeled, const RunConfig& cfg);

struct EvalRecord {
  std::size_t step = 0;
  double mean_acc = 0.0;
  double gm_acc = 0.0;
  std::vector<double> recall;
  double l_cap = 0.0;
  double l_cai = 0.0;
  double l_supp = 0.0;
  double l_cadr = 0.0;
  std::vector<std::uint64_t> accepted;  // summed over the steps since the previous record

  bool operator==(const EvalRecord&) const = default;
};

struct TrainHistory {
  std::string mode;
  std::uint64_t seed = 0;
  int classes = 0;
  std::vector<EvalRecord> records;

  bool operator==(const TrainHistory&) const = default;
};

/// CSV with `# key=value` preamble lines (mode, seed, classes) and one row per evaluation.
void write_history_csv(const TrainHistory& history, std::ostream& out);
void save_history(const TrainHistory& history, const std::filesystem::path& path);
TrainHistory read_history_csv(std::istream& in, const std::string& source = "<stream>");
TrainHistory load_history(const std::filesystem::path& path);

struct StepInfo {
  std::size_t step = 0;
  const ClassPrior* prior = nullptr;
  const StepOutput* output = nullptr;
};

using StepObserver = std::function<void(const StepInfo&)>;

struct RunResult {
  TrainHistory history;
  ModelParams<float> params;
  ModelParams<float> velocity;
  ClassPrior prior;
};

/// Pooled standard deviation of all feature entries.
double feature_std(const Dataset& ds);

/// Trains on the labeled and unlabeled parts of `train`; evaluates on `test` (or on `train`'s ground
/// truth when absent) every eval_every steps and after the last step.
RunResult run(const Dataset& train, const std::optional<Dataset>& test, const RunConfig& cfg,
              const StepObserver& observer = {});

/// Predictions on un-augmented features.
ConfusionMatrix evaluate(const ModelParams<float>& params, const Dataset& ds);

}  // namespace cadr
