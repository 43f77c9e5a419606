#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cadr/imputation.hpp"
#include "cadr/model.hpp"
#include "cadr/propensity.hpp"

namespace cadr {

using Flags = std::vector<std::uint8_t>;

/// Propensities below this are raised to it before inverting (|1/p| <= 30).
inline constexpr double kMinPropensity = 1.0 / 30.0;

struct SampleTerm {
  std::size_t id = 0;
  bool missing = false;
  double inverse_weight = 0.0;   // 1/p after clipping; unused for unlabeled rows
  double supervised_loss = 0.0;  // L_s, zero for unlabeled rows
  double unlabeled_loss = 0.0;   // L_u against the imputed label
  bool accepted = false;
};

struct LossReport {
  double l_cap = 0.0;
  double l_cai = 0.0;
  double l_supp = 0.0;
  double l_cadr = 0.0;
  std::vector<SampleTerm> per_sample_terms;
};

/// (1/N) sum (1 - m - (1-m)/p) L_u I  -  (1/N) sum (1 - m) L_s.
/// p must be positive on labeled rows (throws std::domain_error); it is floored at kMinPropensity.
double supp_loss(std::span<const std::uint8_t> missing, std::span<const double> propensities,
                 std::span<const double> unlabeled_losses, std::span<const std::uint8_t> indicators,
                 std::span<const double> supervised_losses);

/// The same sum written with inverse weights w = 1/p, which may be zero or negative.
double supp_loss_weighted(std::span<const std::uint8_t> missing, std::span<const double> inverse_weights,
                          std::span<const double> unlabeled_losses, std::span<const std::uint8_t> indicators,
                          std::span<const double> supervised_losses);

/// Differentiated logits of one training batch. Labeled rows come first in the sample numbering.
struct ObjectiveBatch {
  Matrix<double> labeled_logits;           // weak view; carries the supervised gradient
  std::vector<int> labels;
  Matrix<double> labeled_strong_logits;    // strong view; only read when the supplementary term is on
  Matrix<double> unlabeled_strong_logits;  // strong view
};

/// Quantities held constant during differentiation: pseudo-labels, thresholds, propensities, prior.
struct ObjectiveTargets {
  std::vector<ImputedLabel> labeled_imputed;
  std::vector<double> labeled_thresholds;
  std::vector<ImputedLabel> unlabeled_imputed;
  std::vector<double> unlabeled_thresholds;
  std::vector<PropensityScore> labeled_scores;
  ClassPrior prior;
  double lambda_u = 1.0;
  /// Labeled inverse weights are clipped to [-max, max]; the default matches kMinPropensity.
  double max_inverse_weight = 1.0 / kMinPropensity;
};

/// Builds targets from weak-view probabilities. With `class_aware` false every threshold is tau_o.
ObjectiveTargets make_targets(const Matrix<double>& labeled_weak_probs, std::span<const int> labels,
                              const Matrix<double>& unlabeled_weak_probs, const ClassPrior& prior,
                              const ThresholdConfig& thresholds, bool class_aware, double lambda_u);

/// Which summands enter the objective.
struct ObjectiveTerms {
  bool cap = false;             // supervised term is the propensity-weighted loss
  bool cai_supervised = true;   // plain cross-entropy on labeled rows (part of L_CAI)
  bool supp = false;            // supplementary doubly robust term
};

struct ObjectiveResult {
  LossReport report;
  Matrix<double> dlabeled;          // d/d labeled_logits
  Matrix<double> dlabeled_strong;   // d/d labeled_strong_logits (empty when supp is off)
  Matrix<double> dunlabeled_strong; // d/d unlabeled_strong_logits
};

/// All terms are normalized by N = labeled + unlabeled rows. l_cai holds whatever part of L_CAI
/// is switched on; l_cadr is always the full objective.
ObjectiveResult objective(const ObjectiveBatch& batch, const ObjectiveTargets& targets, const ObjectiveTerms& terms);

/// L_CAP + L_CAI + L_supp.
ObjectiveResult cadr_loss(const ObjectiveBatch& batch, const ObjectiveTargets& targets);

struct Scenario1Parts {
  double cai = 0.0;   // (1/N) sum [m L_u I + (1-m) L_s]
  double supp = 0.0;
  double simplified = 0.0;  // (1/N) sum (1 - (1-m)/p) L_u I
};

Scenario1Parts dr_scenario1_parts(std::span<const std::uint8_t> missing, std::span<const double> propensities,
                                  std::span<const double> supervised_losses,
                                  std::span<const double> unlabeled_losses, std::span<const std::uint8_t> indicators);

/// L_CAI + L_supp through the simplified sum; throws std::logic_error if the component-wise sum
/// differs by more than 1e-9 (relative to the term magnitudes).
double dr_identity_scenario1(std::span<const std::uint8_t> missing, std::span<const double> propensities,
                             std::span<const double> unlabeled_losses, std::span<const std::uint8_t> indicators);

/// (1/N) sum ((1-m)/p - (1-m)) (L_s - L_u I), checked against L_CAP (raw L_s/p form) + L_supp.
double dr_identity_scenario2(std::span<const std::uint8_t> missing, std::span<const double> propensities,
                             std::span<const double> supervised_losses, std::span<const double> unlabeled_losses,
                             std::span<const std::uint8_t> indicators);

struct DrSimulationConfig {
  std::size_t trials = 1000;
  std::vector<double> propensities;  // P(m = 0) per sample
  std::vector<double> supervised_losses;
  std::vector<double> unlabeled_losses;
  Flags indicators;
  /// Scenario 2 only: when positive, each trial imputes L_u = L_s + N(0, noise^2) with I = 1.
  double imputation_noise = 0.0;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  std::size_t n_samples() const { return propensities.size(); }
  void validate() const;

  /// p ~ U[p_low, p_high], losses ~ U[loss_low, loss_high], all indicators on.
  static DrSimulationConfig random(std::size_t n_samples, std::size_t trials, double p_low, double p_high,
                                   double loss_low, double loss_high, std::uint64_t seed);
};

struct MonteCarloResult {
  int scenario = 1;
  std::size_t trials = 0;
  double mean = 0.0;
  double standard_error = 0.0;

  /// |mean| <= 4 standard errors.
  bool pass() const;
};

/// Draws m ~ Bernoulli(P(m=0) = p) independently per trial, evaluates the scenario identity and
/// reports the mean across trials. Trial t uses a stream derived from (seed, t).
MonteCarloResult monte_carlo_unbiasedness(const DrSimulationConfig& cfg, int scenario);

/// Pairwise summation; the result does not depend on how trials were scheduled.
double pairwise_sum(std::span<const double> values);

}  // namespace cadr
