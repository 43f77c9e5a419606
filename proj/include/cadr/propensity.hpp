#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cadr/model.hpp"

namespace cadr {

/// EMA estimate of the model's class marginal, P_hat(Y). Starts uniform.
struct ClassPrior {
  std::vector<double> probs;
  double momentum = 0.99;

  static ClassPrior uniform(int classes, double momentum);
  int classes() const { return static_cast<int>(probs.size()); }
  /// Entry clamped into the logarithm-safe range.
  double clamped(int c) const;
  double max_entry() const;
};

/// Column mean of a batch of probability rows (labeled and unlabeled outputs stacked).
std::vector<double> batch_class_marginal(const Matrix<double>& probs);

/// prior <- mu * prior + (1 - mu) * marginal, renormalized onto the simplex.
ClassPrior update_prior(const ClassPrior& prior, std::span<const double> batch_marginal);

/// s(x, y) = log p(y|x) / (log p(y|x) - log p_hat(y)); `inverse_weight` = 1/s.
/// When the two probabilities coincide the sample gets inverse_weight 0 and value +infinity.
struct PropensityScore {
  double value = 0.0;
  double inverse_weight = 0.0;
};

/// Inputs must already be clamped to [1e-7, 1 - 1e-7]; throws std::domain_error otherwise.
PropensityScore propensity_score(double p_y_given_x, double p_hat_y);

struct CapLossResult {
  double loss = 0.0;
  std::vector<double> per_sample;  // -log p(y|x) + log p_hat(y)
  Matrix<double> dlogits;          // gradient of `loss` w.r.t. the labeled logits
};

/// Propensity-weighted supervised loss in its closed form -log p(y|x) + log p_hat(y), which equals
/// L_s / s for cross-entropy L_s. The prior is a constant. The sum is divided by `normalizer`
/// (default: number of labeled rows). Throws std::invalid_argument on an empty batch.
CapLossResult cap_loss(const Matrix<double>& labeled_probs, std::span<const int> labels, const ClassPrior& prior,
                       std::optional<double> normalizer = std::nullopt);

/// Gradient of the (1/normalizer) sum_i log P(y_i; theta) part of the CAP loss when P(Y; theta) is the
/// freshly updated prior mu * P_hat_old + (1 - mu) * P_batch(theta). Only the batch marginal depends on
/// the parameters, so the gradient w.r.t. the stacked logits (labeled rows, then unlabeled rows) is
/// (1 - mu) / normalizer * sum_i dP_batch(y_i) / P_hat(y_i).
Matrix<double> cap_marginal_gradient(const Matrix<double>& stacked_probs, std::span<const int> labels,
                                     const ClassPrior& updated_prior, double normalizer);

}  // namespace cadr
