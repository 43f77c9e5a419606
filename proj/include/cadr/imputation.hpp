#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cadr/model.hpp"
#include "cadr/propensity.hpp"

namespace cadr {

struct ImputedLabel {
  int pseudo_class = 0;
  double confidence = 0.0;
  bool accepted = false;
};

struct ThresholdConfig {
  double tau_o = 0.95;
  double beta = 0.5;

  void validate() const;
};

/// Argmax class and its probability per row; ties go to the lowest class index.
std::vector<ImputedLabel> impute(const Matrix<double>& weak_probs);

/// tau_o * (p_hat(c) / max_y p_hat(y))^beta with prior entries clamped away from zero.
double class_aware_threshold(const ClassPrior& prior, int pseudo_class, const ThresholdConfig& cfg);

/// class_aware_threshold for every class.
std::vector<double> class_thresholds(const ClassPrior& prior, const ThresholdConfig& cfg);

/// Per-sample thresholds looked up from a per-class table.
std::vector<double> sample_thresholds(std::span<const ImputedLabel> imputed, std::span<const double> per_class);

/// Marks each label accepted iff confidence > threshold.
void apply_thresholds(std::vector<ImputedLabel>& imputed, std::span<const double> thresholds);

struct CaiLossResult {
  double loss = 0.0;
  double unlabeled_part = 0.0;        // accepted pseudo-label cross-entropy / N
  double labeled_part = 0.0;          // supervised cross-entropy / N
  std::vector<ImputedLabel> imputed;  // with `accepted` filled in
  std::vector<double> unlabeled_losses;  // lambda_u * CE to the pseudo-label (before the indicator)
  Matrix<double> dlogits_unlabeled;   // w.r.t. the strong-view unlabeled logits
  Matrix<double> dlogits_labeled;     // w.r.t. the labeled logits
};

/// Mean over N = B_L + B_U (or `normalizer`) of lambda_u * CE(strong logits, pseudo-label) for accepted
/// unlabeled rows plus CE(labeled probs, label) for labeled rows. Rejected rows contribute nothing.
CaiLossResult cai_loss(const Matrix<double>& unlabeled_strong_logits, std::span<const ImputedLabel> imputed,
                       std::span<const double> thresholds, const Matrix<double>& labeled_probs,
                       std::span<const int> labels, double lambda_u = 1.0,
                       std::optional<double> normalizer = std::nullopt);

}  // namespace cadr
