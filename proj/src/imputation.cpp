#include "cadr/imputation.hpp"

#include <cmath>
#include <stdexcept>

#include "cadr/cross_entropy.hpp"
#include "cadr/errors.hpp"

namespace cadr {

void ThresholdConfig::validate() const {
  if (!(tau_o > 0.0 && tau_o <= 1.0)) throw ConfigError("tau_o must be in (0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
}

std::vector<ImputedLabel> impute(const Matrix<double>& weak_probs) {
  std::vector<ImputedLabel> out(static_cast<std::size_t>(weak_probs.rows()));
  for (Eigen::Index i = 0; i < weak_probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < weak_probs.cols(); ++c)
      if (weak_probs(i, c) > weak_probs(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = {static_cast<int>(best), weak_probs(i, best), false};
  }
  return out;
}

double class_aware_threshold(const ClassPrior& prior, int pseudo_class, const ThresholdConfig& cfg) {
  cfg.validate();
  if (pseudo_class < 0 || pseudo_class >= prior.classes()) throw std::out_of_range("pseudo class out of range");
  if (cfg.beta == 0.0) return cfg.tau_o;
  double top = 0.0;
  for (int c = 0; c < prior.classes(); ++c) top = std::max(top, prior.clamped(c));
  const double ratio = std::min(1.0, prior.clamped(pseudo_class) / top);
  return cfg.tau_o * std::pow(ratio, cfg.beta);
}

std::vector<double> class_thresholds(const ClassPrior& prior, const ThresholdConfig& cfg) {
  std::vector<double> out(static_cast<std::size_t>(prior.classes()));
  for (int c = 0; c < prior.classes(); ++c) out[static_cast<std::size_t>(c)] = class_aware_threshold(prior, c, cfg);
  return out;
}

std::vector<double> sample_thresholds(std::span<const ImputedLabel> imputed, std::span<const double> per_class) {
  std::vector<double> out;
  out.reserve(imputed.size());
  for (const auto& q : imputed) out.push_back(per_class[static_cast<std::size_t>(q.pseudo_class)]);
  return out;
}

void apply_thresholds(std::vector<ImputedLabel>& imputed, std::span<const double> thresholds) {
  if (thresholds.size() != imputed.size()) throw std::invalid_argument("threshold count mismatch");
  for (std::size_t i = 0; i < imputed.size(); ++i) imputed[i].accepted = imputed[i].confidence > thresholds[i];
}

CaiLossResult cai_loss(const Matrix<double>& unlabeled_strong_logits, std::span<const ImputedLabel> imputed,
                       std::span<const double> thresholds, const Matrix<double>& labeled_probs,
                       std::span<const int> labels, double lambda_u, std::optional<double> normalizer) {
  const auto bu = unlabeled_strong_logits.rows();
  const auto bl = labeled_probs.rows();
  if (static_cast<std::size_t>(bu) != imputed.size()) throw std::invalid_argument("cai_loss: imputed count mismatch");
  if (static_cast<std::size_t>(bl) != labels.size()) throw std::invalid_argument("cai_loss: label count mismatch");
  const double norm = normalizer.value_or(static_cast<double>(bu + bl));
  if (!(norm > 0.0)) throw std::invalid_argument("cai_loss: empty batch");

  CaiLossResult out;
  out.imputed.assign(imputed.begin(), imputed.end());
  apply_thresholds(out.imputed, thresholds);

  const Matrix<double> strong_probs = softmax(unlabeled_strong_logits);
  out.dlogits_unlabeled = Matrix<double>::Zero(bu, unlabeled_strong_logits.cols());
  out.unlabeled_losses.resize(static_cast<std::size_t>(bu));
  double unl = 0.0;
  for (Eigen::Index i = 0; i < bu; ++i) {
    const auto& q = out.imputed[static_cast<std::size_t>(i)];
    const double lu = lambda_u * clamped_nll(strong_probs, i, q.pseudo_class);
    out.unlabeled_losses[static_cast<std::size_t>(i)] = lu;
    if (!q.accepted) continue;
    unl += lu;
    add_nll_gradient(strong_probs, i, q.pseudo_class, lambda_u / norm, out.dlogits_unlabeled);
  }

  out.dlogits_labeled = Matrix<double>::Zero(bl, labeled_probs.cols());
  double sup = 0.0;
  for (Eigen::Index i = 0; i < bl; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    sup += clamped_nll(labeled_probs, i, y);
    add_nll_gradient(labeled_probs, i, y, 1.0 / norm, out.dlogits_labeled);
  }
  out.unlabeled_part = unl / norm;
  out.labeled_part = sup / norm;
  out.loss = out.unlabeled_part + out.labeled_part;
  return out;
}

}  // namespace cadr
