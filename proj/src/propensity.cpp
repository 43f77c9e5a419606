#include "cadr/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "cadr/cross_entropy.hpp"
#include "cadr/errors.hpp"

namespace cadr {

ClassPrior ClassPrior::uniform(int classes, double momentum) {
  if (classes < 1) throw ConfigError("prior needs at least one class");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("prior momentum must be in [0, 1)");
  return {std::vector<double>(static_cast<std::size_t>(classes), 1.0 / classes), momentum};
}

double ClassPrior::clamped(int c) const { return clamp_probability(probs.at(static_cast<std::size_t>(c))); }

double ClassPrior::max_entry() const { return *std::max_element(probs.begin(), probs.end()); }

std::vector<double> batch_class_marginal(const Matrix<double>& probs) {
  if (probs.rows() == 0) throw std::invalid_argument("batch_class_marginal: empty batch");
  std::vector<double> out(static_cast<std::size_t>(probs.cols()), 0.0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index c = 0; c < probs.cols(); ++c) out[static_cast<std::size_t>(c)] += probs(i, c);
  for (auto& v : out) v /= static_cast<double>(probs.rows());
  return out;
}

ClassPrior update_prior(const ClassPrior& prior, std::span<const double> batch_marginal) {
  if (batch_marginal.size() != prior.probs.size()) {
    throw std::invalid_argument("update_prior: marginal has " + std::to_string(batch_marginal.size()) +
                                " entries, prior has " + std::to_string(prior.probs.size()));
  }
  ClassPrior out = prior;
  const double mu = prior.momentum;
  for (std::size_t c = 0; c < out.probs.size(); ++c) {
    out.probs[c] = std::max(0.0, mu * prior.probs[c] + (1.0 - mu) * batch_marginal[c]);
  }
  const double total = std::accumulate(out.probs.begin(), out.probs.end(), 0.0);
  for (auto& v : out.probs) v /= total;
  return out;
}

PropensityScore propensity_score(double p_y_given_x, double p_hat_y) {
  const auto in_range = [](double p) { return p >= kProbFloor && p <= kProbCeil; };
  if (!in_range(p_y_given_x) || !in_range(p_hat_y)) {
    throw std::domain_error("propensity_score: probabilities must be clamped to [1e-7, 1-1e-7]");
  }
  const double log_p = std::log(p_y_given_x);
  const double denom = log_p - std::log(p_hat_y);
  if (std::abs(denom) <= 1e-12) return {std::numeric_limits<double>::infinity(), 0.0};
  return {log_p / denom, denom / log_p};
}

CapLossResult cap_loss(const Matrix<double>& labeled_probs, std::span<const int> labels, const ClassPrior& prior,
                       std::optional<double> normalizer) {
  const auto rows = labeled_probs.rows();
  if (rows == 0) throw std::invalid_argument("cap_loss: no labeled samples");
  if (static_cast<std::size_t>(rows) != labels.size()) throw std::invalid_argument("cap_loss: label count mismatch");
  if (labeled_probs.cols() != prior.classes()) throw std::invalid_argument("cap_loss: prior size mismatch");
  const double norm = normalizer.value_or(static_cast<double>(rows));
  if (!(norm > 0.0)) throw std::invalid_argument("cap_loss: normalizer must be positive");

  CapLossResult out;
  out.per_sample.resize(static_cast<std::size_t>(rows));
  out.dlogits = Matrix<double>::Zero(rows, labeled_probs.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= prior.classes()) throw std::invalid_argument("cap_loss: label out of range");
    const double term = clamped_nll(labeled_probs, i, y) + std::log(prior.clamped(y));
    out.per_sample[static_cast<std::size_t>(i)] = term;
    sum += term;
    add_nll_gradient(labeled_probs, i, y, 1.0 / norm, out.dlogits);
  }
  out.loss = sum / norm;
  return out;
}

Matrix<double> cap_marginal_gradient(const Matrix<double>& stacked_probs, std::span<const int> labels,
                                     const ClassPrior& updated_prior, double normalizer) {
  const auto& prior = updated_prior;
  const auto rows = stacked_probs.rows();
  const auto classes = stacked_probs.cols();
  if (rows == 0) throw std::invalid_argument("cap_marginal_gradient: empty batch");
  if (classes != prior.classes()) throw std::invalid_argument("cap_marginal_gradient: prior size mismatch");
  if (!(normalizer > 0.0)) throw std::invalid_argument("cap_marginal_gradient: normalizer must be positive");
  // a_c = (1 - mu) n_c / (normalizer * rows * p_hat(c)) is the derivative w.r.t. P(c | x_j) for every row j.
  Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(classes);
  for (const int y : labels) {
    if (y < 0 || y >= classes) throw std::invalid_argument("cap_marginal_gradient: label out of range");
    a(y) += 1.0;
  }
  const double batch_weight = 1.0 - prior.momentum;
  for (Eigen::Index c = 0; c < classes; ++c)
    a(c) *= batch_weight / (normalizer * static_cast<double>(rows) * prior.clamped(static_cast<int>(c)));
  Matrix<double> grad(rows, classes);
  for (Eigen::Index j = 0; j < rows; ++j) {
    const double mean_a = stacked_probs.row(j).dot(a);
    grad.row(j) = stacked_probs.row(j).array() * (a.array() - mean_a);
  }
  return grad;
}

}  // namespace cadr
