#include "cadr/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

#include "cadr/cross_entropy.hpp"
#include "cadr/errors.hpp"
#include "cadr/random.hpp"

namespace cadr {
namespace {

constexpr double kIdentityTolerance = 1e-9;

void check_lengths(std::size_t n, std::initializer_list<std::size_t> others) {
  for (const auto k : others)
    if (k != n) throw std::invalid_argument("per-sample vectors must have equal length");
  if (n == 0) throw std::invalid_argument("per-sample vectors are empty");
}

// Inverse weight for a labeled row from a raw propensity.
double inverse_from_propensity(double p) {
  if (!(p > 0.0)) throw std::domain_error("propensity must be positive on labeled samples, got " + std::to_string(p));
  return 1.0 / std::max(p, kMinPropensity);
}

std::vector<double> inverse_weights(std::span<const std::uint8_t> missing, std::span<const double> propensities) {
  std::vector<double> w(missing.size(), 0.0);
  for (std::size_t i = 0; i < missing.size(); ++i)
    if (!missing[i]) w[i] = inverse_from_propensity(propensities[i]);
  return w;
}

void check_identity(double lhs, double rhs, double scale, const char* what) {
  if (std::abs(lhs - rhs) > kIdentityTolerance * std::max(1.0, scale)) {
    throw std::logic_error(std::string(what) + ": simplified form " + std::to_string(lhs) +
                           " differs from component sum " + std::to_string(rhs));
  }
}

}  // namespace

double supp_loss_weighted(std::span<const std::uint8_t> missing, std::span<const double> inverse_weights,
                          std::span<const double> unlabeled_losses, std::span<const std::uint8_t> indicators,
                          std::span<const double> supervised_losses) {
  const auto n = missing.size();
  check_lengths(n, {inverse_weights.size(), unlabeled_losses.size(), indicators.size(), supervised_losses.size()});
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (missing[i]) continue;  // 1 - m - (1-m)/p vanishes and (1-m) L_s vanishes
    const double lu = indicators[i] ? unlabeled_losses[i] : 0.0;
    sum += (1.0 - inverse_weights[i]) * lu - supervised_losses[i];
  }
  return sum / static_cast<double>(n);
}

double supp_loss(std::span<const std::uint8_t> missing, std::span<const double> propensities,
                 std::span<const double> unlabeled_losses, std::span<const std::uint8_t> indicators,
                 std::span<const double> supervised_losses) {
  check_lengths(missing.size(), {propensities.size()});
  return supp_loss_weighted(missing, inverse_weights(missing, propensities), unlabeled_losses, indicators,
                            supervised_losses);
}

ObjectiveTargets make_targets(const Matrix<double>& labeled_weak_probs, std::span<const int> labels,
                              const Matrix<double>& unlabeled_weak_probs, const ClassPrior& prior,
                              const ThresholdConfig& thresholds, bool class_aware, double lambda_u) {
  if (static_cast<std::size_t>(labeled_weak_probs.rows()) != labels.size()) {
    throw std::invalid_argument("make_targets: label count mismatch");
  }
  ObjectiveTargets t;
  t.prior = prior;
  t.lambda_u = lambda_u;
  const auto table = class_aware ? class_thresholds(prior, thresholds)
                                 : std::vector<double>(static_cast<std::size_t>(prior.classes()), thresholds.tau_o);
  t.labeled_imputed = impute(labeled_weak_probs);
  t.labeled_thresholds = sample_thresholds(t.labeled_imputed, table);
  apply_thresholds(t.labeled_imputed, t.labeled_thresholds);
  t.unlabeled_imputed = impute(unlabeled_weak_probs);
  t.unlabeled_thresholds = sample_thresholds(t.unlabeled_imputed, table);
  apply_thresholds(t.unlabeled_imputed, t.unlabeled_thresholds);
  t.labeled_scores.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    t.labeled_scores.push_back(
        propensity_score(clamp_probability(labeled_weak_probs(static_cast<Eigen::Index>(i), y)), prior.clamped(y)));
  }
  return t;
}

ObjectiveResult objective(const ObjectiveBatch& batch, const ObjectiveTargets& targets, const ObjectiveTerms& terms) {
  const auto bl = batch.labeled_logits.rows();
  const auto bu = batch.unlabeled_strong_logits.rows();
  const auto classes = std::max(batch.labeled_logits.cols(), batch.unlabeled_strong_logits.cols());
  if (static_cast<std::size_t>(bl) != batch.labels.size()) throw std::invalid_argument("objective: label count mismatch");
  if (targets.labeled_imputed.size() != static_cast<std::size_t>(bl) ||
      targets.labeled_scores.size() != static_cast<std::size_t>(bl) ||
      targets.unlabeled_imputed.size() != static_cast<std::size_t>(bu)) {
    throw std::invalid_argument("objective: targets do not match the batch");
  }
  if (terms.supp && batch.labeled_strong_logits.rows() != bl) {
    throw std::invalid_argument("objective: supplementary term needs strong-view labeled logits");
  }
  const double n = static_cast<double>(bl + bu);
  if (n == 0) throw std::invalid_argument("objective: empty batch");

  ObjectiveResult out;
  auto& report = out.report;
  const Matrix<double> labeled_probs = softmax(batch.labeled_logits);
  out.dlabeled = Matrix<double>::Zero(bl, classes);
  out.dunlabeled_strong = Matrix<double>::Zero(bu, classes);

  if (terms.cap) {
    if (bl == 0) throw std::invalid_argument("objective: CAP term needs labeled samples");
    const auto cap = cap_loss(labeled_probs, batch.labels, targets.prior, n);
    report.l_cap = cap.loss;
    out.dlabeled += cap.dlogits;
  }

  const Matrix<double> empty_probs(0, classes);
  const auto cai = cai_loss(batch.unlabeled_strong_logits, targets.unlabeled_imputed, targets.unlabeled_thresholds,
                            terms.cai_supervised ? labeled_probs : empty_probs,
                            terms.cai_supervised ? std::span<const int>(batch.labels) : std::span<const int>(),
                            targets.lambda_u, n);
  report.l_cai = cai.loss;
  out.dunlabeled_strong += cai.dlogits_unlabeled;
  if (terms.cai_supervised) out.dlabeled += cai.dlogits_labeled;

  std::vector<double> labeled_lu(static_cast<std::size_t>(bl), 0.0);
  std::vector<double> weights(static_cast<std::size_t>(bl), 0.0);
  for (Eigen::Index i = 0; i < bl; ++i) {
    weights[static_cast<std::size_t>(i)] =
        std::clamp(targets.labeled_scores[static_cast<std::size_t>(i)].inverse_weight, -targets.max_inverse_weight,
                   targets.max_inverse_weight);
  }
  if (terms.supp) {
    const Matrix<double> strong_probs = softmax(batch.labeled_strong_logits);
    out.dlabeled_strong = Matrix<double>::Zero(bl, classes);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < bl; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const auto& q = targets.labeled_imputed[k];
      labeled_lu[k] = targets.lambda_u * clamped_nll(strong_probs, i, q.pseudo_class);
      const double coeff = 1.0 - weights[k];
      if (q.accepted) {
        sum += coeff * labeled_lu[k];
        add_nll_gradient(strong_probs, i, q.pseudo_class, coeff * targets.lambda_u / n, out.dlabeled_strong);
      }
      sum -= clamped_nll(labeled_probs, i, batch.labels[k]);
      add_nll_gradient(labeled_probs, i, batch.labels[k], -1.0 / n, out.dlabeled);
    }
    report.l_supp = sum / n;
  }
  report.l_cadr = report.l_cap + report.l_cai + report.l_supp;

  report.per_sample_terms.reserve(static_cast<std::size_t>(bl + bu));
  for (Eigen::Index i = 0; i < bl; ++i) {
    const auto k = static_cast<std::size_t>(i);
    report.per_sample_terms.push_back({k, false, weights[k], clamped_nll(labeled_probs, i, batch.labels[k]),
                                       labeled_lu[k], targets.labeled_imputed[k].accepted});
  }
  for (Eigen::Index j = 0; j < bu; ++j) {
    const auto k = static_cast<std::size_t>(j);
    report.per_sample_terms.push_back({static_cast<std::size_t>(bl) + k, true, 0.0, 0.0, cai.unlabeled_losses[k],
                                       cai.imputed[k].accepted});
  }
  return out;
}

ObjectiveResult cadr_loss(const ObjectiveBatch& batch, const ObjectiveTargets& targets) {
  return objective(batch, targets, {.cap = true, .cai_supervised = true, .supp = true});
}

Scenario1Parts dr_scenario1_parts(std::span<const std::uint8_t> missing, std::span<const double> propensities,
                                  std::span<const double> supervised_losses,
                                  std::span<const double> unlabeled_losses, std::span<const std::uint8_t> indicators) {
  const auto n = missing.size();
  check_lengths(n, {propensities.size(), supervised_losses.size(), unlabeled_losses.size(), indicators.size()});
  const auto w = inverse_weights(missing, propensities);
  Scenario1Parts parts;
  double cai = 0.0;
  double simplified = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lu = indicators[i] ? unlabeled_losses[i] : 0.0;
    cai += missing[i] ? lu : supervised_losses[i];
    simplified += (1.0 - (missing[i] ? 0.0 : w[i])) * lu;
  }
  parts.cai = cai / static_cast<double>(n);
  parts.supp = supp_loss_weighted(missing, w, unlabeled_losses, indicators, supervised_losses);
  parts.simplified = simplified / static_cast<double>(n);
  return parts;
}

double dr_identity_scenario1(std::span<const std::uint8_t> missing, std::span<const double> propensities,
                             std::span<const double> unlabeled_losses, std::span<const std::uint8_t> indicators) {
  // The supervised losses cancel between L_CAI and L_supp; any value exercises the check.
  std::vector<double> supervised(missing.size());
  for (std::size_t i = 0; i < supervised.size(); ++i) supervised[i] = 1.0 + static_cast<double>(i % 7);
  const auto parts = dr_scenario1_parts(missing, propensities, supervised, unlabeled_losses, indicators);
  check_identity(parts.simplified, parts.cai + parts.supp, std::abs(parts.cai) + std::abs(parts.supp),
                 "dr_identity_scenario1");
  return parts.simplified;
}

double dr_identity_scenario2(std::span<const std::uint8_t> missing, std::span<const double> propensities,
                             std::span<const double> supervised_losses, std::span<const double> unlabeled_losses,
                             std::span<const std::uint8_t> indicators) {
  const auto n = missing.size();
  check_lengths(n, {propensities.size(), supervised_losses.size(), unlabeled_losses.size(), indicators.size()});
  const auto w = inverse_weights(missing, propensities);
  double simplified = 0.0;
  double cap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (missing[i]) continue;
    const double lu = indicators[i] ? unlabeled_losses[i] : 0.0;
    simplified += (w[i] - 1.0) * (supervised_losses[i] - lu);
    cap += supervised_losses[i] * w[i];
  }
  simplified /= static_cast<double>(n);
  cap /= static_cast<double>(n);
  const double supp = supp_loss_weighted(missing, w, unlabeled_losses, indicators, supervised_losses);
  check_identity(simplified, cap + supp, std::abs(cap) + std::abs(supp), "dr_identity_scenario2");
  return simplified;
}

void DrSimulationConfig::validate() const {
  if (trials < 100) throw ConfigError("monte carlo needs at least 100 trials");
  const auto n = propensities.size();
  if (n == 0) throw ConfigError("monte carlo needs at least one sample");
  if (supervised_losses.size() != n || unlabeled_losses.size() != n || indicators.size() != n) {
    throw ConfigError("per-sample simulation vectors must have equal length");
  }
  for (const double p : propensities)
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("propensities must lie in (0, 1]");
  if (!(imputation_noise >= 0.0)) throw ConfigError("imputation_noise must be non-negative");
}

DrSimulationConfig DrSimulationConfig::random(std::size_t n_samples, std::size_t trials, double p_low, double p_high,
                                              double loss_low, double loss_high, std::uint64_t seed) {
  if (!(p_low > 0.0 && p_low <= p_high && p_high <= 1.0)) throw ConfigError("need 0 < p_low <= p_high <= 1");
  if (!(loss_low <= loss_high)) throw ConfigError("need loss_low <= loss_high");
  DrSimulationConfig cfg;
  cfg.trials = trials;
  cfg.seed = seed;
  auto rng = make_rng(seed, {0xd2});
  std::uniform_real_distribution<double> up(p_low, p_high);
  std::uniform_real_distribution<double> ul(loss_low, loss_high);
  for (std::size_t i = 0; i < n_samples; ++i) {
    cfg.propensities.push_back(up(rng));
    cfg.supervised_losses.push_back(ul(rng));
    cfg.unlabeled_losses.push_back(ul(rng));
    cfg.indicators.push_back(1);
  }
  return cfg;
}

bool MonteCarloResult::pass() const { return std::abs(mean) <= 4.0 * standard_error; }

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (const double v : values) s += v;
    return s;
  }
  const auto half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

MonteCarloResult monte_carlo_unbiasedness(const DrSimulationConfig& cfg, int scenario) {
  cfg.validate();
  if (scenario != 1 && scenario != 2) throw ConfigError("scenario must be 1 or 2");
  const auto n = cfg.n_samples();
  std::vector<double> values(cfg.trials);

  const auto run_range = [&](std::size_t begin, std::size_t end) {
    Flags missing(n);
    std::vector<double> lu(cfg.unlabeled_losses);
    Flags ind(cfg.indicators);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, cfg.imputation_noise > 0.0 ? cfg.imputation_noise : 1.0);
    for (std::size_t t = begin; t < end; ++t) {
      auto rng = make_rng(cfg.seed, {0x3c, t});
      for (std::size_t i = 0; i < n; ++i) missing[i] = unit(rng) < cfg.propensities[i] ? 0 : 1;
      if (scenario == 1) {
        values[t] = dr_identity_scenario1(missing, cfg.propensities, cfg.unlabeled_losses, cfg.indicators);
      } else {
        if (cfg.imputation_noise > 0.0) {
          for (std::size_t i = 0; i < n; ++i) {
            lu[i] = cfg.supervised_losses[i] + noise(rng);
            ind[i] = 1;
          }
        }
        values[t] = dr_identity_scenario2(missing, cfg.propensities, cfg.supervised_losses, lu, ind);
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.trials)));
  if (threads == 1) {
    run_range(0, cfg.trials);
  } else {
    std::vector<std::thread> pool;
    const auto chunk = (cfg.trials + threads - 1) / threads;
    for (unsigned k = 0; k < threads; ++k) {
      const auto begin = std::min(cfg.trials, k * chunk);
      const auto end = std::min(cfg.trials, begin + chunk);
      pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  MonteCarloResult res;
  res.scenario = scenario;
  res.trials = cfg.trials;
  res.mean = pairwise_sum(values) / static_cast<double>(cfg.trials);
  std::vector<double> sq(values.size());
  for (std::size_t t = 0; t < values.size(); ++t) sq[t] = (values[t] - res.mean) * (values[t] - res.mean);
  const double variance = pairwise_sum(sq) / static_cast<double>(cfg.trials - 1);
  res.standard_error = std::sqrt(variance / static_cast<double>(cfg.trials));
  return res;
}

}  // namespace cadr
