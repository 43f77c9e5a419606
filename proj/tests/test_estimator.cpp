#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "cadr/cross_entropy.hpp"
#include "cadr/errors.hpp"
#include "cadr/estimator.hpp"
#include "support.hpp"

using namespace cadr;
using test_support::random_matrix;
using test_support::random_probs;

namespace {

struct RandomLosses {
  Flags missing;
  std::vector<double> p, ls, lu;
  Flags ind;
};

RandomLosses random_losses(std::mt19937_64& rng, std::size_t n) {
  RandomLosses r;
  std::uniform_real_distribution<double> up(0.05, 1.0), ul(0.0, 3.0);
  for (std::size_t i = 0; i < n; ++i) {
    r.missing.push_back(rng() % 2);
    r.p.push_back(up(rng));
    r.ls.push_back(ul(rng));
    r.lu.push_back(ul(rng));
    r.ind.push_back(rng() % 3 != 0);
  }
  return r;
}

ClassPrior random_prior(std::mt19937_64& rng, int classes) {
  const auto row = random_probs(rng, 1, classes, 1.0);
  return {std::vector<double>(row.data(), row.data() + classes), 0.99};
}

struct RandomBatch {
  ObjectiveBatch batch;
  ObjectiveTargets targets;
};

RandomBatch random_batch(std::mt19937_64& rng, Eigen::Index bl, Eigen::Index bu, int classes) {
  RandomBatch r;
  r.batch.labeled_logits = random_matrix(rng, bl, classes, 1.5);
  r.batch.labels = test_support::random_labels(rng, static_cast<std::size_t>(bl), classes);
  r.batch.labeled_strong_logits = random_matrix(rng, bl, classes, 1.5);
  r.batch.unlabeled_strong_logits = random_matrix(rng, bu, classes, 1.5);
  const auto unlabeled_weak = random_probs(rng, bu, classes, 2.5);
  r.targets = make_targets(softmax(r.batch.labeled_logits), r.batch.labels, unlabeled_weak, random_prior(rng, classes),
                           {0.5, 0.5}, true, 0.8);
  return r;
}

// Finite-difference check of one differentiated logits matrix of the objective.
double fd_worst(const RandomBatch& rb, const ObjectiveTerms& terms, Matrix<double> ObjectiveBatch::*member,
                const Matrix<double>& analytic) {
  double worst = 0.0;
  auto probe = rb.batch;
  auto& z = probe.*member;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const double saved = z(i, c);
      z(i, c) = saved + 1e-6;
      const double up = objective(probe, rb.targets, terms).report.l_cadr;
      z(i, c) = saved - 1e-6;
      const double down = objective(probe, rb.targets, terms).report.l_cadr;
      z(i, c) = saved;
      const double fd = (up - down) / 2e-6;
      worst = std::max(worst, std::abs(analytic(i, c) - fd) / std::max(1e-3, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("supp_loss hand values") {
  CHECK(supp_loss(Flags{1, 1}, std::vector<double>{0.5, 0.5}, std::vector<double>{2, 3}, Flags{1, 1},
                  std::vector<double>{0, 0}) == 0.0);
  CHECK(supp_loss(Flags{0}, std::vector<double>{1.0}, std::vector<double>{5.0}, Flags{1}, std::vector<double>{1.5}) ==
        doctest::Approx(-1.5));
  CHECK(supp_loss(Flags{0}, std::vector<double>{0.5}, std::vector<double>{2.0}, Flags{1}, std::vector<double>{1.0}) ==
        doctest::Approx(-3.0));
  CHECK_THROWS_AS(
      supp_loss(Flags{0}, std::vector<double>{0.0}, std::vector<double>{1.0}, Flags{1}, std::vector<double>{1.0}),
      std::domain_error);
  // Unlabeled rows need no propensity.
  CHECK(supp_loss(Flags{1}, std::vector<double>{0.0}, std::vector<double>{1.0}, Flags{1}, std::vector<double>{1.0}) ==
        0.0);
}

TEST_CASE("scenario identities hand values") {
  CHECK(dr_identity_scenario1(Flags{0}, std::vector<double>{1.0}, std::vector<double>{2.0}, Flags{1}) == 0.0);
  CHECK(dr_identity_scenario1(Flags{1, 1}, std::vector<double>{0.3, 0.7}, std::vector<double>{2.0, 4.0},
                              Flags{1, 0}) == doctest::Approx(1.0));
  CHECK(dr_identity_scenario2(Flags{0}, std::vector<double>{0.5}, std::vector<double>{1.0}, std::vector<double>{0.0},
                              Flags{1}) == doctest::Approx(1.0));
  CHECK(dr_identity_scenario2(Flags{1, 1}, std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 2.0},
                              std::vector<double>{0.0, 0.0}, Flags{1, 1}) == 0.0);
}

TEST_CASE("scenario 2 is exactly zero with perfect imputation") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto r = random_losses(rng, 32);
    std::fill(r.ind.begin(), r.ind.end(), 1);
    CHECK(std::abs(dr_identity_scenario2(r.missing, r.p, r.ls, r.ls, r.ind)) <= 1e-9);
  }
}

TEST_CASE("algebraic collapse on random batches") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto r = random_losses(rng, 24);
    const auto parts = dr_scenario1_parts(r.missing, r.p, r.ls, r.lu, r.ind);
    double direct = 0.0;  // (1/N) sum (1 - (1-m)/p) L_u I, evaluated independently
    for (std::size_t i = 0; i < r.p.size(); ++i)
      direct += (1.0 - (r.missing[i] ? 0.0 : 1.0 / r.p[i])) * (r.ind[i] ? r.lu[i] : 0.0);
    direct /= 24.0;
    CHECK(std::abs(parts.cai + parts.supp - direct) <= 1e-9);
    CHECK(std::abs(parts.simplified - direct) <= 1e-9);
    CHECK(std::abs(dr_identity_scenario1(r.missing, r.p, r.lu, r.ind) - direct) <= 1e-9);
  }
}

TEST_CASE("cadr_loss two-sample hand computation") {
  ObjectiveBatch b;
  b.labeled_logits.resize(2, 3);
  b.labeled_logits << 2, 0, 0, 0, 1, 0;
  b.labels = {0, 2};
  b.labeled_strong_logits.resize(2, 3);
  b.labeled_strong_logits << 1.5, 0, 0.2, 0, 0.5, 0.3;
  b.unlabeled_strong_logits.resize(0, 3);
  const ClassPrior prior{{0.5, 0.3, 0.2}, 0.99};
  const auto t = make_targets(softmax(b.labeled_logits), b.labels, Matrix<double>(0, 3), prior, {0.5, 0.5}, true, 1.0);
  const auto r = cadr_loss(b, t).report;
  // Reference values computed with 40-digit arithmetic.
  CHECK(r.l_cap == doctest::Approx(-0.25579780642005504).epsilon(1e-12));
  CHECK(r.l_cai == doctest::Approx(0.89549474007696780).epsilon(1e-12));
  CHECK(r.l_supp == doctest::Approx(0.14647021980745355).epsilon(1e-12));
  CHECK(r.l_cadr == doctest::Approx(0.78616715346436630).epsilon(1e-12));
  CHECK(r.per_sample_terms[0].accepted);
  CHECK(r.per_sample_terms[1].accepted);
  CHECK(r.per_sample_terms[0].inverse_weight == doctest::Approx(-1.8936018577750928));
}

TEST_CASE("additivity and per-sample bookkeeping") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rb = random_batch(rng, 5, 9, 4);
    const auto r = cadr_loss(rb.batch, rb.targets).report;
    CHECK(std::abs(r.l_cadr - (r.l_cap + r.l_cai + r.l_supp)) <= 1e-9);
    REQUIRE(r.per_sample_terms.size() == 14);
    for (std::size_t i = 0; i < 14; ++i) {
      CHECK(r.per_sample_terms[i].id == i);
      CHECK(r.per_sample_terms[i].missing == (i >= 5));
    }
  }
}

TEST_CASE("the training objective's CAI + supp equals the scenario-1 form with its own weights") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto rb = random_batch(rng, 4, 6, 3);
    const auto r = objective(rb.batch, rb.targets, {.cap = false, .cai_supervised = true, .supp = true}).report;
    double direct = 0.0;
    for (const auto& s : r.per_sample_terms) {
      const double lu = s.accepted ? s.unlabeled_loss : 0.0;
      direct += (1.0 - (s.missing ? 0.0 : s.inverse_weight)) * lu;
    }
    direct /= 10.0;
    CHECK(std::abs(r.l_cai + r.l_supp - direct) <= 1e-9);
  }
}

TEST_CASE("objective gradients match finite differences") {
  std::mt19937_64 rng(5);
  const std::vector<ObjectiveTerms> all = {{.cap = true, .cai_supervised = false, .supp = false},
                                           {.cap = false, .cai_supervised = true, .supp = false},
                                           {.cap = true, .cai_supervised = true, .supp = true}};
  for (int trial = 0; trial < 3; ++trial) {
    const auto rb = random_batch(rng, 4, 6, 4);
    for (const auto& terms : all) {
      const auto out = objective(rb.batch, rb.targets, terms);
      CHECK(fd_worst(rb, terms, &ObjectiveBatch::labeled_logits, out.dlabeled) <= 1e-4);
      CHECK(fd_worst(rb, terms, &ObjectiveBatch::unlabeled_strong_logits, out.dunlabeled_strong) <= 1e-4);
      if (terms.supp) {
        CHECK(fd_worst(rb, terms, &ObjectiveBatch::labeled_strong_logits, out.dlabeled_strong) <= 1e-4);
      }
    }
  }
}

TEST_CASE("inverse weights are clipped to the configured bound") {
  std::mt19937_64 rng(6);
  auto rb = random_batch(rng, 6, 2, 3);
  rb.targets.max_inverse_weight = 0.5;
  const auto r = cadr_loss(rb.batch, rb.targets).report;
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(r.per_sample_terms[i].inverse_weight) <= 0.5);
}

TEST_CASE("monte carlo trivial cases") {
  auto cfg = DrSimulationConfig::random(16, 200, 1.0, 1.0, 0.0, 1.0, 3);
  const auto s1 = monte_carlo_unbiasedness(cfg, 1);
  CHECK(s1.mean == 0.0);
  CHECK(s1.standard_error == 0.0);
  CHECK(s1.pass());

  cfg = DrSimulationConfig::random(16, 200, 0.2, 0.9, 0.0, 1.0, 3);
  cfg.unlabeled_losses = cfg.supervised_losses;
  const auto s2 = monte_carlo_unbiasedness(cfg, 2);
  CHECK(s2.mean == 0.0);
  CHECK(s2.standard_error == 0.0);

  cfg.trials = 99;
  CHECK_THROWS_AS(monte_carlo_unbiasedness(cfg, 1), ConfigError);
  cfg.trials = 100;
  CHECK_THROWS_AS(monte_carlo_unbiasedness(cfg, 3), ConfigError);
  cfg.propensities[0] = 0.0;
  CHECK_THROWS_AS(monte_carlo_unbiasedness(cfg, 1), ConfigError);
}

TEST_CASE("monte carlo unbiasedness for both scenarios across seeds") {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto cfg = DrSimulationConfig::random(32, 20000, 0.2, 0.9, 0.0, 1.0, seed);
    CHECK(monte_carlo_unbiasedness(cfg, 1).pass());
    cfg.imputation_noise = 0.3;
    const auto s2 = monte_carlo_unbiasedness(cfg, 2);
    CHECK(s2.standard_error > 0.0);
    CHECK(s2.pass());
  }
}

TEST_CASE("monte carlo result does not depend on the thread count") {
  auto cfg = DrSimulationConfig::random(20, 5000, 0.2, 0.9, 0.0, 1.0, 5);
  const auto one = monte_carlo_unbiasedness(cfg, 1);
  cfg.threads = 4;
  const auto four = monte_carlo_unbiasedness(cfg, 1);
  CHECK(one.mean == four.mean);
  CHECK(one.standard_error == four.standard_error);
}

TEST_CASE("pairwise_sum") {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(pairwise_sum(v) == 500500.0);
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
  std::vector<double> tiny(1 << 20, 0.1);
  CHECK(std::abs(pairwise_sum(tiny) - 0.1 * (1 << 20)) <= 1e-7);
}
