#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cadr/cross_entropy.hpp"
#include "cadr/errors.hpp"
#include "cadr/propensity.hpp"
#include "support.hpp"

using namespace cadr;
using test_support::random_labels;
using test_support::random_probs;

namespace {

ClassPrior prior_of(std::vector<double> probs, double mu = 0.99) { return {std::move(probs), mu}; }

ClassPrior random_prior(std::mt19937_64& rng, int classes) {
  const auto row = random_probs(rng, 1, classes, 1.5);
  std::vector<double> p(row.data(), row.data() + classes);
  return prior_of(p);
}

// Plain cross-entropy gradient w.r.t. logits, summed then divided by n.
Matrix<double> ce_gradient(const Matrix<double>& probs, const std::vector<int>& y, double n) {
  Matrix<double> g = probs;
  for (std::size_t i = 0; i < y.size(); ++i) g(static_cast<Eigen::Index>(i), y[i]) -= 1.0;
  return g / n;
}

}  // namespace

TEST_CASE("batch_class_marginal") {
  Matrix<double> one(1, 2);
  one << 0.7, 0.3;
  CHECK(batch_class_marginal(one) == std::vector<double>{0.7, 0.3});
  Matrix<double> two(2, 2);
  two << 1, 0, 0, 1;
  CHECK(batch_class_marginal(two) == std::vector<double>{0.5, 0.5});
  CHECK_THROWS(batch_class_marginal(Matrix<double>(0, 3)));

  std::mt19937_64 rng(1);
  const auto probs = random_probs(rng, 64, 10);
  const auto m = batch_class_marginal(probs);
  for (int c = 0; c < 10; ++c) {
    long double s = 0;  // brute-force column sum in extended precision
    for (int i = 0; i < 64; ++i) s += probs(i, c);
    CHECK(std::abs(m[static_cast<std::size_t>(c)] - static_cast<double>(s / 64)) <= 1e-12);
  }
}

TEST_CASE("update_prior") {
  const auto uniform = ClassPrior::uniform(10, 0.99);
  for (const auto p : uniform.probs) CHECK(p == doctest::Approx(0.1));

  std::vector<double> onehot(10, 0.0);
  onehot[0] = 1.0;
  const auto next = update_prior(uniform, onehot);
  CHECK(next.probs[0] == doctest::Approx(0.109).epsilon(1e-12));
  CHECK(next.probs[1] == doctest::Approx(0.099).epsilon(1e-12));

  auto replaced = update_prior(ClassPrior::uniform(10, 0.0), onehot);
  CHECK(replaced.probs == onehot);
  CHECK_THROWS_AS(ClassPrior::uniform(3, 1.0), ConfigError);
}

TEST_CASE("update_prior: k iterations match the closed form and stay on the simplex") {
  std::mt19937_64 rng(2);
  for (double mu : {0.0, 0.5, 0.9, 0.99}) {
    auto prior = random_prior(rng, 6);
    prior.momentum = mu;
    const auto p0 = prior.probs;
    const auto row = random_probs(rng, 1, 6);
    const std::vector<double> v(row.data(), row.data() + 6);
    double previous = 1e300;
    for (int k = 1; k <= 100; ++k) {
      prior = update_prior(prior, v);
      double sum = 0, dist = 0;
      for (int c = 0; c < 6; ++c) {
        sum += prior.probs[static_cast<std::size_t>(c)];
        dist = std::max(dist, std::abs(prior.probs[static_cast<std::size_t>(c)] - v[static_cast<std::size_t>(c)]));
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
      if (mu > 0 && previous > 1e-12) CHECK(dist <= previous * mu * (1 + 1e-9) + 1e-15);
      previous = dist;
    }
    const double muk = std::pow(mu, 100);
    for (int c = 0; c < 6; ++c) {
      const auto i = static_cast<std::size_t>(c);
      CHECK(std::abs(prior.probs[i] - (p0[i] * muk + v[i] * (1 - muk))) <= 1e-12);
    }
  }
}

TEST_CASE("propensity_score") {
  const auto s = propensity_score(0.5, 0.1);
  CHECK(s.inverse_weight == doctest::Approx(std::log(5.0) / std::log(0.5)).epsilon(1e-14));
  CHECK(s.inverse_weight == doctest::Approx(-2.3219280948873622));
  CHECK(s.value * s.inverse_weight == doctest::Approx(1.0).epsilon(1e-14));

  for (double p : {0.3, 0.9}) {
    const auto z = propensity_score(p, p);
    CHECK(z.inverse_weight == 0.0);
    CHECK(z.value == std::numeric_limits<double>::infinity());
  }
  CHECK_THROWS_AS(propensity_score(1.0, 0.5), std::domain_error);
  CHECK_THROWS_AS(propensity_score(0.5, 0.0), std::domain_error);
}

TEST_CASE("propensity_score property: value * inverse_weight = 1") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(kProbFloor, kProbCeil);
  for (int k = 0; k < 1000; ++k) {
    const auto s = propensity_score(u(rng), u(rng));
    if (s.inverse_weight != 0.0) CHECK(std::abs(s.value * s.inverse_weight - 1.0) <= 1e-12);
  }
}

TEST_CASE("cap_loss hand values") {
  Matrix<double> probs(1, 2);
  probs << 0.5, 0.5;
  const std::vector<int> y{0};
  const auto r = cap_loss(probs, y, prior_of({0.1, 0.9}));
  CHECK(r.loss == doctest::Approx(-std::log(5.0)).epsilon(1e-14));
  CHECK(r.per_sample[0] == doctest::Approx(-1.6094379124341003));

  const auto zero = cap_loss(probs, y, prior_of({0.5, 0.5}));
  CHECK(std::abs(zero.loss) <= 1e-15);
  CHECK_THROWS_AS(cap_loss(Matrix<double>(0, 2), std::vector<int>{}, prior_of({0.5, 0.5})), std::invalid_argument);
}

TEST_CASE("cap_loss with a uniform prior is cross-entropy minus ln C") {
  std::mt19937_64 rng(4);
  const auto probs = random_probs(rng, 16, 5);
  const auto y = random_labels(rng, 16, 5);
  const auto r = cap_loss(probs, y, ClassPrior::uniform(5, 0.99));
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(r.per_sample[i] == doctest::Approx(-std::log(probs(static_cast<Eigen::Index>(i), y[i])) - std::log(5.0)));
  CHECK((r.dlogits - ce_gradient(probs, y, 16)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("cap_loss gradient ignores the prior (detached buffer)") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto probs = random_probs(rng, 8, 4);
    const auto y = random_labels(rng, 8, 4);
    const auto a = cap_loss(probs, y, random_prior(rng, 4), 20.0);
    const auto b = cap_loss(probs, y, random_prior(rng, 4), 20.0);
    CHECK((a.dlogits - b.dlogits).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((a.dlogits - ce_gradient(probs, y, 20.0)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("cap_loss gradient matches finite differences") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    const auto logits = test_support::random_matrix(rng, 6, 4);
    const auto y = random_labels(rng, 6, 4);
    const auto prior = random_prior(rng, 4);
    const auto analytic = cap_loss(softmax(logits), y, prior, 10.0).dlogits;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        auto up = logits, down = logits;
        up(i, c) += 1e-6;
        down(i, c) -= 1e-6;
        const double fd =
            (cap_loss(softmax(up), y, prior, 10.0).loss - cap_loss(softmax(down), y, prior, 10.0).loss) / 2e-6;
        CHECK(test_support::rel_error(analytic(i, c), fd) <= 1e-4);
      }
    }
  }
}

TEST_CASE("cap_marginal_gradient matches finite differences through the EMA update") {
  std::mt19937_64 rng(7);
  for (double mu : {0.0, 0.9, 0.99}) {
    const auto logits = test_support::random_matrix(rng, 7, 4);
    const std::vector<int> y{0, 2, 2};  // labels of the first three (labeled) rows
    auto old_prior = random_prior(rng, 4);
    old_prior.momentum = mu;
    const double n = 7.0;
    // f(z) = (1/n) sum_i log(mu * p_old(y_i) + (1 - mu) * P_batch(y_i; z))
    const auto f = [&](const Matrix<double>& z) {
      const auto marginal = batch_class_marginal(softmax(z));
      const auto updated = update_prior(old_prior, marginal);
      double s = 0;
      for (const int c : y) s += std::log(updated.probs[static_cast<std::size_t>(c)]);
      return s / n;
    };
    const auto updated = update_prior(old_prior, batch_class_marginal(softmax(logits)));
    const auto analytic = cap_marginal_gradient(softmax(logits), y, updated, n);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        auto up = logits, down = logits;
        up(i, c) += 1e-6;
        down(i, c) -= 1e-6;
        const double fd = (f(up) - f(down)) / 2e-6;
        CHECK(std::abs(analytic(i, c) - fd) <= 1e-4 * std::max(1e-4, std::abs(fd)));
      }
    }
    // Each row's gradient sums to zero: softmax outputs stay on the simplex.
    for (Eigen::Index i = 0; i < analytic.rows(); ++i) CHECK(std::abs(analytic.row(i).sum()) <= 1e-15);
  }
}

TEST_CASE("cap_marginal_gradient vanishes for balanced labels under a uniform prior") {
  std::mt19937_64 rng(8);
  const auto probs = random_probs(rng, 10, 5);
  const std::vector<int> y{0, 1, 2, 3, 4};
  const auto g = cap_marginal_gradient(probs, y, ClassPrior::uniform(5, 0.99), 10.0);
  CHECK(g.cwiseAbs().maxCoeff() <= 1e-15);
}
