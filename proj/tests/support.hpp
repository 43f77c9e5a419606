#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "cadr/model.hpp"

namespace test_support {

/// Directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cadr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline cadr::Matrix<double> random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                                          double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  cadr::Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

/// Rows on the simplex, drawn through a softmax of Gaussian logits.
inline cadr::Matrix<double> random_probs(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                                         double scale = 2.0) {
  return cadr::softmax(random_matrix(rng, rows, cols, scale));
}

inline std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int classes) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<int> out(n);
  for (auto& y : out) y = u(rng);
  return out;
}

/// Relative error with an absolute floor so near-zero coordinates compare sensibly.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central finite differences of `f` with respect to every parameter coordinate.
template <typename F>
cadr::ModelParams<double> numeric_gradient(const cadr::ModelParams<double>& params, F f, double h = 1e-5) {
  auto grad = cadr::ModelParams<double>::zeros(params.input_dim(), params.hidden(), params.classes());
  auto probe = params;
  const auto visit = [&](auto& tensor, auto& out) {
    for (Eigen::Index k = 0; k < tensor.size(); ++k) {
      const double saved = tensor.data()[k];
      tensor.data()[k] = saved + h;
      const double up = f(probe);
      tensor.data()[k] = saved - h;
      const double down = f(probe);
      tensor.data()[k] = saved;
      out.data()[k] = (up - down) / (2 * h);
    }
  };
  visit(probe.w1, grad.w1);
  visit(probe.b1, grad.b1);
  visit(probe.w2, grad.w2);
  visit(probe.b2, grad.b2);
  return grad;
}

/// Largest coordinate-wise relative error between two gradients.
inline double max_rel_error(const cadr::ModelParams<double>& a, const cadr::ModelParams<double>& b,
                            double floor = 1e-6) {
  double worst = 0.0;
  const auto visit = [&](const auto& x, const auto& y) {
    for (Eigen::Index k = 0; k < x.size(); ++k) worst = std::max(worst, rel_error(x.data()[k], y.data()[k], floor));
  };
  visit(a.w1, b.w1);
  visit(a.b1, b.b1);
  visit(a.w2, b.w2);
  visit(a.b2, b.b2);
  return worst;
}

}  // namespace test_support
