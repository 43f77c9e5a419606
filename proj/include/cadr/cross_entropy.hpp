#pragma once

#include <algorithm>
#include <cmath>

#include "cadr/model.hpp"

namespace cadr {

/// Probabilities entering a logarithm are clamped to [kProbFloor, kProbCeil].
inline constexpr double kProbFloor = 1e-7;
inline constexpr double kProbCeil = 1.0 - 1e-7;

inline double clamp_probability(double p) { return std::clamp(p, kProbFloor, kProbCeil); }

/// -log(clamp(probs(row, target))).
inline double clamped_nll(const Matrix<double>& probs, Eigen::Index row, int target) {
  return -std::log(clamp_probability(probs(row, target)));
}

/// Adds scale * d(clamped_nll)/d(logits) into `grad.row(row)`. The clamp is flat outside its range,
/// so a clamped probability contributes no gradient.
inline void add_nll_gradient(const Matrix<double>& probs, Eigen::Index row, int target, double scale,
                             Matrix<double>& grad) {
  const double p = probs(row, target);
  if (p < kProbFloor || p > kProbCeil || scale == 0.0) return;
  grad.row(row) += scale * probs.row(row);
  grad(row, target) -= scale;
}

}  // namespace cadr
