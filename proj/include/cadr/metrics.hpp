#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cadr {

/// counts[t][p]: rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::vector<std::vector<std::uint64_t>> counts;

  int classes() const { return static_cast<int>(counts.size()); }
  std::uint64_t total() const;
  std::uint64_t row_sum(int true_class) const;
};

/// Throws std::out_of_range for a class outside [0, C) and std::invalid_argument on a length mismatch.
ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> truths, int classes);

/// trace / total. Throws std::invalid_argument on an empty matrix.
double mean_accuracy(const ConfusionMatrix& cm);

/// counts[c][c] / row_sum(c). Throws std::invalid_argument if a class has no samples.
std::vector<double> per_class_recall(const ConfusionMatrix& cm);

/// Geometric mean of per-class recalls, computed in log space. Exactly 0 if any recall is 0.
double gm_accuracy(const ConfusionMatrix& cm);
double gm_of_recalls(std::span<const double> recalls);

/// {"mean_acc", "gm_acc", "per_class_recall", "confusion"} as a JSON document.
std::string metrics_json(const ConfusionMatrix& cm);

}  // namespace cadr
