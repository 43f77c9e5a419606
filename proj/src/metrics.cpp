#include "cadr/metrics.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace cadr {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(int true_class) const {
  const auto& row = counts.at(static_cast<std::size_t>(true_class));
  return std::accumulate(row.begin(), row.end(), std::uint64_t{0});
}

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> truths, int classes) {
  if (predictions.size() != truths.size()) throw std::invalid_argument("confusion: length mismatch");
  if (classes < 1) throw std::invalid_argument("confusion: need at least one class");
  ConfusionMatrix cm;
  cm.counts.assign(static_cast<std::size_t>(classes), std::vector<std::uint64_t>(static_cast<std::size_t>(classes), 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i];
    const int p = predictions[i];
    if (t < 0 || t >= classes || p < 0 || p >= classes) {
      throw std::out_of_range("confusion: class index out of range at position " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

double mean_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::invalid_argument("mean_accuracy: empty confusion matrix");
  std::uint64_t trace = 0;
  for (int c = 0; c < cm.classes(); ++c) trace += cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  return static_cast<double>(trace) / static_cast<double>(total);
}

std::vector<double> per_class_recall(const ConfusionMatrix& cm) {
  std::vector<double> out(static_cast<std::size_t>(cm.classes()));
  for (int c = 0; c < cm.classes(); ++c) {
    const auto row = cm.row_sum(c);
    if (row == 0) throw std::invalid_argument("per_class_recall: class " + std::to_string(c) + " has no samples");
    out[static_cast<std::size_t>(c)] =
        static_cast<double>(cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) /
        static_cast<double>(row);
  }
  return out;
}

double gm_of_recalls(std::span<const double> recalls) {
  if (recalls.empty()) throw std::invalid_argument("gm_accuracy: no classes");
  double log_sum = 0.0;
  for (const double r : recalls) {
    if (r <= 0.0) return 0.0;
    log_sum += std::log(r);
  }
  return std::exp(log_sum / static_cast<double>(recalls.size()));
}

double gm_accuracy(const ConfusionMatrix& cm) { return gm_of_recalls(per_class_recall(cm)); }

std::string metrics_json(const ConfusionMatrix& cm) {
  nlohmann::json j;
  j["mean_acc"] = mean_accuracy(cm);
  j["gm_acc"] = gm_accuracy(cm);
  j["per_class_recall"] = per_class_recall(cm);
  j["confusion"] = cm.counts;
  return j.dump();
}

}  // namespace cadr
