#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cadr/config.hpp"

namespace cadr {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Features, ground-truth labels and the label-missing indicator (true = unlabeled).
struct Dataset {
  FeatureMatrix features;
  std::vector<int> labels;
  std::vector<bool> missing_mask;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t labeled_count() const;

  std::vector<std::size_t> labeled_indices() const;
  std::vector<std::size_t> unlabeled_indices() const;

  /// Per-class counts over all, labeled, or unlabeled samples.
  std::vector<std::size_t> class_histogram() const;
  std::vector<std::size_t> labeled_histogram() const;
  std::vector<std::size_t> unlabeled_histogram() const;

  /// Rows at `indices`, in order.
  Dataset subset(const std::vector<std::size_t>& indices) const;

  /// Throws FormatError when labels or mask disagree with the feature rows.
  void validate() const;

  bool operator==(const Dataset& other) const;
};

enum class MnarMode { exponential, random_subset, mcar };

std::string to_string(MnarMode mode);
MnarMode parse_mnar_mode(const std::string& text);

struct MnarConfig {
  double gamma_l = 1.0;
  double gamma_u = 1.0;
  int n_max = 1;
  MnarMode mode = MnarMode::exponential;
  int n_random_labels = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticSpec {
  int class_count = 10;
  int feature_dim = 32;
  int samples_per_class = 500;
  double class_separation = 4.0;
  double noise_scale = 1.0;
  std::uint64_t seed = 0;
  /// Held-out samples per class drawn from the same class means.
  int test_per_class = 100;

  void validate() const;
};

MnarConfig mnar_config_from(const KeyValueConfig& kv);
SyntheticSpec synthetic_spec_from(const KeyValueConfig& kv);

/// Labeled count per class: N_i = round(n_max * gamma^(-i/(C-1))), clamped to at least 1.
std::vector<int> class_counts(int class_count, int n_max, double gamma);

/// Balanced Gaussian blobs with every label present.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Training set plus a held-out set drawn from the same class means.
DatasetSplit generate_synthetic_split(const SyntheticSpec& spec);

/// Class means used by generate_synthetic; pairwise distances are at least class_separation.
Eigen::MatrixXd synthetic_class_means(const SyntheticSpec& spec);

/// Sets the missing mask according to the labeling regime; features and labels are untouched.
Dataset apply_mnar_mask(const Dataset& ds, const MnarConfig& cfg);

/// Drops unlabeled samples so per-class unlabeled counts follow the exponential law with gamma_u.
/// gamma_u < 1 reverses the class order. Labeled samples are kept.
Dataset apply_unlabeled_imbalance(const Dataset& ds, const MnarConfig& cfg);

/// Binary format: "CADRDS01", u32 N, d, C, float32 features, int32 labels, uint8 mask.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace cadr
