#include "cadr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "cadr/errors.hpp"
#include "cadr/random.hpp"

namespace cadr {
namespace {

constexpr char kDatasetMagic[9] = "CADRDS01";

// Stream tags so mask selection and subsampling never share random draws.
constexpr std::uint64_t kMeansStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kTestStream = 3;
constexpr std::uint64_t kMaskStream = 11;
constexpr std::uint64_t kUnlabeledStream = 12;

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds, bool only_unlabeled) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(ds.class_count));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (only_unlabeled && !ds.missing_mask[i]) continue;
    out[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  return out;
}

Dataset sample_blobs(const Eigen::MatrixXd& means, int per_class, double noise, Rng rng) {
  const auto classes = static_cast<int>(means.rows());
  const auto dim = means.cols();
  Dataset ds;
  ds.class_count = classes;
  const auto n = static_cast<Eigen::Index>(classes) * per_class;
  ds.features.resize(n, dim);
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.missing_mask.assign(static_cast<std::size_t>(n), false);
  std::normal_distribution<double> gauss(0.0, noise);
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < per_class; ++k, ++row) {
      for (Eigen::Index j = 0; j < dim; ++j) {
        ds.features(row, j) = static_cast<float>(means(c, j) + gauss(rng));
      }
      ds.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return ds;
}

}  // namespace

std::size_t Dataset::labeled_count() const {
  return static_cast<std::size_t>(std::count(missing_mask.begin(), missing_mask.end(), false));
}

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (!missing_mask[i]) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::unlabeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (missing_mask[i]) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> h(static_cast<std::size_t>(class_count), 0);
  for (const auto y : labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

std::vector<std::size_t> Dataset::labeled_histogram() const {
  std::vector<std::size_t> h(static_cast<std::size_t>(class_count), 0);
  for (std::size_t i = 0; i < size(); ++i)
    if (!missing_mask[i]) ++h[static_cast<std::size_t>(labels[i])];
  return h;
}

std::vector<std::size_t> Dataset::unlabeled_histogram() const {
  std::vector<std::size_t> h(static_cast<std::size_t>(class_count), 0);
  for (std::size_t i = 0; i < size(); ++i)
    if (missing_mask[i]) ++h[static_cast<std::size_t>(labels[i])];
  return h;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.class_count = class_count;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  out.missing_mask.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = indices[k];
    out.features.row(static_cast<Eigen::Index>(k)) = features.row(static_cast<Eigen::Index>(i));
    out.labels.push_back(labels[i]);
    out.missing_mask.push_back(missing_mask[i]);
  }
  return out;
}

void Dataset::validate() const {
  if (class_count < 1) throw FormatError("dataset has no classes");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw FormatError("feature rows and label count differ");
  }
  if (missing_mask.size() != labels.size()) throw FormatError("mask length and label count differ");
  for (const auto y : labels) {
    if (y < 0 || y >= class_count) throw FormatError("label " + std::to_string(y) + " out of range");
  }
}

bool Dataset::operator==(const Dataset& other) const {
  return class_count == other.class_count && labels == other.labels &&
         missing_mask == other.missing_mask && features.rows() == other.features.rows() &&
         features.cols() == other.features.cols() && features == other.features;
}

std::string to_string(MnarMode mode) {
  switch (mode) {
    case MnarMode::exponential: return "exponential";
    case MnarMode::random_subset: return "random_subset";
    case MnarMode::mcar: return "mcar";
  }
  return "?";
}

MnarMode parse_mnar_mode(const std::string& text) {
  if (text == "exponential") return MnarMode::exponential;
  if (text == "random_subset") return MnarMode::random_subset;
  if (text == "mcar") return MnarMode::mcar;
  throw ConfigError("unknown MNAR mode '" + text + "'");
}

void MnarConfig::validate() const {
  if (!(gamma_l >= 1.0)) throw ConfigError("gamma_l must be >= 1");
  if (!(gamma_u > 0.0)) throw ConfigError("gamma_u must be > 0");
  if (n_max < 1) throw ConfigError("n_max must be >= 1");
  if (mode == MnarMode::mcar && gamma_l != 1.0) throw ConfigError("mcar mode requires gamma_l = 1");
  if (mode == MnarMode::random_subset && n_random_labels < 1) {
    throw ConfigError("n_random_labels must be >= 1");
  }
}

void SyntheticSpec::validate() const {
  if (class_count < 2) throw ConfigError("class_count must be >= 2");
  if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
  if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
  if (test_per_class < 0) throw ConfigError("test_per_class must be >= 0");
  if (!(class_separation > 0.0)) throw ConfigError("class_separation must be > 0");
  if (!(noise_scale > 0.0)) throw ConfigError("noise_scale must be > 0");
}

MnarConfig mnar_config_from(const KeyValueConfig& kv) {
  MnarConfig cfg;
  cfg.mode = parse_mnar_mode(kv.get_string("mode", "exponential"));
  cfg.gamma_l = kv.get_double("gamma_l", 1.0);
  cfg.gamma_u = kv.get_double("gamma_u", 1.0);
  cfg.n_max = static_cast<int>(kv.get_int("n_max", 1));
  cfg.n_random_labels = static_cast<int>(kv.get_int("n_random_labels", 1));
  cfg.seed = kv.get_u64("seed", 0);
  cfg.validate();
  return cfg;
}

SyntheticSpec synthetic_spec_from(const KeyValueConfig& kv) {
  SyntheticSpec spec;
  spec.class_count = static_cast<int>(kv.get_int("class_count", spec.class_count));
  spec.feature_dim = static_cast<int>(kv.get_int("feature_dim", spec.feature_dim));
  spec.samples_per_class = static_cast<int>(kv.get_int("samples_per_class", spec.samples_per_class));
  spec.class_separation = kv.get_double("class_separation", spec.class_separation);
  spec.noise_scale = kv.get_double("noise_scale", spec.noise_scale);
  spec.seed = kv.get_u64("seed", spec.seed);
  spec.test_per_class = static_cast<int>(kv.get_int("test_per_class", spec.test_per_class));
  spec.validate();
  return spec;
}

std::vector<int> class_counts(int class_count, int n_max, double gamma) {
  if (class_count < 2) throw ConfigError("class_counts: class count must be >= 2");
  if (n_max < 1) throw ConfigError("class_counts: n_max must be >= 1");
  if (!(gamma >= 1.0)) throw ConfigError("class_counts: gamma must be >= 1");
  std::vector<int> out(static_cast<std::size_t>(class_count));
  for (int i = 0; i < class_count; ++i) {
    const double exact = n_max * std::pow(gamma, -static_cast<double>(i) / (class_count - 1));
    out[static_cast<std::size_t>(i)] = std::max(1, static_cast<int>(std::floor(exact + 0.5)));
  }
  out.front() = n_max;
  return out;
}

Eigen::MatrixXd synthetic_class_means(const SyntheticSpec& spec) {
  spec.validate();
  auto rng = make_rng(spec.seed, {kMeansStream});
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd means(spec.class_count, spec.feature_dim);
  for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = gauss(rng);
  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = 0; a < spec.class_count; ++a)
    for (int b = a + 1; b < spec.class_count; ++b)
      min_dist = std::min(min_dist, (means.row(a) - means.row(b)).norm());
  // Rescale so the closest pair sits exactly at the requested separation.
  means *= spec.class_separation / min_dist;
  return means;
}

DatasetSplit generate_synthetic_split(const SyntheticSpec& spec) {
  const auto means = synthetic_class_means(spec);
  DatasetSplit split;
  split.train = sample_blobs(means, spec.samples_per_class, spec.noise_scale,
                             make_rng(spec.seed, {kTrainStream}));
  split.test = sample_blobs(means, spec.test_per_class, spec.noise_scale,
                            make_rng(spec.seed, {kTestStream}));
  return split;
}

Dataset generate_synthetic(const SyntheticSpec& spec) { return generate_synthetic_split(spec).train; }

Dataset apply_mnar_mask(const Dataset& ds, const MnarConfig& cfg) {
  cfg.validate();
  ds.validate();
  Dataset out = ds;
  std::fill(out.missing_mask.begin(), out.missing_mask.end(), true);
  auto rng = make_rng(cfg.seed, {kMaskStream});

  if (cfg.mode == MnarMode::random_subset) {
    if (static_cast<std::size_t>(cfg.n_random_labels) > ds.size()) {
      throw InsufficientSamplesError("random_subset: requested " + std::to_string(cfg.n_random_labels) +
                                     " labels from " + std::to_string(ds.size()) + " samples");
    }
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    for (int k = 0; k < cfg.n_random_labels; ++k) out.missing_mask[all[static_cast<std::size_t>(k)]] = false;
    return out;
  }

  const double gamma = cfg.mode == MnarMode::mcar ? 1.0 : cfg.gamma_l;
  const auto targets = class_counts(ds.class_count, cfg.n_max, gamma);
  auto by_class = indices_by_class(ds, false);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    const auto want = static_cast<std::size_t>(targets[c]);
    if (idx.size() < want) {
      throw InsufficientSamplesError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                     " samples, needs " + std::to_string(want));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < want; ++k) out.missing_mask[idx[k]] = false;
  }
  return out;
}

Dataset apply_unlabeled_imbalance(const Dataset& ds, const MnarConfig& cfg) {
  cfg.validate();
  ds.validate();
  if (cfg.gamma_u == 1.0) return ds;

  const bool inverse = cfg.gamma_u < 1.0;
  const double ratio = inverse ? 1.0 / cfg.gamma_u : cfg.gamma_u;
  auto by_class = indices_by_class(ds, true);
  const auto classes = by_class.size();
  // Rank 0 receives the most unlabeled samples; it keeps its full pool.
  const auto class_at_rank = [&](std::size_t rank) { return inverse ? classes - 1 - rank : rank; };
  const auto n_max = static_cast<int>(by_class[class_at_rank(0)].size());
  if (n_max < 1) throw InsufficientSamplesError("no unlabeled samples in the most frequent class");
  const auto targets = class_counts(static_cast<int>(classes), n_max, ratio);

  auto rng = make_rng(cfg.seed, {kUnlabeledStream});
  std::vector<bool> keep(ds.size(), true);
  for (std::size_t rank = 0; rank < classes; ++rank) {
    const auto c = class_at_rank(rank);
    auto& idx = by_class[c];
    const auto want = static_cast<std::size_t>(targets[rank]);
    if (idx.size() < want) {
      throw InsufficientSamplesError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                     " unlabeled samples, needs " + std::to_string(want));
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = want; k < idx.size(); ++k) keep[idx[k]] = false;
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (keep[i]) kept.push_back(i);
  return ds.subset(kept);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kDatasetMagic, 8);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.feature_dim()));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.class_count));
  out.write(reinterpret_cast<const char*>(ds.features.data()),
            static_cast<std::streamsize>(ds.features.size() * sizeof(float)));
  for (const auto y : ds.labels) detail::write_pod<std::int32_t>(out, y);
  for (const bool m : ds.missing_mask) detail::write_pod<std::uint8_t>(out, m ? 1 : 0);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto name = path.string();
  detail::check_magic(in, kDatasetMagic, name);
  const auto n = detail::read_pod<std::uint32_t>(in, name);
  const auto d = detail::read_pod<std::uint32_t>(in, name);
  const auto c = detail::read_pod<std::uint32_t>(in, name);
  if (c < 1 || c > (1u << 20)) throw FormatError(name + ": implausible class count " + std::to_string(c));

  // Check the payload length before allocating anything sized by the header.
  const auto header_end = in.tellg();
  in.seekg(0, std::ios::end);
  const auto total = static_cast<std::uint64_t>(in.tellg());
  in.seekg(header_end);
  const std::uint64_t expected = 20 + std::uint64_t{n} * d * 4 + std::uint64_t{n} * 4 + n;
  if (total != expected) {
    throw FormatError(name + ": size " + std::to_string(total) + " does not match header (expected " +
                      std::to_string(expected) + ")");
  }

  Dataset ds;
  ds.class_count = static_cast<int>(c);
  ds.features.resize(n, d);
  if (!in.read(reinterpret_cast<char*>(ds.features.data()),
               static_cast<std::streamsize>(std::uint64_t{n} * d * sizeof(float)))) {
    throw FormatError(name + ": truncated feature block");
  }
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = detail::read_pod<std::int32_t>(in, name);
  ds.missing_mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = detail::read_pod<std::uint8_t>(in, name);
    if (b > 1) throw FormatError(name + ": mask byte must be 0 or 1");
    ds.missing_mask[i] = b == 1;
  }
  try {
    ds.validate();
  } catch (const FormatError& e) {
    throw FormatError(name + ": " + e.what());
  }
  return ds;
}

}  // namespace cadr
