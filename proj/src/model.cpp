#include "cadr/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "cadr/errors.hpp"
#include "cadr/random.hpp"

namespace cadr {
namespace {

constexpr char kCheckpointMagic[9] = "CADRCK01";

template <typename Scalar>
void check_input(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch) {
  if (batch.cols() != params.w1.cols()) {
    throw std::invalid_argument("batch has " + std::to_string(batch.cols()) + " features, model expects " +
                                std::to_string(params.w1.cols()));
  }
}

template <typename Scalar>
Matrix<Scalar> pre_activation(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch) {
  Matrix<Scalar> pre = batch * params.w1.transpose();
  pre.rowwise() += params.b1.transpose();
  return pre;
}

template <typename Derived>
void write_tensor(std::ostream& out, const Eigen::DenseBase<Derived>& t) {
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) detail::write_pod<float>(out, static_cast<float>(t(i, j)));
}

template <typename Derived>
void read_tensor(std::istream& in, Eigen::PlainObjectBase<Derived>& t, const std::string& name) {
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = detail::read_pod<float>(in, name);
}

void write_params(std::ostream& out, const ModelParams<float>& p) {
  write_tensor(out, p.w1);
  write_tensor(out, p.b1);
  write_tensor(out, p.w2);
  write_tensor(out, p.b2);
}

void read_params(std::istream& in, ModelParams<float>& p, const std::string& name) {
  read_tensor(in, p.w1, name);
  read_tensor(in, p.b1, name);
  read_tensor(in, p.w2, name);
  read_tensor(in, p.b2, name);
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::zeros(int input_dim, int hidden, int classes) {
  if (input_dim < 1 || hidden < 1 || classes < 1) throw std::invalid_argument("model dimensions must be positive");
  return {Matrix<Scalar>::Zero(hidden, input_dim), Vector<Scalar>::Zero(hidden),
          Matrix<Scalar>::Zero(classes, hidden), Vector<Scalar>::Zero(classes)};
}

template <typename Scalar>
ModelParams<Scalar> ModelParams<Scalar>::random(int input_dim, int hidden, int classes, std::uint64_t seed) {
  auto p = zeros(input_dim, hidden, classes);
  auto rng = make_rng(seed, {0x1a17});
  const auto fill = [&rng](Matrix<Scalar>& m, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(u(rng));
  };
  fill(p.w1, input_dim);
  fill(p.w2, hidden);
  return p;
}

template <typename Scalar>
std::size_t ModelParams<Scalar>::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

template <typename Scalar>
bool ModelParams<Scalar>::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

template <typename Scalar>
bool ModelParams<Scalar>::same_shape(const ModelParams& o) const {
  return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
         w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size();
}

template <typename Scalar>
ModelParams<Scalar>& ModelParams<Scalar>::operator+=(const ModelParams& o) {
  if (!same_shape(o)) throw std::invalid_argument("parameter shape mismatch");
  w1 += o.w1;
  b1 += o.b1;
  w2 += o.w2;
  b2 += o.b2;
  return *this;
}

template <typename Scalar>
ModelParams<Scalar>& ModelParams<Scalar>::operator*=(Scalar s) {
  w1 *= s;
  b1 *= s;
  w2 *= s;
  b2 *= s;
  return *this;
}

template <typename Scalar>
OptimizerState<Scalar> OptimizerState<Scalar>::for_params(const ModelParams<Scalar>& params, double learning_rate,
                                                          double momentum) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  return {ModelParams<Scalar>::zeros(params.input_dim(), params.hidden(), params.classes()), learning_rate,
          momentum};
}

void AugmentConfig::validate() const {
  if (!(weak_noise_sigma >= 0.0) || !(strong_noise_sigma >= 0.0)) {
    throw ConfigError("augmentation noise must be non-negative");
  }
  if (strong_noise_sigma < weak_noise_sigma) throw ConfigError("strong noise must be >= weak noise");
  if (!(strong_mask_fraction >= 0.0 && strong_mask_fraction < 1.0)) {
    throw ConfigError("strong_mask_fraction must be in [0, 1)");
  }
}

template <typename Scalar>
Matrix<Scalar> forward(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch) {
  check_input(params, batch);
  const Matrix<Scalar> hidden = pre_activation(params, batch).cwiseMax(Scalar(0));
  Matrix<Scalar> logits = hidden * params.w2.transpose();
  logits.rowwise() += params.b2.transpose();
  return logits;
}

template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar top = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - top).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> augment(const Matrix<Scalar>& batch, const AugmentConfig& cfg, AugmentKind kind, std::uint64_t seed) {
  cfg.validate();
  Matrix<Scalar> out = batch;
  const bool strong = kind == AugmentKind::strong;
  const double sigma = strong ? cfg.strong_noise_sigma : cfg.weak_noise_sigma;
  auto rng = make_rng(seed, {strong ? 2u : 1u});
  if (sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, sigma);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += static_cast<Scalar>(gauss(rng));
  }
  if (!strong) return out;
  const auto dim = static_cast<std::size_t>(out.cols());
  const auto masked = static_cast<std::size_t>(std::floor(cfg.strong_mask_fraction * static_cast<double>(dim) + 0.5));
  if (masked == 0) return out;
  std::vector<std::size_t> cols(dim);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    // Partial Fisher-Yates: the first `masked` slots are a uniform draw without replacement.
    for (std::size_t k = 0; k < masked; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, dim - 1);
      std::swap(cols[k], cols[pick(rng)]);
      out(i, static_cast<Eigen::Index>(cols[k])) = Scalar(0);
    }
  }
  return out;
}

template <typename Scalar>
Gradients<Scalar> backward_total(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch,
                                 const Matrix<Scalar>& dloss_dlogits) {
  check_input(params, batch);
  if (dloss_dlogits.rows() != batch.rows() || dloss_dlogits.cols() != params.w2.rows()) {
    throw std::invalid_argument("upstream gradient shape does not match batch x classes");
  }
  const Matrix<Scalar> pre = pre_activation(params, batch);
  const Matrix<Scalar> hidden = pre.cwiseMax(Scalar(0));
  Gradients<Scalar> g;
  g.w2 = dloss_dlogits.transpose() * hidden;
  g.b2 = dloss_dlogits.colwise().sum().transpose();
  Matrix<Scalar> dhidden = dloss_dlogits * params.w2;
  dhidden.array() *= (pre.array() > Scalar(0)).template cast<Scalar>();
  g.w1 = dhidden.transpose() * batch;
  g.b1 = dhidden.colwise().sum().transpose();
  return g;
}

template <typename Scalar>
Gradients<Scalar> backward(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch,
                           const Matrix<Scalar>& per_sample_grads) {
  auto g = backward_total(params, batch, per_sample_grads);
  if (batch.rows() > 0) g *= Scalar(1) / static_cast<Scalar>(batch.rows());
  return g;
}

template <typename Scalar>
void sgd_step(ModelParams<Scalar>& params, OptimizerState<Scalar>& state, const Gradients<Scalar>& grads,
              std::size_t step) {
  if (!params.same_shape(grads) || !params.same_shape(state.velocity)) {
    throw std::invalid_argument("sgd_step: shape mismatch");
  }
  if (!grads.all_finite()) throw DivergenceError("non-finite gradient", step);
  const auto m = static_cast<Scalar>(state.momentum);
  const auto lr = static_cast<Scalar>(state.learning_rate);
  auto& v = state.velocity;
  v *= m;
  v += grads;
  params.w1 -= lr * v.w1;
  params.b1 -= lr * v.b1;
  params.w2 -= lr * v.w2;
  params.b2 -= lr * v.b2;
  if (!params.all_finite()) throw DivergenceError("non-finite parameters", step);
}

template <typename Scalar>
std::vector<int> predict(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch) {
  const auto logits = forward(params, batch);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);  // first maximum
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (!ckpt.params.same_shape(ckpt.velocity)) throw std::invalid_argument("checkpoint velocity shape mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 8);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.input_dim()));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.hidden()));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.classes()));
  write_params(out, ckpt.params);
  write_params(out, ckpt.velocity);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto name = path.string();
  detail::check_magic(in, kCheckpointMagic, name);
  const auto d = detail::read_pod<std::uint32_t>(in, name);
  const auto h = detail::read_pod<std::uint32_t>(in, name);
  const auto c = detail::read_pod<std::uint32_t>(in, name);
  constexpr std::uint32_t kLimit = 1u << 16;
  if (d == 0 || h == 0 || c == 0 || d > kLimit || h > kLimit || c > kLimit) {
    throw FormatError(name + ": implausible dimensions");
  }
  Checkpoint ckpt{ModelParams<float>::zeros(static_cast<int>(d), static_cast<int>(h), static_cast<int>(c)),
                  ModelParams<float>::zeros(static_cast<int>(d), static_cast<int>(h), static_cast<int>(c))};
  read_params(in, ckpt.params, name);
  read_params(in, ckpt.velocity, name);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(name + ": trailing bytes after checkpoint");
  return ckpt;
}

#define CADR_INSTANTIATE_MODEL(T)                                                                              \
  template struct ModelParams<T>;                                                                              \
  template struct OptimizerState<T>;                                                                           \
  template Matrix<T> forward(const ModelParams<T>&, const Matrix<T>&);                                         \
  template Matrix<T> softmax(const Matrix<T>&);                                                                \
  template Matrix<T> augment(const Matrix<T>&, const AugmentConfig&, AugmentKind, std::uint64_t);              \
  template Gradients<T> backward(const ModelParams<T>&, const Matrix<T>&, const Matrix<T>&);                   \
  template Gradients<T> backward_total(const ModelParams<T>&, const Matrix<T>&, const Matrix<T>&);             \
  template void sgd_step(ModelParams<T>&, OptimizerState<T>&, const Gradients<T>&, std::size_t);               \
  template std::vector<int> predict(const ModelParams<T>&, const Matrix<T>&);

CADR_INSTANTIATE_MODEL(float)
CADR_INSTANTIATE_MODEL(double)

}  // namespace cadr
