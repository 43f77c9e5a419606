#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace cadr {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Two-layer ReLU MLP: logits = W2 * relu(W1 * x + b1) + b2.
/// Instantiated for float (training) and double (gradient checks).
template <typename Scalar>
struct ModelParams {
  Matrix<Scalar> w1;  // hidden x input
  Vector<Scalar> b1;
  Matrix<Scalar> w2;  // classes x hidden
  Vector<Scalar> b2;

  static ModelParams zeros(int input_dim, int hidden, int classes);
  /// He-uniform weights, zero biases.
  static ModelParams random(int input_dim, int hidden, int classes, std::uint64_t seed);

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }
  int classes() const { return static_cast<int>(w2.rows()); }
  std::size_t parameter_count() const;

  bool all_finite() const;
  bool same_shape(const ModelParams& other) const;

  ModelParams& operator+=(const ModelParams& other);
  ModelParams& operator*=(Scalar s);

  template <typename Other>
  ModelParams<Other> cast() const {
    return {w1.template cast<Other>(), b1.template cast<Other>(), w2.template cast<Other>(),
            b2.template cast<Other>()};
  }
};

template <typename Scalar>
using Gradients = ModelParams<Scalar>;

/// Heavy-ball SGD state.
template <typename Scalar>
struct OptimizerState {
  ModelParams<Scalar> velocity;
  double learning_rate = 0.03;
  double momentum = 0.9;

  static OptimizerState for_params(const ModelParams<Scalar>& params, double learning_rate, double momentum);
};

struct AugmentConfig {
  double weak_noise_sigma = 0.0;
  double strong_noise_sigma = 0.0;
  double strong_mask_fraction = 0.0;

  void validate() const;
};

enum class AugmentKind { weak, strong };

/// Throws std::invalid_argument on a batch/parameter shape mismatch.
template <typename Scalar>
Matrix<Scalar> forward(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch);

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits);

/// Weak: Gaussian noise. Strong: larger noise, then round(fraction * d) coordinates per row set to zero.
template <typename Scalar>
Matrix<Scalar> augment(const Matrix<Scalar>& batch, const AugmentConfig& cfg, AugmentKind kind, std::uint64_t seed);

/// Gradient of the batch mean of per-sample losses; row i of `per_sample_grads` is dl_i/dlogits_i.
template <typename Scalar>
Gradients<Scalar> backward(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch,
                           const Matrix<Scalar>& per_sample_grads);

/// Gradient of a scalar loss whose derivative w.r.t. the logits is `dloss_dlogits` (no averaging).
template <typename Scalar>
Gradients<Scalar> backward_total(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch,
                                 const Matrix<Scalar>& dloss_dlogits);

/// v <- m*v + g; theta <- theta - lr*v. Throws DivergenceError (tagged with `step`) on non-finite parameters.
template <typename Scalar>
void sgd_step(ModelParams<Scalar>& params, OptimizerState<Scalar>& state, const Gradients<Scalar>& grads,
              std::size_t step = 0);

/// Argmax class per row, lowest index on ties.
template <typename Scalar>
std::vector<int> predict(const ModelParams<Scalar>& params, const Matrix<Scalar>& batch);

struct Checkpoint {
  ModelParams<float> params;
  ModelParams<float> velocity;
};

/// "CADRCK01", u32 d, h, C, then W1, b1, W2, b2 and their velocities as float32.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cadr
