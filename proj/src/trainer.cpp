#include "cadr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cadr/errors.hpp"
#include "cadr/random.hpp"

namespace cadr {
namespace {

// Stream tags for per-step augmentation draws.
enum : std::uint64_t { kInitStream = 100, kLabeledStream, kUnlabeledStream, kAugmentStream };
enum : std::uint64_t { kLabeledWeak = 1, kUnlabeledWeak, kUnlabeledStrong, kLabeledStrong };

/// Cycles through a fixed index pool, reshuffling at each wraparound.
class BatchStream {
public:
  BatchStream(std::vector<std::size_t> pool, std::uint64_t seed) : pool_(std::move(pool)), rng_(seed) {
    std::shuffle(pool_.begin(), pool_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == pool_.size()) {
        std::shuffle(pool_.begin(), pool_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(pool_[cursor_++]);
    }
    return out;
  }

private:
  std::vector<std::size_t> pool_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

Matrix<float> gather(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Matrix<float> out(static_cast<Eigen::Index>(idx.size()), ds.features.cols());
  for (std::size_t k = 0; k < idx.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = ds.features.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

Matrix<double> logits_of(const ModelParams<float>& params, const Matrix<float>& x) {
  return forward(params, x).cast<double>();
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::cap: return "cap";
    case TrainMode::cai: return "cai";
    case TrainMode::trivial_combo: return "trivial_combo";
    case TrainMode::cadr: return "cadr";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& text) {
  for (const auto m : {TrainMode::baseline, TrainMode::cap, TrainMode::cai, TrainMode::trivial_combo, TrainMode::cadr})
    if (text == to_string(m)) return m;
  throw ConfigError("unknown training mode '" + text + "'");
}

std::string to_string(CapGradient g) { return g == CapGradient::marginal ? "marginal" : "detached"; }

CapGradient parse_cap_gradient(const std::string& text) {
  if (text == "marginal") return CapGradient::marginal;
  if (text == "detached") return CapGradient::detached;
  throw ConfigError("unknown cap_gradient '" + text + "'");
}

bool uses_cap(TrainMode mode) {
  return mode == TrainMode::cap || mode == TrainMode::trivial_combo || mode == TrainMode::cadr;
}

bool uses_class_aware_threshold(TrainMode mode) {
  return mode == TrainMode::cai || mode == TrainMode::trivial_combo || mode == TrainMode::cadr;
}

ObjectiveTerms objective_terms(TrainMode mode) {
  switch (mode) {
    case TrainMode::baseline:
    case TrainMode::cai: return {.cap = false, .cai_supervised = true, .supp = false};
    // CAP replaces the plain supervised cross-entropy; pseudo-labels use the fixed threshold.
    case TrainMode::cap: return {.cap = true, .cai_supervised = false, .supp = false};
    case TrainMode::trivial_combo: return {.cap = true, .cai_supervised = true, .supp = false};
    case TrainMode::cadr: return {.cap = true, .cai_supervised = true, .supp = true};
  }
  throw ConfigError("unknown training mode");
}

void RunConfig::validate() const {
  if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
  if (labeled_batch < 1) throw ConfigError("labeled_batch must be >= 1");
  if (unlabeled_ratio < 1) throw ConfigError("unlabeled_ratio must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  ThresholdConfig{tau_o, beta}.validate();
  if (!(mu >= 0.0 && mu < 1.0)) throw ConfigError("mu must be in [0, 1)");
  if (!(lambda_u >= 0.0)) throw ConfigError("lambda_u must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  AugmentConfig{weak_noise, strong_noise, strong_mask}.validate();
  if (!(min_propensity > 0.0 && min_propensity <= 1.0)) throw ConfigError("min_propensity must be in (0, 1]");
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "mode",     "max_iters",    "labeled_batch", "unlabeled_ratio", "tau_o",       "beta",
      "mu",       "lambda_u",     "lr",            "momentum",        "weight_decay", "eval_every",
      "seed",     "hidden",       "weak_noise",    "strong_noise",    "strong_mask", "force_uniform_prior",
      "cap_gradient", "min_propensity"};
  return k;
}

RunConfig RunConfig::from(const KeyValueConfig& kv) {
  RunConfig c;
  c.mode = parse_train_mode(kv.get_string("mode", to_string(c.mode)));
  c.max_iters = static_cast<int>(kv.get_int("max_iters", c.max_iters));
  c.labeled_batch = static_cast<int>(kv.get_int("labeled_batch", c.labeled_batch));
  c.unlabeled_ratio = static_cast<int>(kv.get_int("unlabeled_ratio", c.unlabeled_ratio));
  c.tau_o = kv.get_double("tau_o", c.tau_o);
  c.beta = kv.get_double("beta", c.beta);
  c.mu = kv.get_double("mu", c.mu);
  c.lambda_u = kv.get_double("lambda_u", c.lambda_u);
  c.lr = kv.get_double("lr", c.lr);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.eval_every = static_cast<int>(kv.get_int("eval_every", c.eval_every));
  c.seed = kv.get_u64("seed", c.seed);
  c.hidden = static_cast<int>(kv.get_int("hidden", c.hidden));
  c.weak_noise = kv.get_double("weak_noise", c.weak_noise);
  c.strong_noise = kv.get_double("strong_noise", c.strong_noise);
  c.strong_mask = kv.get_double("strong_mask", c.strong_mask);
  c.force_uniform_prior = kv.get_bool("force_uniform_prior", c.force_uniform_prior);
  c.cap_gradient = parse_cap_gradient(kv.get_string("cap_gradient", to_string(c.cap_gradient)));
  c.min_propensity = kv.get_double("min_propensity", c.min_propensity);
  c.validate();
  return c;
}

KeyValueConfig RunConfig::to_config() const {
  KeyValueConfig kv;
  const auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  kv.set("mode", to_string(mode));
  kv.set("max_iters", std::to_string(max_iters));
  kv.set("labeled_batch", std::to_string(labeled_batch));
  kv.set("unlabeled_ratio", std::to_string(unlabeled_ratio));
  kv.set("tau_o", num(tau_o));
  kv.set("beta", num(beta));
  kv.set("mu", num(mu));
  kv.set("lambda_u", num(lambda_u));
  kv.set("lr", num(lr));
  kv.set("momentum", num(momentum));
  kv.set("weight_decay", num(weight_decay));
  kv.set("eval_every", std::to_string(eval_every));
  kv.set("seed", std::to_string(seed));
  kv.set("hidden", std::to_string(hidden));
  kv.set("weak_noise", num(weak_noise));
  kv.set("strong_noise", num(strong_noise));
  kv.set("strong_mask", num(strong_mask));
  kv.set("force_uniform_prior", force_uniform_prior ? "true" : "false");
  kv.set("cap_gradient", to_string(cap_gradient));
  kv.set("min_propensity", num(min_propensity));
  return kv;
}

TrainState TrainState::initial(int input_dim, int classes, const RunConfig& cfg, double feature_std) {
  auto params = ModelParams<float>::random(input_dim, cfg.hidden, classes, derive_seed(cfg.seed, {kInitStream}));
  auto opt = OptimizerState<float>::for_params(params, cfg.lr, cfg.momentum);
  return {std::move(params), std::move(opt), ClassPrior::uniform(classes, cfg.mu),
          AugmentConfig{cfg.weak_noise * feature_std, cfg.strong_noise * feature_std, cfg.strong_mask}, 0};
}

StepOutput train_step(TrainState& state, const Matrix<float>& labeled, std::span<const int> labels,
                      const Matrix<float>& unlabeled, const RunConfig& cfg) {
  if (labeled.rows() == 0) throw std::invalid_argument("train_step: empty labeled batch");
  const auto step = state.step;
  const auto aug_seed = [&](std::uint64_t view) { return derive_seed(cfg.seed, {kAugmentStream, step, view}); };
  const auto terms = objective_terms(cfg.mode);

  const Matrix<float> labeled_weak = augment(labeled, state.augment, AugmentKind::weak, aug_seed(kLabeledWeak));
  const Matrix<float> unlabeled_weak = augment(unlabeled, state.augment, AugmentKind::weak, aug_seed(kUnlabeledWeak));
  const Matrix<float> unlabeled_strong =
      augment(unlabeled, state.augment, AugmentKind::strong, aug_seed(kUnlabeledStrong));
  const Matrix<float> labeled_strong =
      terms.supp ? augment(labeled, state.augment, AugmentKind::strong, aug_seed(kLabeledStrong))
                 : Matrix<float>(0, labeled.cols());

  ObjectiveBatch batch;
  batch.labeled_logits = logits_of(state.params, labeled_weak);
  batch.labels.assign(labels.begin(), labels.end());
  batch.unlabeled_strong_logits = logits_of(state.params, unlabeled_strong);
  if (terms.supp) batch.labeled_strong_logits = logits_of(state.params, labeled_strong);
  const Matrix<double> unlabeled_weak_logits = logits_of(state.params, unlabeled_weak);
  const bool finite = batch.labeled_logits.allFinite() && batch.unlabeled_strong_logits.allFinite() &&
                      batch.labeled_strong_logits.allFinite() && unlabeled_weak_logits.allFinite();
  if (!finite) throw DivergenceError("non-finite logits", step);
  const Matrix<double> labeled_probs = softmax(batch.labeled_logits);
  const Matrix<double> unlabeled_probs = softmax(unlabeled_weak_logits);
  Matrix<double> stacked(labeled_probs.rows() + unlabeled_probs.rows(), labeled_probs.cols());
  stacked << labeled_probs, unlabeled_probs;
  if (!cfg.force_uniform_prior) state.prior = update_prior(state.prior, batch_class_marginal(stacked));

  const ThresholdConfig thresholds{cfg.tau_o, cfg.beta};
  const bool class_aware = uses_class_aware_threshold(cfg.mode);
  auto targets = make_targets(labeled_probs, labels, unlabeled_probs, state.prior, thresholds, class_aware,
                                    cfg.lambda_u);
  targets.max_inverse_weight = 1.0 / cfg.min_propensity;
  auto result = objective(batch, targets, terms);

  Matrix<double> dunlabeled_weak;
  if (terms.cap && cfg.cap_gradient == CapGradient::marginal && !cfg.force_uniform_prior) {
    const auto n = static_cast<double>(stacked.rows());
    const Matrix<double> g = cap_marginal_gradient(stacked, labels, state.prior, n);
    result.dlabeled += g.topRows(labeled_probs.rows());
    dunlabeled_weak = g.bottomRows(unlabeled_probs.rows());
  }

  auto grads = backward_total(state.params, labeled_weak, Matrix<float>(result.dlabeled.cast<float>()));
  grads += backward_total(state.params, unlabeled_strong, Matrix<float>(result.dunlabeled_strong.cast<float>()));
  if (dunlabeled_weak.size() > 0) {
    grads += backward_total(state.params, unlabeled_weak, Matrix<float>(dunlabeled_weak.cast<float>()));
  }
  if (terms.supp) {
    grads += backward_total(state.params, labeled_strong, Matrix<float>(result.dlabeled_strong.cast<float>()));
  }
  const auto wd = static_cast<float>(cfg.weight_decay);
  grads.w1 += wd * state.params.w1;
  grads.w2 += wd * state.params.w2;
  sgd_step(state.params, state.optimizer, grads, step);
  ++state.step;

  StepOutput out;
  out.class_thresholds = class_aware ? class_thresholds(state.prior, thresholds)
                                     : std::vector<double>(static_cast<std::size_t>(state.prior.classes()), cfg.tau_o);
  out.accepted_per_class.assign(static_cast<std::size_t>(state.prior.classes()), 0);
  for (const auto& q : targets.unlabeled_imputed)
    if (q.accepted) ++out.accepted_per_class[static_cast<std::size_t>(q.pseudo_class)];
  out.report = std::move(result.report);
  return out;
}

double feature_std(const Dataset& ds) {
  const auto n = static_cast<double>(ds.features.size());
  if (n < 2) return 1.0;
  const Eigen::ArrayXd v = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 1>>(ds.features.data(), ds.features.size())
                               .cast<double>()
                               .array();
  const double mean = v.mean();
  return std::sqrt((v - mean).square().sum() / (n - 1));
}

ConfusionMatrix evaluate(const ModelParams<float>& params, const Dataset& ds) {
  const Matrix<float> x = ds.features;
  const auto preds = predict(params, x);
  return confusion(preds, ds.labels, ds.class_count);
}

RunResult run(const Dataset& train, const std::optional<Dataset>& test, const RunConfig& cfg,
              const StepObserver& observer) {
  cfg.validate();
  train.validate();
  const auto labeled_idx = train.labeled_indices();
  const auto unlabeled_idx = train.unlabeled_indices();
  if (labeled_idx.empty()) throw ConfigError("dataset has no labeled samples");
  if (unlabeled_idx.empty()) throw ConfigError("dataset has no unlabeled samples");
  const Dataset& eval_set = test ? *test : train;
  if (eval_set.class_count != train.class_count || eval_set.feature_dim() != train.feature_dim()) {
    throw ConfigError("evaluation set does not match the training set's shape");
  }

  auto state = TrainState::initial(static_cast<int>(train.feature_dim()), train.class_count, cfg, feature_std(train));
  RunResult result;
  result.history.mode = to_string(cfg.mode);
  result.history.seed = cfg.seed;
  result.history.classes = train.class_count;

  BatchStream labeled_stream(labeled_idx, derive_seed(cfg.seed, {kLabeledStream}));
  BatchStream unlabeled_stream(unlabeled_idx, derive_seed(cfg.seed, {kUnlabeledStream}));
  const auto b = static_cast<std::size_t>(cfg.labeled_batch);
  const auto bu = b * static_cast<std::size_t>(cfg.unlabeled_ratio);
  std::vector<std::uint64_t> window(static_cast<std::size_t>(train.class_count), 0);

  for (int it = 0; it < cfg.max_iters; ++it) {
    const auto li = labeled_stream.next(b);
    const auto ui = unlabeled_stream.next(bu);
    std::vector<int> labels(li.size());
    for (std::size_t k = 0; k < li.size(); ++k) labels[k] = train.labels[li[k]];
    const auto out = train_step(state, gather(train, li), labels, gather(train, ui), cfg);
    for (std::size_t c = 0; c < window.size(); ++c) window[c] += out.accepted_per_class[c];
    if (observer) observer({state.step, &state.prior, &out});

    if (state.step % static_cast<std::size_t>(cfg.eval_every) == 0 || it + 1 == cfg.max_iters) {
      const auto cm = evaluate(state.params, eval_set);
      EvalRecord rec;
      rec.step = state.step;
      rec.mean_acc = mean_accuracy(cm);
      rec.recall = per_class_recall(cm);
      rec.gm_acc = gm_of_recalls(rec.recall);
      rec.l_cap = out.report.l_cap;
      rec.l_cai = out.report.l_cai;
      rec.l_supp = out.report.l_supp;
      rec.l_cadr = out.report.l_cadr;
      rec.accepted = window;
      std::fill(window.begin(), window.end(), 0);
      result.history.records.push_back(std::move(rec));
    }
  }
  result.params = std::move(state.params);
  result.velocity = std::move(state.optimizer.velocity);
  result.prior = std::move(state.prior);
  return result;
}

}  // namespace cadr
