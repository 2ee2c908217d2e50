/* Copyright 2026 The PGN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// PGN distillation: surrogate autoencoders trained by synthetic gradients,
// the meta-loss that trains the PGN, plateau-triggered surrogate resets and
// the training loop with CSV metrics and checkpoints.

#include <cinttypes>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "pgn/data.hpp"
#include "pgn/heads.hpp"
#include "pgn/metrics.hpp"
#include "pgn/model.hpp"
#include "pgn/networks.hpp"
#include "pgn/nn/optim.hpp"
#include "pgn/teacher.hpp"

namespace pgn {

struct MetaLossWeights {
  double grad = 1.0;
  double vgg = 0.5;
  double l1 = 0.2;

  void validate() const {
    if (grad < 0 || vgg < 0 || l1 < 0) throw ConfigError("meta-loss weights must be non-negative");
  }
};

/// How the gradient-matching term is scaled per image.
enum class GradTermScale {
  absolute,  // sum of squared differences
  relative,  // divided by the squared norm of the real gradient
};

inline GradTermScale grad_term_scale_from_string(std::string_view s) {
  if (s == "absolute") return GradTermScale::absolute;
  if (s == "relative") return GradTermScale::relative;
  throw ConfigError("unknown grad_term_scale '" + std::string(s) + "'");
}
inline std::string_view to_string(GradTermScale s) { return s == GradTermScale::absolute ? "absolute" : "relative"; }

/// Unweighted batch means of each term plus the weighted total.
struct MetaLossTerms {
  double grad = 0;
  double vgg = 0;
  double l1 = 0;
  double total = 0;
};

template <typename T>
struct MetaLossResult {
  MetaLossTerms terms;
  Tensor<T> d_gradient;
  std::optional<Tensor<T>> d_proxy;
};

/// Meta-loss and its gradients with respect to the synthetic gradient and
/// the proxy. The real gradient is a constant. `target_features` may hold
/// precomputed teacher features of `target`.
template <typename T>
MetaLossResult<T> meta_loss(const SyntheticGradient<T>& synthetic, const std::type_identity_t<ProxyTarget<T>>* proxy,
                            const Tensor<T>& real_grad, const Tensor<T>& target, const MetaLossWeights& w,
                            const Teacher<T>& teacher, GradTermScale scale = GradTermScale::absolute,
                            const std::vector<Tensor<T>>* target_features = nullptr) {
  w.validate();
  synthetic.data.require_same(real_grad, "meta_loss gradient");
  synthetic.data.require_same(target, "meta_loss target");
  if (!proxy && (w.vgg > 0 || w.l1 > 0)) {
    throw ConfigError("meta_loss: proxy terms requested but the head produces no proxy");
  }
  const int batch = target.n();
  const std::size_t per = target.shape().per_image();
  MetaLossResult<T> r;
  r.d_gradient = Tensor<T>(target.shape());

  for (int b = 0; b < batch; ++b) {
    const T* g = synthetic.data.image(b);
    const T* gr = real_grad.image(b);
    T* d = r.d_gradient.image(b);
    double sq = 0, norm = 0;
    for (std::size_t i = 0; i < per; ++i) {
      const double diff = static_cast<double>(g[i]) - gr[i];
      sq += diff * diff;
      norm += static_cast<double>(gr[i]) * gr[i];
    }
    double denom = 1.0;
    if (scale == GradTermScale::relative) denom = norm > 0 ? norm : 1.0;
    r.terms.grad += sq / denom / batch;
    const T k = static_cast<T>(2.0 * w.grad / denom / batch);
    for (std::size_t i = 0; i < per; ++i) d[i] = k * (g[i] - gr[i]);
  }

  if (proxy) {
    proxy->data.require_same(target, "meta_loss proxy");
    Tensor<T> dp(target.shape());
    if (w.vgg > 0) {
      auto lg = target_features ? teacher.loss_and_grad(proxy->data, *target_features, T(1))
                                : teacher.loss_and_grad(proxy->data, target, T(1));
      for (double l : lg.loss) r.terms.vgg += l / batch;
      dp.axpy(static_cast<T>(w.vgg / batch), lg.grad);
    } else {
      for (double l : teacher.perceptual_loss(proxy->data, target)) r.terms.vgg += l / batch;
    }
    const T kl = static_cast<T>(w.l1 / static_cast<double>(per) / batch);
    for (int b = 0; b < batch; ++b) {
      const T* p = proxy->data.image(b);
      const T* y = target.image(b);
      T* d = dp.image(b);
      double acc = 0;
      for (std::size_t i = 0; i < per; ++i) {
        const T diff = p[i] - y[i];
        acc += std::abs(static_cast<double>(diff));
        if (w.l1 > 0) d[i] += diff > T(0) ? kl : diff < T(0) ? -kl : T(0);
      }
      r.terms.l1 += acc / static_cast<double>(per) / batch;
    }
    r.d_proxy = std::move(dp);
  }
  r.terms.total = w.grad * r.terms.grad + w.vgg * r.terms.vgg + w.l1 * r.terms.l1;
  return r;
}

/// Signals a plateau when the best value of the last `window` entries
/// fails to beat the best value before them (or the first entry, when
/// there is nothing before them) by a relative margin `epsilon`.
class PlateauTracker {
 public:
  PlateauTracker(int window = 500, double epsilon = 1e-3) : window_(window), epsilon_(epsilon) {
    if (window < 1) throw ConfigError("plateau window must be >= 1");
    if (epsilon < 0) throw ConfigError("plateau epsilon must be >= 0");
  }

  /// Appends one value; true when the plateau condition holds.
  bool record(double value) {
    recent_.push_back(value);
    if (static_cast<int>(recent_.size()) > window_) {
      prior_best_ = std::min(prior_best_.value_or(recent_.front()), recent_.front());
      recent_.pop_front();
    }
    if (static_cast<int>(recent_.size()) < window_) return false;
    const double reference = prior_best_.value_or(recent_.front());
    const double best = *std::min_element(recent_.begin(), recent_.end());
    return !(best < (1.0 - epsilon_) * reference);
  }

  void clear() {
    recent_.clear();
    prior_best_.reset();
  }

  std::size_t size() const { return recent_.size() + (prior_best_ ? 1 : 0); }
  int window() const { return window_; }
  double epsilon() const { return epsilon_; }

 private:
  int window_;
  double epsilon_;
  std::deque<double> recent_;
  std::optional<double> prior_best_;
};

/// One surrogate autoencoder with its optimizer and plateau tracker.
template <typename T>
struct Surrogate {
  AutoencoderSpec spec;
  nn::ModulePtr<T> net;
  std::unique_ptr<nn::Adam<T>> optimizer;
  PlateauTracker tracker;
  std::uint64_t seed;
  int resets = 0;

  Surrogate(AutoencoderSpec s, std::uint64_t seed_, nn::AdamSettings opt, int window, double epsilon)
      : spec(s), net(build_autoencoder<T>(s, seed_)), tracker(window, epsilon), seed(seed_) {
    optimizer = std::make_unique<nn::Adam<T>>(net->parameters(), opt);
  }

  void reinitialize(std::uint64_t new_seed) {
    seed = new_seed;
    std::mt19937_64 rng(new_seed);
    net->init(rng);
    optimizer->reset();
    tracker.clear();
  }
};

/// Maps (pred, target) to a field standing in for d loss / d pred.
template <typename T>
using GradientSource = std::function<Tensor<T>(const Tensor<T>& pred, const Tensor<T>& target)>;

/// Injects `field` as the per-image loss gradient at the surrogate output
/// (batch mean over images) and applies one optimizer step. Returns false
/// and leaves the surrogate untouched when the field is not finite.
template <typename T>
bool apply_synthetic_gradient(Surrogate<T>& s, const Tensor<T>& field) {
  if (!field.all_finite()) return false;
  Tensor<T> d = field;
  d *= static_cast<T>(1.0 / field.n());
  s.net->zero_grad();
  s.net->backward(d, false);
  s.optimizer->step();
  return true;
}

/// Forward through the surrogate, gradient from `source`, one update.
/// `pl` (batch-mean teacher loss of the pre-update output) is recorded in
/// the plateau tracker when given; the return value is the plateau flag.
template <typename T>
struct SurrogateStepResult {
  Tensor<T> pred;
  bool applied = false;
  bool plateau = false;
};

template <typename T>
SurrogateStepResult<T> surrogate_step(Surrogate<T>& s, const Tensor<T>& target, const GradientSource<T>& source,
                                      std::optional<double> pl = std::nullopt) {
  SurrogateStepResult<T> r;
  r.pred = s.net->forward(target, nn::Mode::train);
  r.applied = apply_synthetic_gradient(s, source(r.pred, target));
  if (pl) r.plateau = s.tracker.record(*pl);
  return r;
}

/// Reinitializes the surrogate with a fresh seed when its tracker reports
/// a plateau.
template <typename T>
bool maybe_reset(Surrogate<T>& s, bool plateau, std::uint64_t fresh_seed) {
  if (!plateau) return false;
  s.reinitialize(fresh_seed);
  ++s.resets;
  return true;
}

struct TrainConfig {
  int n_autoencoders = 3;
  int image_size = 64;
  int crop_min = 64;
  int batch_size = 6;  // split evenly over the surrogates
  nn::AdamSettings theta{1e-4, 0.9, 0.999, 1e-8};
  nn::AdamSettings phi{2e-4, 0.9, 0.999, 1e-8};
  int plateau_window = 500;
  double plateau_epsilon = 1e-3;
  int total_steps = 20000;
  std::uint64_t seed = 1;
  int log_every = 50;
  int checkpoint_every = 0;  // 0: final checkpoint only
  int autoencoder_base_channels = 16;
  MetaLossWeights weights;
  GradTermScale grad_term_scale = GradTermScale::absolute;

  void validate() const {
    if (n_autoencoders <= 0 || image_size <= 0 || batch_size <= 0 || total_steps <= 0 || log_every <= 0 ||
        crop_min <= 0 || checkpoint_every < 0) {
      throw ConfigError("trainer counts must be positive");
    }
    if (plateau_window < 1) throw ConfigError("plateau_window must be >= 1");
    if (batch_size % n_autoencoders) throw ConfigError("batch_size must be a multiple of n_autoencoders");
    if (crop_min < image_size / 2) throw ConfigError("crop_min is too small for image_size");
    weights.validate();
  }
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Statistics of one training step.
struct StepStats {
  MetaLossTerms terms;
  MeanStd cosine;
  double surrogate_pl = 0;  // mean over surrogates and images
  int resets = 0;           // surrogate resets this step
  int rejected = 0;         // surrogate updates skipped for non-finite fields
};

struct MetricsRow {
  int step = 0;
  MetaLossTerms terms;  // mean over the steps since the previous row
  MeanStd cosine;       // at this step
  double surrogate_pl = 0;
  int resets = 0;       // cumulative
  int rejected = 0;     // cumulative
};

inline std::string metrics_header() {
  return "step,loss_total,loss_grad,loss_vgg,loss_l1,cosine_mean,cosine_std,surrogate_pl,resets,rejected_updates";
}

inline std::string format_metrics_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d", r.step, r.terms.total, r.terms.grad,
                r.terms.vgg, r.terms.l1, r.cosine.mean, r.cosine.std, r.surrogate_pl, r.resets, r.rejected);
  return buf;
}

template <typename T>
class DistillationTrainer {
 public:
  DistillationTrainer(TrainConfig cfg, const Teacher<T>& teacher, PerceptualGradientNetwork<T>& pgn,
                      const ImageSet& data)
      : cfg_(std::move(cfg)), teacher_(teacher), pgn_(pgn), data_(data), rng_(mix_seed(cfg_.seed, 0xDA7A)) {
    cfg_.validate();
    if (data_.empty()) throw ConfigError("training image set is empty");
    if (!pgn_.head().has_proxy() && (cfg_.weights.vgg > 0 || cfg_.weights.l1 > 0)) {
      log_warning("head '" + std::string(to_string(pgn_.head().kind)) +
                  "' has no proxy; the perceptual and L1 meta-loss terms are skipped");
      cfg_.weights.vgg = 0;
      cfg_.weights.l1 = 0;
    }
    const int multiple = std::max(pgn_.spec().spatial_multiple(), 8);
    if (cfg_.image_size % multiple) {
      throw ConfigError("image_size " + std::to_string(cfg_.image_size) + " must be divisible by " +
                        std::to_string(multiple));
    }
    for (int i = 0; i < cfg_.n_autoencoders; ++i) {
      const AutoencoderSpec spec = AutoencoderSpec::desk(i % 3 + 1, cfg_.autoencoder_base_channels);
      surrogates_.push_back(std::make_unique<Surrogate<T>>(spec, mix_seed(cfg_.seed, 100 + i, 0), cfg_.phi,
                                                           cfg_.plateau_window, cfg_.plateau_epsilon));
    }
    theta_ = std::make_unique<nn::Adam<T>>(pgn_.backbone().parameters(), cfg_.theta);
  }

  const TrainConfig& config() const { return cfg_; }
  int steps_done() const { return step_; }
  int total_resets() const { return total_resets_; }
  std::vector<std::unique_ptr<Surrogate<T>>>& surrogates() { return surrogates_; }

  /// Samples `batch_size` augmented targets.
  Tensor<T> sample_batch() {
    std::vector<Tensor<T>> items;
    AugmentConfig aug{cfg_.image_size, cfg_.crop_min, 0.5};
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    for (int b = 0; b < cfg_.batch_size; ++b) items.push_back(augment<T>(data_.images[pick(rng_)], aug, rng_));
    return concat_batch<T>(items);
  }

  /// One step on an explicit target batch, split into one equal sub-batch
  /// per surrogate.
  StepStats step(const Tensor<T>& target) {
    const int n = static_cast<int>(surrogates_.size());
    if (target.n() % n) {
      throw DimensionError("batch of " + std::to_string(target.n()) + " does not split over " + std::to_string(n) +
                           " surrogates");
    }
    const int sub = target.n() / n;

    std::vector<Tensor<T>> preds;
    for (int i = 0; i < n; ++i) preds.push_back(surrogates_[i]->net->forward(slice_batch(target, i * sub, sub), nn::Mode::train));
    const Tensor<T> pred = concat_batch<T>(preds);
    const Tensor<T>& targets = target;

    const std::vector<Tensor<T>> target_features = teacher_.features(target);
    const auto real = teacher_.loss_and_grad(pred, target_features);

    auto out = pgn_.forward(pred, targets, nn::Mode::train);
    const Tensor<T>& field = out.synthesis.gradient.data;

    StepStats st;
    st.cosine = mean_std(cosine_similarity(field, real.grad));

    // Surrogate updates with the PGN frozen.
    for (int i = 0; i < n; ++i) {
      Surrogate<T>& s = *surrogates_[i];
      double pl = 0;
      for (int b = 0; b < sub; ++b) pl += real.loss[i * sub + b] / sub;
      st.surrogate_pl += pl / n;
      if (!apply_synthetic_gradient(s, slice_batch(field, i * sub, sub))) {
        ++st.rejected;
        log_warning("step " + std::to_string(step_) + ": non-finite synthetic gradient, surrogate " +
                    std::to_string(i) + " update skipped");
      }
      const bool plateau = s.tracker.record(pl);
      if (maybe_reset(s, plateau, mix_seed(cfg_.seed, 100 + i, static_cast<std::uint64_t>(s.resets) + 1))) ++st.resets;
    }

    // PGN update on the same pairs.
    const ProxyTarget<T>* proxy = out.synthesis.proxy ? &*out.synthesis.proxy : nullptr;
    auto ml = meta_loss(out.synthesis.gradient, proxy, real.grad, targets, cfg_.weights, teacher_,
                        cfg_.grad_term_scale, &target_features);
    st.terms = ml.terms;
    if (!std::isfinite(ml.terms.total)) {
      throw TrainingAborted("non-finite meta-loss at step " + std::to_string(step_));
    }
    pgn_.backbone().zero_grad();
    pgn_.backward(pred, out, ml.d_gradient, ml.d_proxy ? &*ml.d_proxy : nullptr);
    theta_->step();

    total_resets_ += st.resets;
    total_rejected_ += st.rejected;
    ++step_;
    return st;
  }

  struct RunResult {
    int steps = 0;
    int rows = 0;
    int resets = 0;
    bool aborted = false;
    std::string message;
  };

  /// Runs `total_steps` steps; writes metrics.csv, periodic checkpoints
  /// under checkpoints/ and the final one under checkpoint/.
  RunResult run(const std::filesystem::path& out_dir, const std::function<void(const MetricsRow&)>& on_row = {}) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw ConfigError("cannot write " + (out_dir / "metrics.csv").string());
    csv << metrics_header() << '\n';
    RunResult res;
    MetaLossTerms acc;
    int acc_n = 0;
    try {
      while (step_ < cfg_.total_steps) {
        const int s = step_;
        const StepStats st = step(sample_batch());
        acc.total += st.terms.total;
        acc.grad += st.terms.grad;
        acc.vgg += st.terms.vgg;
        acc.l1 += st.terms.l1;
        ++acc_n;
        if (s % cfg_.log_every == 0) {
          MetricsRow row{s, {acc.grad / acc_n, acc.vgg / acc_n, acc.l1 / acc_n, acc.total / acc_n}, st.cosine,
                         st.surrogate_pl, total_resets_, total_rejected_};
          csv << format_metrics_row(row) << '\n';
          csv.flush();
          ++res.rows;
          acc = {};
          acc_n = 0;
          if (on_row) on_row(row);
        }
        if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 && step_ < cfg_.total_steps) {
          char name[32];
          std::snprintf(name, sizeof name, "step_%07d", step_);
          pgn_.save(out_dir / "checkpoints" / name, static_cast<std::uint64_t>(step_));
        }
      }
    } catch (const TrainingAborted& e) {
      res.aborted = true;
      res.message = e.what();
      nlohmann::json diag = {{"step", step_}, {"reason", e.what()}, {"resets", total_resets_},
                             {"rejected_updates", total_rejected_}};
      std::ofstream(out_dir / "abort.json") << diag.dump(2) << '\n';
      pgn_.save(out_dir / "abort_checkpoint", static_cast<std::uint64_t>(step_));
    }
    if (!res.aborted) pgn_.save(out_dir / "checkpoint", static_cast<std::uint64_t>(step_));
    res.steps = step_;
    res.resets = total_resets_;
    return res;
  }

 private:
  TrainConfig cfg_;
  const Teacher<T>& teacher_;
  PerceptualGradientNetwork<T>& pgn_;
  const ImageSet& data_;
  std::mt19937_64 rng_;
  std::vector<std::unique_ptr<Surrogate<T>>> surrogates_;
  std::unique_ptr<nn::Adam<T>> theta_;
  int step_ = 0;
  int total_resets_ = 0;
  int total_rejected_ = 0;
};

}  // namespace pgn
