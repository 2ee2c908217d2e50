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

// Deep-Image-Prior style single-image fitting driven by real, synthetic or
// MSE gradients, with divergence/stagnation classification of the teacher
// loss trace.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "pgn/core/normalization.hpp"
#include "pgn/metrics.hpp"
#include "pgn/networks.hpp"
#include "pgn/nn/optim.hpp"
#include "pgn/teacher.hpp"

namespace pgn {

enum class LossMode { mse_only, teacher_pl, pgn, pgn_plus_mse };

inline std::string_view to_string(LossMode m) {
  switch (m) {
    case LossMode::mse_only: return "mse_only";
    case LossMode::teacher_pl: return "teacher_pl";
    case LossMode::pgn: return "pgn";
    case LossMode::pgn_plus_mse: return "pgn_plus_mse";
  }
  return "unknown";
}

inline LossMode loss_mode_from_string(std::string_view s) {
  if (s == "mse_only") return LossMode::mse_only;
  if (s == "teacher_pl") return LossMode::teacher_pl;
  if (s == "pgn") return LossMode::pgn;
  if (s == "pgn_plus_mse") return LossMode::pgn_plus_mse;
  throw ConfigError("unknown loss mode '" + std::string(s) + "'");
}

struct FitConfig {
  int total_iters = 10000;
  double step_size = 0.01;
  LossMode loss_mode = LossMode::pgn;
  double lambda_mse = 20.0;  // pgn_plus_mse only; mse_only uses 1
  double divergence_factor = 2.0;
  int stagnation_patience = 2000;
  std::uint64_t seed = 0;
  GeneratorSpec generator;

  void validate() const {
    if (total_iters <= 0) throw ConfigError("fit: total_iters must be positive");
    if (!(divergence_factor > 1)) throw ConfigError("fit: divergence_factor must be > 1");
    if (stagnation_patience <= 0) throw ConfigError("fit: stagnation_patience must be positive");
    if (!(step_size > 0)) throw ConfigError("fit: step_size must be positive");
    if (lambda_mse < 0) throw ConfigError("fit: lambda_mse must be non-negative");
  }
};

enum class Verdict { diverged, stagnated, successful };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::diverged: return "diverged";
    case Verdict::stagnated: return "stagnated";
    case Verdict::successful: return "successful";
  }
  return "unknown";
}

struct StabilityOutcome {
  Verdict verdict = Verdict::successful;
  int best_iter = 0;
  double best_pl = std::numeric_limits<double>::infinity();
  int last_iter = 0;
  double last_pl = std::numeric_limits<double>::quiet_NaN();
};

/// Incremental classifier: push() returns true when the run must stop.
/// Divergence (value >= factor * first value, or non-finite) is checked
/// before stagnation (no strict improvement of the best for `patience`
/// iterations).
class StabilityClassifier {
 public:
  StabilityClassifier(double factor, int patience, std::optional<double> initial = std::nullopt)
      : factor_(factor), patience_(patience), has_initial_(initial.has_value()), initial_(initial.value_or(0.0)) {}

  bool push(double pl) {
    const int i = next_++;
    if (!has_initial_) {
      initial_ = pl;
      has_initial_ = true;
    }
    out_.last_iter = i;
    out_.last_pl = pl;
    if (!std::isfinite(pl) || pl >= factor_ * initial_) {
      out_.verdict = Verdict::diverged;
      return true;
    }
    if (pl < out_.best_pl) {
      out_.best_pl = pl;
      out_.best_iter = i;
    }
    if (i - out_.best_iter >= patience_) {
      out_.verdict = Verdict::stagnated;
      return true;
    }
    return false;
  }

  const StabilityOutcome& outcome() const { return out_; }
  int iterations() const { return next_; }

 private:
  double factor_;
  int patience_;
  bool has_initial_;
  double initial_;
  int next_ = 0;
  StabilityOutcome out_;
};

/// Classifies a saved trace exactly as the live fit would have.
inline StabilityOutcome classify_trace(const std::vector<double>& trace, double initial_pl, double factor,
                                       int patience) {
  StabilityClassifier c(factor, patience, initial_pl);
  for (double v : trace)
    if (c.push(v)) break;
  return c.outcome();
}

struct TracePoint {
  int iter = 0;
  double pl = 0;
  double mse = 0;
};

template <typename T>
struct FitResult {
  Tensor<T> final_image;  // raw [0,1] generator output at the last iteration
  Tensor<T> best_image;   // raw output at the best recorded PL
  std::vector<TracePoint> trace;
  StabilityOutcome outcome;
};

/// Image-space field (normalized units) from (pred, target).
template <typename T>
using FieldProvider = std::function<Tensor<T>(const Tensor<T>& pred, const Tensor<T>& target)>;

template <typename T>
Tensor<T> mse_gradient(const Tensor<T>& pred, const Tensor<T>& target, double coefficient) {
  pred.require_same(target, "mse_gradient");
  const T k = static_cast<T>(coefficient * 2.0 / static_cast<double>(pred.shape().per_image()));
  Tensor<T> g(pred.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = k * (pred[i] - target[i]);
  return g;
}

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// Fits a freshly seeded generator to `target` (normalized, batch 1). The
/// teacher loss is recorded every iteration whatever drives the update.
/// `pgn_field` is required for the pgn and pgn_plus_mse modes.
template <typename T>
FitResult<T> dip_fit(const Tensor<T>& target, const Teacher<T>& teacher, const FitConfig& cfg,
                     const FieldProvider<T>& pgn_field = {}, const Normalization& norm = {}) {
  cfg.validate();
  if (target.n() != 1 || target.c() != 3) throw DimensionError("dip_fit expects a single 3-channel target");
  if ((cfg.loss_mode == LossMode::pgn || cfg.loss_mode == LossMode::pgn_plus_mse) && !pgn_field) {
    throw ConfigError("dip_fit: loss mode " + std::string(to_string(cfg.loss_mode)) + " needs a PGN");
  }
  GeneratorSpec gs = cfg.generator;
  if (gs.output_size() != target.h() || target.h() != target.w()) {
    if (target.h() != target.w() || target.h() % (1 << gs.stages)) {
      throw DimensionError("dip_fit: target " + target.shape().str() + " does not match the generator");
    }
    gs.noise_size = target.h() >> gs.stages;
  }
  auto gen = build_generator<T>(gs, mix_seed(cfg.seed, 1));
  Tensor<T> noise(1, gs.noise_channels, gs.noise_size, gs.noise_size);
  {
    std::mt19937_64 rng(mix_seed(cfg.seed, 2));
    std::uniform_real_distribution<double> u(0.0, 0.1);
    for (auto& v : noise.span()) v = static_cast<T>(u(rng));
  }
  nn::Adam<T> opt(gen->parameters(), {cfg.step_size, 0.9, 0.999, 1e-8});
  const std::vector<Tensor<T>> target_features = teacher.features(target);

  FitResult<T> res;
  StabilityClassifier classifier(cfg.divergence_factor, cfg.stagnation_patience);
  for (int it = 0; it < cfg.total_iters; ++it) {
    Tensor<T> raw = gen->forward(noise, nn::Mode::train);
    const Tensor<T> pred = norm.normalize(raw);
    const bool finite = pred.all_finite();

    Tensor<T> field;
    double pl = std::numeric_limits<double>::quiet_NaN();
    if (finite) {
      if (cfg.loss_mode == LossMode::teacher_pl) {
        auto lg = teacher.loss_and_grad(pred, target_features);
        pl = lg.loss[0];
        field = std::move(lg.grad);
      } else {
        pl = teacher.loss_from_features(teacher.features(pred), target_features)[0];
        switch (cfg.loss_mode) {
          case LossMode::mse_only: field = mse_gradient(pred, target, 1.0); break;
          case LossMode::pgn: field = pgn_field(pred, target); break;
          case LossMode::pgn_plus_mse:
            field = mse_gradient(pred, target, cfg.lambda_mse);
            field += pgn_field(pred, target);
            break;
          default: break;
        }
      }
    }
    res.trace.push_back({it, pl, finite ? mse(pred, target) : pl});
    const bool improved = std::isfinite(pl) && pl < classifier.outcome().best_pl;
    if (improved) res.best_image = raw;
    res.final_image = raw;
    if (classifier.push(pl)) break;
    // d/d raw of a loss defined on normalized pixels.
    for (int c = 0; c < 3; ++c) {
      const T inv = static_cast<T>(1.0 / norm.std[c]);
      T* p = field.plane(0, c);
      for (std::size_t i = 0; i < field.shape().plane(); ++i) p[i] *= inv;
    }
    gen->zero_grad();
    gen->backward(field, false);
    opt.step();
  }
  res.outcome = classifier.outcome();
  return res;
}

struct StabilityRow {
  std::string variant;
  int runs = 0;
  int diverged = 0;
  int stagnated = 0;
  int successful = 0;
  double mean_best_iter = 0;
  double mean_best_pl = 0;
  double mean_last_iter = 0;  // over diverged runs; NaN when none diverged
  double mean_last_pl = 0;    // over diverged runs; NaN when none diverged
};

/// Aggregates outcomes in the layout of a stability table.
inline StabilityRow summarize(const std::string& variant, const std::vector<StabilityOutcome>& outcomes) {
  StabilityRow r;
  r.variant = variant;
  r.runs = static_cast<int>(outcomes.size());
  double last_iter = 0, last_pl = 0;
  for (const auto& o : outcomes) {
    r.diverged += o.verdict == Verdict::diverged;
    r.stagnated += o.verdict == Verdict::stagnated;
    r.successful += o.verdict == Verdict::successful;
    r.mean_best_iter += o.best_iter;
    r.mean_best_pl += o.best_pl;
    if (o.verdict == Verdict::diverged) {
      last_iter += o.last_iter;
      last_pl += o.last_pl;
    }
  }
  if (r.runs > 0) {
    r.mean_best_iter /= r.runs;
    r.mean_best_pl /= r.runs;
  }
  r.mean_last_iter = r.diverged ? last_iter / r.diverged : std::numeric_limits<double>::quiet_NaN();
  r.mean_last_pl = r.diverged ? last_pl / r.diverged : std::numeric_limits<double>::quiet_NaN();
  return r;
}

inline std::string stability_header() {
  return "variant,runs,diverged,stagnated,successful,mean_best_iter,mean_best_pl,mean_last_iter,mean_last_pl";
}

inline std::string format_stability_row(const StabilityRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%.6g,%.9g,%.6g,%.9g", r.variant.c_str(), r.runs, r.diverged,
                r.stagnated, r.successful, r.mean_best_iter, r.mean_best_pl, r.mean_last_iter, r.mean_last_pl);
  return buf;
}

inline void write_trace_csv(const std::filesystem::path& path, const std::vector<TracePoint>& trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << "iter,pl,mse\n";
  char buf[128];
  for (const auto& p : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", p.iter, p.pl, p.mse);
    os << buf;
  }
}

inline std::vector<double> read_trace_pl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read trace " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<double> out;
  while (std::getline(is, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw ConfigError("malformed trace line in " + path.string());
    out.push_back(std::stod(line.substr(a + 1, b - a - 1)));
  }
  return out;
}

/// One fit per (image, repeat) with seeds derived from `cfg.seed`; traces
/// are written to `trace_dir/<name>_r<k>.csv` when the directory is set.
template <typename T>
std::vector<StabilityOutcome> run_fits(const std::vector<Tensor<T>>& targets, const std::vector<std::string>& names,
                                       const Teacher<T>& teacher, const FitConfig& cfg, int repeats,
                                       const std::type_identity_t<FieldProvider<T>>& pgn_field = {},
                                       const std::filesystem::path& trace_dir = {},
                                       const std::type_identity_t<std::function<void(std::size_t, int, const FitResult<T>&)>>&
                                           on_fit = {}) {
  if (targets.size() != names.size()) throw ConfigError("run_fits: one name per target is required");
  if (repeats <= 0) throw ConfigError("run_fits: repeats must be positive");
  std::vector<StabilityOutcome> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (int r = 0; r < repeats; ++r) {
      FitConfig c = cfg;
      c.seed = mix_seed(cfg.seed, 10 + i, static_cast<std::uint64_t>(r));
      FitResult<T> res = dip_fit(targets[i], teacher, c, pgn_field);
      if (!trace_dir.empty()) {
        const std::string stem = std::filesystem::path(names[i]).stem().string();
        write_trace_csv(trace_dir / (stem + "_r" + std::to_string(r) + ".csv"), res.trace);
      }
      if (on_fit) on_fit(i, r, res);
      out.push_back(res.outcome);
    }
  }
  return out;
}

/// Re-classifies every saved trace in `dir` (sorted by file name); the
/// first recorded value is the reference for divergence.
inline std::vector<StabilityOutcome> classify_trace_dir(const std::filesystem::path& dir, double factor,
                                                        int patience) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<StabilityOutcome> out;
  for (const auto& f : files) {
    const std::vector<double> pl = read_trace_pl(f);
    if (pl.empty()) throw ConfigError("empty trace " + f.string());
    out.push_back(classify_trace(pl, pl.front(), factor, patience));
  }
  return out;
}

}  // namespace pgn
