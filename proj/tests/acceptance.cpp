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

// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// all of them pass. Criteria 4-6 use the desk checkpoints under artifacts/
// and train them first when they are missing (hours on one CPU core).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "pgn/cli.hpp"

namespace fs = std::filesystem;
using namespace pgn;

namespace {

// Tolerances and sizes, fixed here.
constexpr int kFdCoords = 100;
constexpr int kFdSize = 32;
constexpr double kFdTol = 1e-3;
constexpr double kFdSeconds = 60;
constexpr double kAutodiffTol = 1e-6;
constexpr int kContractionSteps = 10000;
constexpr double kContractionRate = 0.5;  // eta * alpha * 2 / (C*H*W)
constexpr double kHullSlack = 1e-9;        // rounding allowance of a convex combination in double
constexpr int kStabilityIters = 2000;
constexpr int kFitsPerImage = 2;
constexpr int kHeldOut = 10;
constexpr int kRequiredWins = 7;
constexpr double kCosineFloor = 0.3;
constexpr double kVggMacsTol = 0.005;
constexpr double kBackboneParamTol = 0.02;
constexpr double kOracleTol = 1e-6;

const fs::path kRoot = PGN_SOURCE_DIR;

struct Line {
  bool pass;
  std::string text;
};

std::vector<Line> g_lines;

void report(int id, bool pass, const std::string& what) {
  const std::string text = std::string(pass ? "[PASS]" : "[FAIL]") + " criterion " + std::to_string(id) + ": " + what;
  std::cout << text << std::endl;
  g_lines.push_back({pass, text});
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  const Teacher<double> t(TeacherSpec::tiny());
  const auto rep = oracle::teacher_fd_check(t, kFdSize, kFdCoords, kFdTol, 2026);
  const double secs = seconds_since(t0);
  const bool ok = rep.checked == kFdCoords && rep.failures == 0 && secs < kFdSeconds;
  report(1, ok,
         fmt("teacher gradient vs central differences, %g/%g coords within rel %.0e (worst %.2e)", kFdCoords - rep.failures,
             kFdCoords, kFdTol, rep.worst) +
             fmt(", %.1f s", secs));
}

void criterion_2() {
  double worst = 0;
  int fixtures = 0;
  std::mt19937_64 rng(7);
  for (Shape s : {Shape{1, 3, 8, 8}, Shape{2, 3, 5, 7}, Shape{3, 3, 16, 16}}) {
    for (double alpha : {1.0, 40.0, 1.0 / 512}) {
      Tensor<double> pred(s), proxy(s);
      std::normal_distribution<double> n(0, 1);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = n(rng);
        proxy[i] = n(rng);
      }
      const auto g = grad_from_proxy(pred, ProxyTarget<double>{proxy}, alpha).data;
      const auto ref = oracle::autodiff_mse_grad(pred, proxy, alpha);
      for (std::size_t i = 0; i < g.size(); ++i) {
        worst = std::max(worst, std::abs(g[i] - ref[i]) / std::max(std::abs(ref[i]), 1e-300));
      }
      ++fixtures;
    }
  }
  report(2, worst < kAutodiffTol,
         fmt("proxy MSE gradient vs forward-mode autodiff on %g fixtures, worst rel %.2e < %.0e", fixtures, worst,
             kAutodiffTol));
}

void criterion_3() {
  PerceptualGradientNetwork<double> net(BackboneSpec::resnet_desk(4), HeadVariant::defaults(HeadKind::constrained_proxy),
                                        31);
  const Shape s{1, 3, 16, 16};
  const double k = net.head().alpha * 2.0 / static_cast<double>(s.per_image());
  const double eta = kContractionRate / k;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-4, 4);
  Tensor<double> target(s), x(s);
  for (std::size_t i = 0; i < x.size(); ++i) {
    target[i] = u(rng);
    x[i] = u(rng);
  }
  const auto bounds = proxy_bounds<double>(net.head().beta);
  std::vector<double> lo(x.size()), hi(x.size());
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const std::size_t j = c * s.plane() + i;
      lo[j] = std::min(x[j], bounds.lo[c]);
      hi[j] = std::max(x[j], bounds.hi[c]);
    }
  long violations = 0;
  double max_abs = 0;
  for (int step = 0; step < kContractionSteps; ++step) {
    const auto g = net.forward(x, target).synthesis.gradient.data;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] -= eta * g[i];
      if (!(x[i] >= lo[i] - kHullSlack && x[i] <= hi[i] + kHullSlack)) ++violations;
      max_abs = std::max(max_abs, std::abs(x[i]));
    }
  }
  report(3, violations == 0,
         fmt("frozen constrained PGN, %g descent steps at eta*alpha*2/(CHW) = %.2f: %g hull violations (max |x| %.3f)",
             kContractionSteps, kContractionRate, static_cast<double>(violations), max_abs));
}

// Held-out pairs: 3x3 box blur plus N(0, 0.05) noise in raw pixels.
Tensor<float> degrade(const Tensor<float>& raw, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.05);
  Tensor<float> out(raw.shape());
  const int h = raw.h(), w = raw.w();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) acc += raw.at(0, c, std::clamp(y + dy, 0, h - 1), std::clamp(x + dx, 0, w - 1));
        out.at(0, c, y, x) = static_cast<float>(acc / 9 + noise(rng));
      }
  return out;
}

double held_out_cosine(PerceptualGradientNetwork<float>& net, const Teacher<float>& teacher, const ImageSet& held) {
  std::mt19937_64 rng(2026);
  const Normalization norm;
  std::vector<std::optional<double>> cs;
  for (const auto& raw : held.images) {
    const auto y = norm.normalize(raw);
    const auto yh = norm.normalize(degrade(raw, rng));
    const auto real = teacher.perceptual_grad(yh, y);
    const auto syn = net.forward(yh, y).synthesis.gradient.data;
    cs.push_back(cosine_similarity<float>(syn.span(), real.span()));
  }
  return mean_std(cs).mean;
}

fs::path ensure_checkpoint(const std::string& name) {
  const fs::path out = kRoot / "artifacts" / name;
  if (fs::exists(out / "checkpoint" / "manifest.json")) return out / "checkpoint";
  std::cout << "training " << name << " (no checkpoint under " << out << ")" << std::endl;
  cli::Options o;
  o.config = kRoot / "configs" / (name + ".ini");
  o.out = out;
  const fs::path cwd = fs::current_path();
  fs::current_path(kRoot);
  const int rc = cli::guarded([&] { return cli::cmd_train(o); });
  fs::current_path(cwd);
  if (rc != 0) throw std::runtime_error("training " + name + " failed with exit code " + std::to_string(rc));
  return out / "checkpoint";
}

void criteria_4_to_6() {
  const Teacher<float> teacher(TeacherSpec::tiny());
  const ImageSet held = load_image_set(kRoot / "data/desk/heldout", 64);
  std::vector<Tensor<float>> targets;
  for (std::size_t i = 0; i < held.size() && static_cast<int>(i) < kHeldOut; ++i)
    targets.push_back(to_normalized<float>(held.images[i]));
  const std::vector<std::string> names(held.names.begin(), held.names.begin() + targets.size());

  auto constrained = PerceptualGradientNetwork<float>::load(ensure_checkpoint("desk_constrained"));
  auto direct = PerceptualGradientNetwork<float>::load(ensure_checkpoint("desk_direct"));

  FitConfig fc;
  fc.total_iters = kStabilityIters;
  fc.seed = 1;
  fc.loss_mode = LossMode::pgn;
  const fs::path traces = kRoot / "artifacts" / "acceptance_traces";

  std::vector<double> pgn_final(targets.size());
  const auto out_c = run_fits(targets, names, teacher, fc, kFitsPerImage, cli::field_of(constrained),
                              traces / "constrained", [&](std::size_t i, int r, const FitResult<float>& res) {
                                if (r == 0) pgn_final[i] = res.trace.back().pl;
                              });
  const auto out_d = run_fits(targets, names, teacher, fc, kFitsPerImage, cli::field_of(direct), traces / "direct");
  const auto rc = summarize("constrained_proxy", out_c);
  const auto rd = summarize("direct", out_d);
  report(4, static_cast<int>(targets.size()) * kFitsPerImage == rc.runs && rc.diverged == 0 &&
                rd.diverged + rd.stagnated >= rc.diverged + rc.stagnated,
         fmt("DIP stability, %g fits of T = %g: constrained diverged %g stagnated %g", rc.runs, kStabilityIters,
             rc.diverged, rc.stagnated) +
             fmt("; direct diverged %g stagnated %g", rd.diverged, rd.stagnated));

  fc.loss_mode = LossMode::mse_only;
  int wins = 0;
  std::string detail;
  run_fits(targets, names, teacher, fc, 1, {}, traces / "mse_only", [&](std::size_t i, int, const FitResult<float>& res) {
    const double mse_final = res.trace.back().pl;
    wins += pgn_final[i] < mse_final;
    detail += fmt(" %.3f/%.3f", pgn_final[i], mse_final);
  });
  report(5, wins >= kRequiredWins && targets.size() == static_cast<std::size_t>(kHeldOut),
         fmt("constrained PGN beats MSE-only final teacher PL on %g/%g held-out images (need %g); pgn/mse:", wins,
             static_cast<double>(targets.size()), kRequiredWins) +
             detail);

  PerceptualGradientNetwork<float> untrained(constrained.spec(), constrained.head(), constrained.seed());
  ImageSet held_set;
  for (std::size_t i = 0; i < targets.size(); ++i) held_set.images.push_back(held.images[i]);
  const double before = held_out_cosine(untrained, teacher, held_set);
  const double after = held_out_cosine(constrained, teacher, held_set);
  report(6, after > kCosineFloor && after > before,
         fmt("held-out cosine after training %.3f (> %.1f), step-0 network %.3f", after, kCosineFloor, before));
}

void criterion_7() {
  const Teacher<float> vgg(TeacherSpec::vgg19());
  const auto r = teacher_cost_report(vgg, {1, 3, 224, 224});
  bool ok = r.params == 12944960u && std::abs(r.macs_gradient / 108.84e9 - 1) <= kVggMacsTol;
  std::string what = fmt("VGG-19 %.0f params, %.2fB gradient MACs at 224", static_cast<double>(r.params),
                         r.macs_gradient / 1e9);
  const std::pair<BackboneSpec, double> presets[] = {{BackboneSpec::resnet_exact(4), 1.34e6},
                                                     {BackboneSpec::resnet_exact(6), 1.93e6},
                                                     {BackboneSpec::resnet_exact(8), 2.52e6},
                                                     {BackboneSpec::unet_exact(), 1.77e6}};
  for (const auto& [spec, expect] : presets) {
    auto net = build_backbone<float>(spec, 1);
    const double p = static_cast<double>(count_params(*net));
    ok = ok && std::abs(p / expect - 1) <= kBackboneParamTol;
    what += "; " + spec.label() + fmt(" %.2fM (%+.1f%%)", p / 1e6, 100 * (p / expect - 1));
  }
  report(7, ok, what);
}

void criterion_8() {
  // Surrogate update driven by the real teacher gradient versus a plain
  // perceptual-loss step with textbook Adam on a twin network.
  const Teacher<double> teacher(TeacherSpec::tiny(3));
  double worst = 0;
  for (int depth = 1; depth <= 3; ++depth) {
    const AutoencoderSpec spec = AutoencoderSpec::desk(depth, 8);
    const nn::AdamSettings opt{2e-4, 0.9, 0.999, 1e-8};
    Surrogate<double> s(spec, 5 + depth, opt, 10, 1e-3);
    auto twin = build_autoencoder<double>(spec, 5 + depth);
    auto params = twin->parameters();
    std::vector<std::vector<double>> m, v;
    for (auto* p : params) {
      m.emplace_back(p->size(), 0.0);
      v.emplace_back(p->size(), 0.0);
    }
    const GradientSource<double> real = [&](const Tensor<double>& p, const Tensor<double>& y) {
      return teacher.perceptual_grad(p, y);
    };
    for (int step = 1; step <= 5; ++step) {
      Tensor<double> y(Shape{2, 3, 16, 16});
      std::mt19937_64 rng(step);
      std::uniform_real_distribution<double> u(-2, 2);
      for (auto& e : y.span()) e = u(rng);
      surrogate_step(s, y, real);
      const auto pred = twin->forward(y, nn::Mode::train);
      auto lg = teacher.loss_and_grad(pred, y, 0.5);
      twin->zero_grad();
      twin->backward(lg.grad, false);
      for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < params[k]->size(); ++i) {
          const double g = params[k]->grad[i];
          m[k][i] = opt.beta1 * m[k][i] + (1 - opt.beta1) * g;
          v[k][i] = opt.beta2 * v[k][i] + (1 - opt.beta2) * g * g;
          const double mh = m[k][i] / (1 - std::pow(opt.beta1, step));
          const double vh = v[k][i] / (1 - std::pow(opt.beta2, step));
          params[k]->value[i] -= opt.lr * mh / (std::sqrt(vh) + opt.eps);
        }
    }
    const auto a = s.net->parameters();
    for (std::size_t k = 0; k < a.size(); ++k)
      for (std::size_t i = 0; i < a[k]->size(); ++i) {
        const double init_scale = std::max(std::abs(params[k]->value[i]), 1e-3);
        worst = std::max(worst, std::abs(a[k]->value[i] - params[k]->value[i]) / init_scale);
      }
  }
  report(8, worst < kOracleTol,
         fmt("surrogate step with real gradient vs perceptual-loss step, 3 depths x 5 steps, worst rel %.2e < %.0e",
             worst, kOracleTol));
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void criterion_9() {
  const fs::path dir = fs::temp_directory_path() / "pgn_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "run.ini");
    cfg << "seed = 5\n[trainer]\ndata_dir = " << (kRoot / "data/desk/train").string()
        << "\nimage_size = 32\nbatch_size = 3\ntotal_steps = 12\nlog_every = 2\nplateau_window = 3\n";
  }
  int codes[2];
  for (int k = 0; k < 2; ++k) {
    const std::string cmd = std::string(PGN_CLI_PATH) + " train --config " + (dir / "run.ini").string() + " --out " +
                            (dir / ("run" + std::to_string(k))).string() + " 2> /dev/null";
    const int st = std::system(cmd.c_str());
    codes[k] = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }
  const std::string a = slurp(dir / "run0" / "metrics.csv");
  const std::string b = slurp(dir / "run1" / "metrics.csv");
  const bool ok = codes[0] == 0 && codes[1] == 0 && !a.empty() && a == b;
  report(9, ok, fmt("pgn train twice with seed 5: exit codes %g/%g, metrics.csv %g bytes, ", codes[0], codes[1],
                    static_cast<double>(a.size())) +
                    (a == b ? "byte-identical" : "different"));
  fs::remove_all(dir);
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<void()>>> steps = {
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {7, criterion_7},
      {8, criterion_8}, {9, criterion_9}, {4, criteria_4_to_6}};
  for (const auto& [id, fn] : steps) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("error: ") + e.what());
    }
  }
  std::sort(g_lines.begin(), g_lines.end(), [](const Line& a, const Line& b) {
    return a.text.substr(a.text.find("criterion")) < b.text.substr(b.text.find("criterion"));
  });
  int failed = 0;
  std::ofstream summary(fs::path(PGN_BINARY_DIR) / "acceptance_results.txt", std::ios::trunc);
  std::cout << "\nsummary\n";
  for (const auto& l : g_lines) {
    std::cout << l.text << '\n';
    summary << l.text << '\n';
    failed += !l.pass;
  }
  return failed == 0 && g_lines.size() >= 9 ? 0 : 1;
}
