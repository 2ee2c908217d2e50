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

// Command implementations behind the pgn executable. Each returns the
// process exit code: 0 when every requested artifact was written, 1 for a
// failed or aborted run, 2 for configuration and input errors.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pgn/config.hpp"
#include "pgn/data.hpp"
#include "pgn/fit.hpp"
#include "pgn/io/image.hpp"
#include "pgn/model.hpp"
#include "pgn/perf.hpp"
#include "pgn/trainer.hpp"

namespace pgn::cli {

inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;
inline constexpr int kUsage = 2;

struct Options {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::filesystem::path checkpoint;
  std::filesystem::path pred;    // dump-proxy
  std::filesystem::path target;  // dump-proxy
};

/// Thrown for anything that maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// PGN_DEVICE selects the compute device; only "cpu" exists.
inline void check_device() {
  const char* dev = std::getenv("PGN_DEVICE");
  if (dev && std::string(dev) != "cpu" && std::string(dev) != "") {
    throw UsageError("PGN_DEVICE=" + std::string(dev) + " is not available; only 'cpu' is supported");
  }
}

inline RunConfig load_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) {
    c.seed = *o.seed;
    c.trainer.seed = *o.seed;
    c.harness.fit.seed = *o.seed;
  }
  if (o.out) c.out = *o.out;
  return c;
}

inline PerceptualGradientNetwork<float> load_checkpoint(const std::filesystem::path& dir) {
  if (dir.empty()) throw UsageError("--checkpoint is required");
  if (!std::filesystem::exists(dir / "manifest.json")) throw UsageError("no PGN checkpoint at " + dir.string());
  try {
    return PerceptualGradientNetwork<float>::load(dir);
  } catch (const io::BundleError& e) {
    throw UsageError(e.what());
  }
}

/// Square crop to the largest side that is a multiple of `multiple`.
inline Tensor<float> center_square(const Tensor<float>& img, int multiple) {
  const int side = std::min(img.h(), img.w()) / multiple * multiple;
  if (side <= 0) throw DimensionError("image " + img.shape().str() + " is smaller than " + std::to_string(multiple));
  return crop(img, (img.h() - side) / 2, (img.w() - side) / 2, side, side);
}

struct TargetSet {
  std::vector<Tensor<float>> images;  // normalized
  std::vector<std::string> names;
};

inline TargetSet load_targets(const HarnessConfig& h, int generator_multiple) {
  const ImageSet set = load_image_set(h.images, generator_multiple);
  if (set.empty()) throw UsageError("no usable images in " + h.images.string());
  TargetSet t;
  const std::size_t n = std::min<std::size_t>(set.size(), static_cast<std::size_t>(std::max(h.num_images, 0)));
  for (std::size_t i = 0; i < n; ++i) {
    t.images.push_back(to_normalized<float>(center_square(set.images[i], generator_multiple)));
    t.names.push_back(set.names[i]);
  }
  return t;
}

inline FieldProvider<float> field_of(PerceptualGradientNetwork<float>& net) {
  return [&net](const Tensor<float>& pred, const Tensor<float>& target) {
    return net.forward(pred, target).synthesis.gradient.data;
  };
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

inline int cmd_train(const Options& o) {
  const RunConfig c = load_config(o);
  const Teacher<float> teacher(c.teacher.spec());
  PerceptualGradientNetwork<float> net(c.backbone, c.head, mix_seed(c.seed, 0x9E7));
  const ImageSet data = load_image_set(c.data_dir, c.trainer.crop_min);
  if (data.empty()) throw UsageError("no training images in " + c.data_dir.string());
  DistillationTrainer<float> trainer(c.trainer, teacher, net, data);
  const auto res = trainer.run(c.out, [](const MetricsRow& r) {
    log_info("step " + std::to_string(r.step) + " loss " + std::to_string(r.terms.total) + " cosine " +
             std::to_string(r.cosine.mean));
  });
  if (res.aborted) {
    log_warning("training aborted: " + res.message);
    return kFailed;
  }
  return kOk;
}

struct Variant {
  std::string name;
  LossMode mode = LossMode::pgn;
  std::filesystem::path checkpoint;
};

inline std::vector<Variant> harness_variants(const RunConfig& c, const Options& o) {
  std::vector<Variant> out;
  for (const auto& [name, path] : c.harness.variants) {
    if (path.empty()) {
      out.push_back({name, loss_mode_from_string(name), {}});
    } else {
      out.push_back({name, c.harness.fit.loss_mode, path});
    }
  }
  if (out.empty()) {
    if (o.checkpoint.empty()) throw UsageError("no [harness] variants configured and no --checkpoint given");
    out.push_back({"pgn", c.harness.fit.loss_mode, o.checkpoint});
  }
  for (const auto& v : out) {
    if ((v.mode == LossMode::pgn || v.mode == LossMode::pgn_plus_mse) && v.checkpoint.empty()) {
      throw UsageError("variant '" + v.name + "' needs a PGN checkpoint");
    }
  }
  return out;
}

inline int cmd_stability(const Options& o) {
  const RunConfig c = load_config(o);
  const std::vector<Variant> variants = harness_variants(c, o);
  std::vector<std::optional<PerceptualGradientNetwork<float>>> nets;
  for (const auto& v : variants) {
    if (v.checkpoint.empty()) {
      nets.emplace_back();
    } else {
      nets.emplace_back(load_checkpoint(v.checkpoint));
    }
  }
  const Teacher<float> teacher(c.teacher.spec());
  const TargetSet targets = load_targets(c.harness, 1 << c.harness.fit.generator.stages);
  std::string csv = stability_header() + "\n";
  std::vector<StabilityRow> rows;
  for (std::size_t k = 0; k < variants.size(); ++k) {
    FitConfig fc = c.harness.fit;
    fc.loss_mode = variants[k].mode;
    const FieldProvider<float> field = nets[k] ? field_of(*nets[k]) : FieldProvider<float>{};
    const auto outcomes = run_fits(targets.images, targets.names, teacher, fc, c.harness.fits_per_image, field,
                                   c.out / "traces" / variants[k].name,
                                   [&](std::size_t i, int r, const FitResult<float>& res) {
                                     log_info(variants[k].name + " " + targets.names[i] + " #" + std::to_string(r) +
                                              ": " + std::string(to_string(res.outcome.verdict)) + " at " +
                                              std::to_string(res.outcome.last_iter));
                                   });
    rows.push_back(summarize(variants[k].name, outcomes));
    csv += format_stability_row(rows.back()) + "\n";
  }
  write_text(c.out / "stability.csv", csv);
  std::string table;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %5s %9s %10s %11s %15s\n", "variant", "runs", "diverged", "stagnated",
                "successful", "mean best PL");
  table += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-20s %5d %9d %10d %11d %15.6g\n", r.variant.c_str(), r.runs, r.diverged,
                  r.stagnated, r.successful, r.mean_best_pl);
    table += buf;
  }
  write_text(c.out / "stability.txt", table);
  std::cout << table;
  return kOk;
}

inline int cmd_fit(const Options& o) {
  const RunConfig c = load_config(o);
  const FitConfig& fc = c.harness.fit;
  std::optional<PerceptualGradientNetwork<float>> net;
  if (fc.loss_mode == LossMode::pgn || fc.loss_mode == LossMode::pgn_plus_mse) net.emplace(load_checkpoint(o.checkpoint));
  const Teacher<float> teacher(c.teacher.spec());
  const TargetSet targets = load_targets(c.harness, 1 << fc.generator.stages);
  std::string summary = "image,final_pl,best_pl,best_iter,verdict\n";
  run_fits(targets.images, targets.names, teacher, fc, 1, net ? field_of(*net) : FieldProvider<float>{},
           c.out / "traces", [&](std::size_t i, int, const FitResult<float>& res) {
             const std::string stem = std::filesystem::path(targets.names[i]).stem().string();
             io::write_png(c.out / "images" / (stem + ".png"), res.final_image);
             char buf[256];
             std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%d,%s\n", targets.names[i].c_str(), res.trace.back().pl,
                           res.outcome.best_pl, res.outcome.best_iter, std::string(to_string(res.outcome.verdict)).c_str());
             summary += buf;
           });
  write_text(c.out / "fit_summary.csv", summary);
  return kOk;
}

/// Proxy rendered back to raw pixels: raw = (P / beta) * sigma + mean.
inline Tensor<float> proxy_to_raw(const Tensor<float>& proxy, const HeadVariant& head, const Normalization& norm) {
  Tensor<float> raw(proxy.shape());
  for (int b = 0; b < proxy.n(); ++b)
    for (int c = 0; c < proxy.c(); ++c) {
      const float* p = proxy.plane(b, c);
      float* r = raw.plane(b, c);
      for (std::size_t i = 0; i < proxy.shape().plane(); ++i) {
        r[i] = std::clamp(static_cast<float>(p[i] / head.beta * norm.std[c] + norm.mean[c]), 0.0f, 1.0f);
      }
    }
  return raw;
}

inline int cmd_dump_proxy(const Options& o) {
  PerceptualGradientNetwork<float> net = load_checkpoint(o.checkpoint);
  if (!net.head().has_proxy()) {
    throw UsageError("checkpoint " + o.checkpoint.string() + " uses the '" + std::string(to_string(net.head().kind)) +
                     "' head, which has no proxy target to dump");
  }
  if (o.pred.empty() || o.target.empty()) throw UsageError("dump-proxy needs --pred and --target images");
  const std::filesystem::path out = o.out.value_or("proxy_dump");
  const Tensor<float> pred_raw = io::read_png(o.pred);
  const Tensor<float> target_raw = io::read_png(o.target);
  if (pred_raw.shape() != target_raw.shape()) {
    throw UsageError("pred " + pred_raw.shape().str() + " and target " + target_raw.shape().str() + " differ in size");
  }
  const int m = net.spec().spatial_multiple();
  if (pred_raw.h() % m || pred_raw.w() % m) {
    throw UsageError("image size must be a multiple of " + std::to_string(m) + " for this backbone");
  }
  const Normalization& norm = net.normalization();
  auto res = net.forward(norm.normalize(pred_raw), norm.normalize(target_raw));
  io::write_png(out / "proxy.png", proxy_to_raw(res.synthesis.proxy->data, net.head(), norm));
  io::write_png(out / "pred.png", pred_raw);
  io::write_png(out / "target.png", target_raw);
  return kOk;
}

inline std::vector<CostReport> bench_reports(const RunConfig& c) {
  const PerfConfig& p = c.perf;
  const Shape image{p.batch, 3, p.image_size, p.image_size};
  const Fidelity fid = fidelity_from_string(p.fidelity);
  std::vector<CostReport> rows;
  for (const auto& preset : p.presets) {
    CostReport r;
    if (preset == "teacher") {
      const Teacher<float> t(c.teacher.spec());
      r = teacher_cost_report(t, image, c.teacher.kind);
      if (p.measure) {
        const auto m = measure_teacher_gradient(t, image, p.repeats);
        r.measured = true;
        r.wall_time = m.median_seconds;
        r.peak_memory = m.peak_bytes;
      }
    } else {
      BackboneSpec spec;
      if (preset == "unet") {
        spec = fid == Fidelity::exact ? BackboneSpec::unet_exact() : BackboneSpec::unet_desk();
      } else if (preset.rfind("resnet", 0) == 0) {
        int blocks = 0;
        const auto tail = std::string_view(preset).substr(6);
        const auto rc = std::from_chars(tail.data(), tail.data() + tail.size(), blocks);
        if (rc.ec != std::errc() || rc.ptr != tail.data() + tail.size()) throw UsageError("unknown preset '" + preset + "'");
        spec = fid == Fidelity::exact ? BackboneSpec::resnet_exact(blocks) : BackboneSpec::resnet_desk(blocks);
      } else {
        throw UsageError("unknown preset '" + preset + "'");
      }
      spec.validate();
      auto net = build_backbone<float>(spec, c.seed);
      r = backbone_cost_report(*net, image, preset);
      if (p.measure) {
        const auto m = measure_backbone_forward(*net, image, p.repeats);
        r.measured = true;
        r.wall_time = m.median_seconds;
        r.peak_memory = m.peak_bytes;
      }
    }
    rows.push_back(r);
  }
  return rows;
}

inline int cmd_bench(const Options& o) {
  const RunConfig c = load_config(o);
  const auto rows = bench_reports(c);
  std::string csv = cost_header() + "\n";
  for (const auto& r : rows) csv += format_cost_row(r) + "\n";
  write_text(c.out / "bench.csv", csv);
  std::cout << format_cost_table(rows);
  return kOk;
}

/// Runs `fn`, mapping exceptions onto exit codes with a message on stderr.
template <typename F>
int guarded(F fn) {
  try {
    check_device();
    return fn();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
}

}  // namespace pgn::cli
