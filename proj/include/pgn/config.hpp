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

// Run configuration: an INI-style text file with global keys followed by
// [teacher], [backbone], [head], [trainer], [harness] and [perf] sections.
// Every key has a default; unknown sections or keys are errors that name
// the file and line.
//
//   seed = 1
//   out = runs/desk
//   [head]
//   kind = constrained_proxy   # comments start with '#' or ';'

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pgn/fit.hpp"
#include "pgn/heads.hpp"
#include "pgn/networks.hpp"
#include "pgn/teacher.hpp"
#include "pgn/trainer.hpp"

namespace pgn {

class ConfigFileError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct IniEntry {
  std::string value;
  int line = 0;
};

/// Parsed key/value pairs per section; "" is the global section.
struct IniDocument {
  std::string origin;
  std::map<std::string, std::map<std::string, IniEntry>> sections;
};

namespace detail {
inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}
}  // namespace detail

inline IniDocument parse_ini(std::istream& is, const std::string& origin) {
  IniDocument doc;
  doc.origin = origin;
  doc.sections[""];
  std::string section;
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const auto hash = raw.find_first_of("#;");
    const std::string text = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line) + ": ";
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigFileError(where + "unterminated section header");
      section = detail::trim(text.substr(1, text.size() - 2));
      if (section.empty()) throw ConfigFileError(where + "empty section name");
      if (doc.sections.count(section)) throw ConfigFileError(where + "duplicate section [" + section + "]");
      doc.sections[section];
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigFileError(where + "expected 'key = value'");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    if (key.empty()) throw ConfigFileError(where + "missing key before '='");
    auto& sec = doc.sections[section];
    if (sec.count(key)) throw ConfigFileError(where + "duplicate key '" + key + "'");
    sec[key] = {value, line};
  }
  return doc;
}

inline IniDocument load_ini(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigFileError("cannot read config file " + path.string());
  return parse_ini(is, path.string());
}

/// Typed reads from one section; remembers which keys were consumed so the
/// rest can be reported as unknown.
class SectionReader {
 public:
  SectionReader(const IniDocument& doc, std::string name) : doc_(doc), name_(std::move(name)) {
    auto it = doc.sections.find(name_);
    if (it != doc.sections.end()) entries_ = &it->second;
  }

  std::string str(const std::string& key, std::string def) { return find(key) ? find(key)->value : def; }

  template <typename N>
  N number(const std::string& key, N def) {
    const IniEntry* e = find(key);
    if (!e) return def;
    N v{};
    const char* b = e->value.data();
    const char* end = b + e->value.size();
    std::from_chars_result r{};
    if constexpr (std::is_floating_point_v<N>) {
      try {
        std::size_t used = 0;
        v = static_cast<N>(std::stod(e->value, &used));
        r.ptr = b + used;
      } catch (const std::exception&) {
        r.ptr = b;
      }
    } else {
      r = std::from_chars(b, end, v);
      if (r.ec != std::errc()) r.ptr = b;
    }
    if (r.ptr != end || e->value.empty()) fail(*e, "'" + key + "' expects a number, got '" + e->value + "'");
    return v;
  }

  bool boolean(const std::string& key, bool def) {
    const IniEntry* e = find(key);
    if (!e) return def;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    fail(*e, "'" + key + "' expects true/false, got '" + e->value + "'");
  }

  std::vector<std::string> list(const std::string& key, std::vector<std::string> def) {
    const IniEntry* e = find(key);
    if (!e) return def;
    std::vector<std::string> out;
    std::stringstream ss(e->value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  /// Runs `parse` on the raw value, re-throwing configuration errors with
  /// the key's location.
  template <typename F>
  auto parsed(const std::string& key, const std::string& def, F parse) {
    const IniEntry* e = find(key);
    try {
      return parse(e ? e->value : def);
    } catch (const ConfigFileError&) {
      throw;
    } catch (const ConfigError& err) {
      if (!e) throw;
      fail(*e, err.what());
    }
  }

  /// Throws on any key that was not read.
  void finish() const {
    if (!entries_) return;
    for (const auto& [key, entry] : *entries_) {
      if (!used_.count(key)) {
        fail(entry, "unknown key '" + key + "'" + (name_.empty() ? std::string(" at top level") : " in [" + name_ + "]"));
      }
    }
  }

 private:
  const IniEntry* find(const std::string& key) {
    used_.insert(key);
    if (!entries_) return nullptr;
    auto it = entries_->find(key);
    return it == entries_->end() ? nullptr : &it->second;
  }

  [[noreturn]] void fail(const IniEntry& e, const std::string& msg) const {
    throw ConfigFileError(doc_.origin + ":" + std::to_string(e.line) + ": " + msg);
  }

  const IniDocument& doc_;
  std::string name_;
  const std::map<std::string, IniEntry>* entries_ = nullptr;
  std::set<std::string> used_;
};

struct TeacherConfig {
  std::string kind = "tiny";  // tiny | vgg19
  std::uint64_t seed = 1234;
  TapReduction reduction = TapReduction::mean;
  std::filesystem::path weights;

  TeacherSpec spec() const {
    TeacherSpec s = kind == "vgg19" ? TeacherSpec::vgg19(weights) : TeacherSpec::tiny(seed);
    s.seed = seed;
    s.reduction = reduction;
    if (kind == "tiny") s.weights_path = weights;
    return s;
  }
};

struct HarnessConfig {
  std::filesystem::path images = "data/desk/heldout";
  int num_images = 10;
  int fits_per_image = 1;
  FitConfig fit;
  /// name=checkpoint pairs; the names mse_only and teacher_pl select the
  /// corresponding baselines and need no checkpoint.
  std::vector<std::pair<std::string, std::string>> variants;
};

struct PerfConfig {
  int image_size = 224;
  int batch = 1;
  int repeats = 5;
  bool measure = false;
  std::vector<std::string> presets{"teacher", "resnet4", "resnet6", "resnet8", "unet"};
  std::string fidelity = "exact";
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/default";
  TeacherConfig teacher;
  BackboneSpec backbone = BackboneSpec::resnet_desk(4);
  HeadVariant head = HeadVariant::defaults(HeadKind::constrained_proxy);
  TrainConfig trainer;
  std::filesystem::path data_dir = "data/desk/train";
  HarnessConfig harness;
  PerfConfig perf;
};

inline TapReduction tap_reduction_from_string(std::string_view s) {
  if (s == "mean") return TapReduction::mean;
  if (s == "sum") return TapReduction::sum;
  throw ConfigError("unknown reduction '" + std::string(s) + "'");
}

inline RunConfig run_config_from_ini(const IniDocument& doc) {
  static const std::set<std::string> known{"", "teacher", "backbone", "head", "trainer", "harness", "perf"};
  for (const auto& [name, entries] : doc.sections) {
    if (!known.count(name)) {
      const int line = entries.empty() ? 0 : entries.begin()->second.line;
      throw ConfigFileError(doc.origin + ":" + std::to_string(line) + ": unknown section [" + name + "]");
    }
  }
  RunConfig c;
  SectionReader g(doc, "");
  c.seed = g.number<std::uint64_t>("seed", c.seed);
  c.out = g.str("out", c.out.string());
  g.finish();

  SectionReader t(doc, "teacher");
  c.teacher.kind = t.parsed("kind", c.teacher.kind, [](const std::string& v) {
    if (v != "tiny" && v != "vgg19") throw ConfigError("teacher kind must be tiny or vgg19, got '" + v + "'");
    return v;
  });
  c.teacher.seed = t.number<std::uint64_t>("seed", c.teacher.seed);
  c.teacher.reduction = t.parsed("reduction", "mean", tap_reduction_from_string);
  c.teacher.weights = t.str("weights", "");
  t.finish();

  SectionReader b(doc, "backbone");
  c.backbone.family = b.parsed("family", "resnet", backbone_family_from_string);
  c.backbone.fidelity = b.parsed("fidelity", "desk", fidelity_from_string);
  c.backbone.num_blocks = b.number<int>("num_blocks", c.backbone.num_blocks);
  c.backbone.num_scales = b.number<int>("num_scales", c.backbone.num_scales);
  c.backbone.base_channels =
      b.number<int>("base_channels", c.backbone.fidelity == Fidelity::exact ? 64 : c.backbone.base_channels);
  b.finish();

  SectionReader h(doc, "head");
  const HeadKind kind = h.parsed("kind", "constrained_proxy", head_kind_from_string);
  c.head = HeadVariant::defaults(kind);
  c.head.alpha = h.number<double>("alpha", c.head.alpha);
  c.head.beta = h.number<double>("beta", c.head.beta);
  c.head.gamma = h.number<double>("gamma", c.head.gamma);
  h.finish();

  SectionReader tr(doc, "trainer");
  TrainConfig& k = c.trainer;
  k.n_autoencoders = tr.number<int>("n_autoencoders", k.n_autoencoders);
  k.image_size = tr.number<int>("image_size", k.image_size);
  k.crop_min = tr.number<int>("crop_min", k.image_size);
  k.batch_size = tr.number<int>("batch_size", k.batch_size);
  k.theta.lr = tr.number<double>("lr_theta", k.theta.lr);
  k.phi.lr = tr.number<double>("lr_phi", k.phi.lr);
  k.theta.beta1 = k.phi.beta1 = tr.number<double>("adam_beta1", k.theta.beta1);
  k.theta.beta2 = k.phi.beta2 = tr.number<double>("adam_beta2", k.theta.beta2);
  k.plateau_window = tr.number<int>("plateau_window", k.plateau_window);
  k.plateau_epsilon = tr.number<double>("plateau_epsilon", k.plateau_epsilon);
  k.total_steps = tr.number<int>("total_steps", k.total_steps);
  k.log_every = tr.number<int>("log_every", k.log_every);
  k.checkpoint_every = tr.number<int>("checkpoint_every", k.checkpoint_every);
  k.autoencoder_base_channels = tr.number<int>("autoencoder_base_channels", k.autoencoder_base_channels);
  k.weights.grad = tr.number<double>("lambda_grad", k.weights.grad);
  k.weights.vgg = tr.number<double>("lambda_vgg", k.weights.vgg);
  k.weights.l1 = tr.number<double>("lambda_l1", k.weights.l1);
  k.grad_term_scale = tr.parsed("grad_term_scale", std::string(to_string(k.grad_term_scale)),
                                grad_term_scale_from_string);
  c.data_dir = tr.str("data_dir", c.data_dir.string());
  tr.finish();
  k.seed = c.seed;

  SectionReader hv(doc, "harness");
  HarnessConfig& hc = c.harness;
  hc.images = hv.str("images", hc.images.string());
  hc.num_images = hv.number<int>("num_images", hc.num_images);
  hc.fits_per_image = hv.number<int>("fits_per_image", hc.fits_per_image);
  hc.fit.total_iters = hv.number<int>("total_iters", hc.fit.total_iters);
  hc.fit.step_size = hv.number<double>("step_size", hc.fit.step_size);
  hc.fit.loss_mode = hv.parsed("loss_mode", "pgn", loss_mode_from_string);
  hc.fit.lambda_mse = hv.number<double>("lambda_mse", hc.fit.lambda_mse);
  hc.fit.divergence_factor = hv.number<double>("divergence_factor", hc.fit.divergence_factor);
  hc.fit.stagnation_patience = hv.number<int>("stagnation_patience", hc.fit.stagnation_patience);
  for (const auto& item : hv.list("variants", {})) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      if (item != "mse_only" && item != "teacher_pl") {
        throw ConfigFileError(doc.origin + ": [harness] variant '" + item + "' needs the form name=checkpoint");
      }
      hc.variants.emplace_back(item, "");
    } else {
      hc.variants.emplace_back(detail::trim(item.substr(0, eq)), detail::trim(item.substr(eq + 1)));
    }
  }
  hv.finish();
  hc.fit.seed = c.seed;

  SectionReader p(doc, "perf");
  c.perf.image_size = p.number<int>("image_size", c.perf.image_size);
  c.perf.batch = p.number<int>("batch", c.perf.batch);
  c.perf.repeats = p.number<int>("repeats", c.perf.repeats);
  c.perf.measure = p.boolean("measure", c.perf.measure);
  c.perf.presets = p.list("presets", c.perf.presets);
  c.perf.fidelity = p.parsed("fidelity", c.perf.fidelity, [](const std::string& v) {
    fidelity_from_string(v);
    return v;
  });
  p.finish();

  c.backbone.validate();
  c.head.validate();
  c.trainer.validate();
  c.harness.fit.validate();
  if (hc.num_images <= 0 || hc.fits_per_image <= 0) throw ConfigError("[harness] counts must be positive");
  if (c.perf.image_size <= 0 || c.perf.batch <= 0) throw ConfigError("[perf] sizes must be positive");
  c.teacher.spec().validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_ini(load_ini(path)); }

}  // namespace pgn
