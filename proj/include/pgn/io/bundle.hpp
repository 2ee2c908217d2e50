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

// On-disk tensor bundles: a directory holding manifest.json (metadata plus
// the ordered tensor table) and tensors.bin (raw little-endian float32
// values, concatenated in manifest order).

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pgn/core/tensor.hpp"

namespace pgn::io {

static_assert(std::endian::native == std::endian::little, "tensor bundles assume a little-endian host");

struct TensorRecord {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

struct Bundle {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

class BundleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void save_bundle(const std::filesystem::path& dir, const Bundle& bundle) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "pgn-tensors-v1";
  manifest["meta"] = bundle.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : bundle.tensors) {
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    offset += t.values.size();
  }
  {
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw BundleError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << "\n";
  }
  std::ofstream bin(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw BundleError("cannot write " + (dir / "tensors.bin").string());
  for (const auto& t : bundle.tensors) {
    bin.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
}

inline Bundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw BundleError("missing manifest: " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw BundleError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "pgn-tensors-v1") throw BundleError("unsupported bundle format in " + dir.string());
  Bundle out;
  out.meta = manifest.value("meta", nlohmann::json::object());
  std::ifstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw BundleError("missing tensor data: " + (dir / "tensors.bin").string());
  for (const auto& entry : manifest.at("tensors")) {
    TensorRecord rec;
    rec.name = entry.at("name").get<std::string>();
    rec.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    rec.values.resize(count);
    bin.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
    bin.read(reinterpret_cast<char*>(rec.values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!bin) throw BundleError("truncated tensor data for " + rec.name + " in " + dir.string());
    out.tensors.push_back(std::move(rec));
  }
  return out;
}

template <typename T>
TensorRecord make_record(std::string name, std::vector<std::int64_t> shape, std::span<const T> values) {
  TensorRecord rec{std::move(name), std::move(shape), {}};
  rec.values.reserve(values.size());
  for (T v : values) rec.values.push_back(static_cast<float>(v));
  return rec;
}

template <typename T>
void copy_record(const TensorRecord& rec, std::span<T> dst) {
  if (rec.values.size() != dst.size()) {
    throw BundleError("tensor " + rec.name + ": expected " + std::to_string(dst.size()) + " values, found " +
                      std::to_string(rec.values.size()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
}

}  // namespace pgn::io
