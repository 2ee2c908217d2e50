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

// pgn: train, stability, fit, dump-proxy and bench commands.

#include <CLI11.hpp>

#include "pgn/cli.hpp"

int main(int argc, char** argv) {
  using namespace pgn::cli;
  CLI::App app{"Perceptual gradient networks on the CPU"};
  app.require_subcommand(1);
  Options o;
  std::string out;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "run configuration file");
    if (needs_config) c->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "global seed override");
  };

  auto* train = app.add_subcommand("train", "distill a PGN from the teacher");
  common(train, true);
  auto* stability = app.add_subcommand("stability", "DIP stability experiment over configured variants");
  common(stability, true);
  stability->add_option("--checkpoint", o.checkpoint, "PGN checkpoint when no variants are configured");
  auto* fit = app.add_subcommand("fit", "single-image fits on the harness images");
  common(fit, true);
  fit->add_option("--checkpoint", o.checkpoint, "PGN checkpoint for pgn loss modes");
  auto* dump = app.add_subcommand("dump-proxy", "write the proxy target of an image pair");
  common(dump, false);
  dump->add_option("--checkpoint", o.checkpoint, "PGN checkpoint")->required();
  dump->add_option("--pred", o.pred, "prediction image (PNG)")->required();
  dump->add_option("--target", o.target, "target image (PNG)")->required();
  auto* bench = app.add_subcommand("bench", "parameter/MAC table for the teacher and backbone presets");
  common(bench, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  for (auto* sub : {train, stability, fit, dump, bench}) {
    if (sub->parsed()) {
      if (sub->count("--out")) o.out = out;
      if (sub->count("--seed")) o.seed = seed;
    }
  }

  if (train->parsed()) return guarded([&] { return cmd_train(o); });
  if (stability->parsed()) return guarded([&] { return cmd_stability(o); });
  if (fit->parsed()) return guarded([&] { return cmd_fit(o); });
  if (dump->parsed()) return guarded([&] { return cmd_dump_proxy(o); });
  return guarded([&] { return cmd_bench(o); });
}
