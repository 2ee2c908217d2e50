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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgn/cli.hpp"
#include "pgn/config.hpp"

namespace pgn {
namespace {

namespace fs = std::filesystem;

IniDocument parse(const std::string& text) {
  std::istringstream is(text);
  return parse_ini(is, "test.ini");
}

std::string error_of(const std::string& text) {
  try {
    run_config_from_ini(parse(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyFileGivesDefaults) {
  const RunConfig c = run_config_from_ini(parse(""));
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.head.kind, HeadKind::constrained_proxy);
  EXPECT_EQ(c.trainer.n_autoencoders, 3);
  EXPECT_EQ(c.trainer.weights.vgg, 0.5);
  EXPECT_EQ(c.harness.fit.step_size, 0.01);
  EXPECT_EQ(c.harness.fit.stagnation_patience, 2000);
  EXPECT_EQ(c.teacher.kind, "tiny");
}

TEST(Config, SectionsOverrideDefaults) {
  const RunConfig c = run_config_from_ini(parse(R"(
seed = 42   # trailing comment
out = somewhere
; full-line comment
[teacher]
kind = vgg19
[backbone]
family = unet
fidelity = exact
[head]
kind = hybrid
gamma = 0.25
[trainer]
batch_size = 9
lambda_l1 = 0
grad_term_scale = relative
[harness]
variants = a=ck/a, mse_only
loss_mode = pgn_plus_mse
[perf]
presets = teacher, unet
measure = true
)"));
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.trainer.seed, 42u);
  EXPECT_EQ(c.out, "somewhere");
  EXPECT_EQ(c.teacher.spec().conv_channels.size(), 13u);
  EXPECT_EQ(c.backbone.family, BackboneFamily::unet);
  EXPECT_EQ(c.backbone.base_channels, 64);
  EXPECT_EQ(c.head.kind, HeadKind::hybrid);
  EXPECT_EQ(c.head.gamma, 0.25);
  EXPECT_EQ(c.head.alpha, 40.0);
  EXPECT_EQ(c.trainer.batch_size, 9);
  EXPECT_EQ(c.trainer.weights.l1, 0.0);
  EXPECT_EQ(c.trainer.grad_term_scale, GradTermScale::relative);
  ASSERT_EQ(c.harness.variants.size(), 2u);
  EXPECT_EQ(c.harness.variants[0].second, "ck/a");
  EXPECT_EQ(c.harness.variants[1].first, "mse_only");
  EXPECT_EQ(c.harness.fit.loss_mode, LossMode::pgn_plus_mse);
  EXPECT_EQ(c.perf.presets.size(), 2u);
  EXPECT_TRUE(c.perf.measure);
}

TEST(Config, UnknownKeyNamesFileAndLine) {
  EXPECT_EQ(error_of("[trainer]\nbatch_size = 3\nbatch_szie = 4\n"), "test.ini:3: unknown key 'batch_szie' in [trainer]");
  EXPECT_EQ(error_of("seeed = 1\n"), "test.ini:1: unknown key 'seeed' at top level");
}

TEST(Config, MalformedLinesAreDiagnosed) {
  EXPECT_EQ(error_of("[trainer\n"), "test.ini:1: unterminated section header");
  EXPECT_EQ(error_of("\n\njust words\n"), "test.ini:3: expected 'key = value'");
  EXPECT_EQ(error_of("[trainer]\ntotal_steps = ten\n"), "test.ini:2: 'total_steps' expects a number, got 'ten'");
  EXPECT_EQ(error_of("[trainer]\ntotal_steps = 5x\n"), "test.ini:2: 'total_steps' expects a number, got '5x'");
  EXPECT_EQ(error_of("[head]\nkind = nope\n"), "test.ini:2: unknown head variant 'nope'");
  EXPECT_EQ(error_of("[extra]\nx = 1\n"), "test.ini:2: unknown section [extra]");
  EXPECT_EQ(error_of("seed = 1\nseed = 2\n"), "test.ini:2: duplicate key 'seed'");
  EXPECT_EQ(error_of("[perf]\nmeasure = maybe\n"), "test.ini:2: 'measure' expects true/false, got 'maybe'");
}

TEST(Config, SemanticErrorsAreConfigurationErrors) {
  EXPECT_FALSE(error_of("[trainer]\nplateau_window = 0\n").empty());
  EXPECT_FALSE(error_of("[head]\nkind = constrained_proxy\nbeta = 0.5\n").empty());
  EXPECT_FALSE(error_of("[harness]\ndivergence_factor = 1\n").empty());
  EXPECT_FALSE(error_of("[backbone]\nnum_blocks = 5\n").empty());
}

// The pgn executable, run as a subprocess.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("pgn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + std::string(PGN_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() +
                            " 2> " + (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string read(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }
  fs::path write_config(const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return dir / name;
  }
  std::string smoke_config() {
    return std::string("seed = 3\n[trainer]\ndata_dir = ") + PGN_SOURCE_DIR +
           "/data/desk/train\nimage_size = 32\nbatch_size = 3\ntotal_steps = 10\nlog_every = 3\nplateau_window = 4\n";
  }

  fs::path dir;
};

TEST_F(Cli, MissingConfigFileExitsTwoAndNamesThePath) {
  EXPECT_EQ(run("train --config " + (dir / "nope.ini").string()), 2);
  EXPECT_NE(read(dir / "stderr.txt").find((dir / "nope.ini").string()), std::string::npos);
}

TEST_F(Cli, UnknownKeyExitsTwoWithLine) {
  const auto cfg = write_config("bad.ini", "[trainer]\n\ntypo = 1\n");
  EXPECT_EQ(run("train --config " + cfg.string()), 2);
  EXPECT_NE(read(dir / "stderr.txt").find("bad.ini:3: unknown key 'typo'"), std::string::npos);
}

TEST_F(Cli, UnsupportedDeviceExitsTwo) {
  EXPECT_EQ(run("bench --out " + (dir / "b").string(), "PGN_DEVICE=cuda"), 2);
  EXPECT_EQ(run("bench --out " + (dir / "b").string(), "PGN_DEVICE=cpu"), 0);
}

TEST_F(Cli, SmokeTrainWritesExpectedRowsAndCheckpoint) {
  const auto cfg = write_config("smoke.ini", smoke_config());
  ASSERT_EQ(run("train --config " + cfg.string() + " --out " + (dir / "run").string()), 0) << read(dir / "stderr.txt");
  std::istringstream csv(read(dir / "run" / "metrics.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4);  // ceil(10 / 3)
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint" / "manifest.json"));
}

TEST_F(Cli, DumpProxyRejectsDirectCheckpoint) {
  PerceptualGradientNetwork<float> net(BackboneSpec::resnet_desk(4, 2), HeadVariant::defaults(HeadKind::direct), 1);
  net.save(dir / "direct", 0);
  Tensor<float> img(Shape{1, 3, 8, 8}, 0.5f);
  io::write_png(dir / "a.png", img);
  EXPECT_EQ(run("dump-proxy --checkpoint " + (dir / "direct").string() + " --pred " + (dir / "a.png").string() +
                " --target " + (dir / "a.png").string() + " --out " + (dir / "o").string()),
            2);
  EXPECT_NE(read(dir / "stderr.txt").find("no proxy"), std::string::npos);
  EXPECT_EQ(run("dump-proxy --checkpoint " + (dir / "missing").string() + " --pred " + (dir / "a.png").string() +
                " --target " + (dir / "a.png").string()),
            2);
}

TEST_F(Cli, DumpProxyOfIdenticalPairIsFiniteAndDeterministic) {
  PerceptualGradientNetwork<float> net(BackboneSpec::resnet_desk(4, 4), HeadVariant{}, 1);
  net.save(dir / "ck", 0);
  const auto img = io::read_png(fs::path(PGN_SOURCE_DIR) / "data/desk/heldout" / io::list_pngs(fs::path(PGN_SOURCE_DIR) / "data/desk/heldout")[0].filename());
  io::write_png(dir / "y.png", img);
  const std::string args = "dump-proxy --checkpoint " + (dir / "ck").string() + " --pred " + (dir / "y.png").string() +
                           " --target " + (dir / "y.png").string() + " --out ";
  ASSERT_EQ(run(args + (dir / "o1").string()), 0) << read(dir / "stderr.txt");
  ASSERT_EQ(run(args + (dir / "o2").string()), 0);
  for (const char* f : {"proxy.png", "pred.png", "target.png"}) {
    const std::string a = read(dir / "o1" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, read(dir / "o2" / f)) << f;
  }
  const auto proxy = io::read_png(dir / "o1" / "proxy.png");
  EXPECT_EQ(proxy.shape(), img.shape());
  for (float v : proxy.span()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST_F(Cli, BenchCountsOnlyHasOneRowPerPreset) {
  const auto cfg = write_config("bench.ini", "[teacher]\nkind = vgg19\n[perf]\npresets = teacher, resnet4, unet\n");
  ASSERT_EQ(run("bench --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
  std::istringstream csv(read(dir / "b" / "bench.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], cost_header());
  EXPECT_EQ(lines[1].rfind("vgg19,12944960,", 0), 0u) << lines[1];
  EXPECT_EQ(lines[2].rfind("resnet4,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("unet,", 0), 0u);
  EXPECT_NE(read(dir / "stdout.txt").find("12.94M"), std::string::npos);
  EXPECT_EQ(run("bench --config " + write_config("b2.ini", "[perf]\npresets = vgg11\n").string()), 2);
}

TEST_F(Cli, StabilitySmokeCountsSumToRuns) {
  const auto cfg = write_config("stab.ini", std::string("[harness]\nimages = ") + PGN_SOURCE_DIR +
                                                "/data/desk/heldout\nnum_images = 2\ntotal_iters = 5\n"
                                                "variants = mse_only\n");
  ASSERT_EQ(run("stability --config " + cfg.string() + " --out " + (dir / "s").string()), 0) << read(dir / "stderr.txt");
  std::istringstream csv(read(dir / "s" / "stability.csv"));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, stability_header());
  EXPECT_EQ(row.rfind("mse_only,2,", 0), 0u) << row;
  const auto again = classify_trace_dir(dir / "s" / "traces" / "mse_only", 2.0, 2000);
  EXPECT_EQ(format_stability_row(summarize("mse_only", again)), row);
}

TEST_F(Cli, StabilityWithMissingCheckpointExitsTwo) {
  const auto cfg = write_config("stab.ini", "[harness]\nvariants = pgn=" + (dir / "nothing").string() + "\n");
  EXPECT_EQ(run("stability --config " + cfg.string() + " --out " + (dir / "s").string()), 2);
}

TEST_F(Cli, FitWritesImagesTracesAndSummary) {
  const auto cfg = write_config("fit.ini", std::string("[harness]\nimages = ") + PGN_SOURCE_DIR +
                                               "/data/desk/heldout\nnum_images = 1\ntotal_iters = 3\n"
                                               "loss_mode = teacher_pl\n");
  ASSERT_EQ(run("fit --config " + cfg.string() + " --out " + (dir / "f").string()), 0) << read(dir / "stderr.txt");
  EXPECT_TRUE(fs::exists(dir / "f" / "fit_summary.csv"));
  EXPECT_EQ(io::list_pngs(dir / "f" / "images").size(), 1u);
  const auto traces = classify_trace_dir(dir / "f" / "traces", 2.0, 2000);
  ASSERT_EQ(traces.size(), 1u);
  EXPECT_EQ(traces[0].last_iter, 2);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train"), 2);
}

}  // namespace
}  // namespace pgn
