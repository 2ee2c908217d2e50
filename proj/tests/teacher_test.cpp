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

#include <filesystem>

#include "oracles.hpp"
#include "pgn/teacher.hpp"
#include "test_util.hpp"

namespace pgn {
namespace {

using testing::random_tensor;

TEST(Teacher, ZeroInputGivesZeroFeatures) {
  const Teacher<double> t(TeacherSpec::tiny());
  for (const auto& f : t.features(Tensor<double>(1, 3, 16, 16))) {
    EXPECT_EQ(max_abs(f), 0.0);
  }
}

TEST(Teacher, FeaturesAreBitIdenticalAcrossCalls) {
  const Teacher<float> t(TeacherSpec::tiny());
  const Tensor<float> x = random_tensor<float>({2, 3, 16, 16}, 4);
  const auto a = t.features(x);
  const auto b = t.features(x);
  ASSERT_EQ(a.size(), 8u);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) ASSERT_EQ(a[k][i], b[k][i]);
}

TEST(Teacher, SameSeedSameWeightsDifferentSeedDifferentWeights) {
  const Teacher<float> a(TeacherSpec::tiny(7)), b(TeacherSpec::tiny(7)), c(TeacherSpec::tiny(8));
  EXPECT_TRUE(std::ranges::equal(a.weight(3), b.weight(3)));
  EXPECT_FALSE(std::ranges::equal(a.weight(3), c.weight(3)));
}

TEST(Teacher, ImpulseResponseMatchesHandConvolution) {
  // One conv layer, one output channel, kernel 1 at the centre of the red
  // input plane plus a -2 to its right. Bias 0.
  TeacherSpec spec;
  spec.conv_channels = {1};
  spec.taps = {0};
  const auto dir = std::filesystem::temp_directory_path() / "pgn_teacher_impulse";
  std::vector<float> w(27, 0.f), b(1, 0.f);
  w[4] = 1.f;   // channel 0, (1,1)
  w[5] = -2.f;  // channel 0, (1,2): output(y,x) += -2 * input(y, x+1)
  io::Bundle bundle;
  bundle.tensors.push_back(io::make_record<float>("conv0.weight", {1, 3, 3, 3}, w));
  bundle.tensors.push_back(io::make_record<float>("conv0.bias", {1}, b));
  io::save_bundle(dir, bundle);
  spec.weights_path = dir;
  const Teacher<double> t(spec);

  Tensor<double> x(1, 3, 5, 5);
  x.at(0, 0, 2, 2) = 1.0;
  const auto f = t.features(x);
  ASSERT_EQ(f.size(), 1u);
  // Hand evaluation: out(2,2) = 1, out(2,1) = -2 -> rectified to 0.
  Tensor<double> expected(1, 1, 5, 5);
  expected.at(0, 0, 2, 2) = 1.0;
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(f[0][i], expected[i]) << i;
  std::filesystem::remove_all(dir);
}

TEST(Teacher, OddSizeErrorNamesThePoolLayer) {
  const Teacher<float> t(TeacherSpec::tiny());
  try {
    t.features(Tensor<float>(1, 3, 12, 12));  // 12 -> 6 -> 3: third pool fails
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("avgpool_after_conv5"), std::string::npos) << e.what();
  }
}

TEST(Teacher, GraphHasNoMaxPooling) {
  for (const auto& spec : {TeacherSpec::tiny(), TeacherSpec::vgg19()}) {
    const Teacher<float> t(spec);
    int pools = 0;
    for (const auto& l : t.graph()) {
      EXPECT_TRUE(l.kind == TeacherLayerInfo::Kind::conv3x3 || l.kind == TeacherLayerInfo::Kind::relu ||
                  l.kind == TeacherLayerInfo::Kind::avgpool);
      pools += l.kind == TeacherLayerInfo::Kind::avgpool;
    }
    EXPECT_EQ(pools, spec.num_pools());
  }
}

TEST(PerceptualLoss, IdentityAndSymmetryAndNonNegativity) {
  const Teacher<double> t(TeacherSpec::tiny());
  const Tensor<double> a = random_tensor<double>({3, 3, 16, 16}, 1);
  const Tensor<double> b = random_tensor<double>({3, 3, 16, 16}, 2);
  for (double v : t.perceptual_loss(a, a)) EXPECT_EQ(v, 0.0);
  const auto ab = t.perceptual_loss(a, b), ba = t.perceptual_loss(b, a);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(ab[i], ba[i]);
    EXPECT_GT(ab[i], 0.0);
  }
  EXPECT_THROW(t.perceptual_loss(a, Tensor<double>(3, 3, 8, 8)), DimensionError);
}

TEST(PerceptualLoss, MatchesLoopOracleOnEightByEightFixture) {
  for (auto reduction : {TapReduction::mean, TapReduction::sum}) {
    TeacherSpec spec = TeacherSpec::tiny();
    spec.reduction = reduction;
    const Teacher<double> t(spec);
    const Tensor<double> a = random_tensor<double>({2, 3, 8, 8}, 21);
    const Tensor<double> b = random_tensor<double>({2, 3, 8, 8}, 22);
    const auto got = t.perceptual_loss(a, b);
    const auto ref = oracle::loop_perceptual_loss(t, a, b);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(got[i], ref[i], 1e-12 * std::max(1.0, ref[i]));
  }
}

TEST(PerceptualLoss, FloatTeacherTracksDoubleTeacher) {
  const Teacher<double> td(TeacherSpec::tiny());
  const Teacher<float> tf(TeacherSpec::tiny());
  const Tensor<double> a = random_tensor<double>({1, 3, 32, 32}, 5);
  const Tensor<double> b = random_tensor<double>({1, 3, 32, 32}, 6);
  EXPECT_NEAR(tf.perceptual_loss(a.cast<float>(), b.cast<float>())[0], td.perceptual_loss(a, b)[0], 1e-4);
}

TEST(PerceptualGrad, ZeroAtIdenticalInputs) {
  const Teacher<double> t(TeacherSpec::tiny());
  const Tensor<double> y = random_tensor<double>({2, 3, 16, 16}, 3);
  EXPECT_EQ(max_abs(t.perceptual_grad(y, y)), 0.0);
}

TEST(PerceptualGrad, TinyTeacherMatchesFiniteDifferences) {
  const Teacher<double> t(TeacherSpec::tiny());
  const auto rep = oracle::teacher_fd_check(t, 32, 100, 1e-3, 99);
  EXPECT_EQ(rep.failures, 0) << "worst relative error " << rep.worst;
}

TEST(PerceptualGrad, SumReductionMatchesFiniteDifferences) {
  TeacherSpec spec = TeacherSpec::tiny(5);
  spec.reduction = TapReduction::sum;
  const auto rep = oracle::teacher_fd_check(Teacher<double>(spec), 16, 40, 1e-3, 98);
  EXPECT_EQ(rep.failures, 0) << "worst relative error " << rep.worst;
}

TEST(PerceptualGrad, Vgg19LayoutMatchesFiniteDifferences) {
  // Seeded weights; the layout (13 convs, 4 average pools) is what matters.
  const auto rep = oracle::teacher_fd_check(Teacher<double>(TeacherSpec::vgg19()), 16, 12, 1e-3, 97);
  EXPECT_EQ(rep.failures, 0) << "worst relative error " << rep.worst;
}

TEST(PerceptualGrad, ScalesLinearlyWithLossScale) {
  const Teacher<double> t(TeacherSpec::tiny());
  const Tensor<double> a = random_tensor<double>({2, 3, 16, 16}, 8);
  const Tensor<double> b = random_tensor<double>({2, 3, 16, 16}, 9);
  const auto g1 = t.loss_and_grad(a, b, 1.0);
  const auto g4 = t.loss_and_grad(a, b, 4.0);
  for (std::size_t i = 0; i < g1.grad.size(); ++i) ASSERT_EQ(g4.grad[i], 4.0 * g1.grad[i]);
  EXPECT_NEAR(g4.loss[0], 4.0 * g1.loss[0], 1e-12 * g4.loss[0]);
}

TEST(PerceptualGrad, PerImageGradientIgnoresOtherBatchMembers) {
  const Teacher<double> t(TeacherSpec::tiny());
  const Tensor<double> a = random_tensor<double>({2, 3, 16, 16}, 10);
  const Tensor<double> b = random_tensor<double>({2, 3, 16, 16}, 11);
  const Tensor<double> full = t.perceptual_grad(a, b);
  const Tensor<double> second = t.perceptual_grad(slice_batch(a, 1, 1), slice_batch(b, 1, 1));
  for (std::size_t i = 0; i < second.size(); ++i) EXPECT_NEAR(full.image(1)[i], second[i], 1e-15);
}

TEST(PerceptualGrad, LeavesTeacherWeightsUntouched) {
  const Teacher<float> t(TeacherSpec::tiny());
  const std::vector<float> before(t.weight(0).begin(), t.weight(0).end());
  t.perceptual_grad(random_tensor<float>({1, 3, 16, 16}, 1), random_tensor<float>({1, 3, 16, 16}, 2));
  EXPECT_TRUE(std::ranges::equal(before, t.weight(0)));
}

TEST(Teacher, Vgg19ParameterCount) {
  const Teacher<float> t(TeacherSpec::vgg19());
  const nn::Cost c = t.cost({1, 3, 224, 224});
  EXPECT_EQ(c.params, 12944960u);
  std::uint64_t biases = 0;
  for (std::size_t i = 0; i < t.num_convs(); ++i) biases += t.bias(i).size();
  EXPECT_EQ(biases, 3968u);
}

TEST(Teacher, BundleRoundTripReproducesLoss) {
  const Teacher<float> a(TeacherSpec::tiny(31));
  const auto dir = std::filesystem::temp_directory_path() / "pgn_teacher_roundtrip";
  io::save_bundle(dir, a.to_bundle());
  TeacherSpec spec = TeacherSpec::tiny(0);
  spec.weights_path = dir;
  const Teacher<float> b(spec);
  const Tensor<float> x = random_tensor<float>({1, 3, 16, 16}, 1), y = random_tensor<float>({1, 3, 16, 16}, 2);
  EXPECT_EQ(a.perceptual_loss(x, y)[0], b.perceptual_loss(x, y)[0]);
  std::filesystem::remove_all(dir);
}

TEST(TeacherSpec, RejectsBadPlans) {
  TeacherSpec s = TeacherSpec::tiny();
  s.taps = {3, 2};
  EXPECT_THROW(s.validate(), ConfigError);
  s = TeacherSpec::tiny();
  s.pool_after = {9};
  EXPECT_THROW(s.validate(), ConfigError);
}

}  // namespace
}  // namespace pgn
