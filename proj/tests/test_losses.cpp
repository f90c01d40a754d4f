// Copyright 2026 The ckdn-iqa Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ckdn/losses.hpp"
#include "test_util.hpp"

namespace {

using ckdn::Batch;
using ckdn::CKDNGrads;
using ckdn::CKDNModel;
using ckdn::CKDNParams;
using ckdn::LossWeights;
using ckdn::ParamGroupId;

TEST(Elo, ClosedFormValues) {
  EXPECT_EQ(ckdn::elo_probability(1500.0, 1500.0, 400.0), 0.5);
  // 1 / (1 + 10^-1) = 10/11.
  EXPECT_NEAR(ckdn::elo_probability(1900.0, 1500.0, 400.0), 0.90909090909090909091, 1e-15);
  EXPECT_NEAR(ckdn::elo_probability(1500.0, 1900.0, 400.0), 0.09090909090909090909, 1e-15);
  EXPECT_THROW(ckdn::elo_probability(1.0, 2.0, 0.0), ckdn::ConfigError);
  EXPECT_THROW(ckdn::elo_probability(1.0, 2.0, -400.0), ckdn::ConfigError);
}

TEST(Elo, ComplementMonotoneAndShiftInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 3000), shift(-500, 500);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng), c = shift(rng);
    const double p = ckdn::elo_probability(a, b, 400.0);
    EXPECT_NEAR(p + ckdn::elo_probability(b, a, 400.0), 1.0, 1e-12);
    EXPECT_NEAR(ckdn::elo_probability(a + c, b + c, 400.0), p, 1e-12);
    EXPECT_LT(ckdn::elo_probability(a, b + 1.0, 400.0), p);
  }
}

class LossTest : public ::testing::Test {
 protected:
  LossTest() : model_(testutil::toy_config()), params_(model_.initialize<double>(21)) {}

  double student(const Batch<double>& b, std::size_t i) const {
    return ckdn::score(model_, params_, b.degraded[i], b.restored[i]);
  }

  /// Predictor that ignores its input and returns `c`.
  void constant_predictor(double c) {
    params_.csp.assign(params_.csp.size(), 0.0);
    params_.csp.back() = c;
  }

  CKDNModel model_;
  CKDNParams<double> params_;
};

TEST_F(LossTest, AbsoluteLossExamples) {
  auto b = testutil::random_batch<double>(1, 2, 16);
  b.mos = {student(b, 0), student(b, 1)};
  EXPECT_EQ(ckdn::absolute_loss(model_, params_, b), 0.0);

  auto one = testutil::random_batch<double>(2, 1, 16);
  one.mos = {student(one, 0) - 0.2};
  EXPECT_NEAR(ckdn::absolute_loss(model_, params_, one), 0.04, 1e-15);

  b.mos = {student(b, 0) + 1.0, student(b, 1) - 1.0};
  EXPECT_NEAR(ckdn::absolute_loss(model_, params_, b), 1.0, 1e-14);
}

TEST_F(LossTest, FrLossMatchesAbsoluteOnIdenticalGraphs) {
  auto b = testutil::random_batch<double>(3, 2, 16);
  b.pristine = b.degraded;
  params_.dte_teacher = params_.dte;
  EXPECT_EQ(ckdn::fr_absolute_loss(model_, params_, b), ckdn::absolute_loss(model_, params_, b));
}

TEST_F(LossTest, FrLossNeverReachesTheStudentEmbedding) {
  const auto b = testutil::random_batch<double>(4, 2, 16);
  auto g = CKDNGrads<double>::zeros_like(params_);
  ckdn::fr_absolute_loss(model_, params_, b, &g);
  for (double v : g.dte) EXPECT_EQ(v, 0.0);
  double teacher = 0;
  for (double v : g.dte_teacher) teacher += std::abs(v);
  EXPECT_GT(teacher, 0.0);
}

TEST_F(LossTest, DistillationOfConstantOffsetIsItsSquare) {
  auto b = testutil::random_batch<double>(5, 2, 16);
  b.pristine = b.degraded;
  params_.dte_teacher = params_.dte;
  EXPECT_EQ(ckdn::distillation_term(model_, params_, b), 0.0);
  // The last residual block adds its conv2 bias to every output element.
  const auto bias = model_.embedding().bias_indices();
  for (std::size_t k = bias.size() - model_.config().channel_width; k < bias.size(); ++k) {
    params_.dte_teacher[bias[k]] += 0.1;
  }
  EXPECT_NEAR(ckdn::distillation_term(model_, params_, b), 0.01, 1e-15);
}

TEST_F(LossTest, DistillationDescendsAlongStudentGradient) {
  const auto b = testutil::random_batch<double>(6, 2, 16);
  auto g = CKDNGrads<double>::zeros_like(params_);
  const double before = ckdn::distillation_term(model_, params_, b, &g);
  for (std::size_t i = 0; i < params_.dte.size(); ++i) params_.dte[i] -= 1e-4 * g.dte[i];
  EXPECT_LT(ckdn::distillation_term(model_, params_, b), before);
}

TEST_F(LossTest, StopGradientDetachesTheTeacher) {
  const auto b = testutil::random_batch<double>(7, 2, 16);
  auto g = CKDNGrads<double>::zeros_like(params_);
  ckdn::distillation_term(model_, params_, b, &g, true);
  for (double v : g.dte_teacher) EXPECT_EQ(v, 0.0);
  auto joint = CKDNGrads<double>::zeros_like(params_);
  ckdn::distillation_term(model_, params_, b, &joint, false);
  EXPECT_EQ(g.dte, joint.dte);
}

TEST_F(LossTest, CkdLossIsTheWeightedSum) {
  const auto b = testutil::random_batch<double>(8, 2, 16);
  LossWeights w;
  w.lambda = 0;
  const auto zero = ckdn::ckd_loss(model_, params_, b, w);
  EXPECT_EQ(zero.total, ckdn::absolute_loss(model_, params_, b) + ckdn::fr_absolute_loss(model_, params_, b));
  w.lambda = 10;
  const auto ten = ckdn::ckd_loss(model_, params_, b, w);
  EXPECT_EQ(ten.total, ten.absolute + ten.fr_absolute + 10 * ten.distillation);
  EXPECT_EQ(ten.distillation, ckdn::distillation_term(model_, params_, b));
}

TEST_F(LossTest, CkdLossWithOnlyDistillationLeft) {
  auto b = testutil::random_batch<double>(9, 1, 16);
  b.pristine = b.degraded;
  params_.dte_teacher = params_.dte;
  const auto bias = model_.embedding().bias_indices();
  for (std::size_t k = bias.size() - model_.config().channel_width; k < bias.size(); ++k) {
    params_.dte_teacher[bias[k]] += 0.1;
  }
  constant_predictor(0.7);
  b.mos = {0.7};
  const auto l = ckdn::ckd_loss(model_, params_, b, LossWeights{});
  EXPECT_EQ(l.absolute, 0.0);
  EXPECT_EQ(l.fr_absolute, 0.0);
  EXPECT_NEAR(l.total, 0.1, 1e-14);
}

TEST_F(LossTest, RelativeLossExamples) {
  std::mt19937_64 rng(10);
  ckdn::PairBatch<double> p;
  const auto img = testutil::random_image<double>(rng, 16, 16);
  p.restored_i = {img};
  p.restored_j = {img};
  p.mos_i = {1500};
  p.mos_j = {1500};
  const double at_zero = ckdn::csp_forward<double>(model_, params_.csp, ckdn::FeatureMap<double>(4, 4, 4));
  EXPECT_NEAR(ckdn::relative_loss(model_, params_, p, LossWeights{}), (0.5 - at_zero) * (0.5 - at_zero), 1e-15);

  const auto other = testutil::random_image<double>(rng, 16, 16);
  p.restored_j = {other};
  p.mos_i = {1900};
  const auto diff = ckdn::qse_forward<double>(model_, params_.qse, img) - ckdn::qse_forward<double>(model_, params_.qse, other);
  const double r = 10.0 / 11.0 - ckdn::csp_forward<double>(model_, params_.csp, diff);
  EXPECT_NEAR(ckdn::relative_loss(model_, params_, p, LossWeights{}), r * r, 1e-14);
}

TEST_F(LossTest, RelativeLossTouchesOnlyQualityAndPredictor) {
  const auto p = testutil::random_pairs<double>(11, 2, 16);
  auto g = CKDNGrads<double>::zeros_like(params_);
  ckdn::relative_loss(model_, params_, p, LossWeights{}, &g);
  for (double v : g.dte) EXPECT_EQ(v, 0.0);
  for (double v : g.dte_teacher) EXPECT_EQ(v, 0.0);
}

TEST_F(LossTest, AllLossesAreNonnegative) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto b = testutil::random_batch<double>(seed, 2, 16);
    EXPECT_GE(ckdn::absolute_loss(model_, params_, b), 0.0);
    EXPECT_GE(ckdn::fr_absolute_loss(model_, params_, b), 0.0);
    EXPECT_GE(ckdn::distillation_term(model_, params_, b), 0.0);
    EXPECT_GE(ckdn::ckd_loss(model_, params_, b, LossWeights{}).total, 0.0);
    EXPECT_GE(ckdn::relative_loss(model_, params_, testutil::random_pairs<double>(seed, 2, 16), LossWeights{}), 0.0);
  }
}

TEST_F(LossTest, RejectsMalformedBatches) {
  Batch<double> empty;
  EXPECT_THROW(ckdn::absolute_loss(model_, params_, empty), ckdn::DataError);
  auto b = testutil::random_batch<double>(12, 2, 16);
  b.restored.pop_back();
  EXPECT_THROW(ckdn::ckd_loss(model_, params_, b, LossWeights{}), ckdn::DataError);
  b = testutil::random_batch<double>(12, 2, 16);
  b.mos[0] = std::nan("");
  EXPECT_THROW(ckdn::absolute_loss(model_, params_, b), ckdn::NumericError);
  EXPECT_THROW(ckdn::relative_loss(model_, params_, ckdn::PairBatch<double>{}, LossWeights{}), ckdn::DataError);
  LossWeights w;
  w.lambda = -1;
  EXPECT_THROW(ckdn::ckd_loss(model_, params_, testutil::random_batch<double>(1, 1, 16), w), ckdn::ConfigError);
}

// Sampled coordinates keep the unit suite fast; the acceptance binary
// checks every coordinate.
class LossGradientTest : public LossTest, public ::testing::WithParamInterface<int> {};

TEST_P(LossGradientTest, MatchesCentralDifferences) {
  const auto b = testutil::random_batch<double>(13, 2, 16);
  const auto pairs = testutil::random_pairs<double>(14, 2, 16);
  LossWeights w;
  w.sigmoid_head = GetParam() == 5;
  std::function<double(CKDNGrads<double>*)> loss;
  switch (GetParam()) {
    case 0: loss = [&](CKDNGrads<double>* g) { return ckdn::absolute_loss(model_, params_, b, g); }; break;
    case 1: loss = [&](CKDNGrads<double>* g) { return ckdn::fr_absolute_loss(model_, params_, b, g); }; break;
    case 2: loss = [&](CKDNGrads<double>* g) { return ckdn::distillation_term(model_, params_, b, g); }; break;
    case 3: loss = [&](CKDNGrads<double>* g) { return ckdn::ckd_loss(model_, params_, b, w, g).total; }; break;
    default: loss = [&](CKDNGrads<double>* g) { return ckdn::relative_loss(model_, params_, pairs, w, g); }; break;
  }
  auto g = CKDNGrads<double>::zeros_like(params_);
  loss(&g);
  for (auto id : ckdn::kAllGroups) {
    const auto r = testutil::check_coordinates(ckdn::group(params_, id), ckdn::group(g, id),
                                               [&] { return loss(nullptr); }, 1e-5, 1e-4, 13);
    EXPECT_EQ(r.failed, 0u) << ckdn::to_string(id) << " worst " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(AllLosses, LossGradientTest, ::testing::Values(0, 1, 2, 3, 4, 5));

TEST_F(LossTest, SharedEmbeddingGradientLandsOnQualityGroup) {
  params_.config.shared_embeddings = true;
  const auto b = testutil::random_batch<double>(15, 2, 16);
  auto g = CKDNGrads<double>::zeros_like(params_);
  ckdn::absolute_loss(model_, params_, b, &g);
  for (double v : g.dte) EXPECT_EQ(v, 0.0);
  const auto r = testutil::check_coordinates(params_.qse, g.qse, [&] { return ckdn::absolute_loss(model_, params_, b); },
                                             1e-5, 1e-4, 11);
  EXPECT_EQ(r.failed, 0u) << r.worst;
}

}  // namespace
