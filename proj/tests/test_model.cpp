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
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "ckdn/layers.hpp"
#include "ckdn/model.hpp"
#include "test_util.hpp"

namespace {

using ckdn::CKDNModel;
using ckdn::CKDNParams;
using ckdn::FeatureMap;
using ckdn::ImageTensor;
using ckdn::ModelConfig;

TEST(Embedding, FullResolutionGivesStrideFourMap) {
  const ModelConfig c = ModelConfig::full();
  const CKDNModel m(c);
  const auto p = m.initialize<float>(1);
  std::mt19937_64 rng(2);
  const auto img = testutil::random_image<float>(rng, 288, 288);
  const auto f = ckdn::qse_forward<float>(m, p.qse, img);
  EXPECT_EQ(f.channels(), 64u);
  EXPECT_EQ(f.height(), 72u);
  EXPECT_EQ(f.width(), 72u);
}

TEST(Embedding, ShapeLawHoldsForMultiplesOfFour) {
  const ModelConfig c = ModelConfig::desk();
  const CKDNModel m(c);
  const auto p = m.initialize<float>(1);
  std::mt19937_64 rng(3);
  for (std::size_t h : {16u, 20u, 96u}) {
    for (std::size_t w : {12u, 96u}) {
      const auto f = ckdn::dte_forward<float>(m, p.dte, testutil::random_image<float>(rng, h, w));
      EXPECT_EQ(f.channels(), 16u);
      EXPECT_EQ(f.height(), h / 4);
      EXPECT_EQ(f.width(), w / 4);
    }
  }
}

TEST(Embedding, BiasOnlyParametersGiveConstantChannels) {
  const ModelConfig c = testutil::toy_config();
  const CKDNModel m(c);
  const auto p = m.initialize<double>(4);
  // Zero every weight, then give each bias a distinct value.
  std::mt19937_64 rng(5);
  std::vector<double> zeroed(p.qse.size(), 0.0);
  double b = 0.1;
  for (std::size_t i : m.embedding().bias_indices()) zeroed[i] = (b += 0.01);
  const auto f1 = ckdn::qse_forward<double>(m, zeroed, testutil::random_image<double>(rng, 16, 16));
  const auto f2 = ckdn::qse_forward<double>(m, zeroed, testutil::random_image<double>(rng, 16, 16));
  for (std::size_t ch = 0; ch < f1.channels(); ++ch) {
    for (double v : f1.channel(ch)) EXPECT_DOUBLE_EQ(v, f1.channel(ch)[0]);
    for (std::size_t i = 0; i < f1.plane(); ++i) EXPECT_DOUBLE_EQ(f1.channel(ch)[i], f2.channel(ch)[i]);
  }
}

TEST(Embedding, InputGradientMatchesFiniteDifferences) {
  const ModelConfig c = testutil::toy_config(4, 8);
  const CKDNModel m(c);
  const auto p = m.initialize<double>(6);
  std::mt19937_64 rng(7);
  auto img = testutil::random_image<double>(rng, 8, 8);
  ckdn::EmbeddingNet::Cache<double> cache;
  const auto f = m.embedding().forward(std::span<const double>(p.dte), img, cache);
  for (std::size_t out : {std::size_t{0}, f.size() / 2, f.size() - 1}) {
    FeatureMap<double> seed(f.channels(), f.height(), f.width());
    seed[out] = 1.0;
    std::vector<double> unused(p.dte.size(), 0.0);
    const auto dimg = m.embedding().backward(std::span<const double>(p.dte), cache, seed, std::span<double>(unused), true);
    std::vector<double> pixels(img.values().begin(), img.values().end());
    std::vector<double> analytic(dimg.values().begin(), dimg.values().end());
    const auto r = testutil::check_coordinates(pixels, analytic, [&] {
      ImageTensor<double> x(3, 8, 8);
      std::copy(pixels.begin(), pixels.end(), x.values().begin());
      return ckdn::dte_forward<double>(m, p.dte, x)[out];
    });
    EXPECT_EQ(r.failed, 0u) << "worst relative error " << r.worst;
  }
}

// The bias gradient must not depend on where dy happens to be allocated,
// so it has to equal a strictly sequential float sum.
TEST(Conv2d, BiasGradientIsSequentialSum) {
  const ckdn::Conv2d conv{3, 4, 3, 1, 1, 0, 108};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> params(112);
  for (auto& v : params) v = u(rng);
  ckdn::Tensor<float> x(3, 23, 23);
  for (auto& v : x.values()) v = u(rng);
  ckdn::ConvCache<float> cache;
  const auto y = conv.forward(std::span<const float>(params), x, cache);
  ckdn::Tensor<float> dy(y.channels(), y.height(), y.width());
  for (auto& v : dy.values()) v = u(rng);
  std::vector<float> grads(params.size(), 0.0f);
  conv.backward(std::span<const float>(params), cache, dy, std::span<float>(grads), false);
  const std::size_t plane = dy.height() * dy.width();
  for (std::size_t co = 0; co < 4; ++co) {
    float s = 0.0f;
    for (std::size_t i = 0; i < plane; ++i) s += dy.values()[co * plane + i];
    EXPECT_EQ(grads[108 + co], s) << "channel " << co;
  }
}

TEST(Predictor, ReturnsOneFiniteScalarAndIsNonlinear) {
  const ModelConfig c = testutil::toy_config();
  const CKDNModel m(c);
  const auto p = m.initialize<double>(8);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  FeatureMap<double> diff(4, 4, 4);
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = n(rng);
  const double s1 = ckdn::csp_forward<double>(m, p.csp, diff);
  const double s2 = ckdn::csp_forward<double>(m, p.csp, diff * 2.0);
  EXPECT_TRUE(std::isfinite(s1));
  EXPECT_NE(s1, s2);
}

TEST(Predictor, DiffGradientMatchesFiniteDifferences) {
  const ModelConfig c = testutil::toy_config();
  const CKDNModel m(c);
  const auto p = m.initialize<double>(10);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 1);
  FeatureMap<double> diff(4, 4, 4);
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = n(rng);
  ckdn::ScorePredictor::Cache<double> cache;
  m.predictor().forward(std::span<const double>(p.csp), diff, cache);
  std::vector<double> unused(p.csp.size(), 0.0);
  const auto dd = m.predictor().backward(std::span<const double>(p.csp), cache, 1.0, std::span<double>(unused));
  std::vector<double> x(diff.values().begin(), diff.values().end());
  std::vector<double> analytic(dd.values().begin(), dd.values().end());
  const auto r = testutil::check_coordinates(x, analytic, [&] {
    FeatureMap<double> d(4, 4, 4);
    std::copy(x.begin(), x.end(), d.values().begin());
    return ckdn::csp_forward<double>(m, p.csp, d);
  });
  EXPECT_EQ(r.failed, 0u) << "worst relative error " << r.worst;
}

TEST(Predictor, DownsampledInputHalvesTheMap) {
  ModelConfig c = testutil::toy_config();
  c.csp_input_downsample = 2;
  const CKDNModel m(c);
  const auto p = m.initialize<double>(12);
  FeatureMap<double> diff(4, 4, 4, 0.5);
  EXPECT_TRUE(std::isfinite(ckdn::csp_forward<double>(m, p.csp, diff)));
  FeatureMap<double> odd(4, 3, 3, 0.5);
  EXPECT_THROW(ckdn::csp_forward<double>(m, p.csp, odd), ckdn::ShapeError);
}

class ScoreTest : public ::testing::Test {
 protected:
  ScoreTest() : model_(testutil::toy_config()), params_(model_.initialize<double>(13)) {
    std::mt19937_64 rng(14);
    h_ = testutil::random_image<double>(rng, 16, 16);
    d_ = testutil::random_image<double>(rng, 16, 16);
    r_ = testutil::random_image<double>(rng, 16, 16);
  }
  CKDNModel model_;
  CKDNParams<double> params_;
  ImageTensor<double> h_, d_, r_;
};

TEST_F(ScoreTest, IsDeterministicAndEqualsManualComposition) {
  const double s = ckdn::score(model_, params_, d_, r_);
  EXPECT_EQ(s, ckdn::score(model_, params_, d_, r_));
  const auto diff = ckdn::dte_forward<double>(model_, params_.dte, d_) - ckdn::qse_forward<double>(model_, params_.qse, r_);
  EXPECT_EQ(s, ckdn::csp_forward<double>(model_, params_.csp, diff));
}

TEST_F(ScoreTest, SwappingBranchInputsChangesTheScore) {
  EXPECT_NE(ckdn::score(model_, params_, d_, r_), ckdn::score(model_, params_, r_, d_));
}

TEST_F(ScoreTest, SameSeedSameParameters) {
  EXPECT_EQ(params_, model_.initialize<double>(13));
  EXPECT_NE(params_, model_.initialize<double>(14));
}

TEST_F(ScoreTest, QualityEmbeddingAndPredictorAreSharedStorage) {
  const double s0 = ckdn::score(model_, params_, d_, r_);
  const double t0 = ckdn::teacher_score(model_, params_, h_, r_);
  auto p = params_;
  for (double& v : p.qse) v *= 1.01;
  EXPECT_NE(ckdn::score(model_, p, d_, r_), s0);
  EXPECT_NE(ckdn::teacher_score(model_, p, h_, r_), t0);
  p = params_;
  p.csp.back() += 0.25;
  EXPECT_NE(ckdn::score(model_, p, d_, r_), s0);
  EXPECT_NE(ckdn::teacher_score(model_, p, h_, r_), t0);
}

TEST_F(ScoreTest, TeacherParametersNeverReachInference) {
  const double s0 = ckdn::score(model_, params_, d_, r_);
  auto p = params_;
  for (double& v : p.dte_teacher) v = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(ckdn::score(model_, p, d_, r_), s0);
}

TEST_F(ScoreTest, TeacherEqualsStudentOnIdenticalGraphs) {
  auto p = params_;
  p.dte_teacher = p.dte;
  EXPECT_EQ(ckdn::teacher_score(model_, p, d_, r_), ckdn::score(model_, p, d_, r_));
}

TEST_F(ScoreTest, SharedEmbeddingsReadTheQualityWeights) {
  auto p = params_;
  p.config.shared_embeddings = true;
  p.dte.assign(p.dte.size(), 0.0);
  const auto diff = ckdn::qse_forward<double>(model_, p.qse, d_) - ckdn::qse_forward<double>(model_, p.qse, r_);
  EXPECT_EQ(ckdn::score(model_, p, d_, r_), ckdn::csp_forward<double>(model_, p.csp, diff));
}

TEST_F(ScoreTest, ShapeErrors) {
  std::mt19937_64 rng(15);
  EXPECT_THROW(ckdn::score(model_, params_, d_, testutil::random_image<double>(rng, 20, 20)), ckdn::ShapeError);
  EXPECT_THROW(ckdn::dte_forward<double>(model_, params_.dte, testutil::random_image<double>(rng, 18, 16)),
               ckdn::ShapeError);
  EXPECT_THROW(ckdn::dte_forward<double>(model_, params_.dte, ImageTensor<double>(1, 16, 16)), ckdn::ShapeError);
  std::vector<double> short_params(params_.dte.size() - 1, 0.0);
  EXPECT_THROW(ckdn::dte_forward<double>(model_, short_params, d_), ckdn::ShapeError);
  EXPECT_THROW(ckdn::csp_forward<double>(model_, params_.csp, FeatureMap<double>(3, 4, 4)), ckdn::ShapeError);
}

TEST(ModelConfig, RejectsInvalidSettings) {
  ModelConfig c = ModelConfig::desk();
  c.input_resolution = 98;
  EXPECT_THROW(c.validate(), ckdn::ConfigError);
  c = ModelConfig::desk();
  c.fc_hidden_sizes = {8};
  EXPECT_THROW(c.validate(), ckdn::ConfigError);
  c = ModelConfig::desk();
  c.csp_input_downsample = 3;
  EXPECT_THROW(c.validate(), ckdn::ConfigError);
  c = ModelConfig::desk();
  c.channel_width = 0;
  EXPECT_THROW(c.validate(), ckdn::ConfigError);
}

TEST(ModelConfig, CommonInitCopiesTheQualityDraw) {
  ModelConfig c = testutil::toy_config();
  c.common_embedding_init = true;
  const auto p = CKDNModel(c).initialize<float>(3);
  EXPECT_EQ(p.dte, p.qse);
  EXPECT_EQ(p.dte_teacher, p.qse);
  c.common_embedding_init = false;
  const auto q = CKDNModel(c).initialize<float>(3);
  EXPECT_NE(q.dte, q.qse);
  EXPECT_EQ(q.qse, p.qse);
}

TEST(Activation, ReluGradientAgreesAwayFromKinks) {
  // Central differences straddle a kink only when a pre-activation lies
  // within h of zero; with h = 1e-7 that is rare, so nearly every
  // coordinate must agree.
  ModelConfig c = testutil::toy_config();
  c.activation = ckdn::Activation::relu;
  const CKDNModel m(c);
  auto p = m.initialize<double>(16);
  const auto batch = testutil::random_batch<double>(17, 2, 16);
  auto g = ckdn::CKDNGrads<double>::zeros_like(p);
  ckdn::absolute_loss(m, p, batch, &g);
  const auto r = testutil::check_coordinates(p.csp, g.csp, [&] { return ckdn::absolute_loss(m, p, batch); }, 1e-7, 1e-3);
  EXPECT_LE(r.failed * 100, r.checked) << r.failed << " of " << r.checked;
}

}  // namespace
