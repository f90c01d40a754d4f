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
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "ckdn/checkpoint.hpp"
#include "ckdn/config.hpp"
#include "ckdn/dataset.hpp"
#include "ckdn/optim.hpp"
#include "ckdn/training.hpp"
#include "test_util.hpp"

namespace {

using ckdn::Checkpoint;
using ckdn::RunConfig;
using ckdn::Split;

TEST(Warmup, StartsAtZeroAndReachesBase) {
  const ckdn::WarmupSchedule s{0.15, 64};
  EXPECT_EQ(s.lr(0), 0.0);
  EXPECT_DOUBLE_EQ(s.lr(32), 0.075);
  EXPECT_EQ(s.lr(64), 0.15);
  EXPECT_EQ(s.lr(100000), 0.15);
  for (std::size_t k = 1; k < 64; ++k) EXPECT_GT(s.lr(k), s.lr(k - 1));
  EXPECT_EQ((ckdn::WarmupSchedule{0.15, 0}.lr(0)), 0.15);
}

TEST(Warmup, FullPresetIsOneEpochOfSgdAt015) {
  const auto t = ckdn::TrainConfig::full();
  EXPECT_EQ(t.base_lr, 0.15);
  EXPECT_EQ(t.optimizer, ckdn::OptimizerKind::sgd);
  EXPECT_EQ(t.momentum, 0.9);
  EXPECT_EQ(ckdn::detail::warmup_steps(t, 250), 250u);
  const ckdn::WarmupSchedule s{t.base_lr, ckdn::detail::warmup_steps(t, 250)};
  EXPECT_EQ(s.lr(0), 0.0);
  EXPECT_EQ(s.lr(250), 0.15);
}

TEST(Optim, AdamFirstStepMovesByLr) {
  std::vector<float> p{1.0f, -2.0f, 0.5f}, m(3, 0.0f), v(3, 0.0f);
  const std::vector<float> g{0.3f, -7.0f, 0.0f};
  ckdn::adam_step(p, m, v, g, 0.01, 0.9, 0.999, 1e-8, 1);
  EXPECT_NEAR(p[0], 0.99f, 1e-6);
  EXPECT_NEAR(p[1], -1.99f, 1e-6);
  EXPECT_EQ(p[2], 0.5f);
}

TEST(Optim, SgdMomentumMatchesHandRolled) {
  std::vector<float> p{1.0f}, vel{0.0f};
  ckdn::sgd_momentum_step(p, vel, std::vector<float>{2.0f}, 0.1, 0.9);
  EXPECT_FLOAT_EQ(p[0], 0.8f);
  ckdn::sgd_momentum_step(p, vel, std::vector<float>{2.0f}, 0.1, 0.9);
  EXPECT_FLOAT_EQ(p[0], 0.8f - 0.1f * 3.8f);
}

// One small dataset shared by every training test in this file.
class TrainingTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tmp_ = std::make_unique<testutil::TempDir>("training");
    ckdn::build_dataset(testutil::small_manifest(tmp_->path(), 8, 32), tmp_->path() / "ds");
    ds_ = std::make_unique<ckdn::Dataset>(ckdn::Dataset::open(tmp_->path() / "ds"));
  }
  static void TearDownTestSuite() {
    ds_.reset();
    tmp_.reset();
  }

  static RunConfig tiny() {
    RunConfig rc;
    rc.model = testutil::toy_config(4, 32);
    rc.model.activation = ckdn::Activation::relu;
    rc.train.stage1_epochs = 2;
    rc.train.stage2_epochs = 2;
    rc.train.samples_per_epoch = 16;
    rc.train.batch_size = 4;
    rc.train.eval_every = 1;
    return rc;
  }

  static Checkpoint pretrained(const RunConfig& rc) { return ckdn::pretrain_qse(rc, *ds_).checkpoint; }

  static std::unique_ptr<testutil::TempDir> tmp_;
  static std::unique_ptr<ckdn::Dataset> ds_;
};

std::unique_ptr<testutil::TempDir> TrainingTest::tmp_;
std::unique_ptr<ckdn::Dataset> TrainingTest::ds_;

TEST_F(TrainingTest, StageOneLeavesReferenceEmbeddingsAtInit) {
  for (auto loss : {ckdn::PretrainLoss::relative, ckdn::PretrainLoss::absolute}) {
    auto rc = tiny();
    rc.train.pretrain_loss = loss;
    const auto init = ckdn::CKDNModel(rc.effective_model()).initialize<float>(rc.train.seed);
    const auto ck = pretrained(rc);
    EXPECT_EQ(ck.stage, ckdn::Stage::pretrained_qse);
    EXPECT_EQ(ckdn::group_hash(ck.params.dte), ckdn::group_hash(init.dte));
    EXPECT_EQ(ckdn::group_hash(ck.params.dte_teacher), ckdn::group_hash(init.dte_teacher));
    EXPECT_NE(ckdn::group_hash(ck.params.qse), ckdn::group_hash(init.qse));
    EXPECT_NE(ckdn::group_hash(ck.params.csp), ckdn::group_hash(init.csp));
    EXPECT_TRUE(ck.metrics.contains("train_loss"));
    EXPECT_EQ(ck.epoch, 2u);
    EXPECT_EQ(ck.step, 2u * 4u);
  }
}

TEST_F(TrainingTest, WithoutCkdTheTeacherIsUntouched) {
  auto rc = tiny();
  rc.train.use_ckd = false;
  rc.train.use_pretrain = false;
  const auto init = ckdn::CKDNModel(rc.effective_model()).initialize<float>(rc.train.seed);
  const auto ck = ckdn::train_ckdn(rc, *ds_, nullptr).checkpoint;
  EXPECT_EQ(ck.params.dte_teacher, init.dte_teacher);
  EXPECT_NE(ck.params.dte, init.dte);
  EXPECT_NE(ck.params.qse, init.qse);
}

TEST_F(TrainingTest, SharedVariantTrainsOnlyTheQualityEmbedding) {
  auto rc = tiny();
  rc.train.use_pretrain = false;
  rc.train.shared_embeddings = true;
  const auto init = ckdn::CKDNModel(rc.effective_model()).initialize<float>(rc.train.seed);
  const auto ck = ckdn::train_ckdn(rc, *ds_, nullptr).checkpoint;
  EXPECT_TRUE(ck.params.config.shared_embeddings);
  EXPECT_EQ(ck.params.dte, init.dte);
  EXPECT_NE(ck.params.qse, init.qse);
  EXPECT_NE(ck.params.dte_teacher, init.dte_teacher);
}

TEST_F(TrainingTest, InitCheckpointPreconditions) {
  auto rc = tiny();
  EXPECT_THROW(ckdn::train_ckdn(rc, *ds_, nullptr), ckdn::ConfigError);

  auto stage2 = rc;
  stage2.train.use_pretrain = false;
  const auto ck2 = ckdn::train_ckdn(stage2, *ds_, nullptr).checkpoint;
  EXPECT_THROW(ckdn::train_ckdn(rc, *ds_, &ck2), ckdn::ConfigError);

  auto wide = rc;
  wide.model.channel_width = 6;
  const auto ck_wide = pretrained(wide);
  EXPECT_THROW(ckdn::train_ckdn(rc, *ds_, &ck_wide), ckdn::ConfigError);

  auto other = rc;
  other.train.seed = 99;
  const auto s1 = pretrained(rc);
  EXPECT_THROW(ckdn::pretrain_qse(other, *ds_, {}, &s1), ckdn::ConfigError);
}

TEST_F(TrainingTest, StageTwoStartsFromStageOneWeights) {
  auto rc = tiny();
  rc.train.stage2_epochs = 1;
  auto s1 = pretrained(rc);
  auto probe = rc;
  probe.train.base_lr = 1e-30;  // effectively frozen
  const auto ck = ckdn::train_ckdn(probe, *ds_, &s1).checkpoint;
  for (std::size_t i = 0; i < ck.params.qse.size(); ++i) ASSERT_NEAR(ck.params.qse[i], s1.params.qse[i], 1e-6);
  EXPECT_EQ(ck.stage, ckdn::Stage::ckdn);
}

TEST_F(TrainingTest, SameSeedReproducesRunExactly) {
  const auto rc = tiny();
  const auto s1a = pretrained(rc), s1b = pretrained(rc);
  const auto a = ckdn::train_ckdn(rc, *ds_, &s1a);
  const auto b = ckdn::train_ckdn(rc, *ds_, &s1b);
  EXPECT_EQ(a.checkpoint.params, b.checkpoint.params);
  ASSERT_TRUE(a.log.back().dr && b.log.back().dr);
  EXPECT_EQ(a.log.back().loss, b.log.back().loss);
  EXPECT_EQ(a.log.back().dr->predictions, b.log.back().dr->predictions);
}

TEST_F(TrainingTest, ResumeMatchesUninterruptedRun) {
  const auto rc = tiny();
  const auto s1 = pretrained(rc);
  const auto full = ckdn::train_ckdn(rc, *ds_, &s1);

  testutil::TempDir out("resume");
  ckdn::TrainOptions opts;
  opts.output_dir = out.path();
  opts.stop_after_epochs = 1;
  const auto half = ckdn::train_ckdn(rc, *ds_, &s1, opts);
  EXPECT_EQ(half.checkpoint.epoch, 1u);
  const auto saved = ckdn::load_checkpoint(out.path() / "ckdn_latest.ckpt");
  opts.stop_after_epochs = 0;
  const auto resumed = ckdn::train_ckdn(rc, *ds_, nullptr, opts, &saved);
  EXPECT_EQ(resumed.checkpoint.epoch, 2u);
  EXPECT_EQ(resumed.checkpoint.params, full.checkpoint.params);
  EXPECT_EQ(resumed.log.back().loss, full.log.back().loss);

  auto s1_half_opts = ckdn::TrainOptions{};
  s1_half_opts.stop_after_epochs = 1;
  const auto s1_half = ckdn::pretrain_qse(rc, *ds_, s1_half_opts).checkpoint;
  const auto s1_resumed = ckdn::pretrain_qse(rc, *ds_, {}, &s1_half).checkpoint;
  EXPECT_EQ(s1_resumed.params, s1.params);
}

TEST_F(TrainingTest, ResumeRejectsWrongStageOrConfig) {
  const auto rc = tiny();
  const auto s1 = pretrained(rc);
  EXPECT_THROW(ckdn::train_ckdn(rc, *ds_, nullptr, {}, &s1), ckdn::ConfigError);
  auto other = rc;
  other.loss.lambda = 3;
  const auto ck = ckdn::train_ckdn(rc, *ds_, &s1).checkpoint;
  EXPECT_THROW(ckdn::train_ckdn(other, *ds_, &s1, {}, &ck), ckdn::ConfigError);
}

TEST_F(TrainingTest, RunDirectoryHoldsSnapshotLogAndCheckpoints) {
  const auto rc = tiny();
  const auto s1 = pretrained(rc);
  testutil::TempDir out("rundir");
  ckdn::TrainOptions opts;
  opts.output_dir = out.path();
  ckdn::train_ckdn(rc, *ds_, &s1, opts);
  for (const char* f : {"config.json", "metrics.tsv", "ckdn_latest.ckpt", "ckdn_best.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(out.path() / f)) << f;
  }
  std::ifstream log(out.path() / "metrics.tsv");
  std::string header, comment, row;
  std::getline(log, header);
  std::getline(log, comment);
  std::getline(log, row);
  EXPECT_EQ(header, ckdn::kMetricsColumns);
  EXPECT_NE(comment.find("config_hash=" + rc.hash()), std::string::npos);
  EXPECT_NE(comment.find("toolkit_version="), std::string::npos);
  EXPECT_NE(comment.find("variant=CKDN + CKD + Pret. [unshared]"), std::string::npos);
  EXPECT_EQ(row.rfind("ckdn\t1\t", 0), 0u);
}

TEST_F(TrainingTest, CheckpointRoundTripIsBitExact) {
  auto rc = tiny();
  rc.train.optimizer = ckdn::OptimizerKind::adam;
  const auto s1 = pretrained(rc);
  const auto ck = ckdn::train_ckdn(rc, *ds_, &s1).checkpoint;
  ASSERT_FALSE(ck.second_moment.qse.empty());
  const std::string bytes = ckdn::serialize_checkpoint(ck);
  const auto back = ckdn::deserialize_checkpoint(bytes);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.momentum.dte_teacher, ck.momentum.dte_teacher);
  EXPECT_EQ(back.second_moment.qse, ck.second_moment.qse);
  EXPECT_EQ(back.second_moment.csp, ck.second_moment.csp);
  EXPECT_EQ(back.rng_state, ck.rng_state);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  EXPECT_EQ(ckdn::serialize_checkpoint(back), bytes);

  testutil::TempDir out("ckpt");
  ckdn::save_checkpoint(out.path() / "a.ckpt", ck);
  EXPECT_EQ(ckdn::load_checkpoint(out.path() / "a.ckpt").params, ck.params);
}

TEST_F(TrainingTest, DamagedCheckpointsAreRejected) {
  auto rc = tiny();
  rc.train.use_pretrain = false;
  rc.train.stage2_epochs = 1;
  const std::string bytes = ckdn::serialize_checkpoint(ckdn::train_ckdn(rc, *ds_, nullptr).checkpoint);
  EXPECT_THROW(ckdn::deserialize_checkpoint(bytes.substr(0, bytes.size() - 5)), ckdn::DataError);
  EXPECT_THROW(ckdn::deserialize_checkpoint(bytes + "x"), ckdn::DataError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(ckdn::deserialize_checkpoint(bad_magic), ckdn::DataError);
  EXPECT_THROW(ckdn::deserialize_checkpoint(""), ckdn::DataError);
  EXPECT_THROW(ckdn::load_checkpoint(tmp_->path() / "missing.ckpt"), ckdn::DataError);
}

TEST_F(TrainingTest, EvaluateIsDeterministicAndCoversTheSplit) {
  auto rc = tiny();
  rc.train.use_pretrain = false;
  const auto ck = ckdn::train_ckdn(rc, *ds_, nullptr).checkpoint;
  const ckdn::CKDNModel model(ck.params.config);
  const auto a = ckdn::evaluate(model, ck.params, *ds_, Split::val, ckdn::EvalMode::dr);
  const auto b = ckdn::evaluate(model, ck.params, *ds_, Split::val, ckdn::EvalMode::dr);
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_EQ(a.srcc, b.srcc);
  EXPECT_EQ(a.n, ds_->split_indices(Split::val).size());
  const auto fr = ckdn::evaluate(model, ck.params, *ds_, Split::val, ckdn::EvalMode::fr);
  const auto nr = ckdn::evaluate(model, ck.params, *ds_, Split::val, ckdn::EvalMode::nr);
  EXPECT_NE(fr.predictions, a.predictions);
  EXPECT_NE(nr.predictions, a.predictions);
}

TEST_F(TrainingTest, PerfectScorerHasFullAccuracy) {
  const auto idx = ds_->split_indices(Split::val);
  std::vector<double> t;
  for (auto i : idx) t.push_back(ds_->record(i).mos);
  const auto pairs = ckdn::judgment_pairs(*ds_, idx);
  EXPECT_EQ(pairs.size(), 2u * 7u * 3u);  // 3 validation restorers per cell
  const auto r = ckdn::metrics_from_predictions(t, t, pairs);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.srcc, 1.0);
  const auto flat = ckdn::metrics_from_predictions(std::vector<double>(t.size(), 0.5), t, pairs);
  EXPECT_TRUE(std::isnan(flat.srcc));
}

TEST_F(TrainingTest, SweepEmitsOneRowPerSpec) {
  auto rc = tiny();
  rc.train.use_pretrain = false;
  const auto ck = ckdn::train_ckdn(rc, *ds_, nullptr).checkpoint;
  const ckdn::CKDNModel model(ck.params.config);
  const auto rows = ckdn::reference_sweep(model, ck.params, *ds_, ckdn::reference_degradations());
  ASSERT_EQ(rows.size(), 7u);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(rows[k].spec, ckdn::reference_degradations()[k]);
    EXPECT_EQ(rows[k].result.n, ds_->split_indices(Split::val).size());
  }
}

TEST(Sweep, OwnDegradationReproducesDrEvaluation) {
  testutil::TempDir tmp("sweep");
  for (const char* id : {"down4", "noise25"}) {
    auto m = testutil::small_manifest(tmp.path(), 4, 32);
    m.degradations = {ckdn::degradation_from_id(id)};
    const auto dir = tmp.path() / id;
    ckdn::build_dataset(m, dir);
    const auto ds = ckdn::Dataset::open(dir);
    const ckdn::CKDNModel model(testutil::toy_config(4, 32));
    const auto params = model.initialize<float>(3);
    const auto dr = ckdn::evaluate(model, params, ds, Split::val, ckdn::EvalMode::dr);
    const auto rows = ckdn::reference_sweep(model, params, ds, m.degradations);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].result.predictions, dr.predictions) << id;
  }
}

TEST(Evaluate, EmptySplitThrows) {
  testutil::TempDir tmp("empty");
  auto m = testutil::small_manifest(tmp.path(), 2, 32);
  m.content_train = 1.0;
  m.content_val = 0.0;
  ckdn::build_dataset(m, tmp.path() / "ds");
  const auto ds = ckdn::Dataset::open(tmp.path() / "ds");
  const ckdn::CKDNModel model(testutil::toy_config(4, 32));
  const auto params = model.initialize<float>(1);
  EXPECT_THROW(ckdn::evaluate(model, params, ds, Split::val, ckdn::EvalMode::dr), ckdn::DataError);
  EXPECT_THROW(ckdn::reference_sweep(model, params, ds, ckdn::reference_degradations()), ckdn::DataError);
}

TEST(Config, JsonRoundTripPreservesHash) {
  auto rc = RunConfig::desk();
  rc.train.optimizer = ckdn::OptimizerKind::sgd;
  rc.train.seed = 12;
  rc.loss.lambda = 4;
  const auto back = ckdn::parse_run_config(ckdn::json(rc));
  EXPECT_EQ(back.hash(), rc.hash());
  EXPECT_EQ(back.train.optimizer, ckdn::OptimizerKind::sgd);
  EXPECT_EQ(back.loss.lambda, 4);
}

TEST(Config, ProfilesAndPartialOverrides) {
  const auto full = ckdn::parse_run_config(ckdn::json{{"profile", "full"}});
  EXPECT_EQ(full.train.base_lr, 0.15);
  EXPECT_EQ(full.model.channel_width, ckdn::ModelConfig::full().channel_width);
  const auto desk = ckdn::parse_run_config(ckdn::json{{"train", {{"optimizer", "adam"}, {"seed", 4}}}});
  EXPECT_EQ(desk.train.optimizer, ckdn::OptimizerKind::adam);
  EXPECT_EQ(desk.train.seed, 4u);
  EXPECT_EQ(desk.train.samples_per_epoch, ckdn::TrainConfig::desk().samples_per_epoch);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  using ckdn::json;
  EXPECT_THROW(ckdn::parse_run_config(json{{"trian", json::object()}}), ckdn::ConfigError);
  EXPECT_THROW(ckdn::parse_run_config(json{{"train", {{"lr", 0.1}}}}), ckdn::ConfigError);
  EXPECT_THROW(ckdn::parse_run_config(json{{"train", {{"optimizer", "rmsprop"}}}}), ckdn::ConfigError);
  EXPECT_THROW(ckdn::parse_run_config(json{{"train", {{"base_lr", -1}}}}), ckdn::ConfigError);
  EXPECT_THROW(ckdn::parse_run_config(json{{"train", {{"crop_size", 50}}}}), ckdn::ConfigError);
  EXPECT_THROW(ckdn::parse_run_config(json{{"profile", "huge"}}), ckdn::ConfigError);
  EXPECT_THROW(ckdn::parse_run_config(json{{"model", {{"channel_width", "wide"}}}}), ckdn::ConfigError);
  EXPECT_THROW(ckdn::parse_run_config(json{{"train", {{"use_pretrain", true}, {"pretrain_loss", "none"}}}}),
               ckdn::ConfigError);
}

TEST(Config, AblationLabels) {
  ckdn::TrainConfig t;
  EXPECT_EQ(ckdn::ablation_label(t), "CKDN + CKD + Pret. [unshared]");
  t.use_ckd = false;
  t.use_pretrain = false;
  EXPECT_EQ(ckdn::ablation_label(t), "CKDN [unshared]");
  t.use_pretrain = true;
  t.pretrain_loss = ckdn::PretrainLoss::absolute;
  t.shared_embeddings = true;
  EXPECT_EQ(ckdn::ablation_label(t), "CKDN + L_a Pret. [shared]");
}

}  // namespace
