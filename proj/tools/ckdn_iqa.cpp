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

// ckdn_iqa: dataset synthesis, two-stage training, evaluation and scoring.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
// failure (non-finite loss or score).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ckdn/ckdn.hpp"

namespace fs = std::filesystem;
using ckdn::json;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string fixed6(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(6) << v;
  return s.str();
}

json eval_json(const ckdn::EvalResult& r) {
  return {{"srcc", r.srcc}, {"plcc", r.plcc}, {"accuracy", r.accuracy}, {"n", r.n}, {"n_pairs", r.n_pairs}};
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  ckdn::detail::write_text(path, j.dump(2) + "\n");
}

ckdn::Split split_arg(const std::string& s) {
  const auto split = ckdn::split_from_string(s);
  if (split == ckdn::Split::none) throw ckdn::ConfigError("--split must be train or val");
  return split;
}

// ---- corpus ---------------------------------------------------------------

struct CorpusArgs {
  std::string out;
  std::size_t count = 175, size = 96;
  std::uint64_t seed = 7;
};

int run_corpus(const CorpusArgs& a) {
  const auto paths = ckdn::generate_corpus(a.out, a.count, a.size, a.seed);
  std::cout << "wrote " << paths.size() << " images to " << a.out << "\n";
  return 0;
}

// ---- manifest -------------------------------------------------------------

struct ManifestArgs {
  std::string corpus, out;
  std::size_t contents = 175;
  std::uint64_t seed = 2021;
};

int run_manifest(const ManifestArgs& a) {
  auto m = ckdn::desk_manifest(a.corpus, a.contents, a.seed);
  // Store the corpus path relative to the manifest when possible.
  const fs::path out_dir = fs::absolute(a.out).parent_path();
  m.corpus_dir = fs::absolute(a.corpus).lexically_relative(out_dir);
  write_json(a.out, m);
  std::cout << "wrote manifest " << a.out << "\n";
  return 0;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string manifest, out;
};

int run_synth(const SynthArgs& a) {
  const auto m = ckdn::load_manifest(a.manifest);
  const auto r = ckdn::build_dataset(m, a.out);
  std::cout << (r.reused ? "dataset up to date (no-op): " : "built dataset: ") << r.n_samples << " samples\n"
            << "index_hash " << r.index_hash << "\n";
  return 0;
}

// ---- init-config ----------------------------------------------------------

struct InitConfigArgs {
  std::string profile = "desk", dataset, output_dir, out;
};

int run_init_config(const InitConfigArgs& a) {
  ckdn::RunConfig rc = a.profile == "full" ? ckdn::RunConfig::full() : ckdn::RunConfig::desk();
  if (a.profile != "full" && a.profile != "desk") throw ckdn::ConfigError("--profile must be desk or full");
  const fs::path base = fs::absolute(a.out).parent_path();
  rc.dataset = fs::absolute(a.dataset).lexically_relative(base);
  rc.output_dir = fs::absolute(a.output_dir).lexically_relative(base);
  write_json(a.out, rc);
  std::cout << "wrote config " << a.out << " (config_hash " << rc.hash() << ")\n";
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string config, stage = "both", resume, init;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  const auto rc = ckdn::load_run_config(a.config);
  if (rc.dataset.empty()) throw ckdn::ConfigError("config: dataset is required");
  if (rc.output_dir.empty()) throw ckdn::ConfigError("config: output_dir is required");
  if (a.stage != "pretrain" && a.stage != "ckdn" && a.stage != "both") {
    throw ckdn::ConfigError("--stage must be pretrain, ckdn or both");
  }
  const auto ds = ckdn::Dataset::open(rc.dataset);
  ckdn::TrainOptions opts;
  opts.output_dir = rc.output_dir;
  opts.progress = a.quiet ? nullptr : &std::cout;

  std::optional<ckdn::Checkpoint> resume;
  if (!a.resume.empty()) resume = ckdn::load_checkpoint(a.resume);
  std::cout << "config_hash " << rc.hash() << "  variant " << ckdn::ablation_label(rc.train) << "\n";

  std::optional<ckdn::Checkpoint> stage1;
  const bool run_stage1 = a.stage == "pretrain" || (a.stage == "both" && rc.train.use_pretrain);
  if (run_stage1) {
    const ckdn::Checkpoint* r = resume && resume->stage == ckdn::Stage::pretrained_qse ? &*resume : nullptr;
    auto res = ckdn::pretrain_qse(rc, ds, opts, r);
    std::cout << "stage 1 final train loss " << res.checkpoint.metrics.value("train_loss", NAN) << "\n";
    stage1 = std::move(res.checkpoint);
    opts.fresh_log = false;
  }
  if (a.stage == "pretrain") return 0;

  const ckdn::Checkpoint* init = stage1 ? &*stage1 : nullptr;
  std::optional<ckdn::Checkpoint> loaded;
  if (!init && rc.train.use_pretrain && !(resume && resume->stage == ckdn::Stage::ckdn)) {
    const fs::path path = a.init.empty() ? rc.output_dir / "pretrain_latest.ckpt" : fs::path(a.init);
    if (!fs::exists(path)) {
      throw ckdn::ConfigError("use_pretrain is set but no stage-1 checkpoint exists at " + path.string() +
                              " (run --stage pretrain first or pass --init)");
    }
    loaded = ckdn::load_checkpoint(path);
    init = &*loaded;
  }
  if (!run_stage1 && !resume) opts.fresh_log = true;
  const ckdn::Checkpoint* r = resume && resume->stage == ckdn::Stage::ckdn ? &*resume : nullptr;
  auto res = ckdn::train_ckdn(rc, ds, init, opts, r);
  const auto& m = res.checkpoint.metrics;
  std::cout << "final val_dr_srcc " << m.value("val_dr_srcc", NAN) << " val_dr_plcc " << m.value("val_dr_plcc", NAN)
            << " val_fr_srcc " << m.value("val_fr_srcc", NAN) << " val_fr_plcc " << m.value("val_fr_plcc", NAN)
            << "\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, dataset, mode = "dr", split = "val", out;
  bool sweep = false;
  std::vector<std::string> sweep_specs;
};

int run_eval(const EvalArgs& a) {
  const auto ck = ckdn::load_checkpoint(a.checkpoint);
  const auto ds = ckdn::Dataset::open(a.dataset);
  const ckdn::CKDNModel model(ck.params.config);
  const auto split = split_arg(a.split);
  json report = {{"toolkit_version", std::string(ckdn::kToolkitVersion)},
                 {"config_hash", ck.config_hash},
                 {"checkpoint", a.checkpoint},
                 {"stage", ckdn::to_string(ck.stage)},
                 {"dataset_index_hash", ds.index_hash()},
                 {"split", a.split}};
  if (a.sweep) {
    std::vector<ckdn::DegradationSpec> specs;
    if (a.sweep_specs.empty()) specs = ckdn::reference_degradations();
    for (const auto& id : a.sweep_specs) specs.push_back(ckdn::degradation_from_id(id));
    const auto rows = ckdn::reference_sweep(model, ck.params, ds, specs, split);
    std::cout << "reference\tsrcc\tplcc\taccuracy\n";
    json jr = json::array();
    for (const auto& row : rows) {
      std::cout << row.spec.id() << '\t' << fixed6(row.result.srcc) << '\t' << fixed6(row.result.plcc) << '\t'
                << fixed6(row.result.accuracy) << '\n';
      json e = eval_json(row.result);
      e["reference"] = row.spec.id();
      jr.push_back(e);
    }
    report["sweep"] = jr;
  } else {
    const auto mode = ckdn::eval_mode_from_string(a.mode);
    const auto r = ckdn::evaluate(model, ck.params, ds, split, mode);
    if (!std::isfinite(r.srcc)) throw ckdn::NumericError("eval: predictions are constant, correlation undefined");
    std::cout << "mode " << a.mode << " split " << a.split << " n " << r.n << "\n"
              << "srcc " << fixed6(r.srcc) << "\nplcc " << fixed6(r.plcc) << "\naccuracy " << fixed6(r.accuracy)
              << "\n";
    report["mode"] = a.mode;
    report["metrics"] = eval_json(r);
  }
  if (!a.out.empty()) write_json(a.out, report);
  return 0;
}

// ---- score / compare ------------------------------------------------------

ckdn::Image load_for(const ckdn::ModelConfig& c, const std::string& path) {
  if (!fs::exists(path)) throw ckdn::DataError("no such file: " + path);
  return ckdn::prepare_input(ckdn::load_image(path), c);
}

double score_files(const ckdn::Checkpoint& ck, const ckdn::Image& degraded, const std::string& restored) {
  const ckdn::CKDNModel model(ck.params.config);
  const double s = ckdn::score(model, ck.params, degraded, load_for(ck.params.config, restored));
  if (!std::isfinite(s)) throw ckdn::NumericError("score is not finite");
  return s;
}

struct ScoreArgs {
  std::string checkpoint, degraded, restored;
};

int run_score(const ScoreArgs& a) {
  const auto ck = ckdn::load_checkpoint(a.checkpoint);
  const auto d = load_for(ck.params.config, a.degraded);
  std::cout << fixed6(score_files(ck, d, a.restored)) << "\n";
  return 0;
}

struct CompareArgs {
  std::string checkpoint, degraded, a, b;
};

int run_compare(const CompareArgs& a) {
  const auto ck = ckdn::load_checkpoint(a.checkpoint);
  const auto d = load_for(ck.params.config, a.degraded);
  const double sa = score_files(ck, d, a.a), sb = score_files(ck, d, a.b);
  const bool tie = sa == sb;
  std::cout << "A " << fixed6(sa) << "\nB " << fixed6(sb) << "\nverdict " << (sb > sa ? "B" : "A")
            << (tie ? " tie" : "") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Degraded-reference image quality assessment toolkit (version " + std::string(ckdn::kToolkitVersion) +
               ")"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ckdn::kToolkitVersion));

  CorpusArgs corpus;
  auto* c_corpus = app.add_subcommand("corpus", "Generate procedural pristine images");
  c_corpus->add_option("--out", corpus.out, "Output directory")->required();
  c_corpus->add_option("--count", corpus.count, "Number of images");
  c_corpus->add_option("--size", corpus.size, "Image side length in pixels");
  c_corpus->add_option("--seed", corpus.seed, "Generator seed");

  ManifestArgs manifest;
  auto* c_manifest = app.add_subcommand("manifest", "Write the desk-scale dataset manifest preset");
  c_manifest->add_option("--corpus", manifest.corpus, "Pristine image directory")->required();
  c_manifest->add_option("--out", manifest.out, "Manifest file to write")->required();
  c_manifest->add_option("--contents", manifest.contents, "Number of contents");
  c_manifest->add_option("--seed", manifest.seed, "Global seed");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Build a dataset from a manifest");
  c_synth->add_option("manifest", synth.manifest, "Manifest file")->required();
  c_synth->add_option("--out", synth.out, "Dataset directory")->required();

  InitConfigArgs init_config;
  auto* c_init = app.add_subcommand("init-config", "Write a run config with profile defaults");
  c_init->add_option("--profile", init_config.profile, "desk or full");
  c_init->add_option("--dataset", init_config.dataset, "Dataset directory")->required();
  c_init->add_option("--output-dir", init_config.output_dir, "Run output directory")->required();
  c_init->add_option("--out", init_config.out, "Config file to write")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Two-stage training");
  c_train->add_option("config", train.config, "Run config file")->required();
  c_train->add_option("--stage", train.stage, "pretrain, ckdn or both");
  c_train->add_option("--resume", train.resume, "Checkpoint to resume from");
  c_train->add_option("--init", train.init, "Stage-1 checkpoint for --stage ckdn");
  c_train->add_flag("--quiet", train.quiet, "No per-epoch progress");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_eval->add_option("checkpoint", eval.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--dataset", eval.dataset, "Dataset directory")->required();
  c_eval->add_option("--mode", eval.mode, "dr, fr or nr");
  c_eval->add_option("--split", eval.split, "val or train");
  c_eval->add_flag("--sweep", eval.sweep, "Reference-degradation sweep");
  c_eval->add_option("--sweep-specs", eval.sweep_specs, "Degradation ids for --sweep (default: all seven)")
      ->delimiter(',');
  c_eval->add_option("--out", eval.out, "Write a JSON report here");

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "Score one restored image against its degraded input");
  c_score->add_option("checkpoint", score.checkpoint)->required();
  c_score->add_option("degraded", score.degraded)->required();
  c_score->add_option("restored", score.restored)->required();

  CompareArgs compare;
  auto* c_compare = app.add_subcommand("compare", "Pick the better of two restorations");
  c_compare->add_option("checkpoint", compare.checkpoint)->required();
  c_compare->add_option("degraded", compare.degraded)->required();
  c_compare->add_option("restored_a", compare.a)->required();
  c_compare->add_option("restored_b", compare.b)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (c_corpus->parsed()) return run_corpus(corpus);
    if (c_manifest->parsed()) return run_manifest(manifest);
    if (c_synth->parsed()) return run_synth(synth);
    if (c_init->parsed()) return run_init_config(init_config);
    if (c_train->parsed()) return run_train(train);
    if (c_eval->parsed()) return run_eval(eval);
    if (c_score->parsed()) return run_score(score);
    if (c_compare->parsed()) return run_compare(compare);
  } catch (const ckdn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ckdn::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ckdn::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
