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

#pragma once

// Synthesized (pristine, degraded, restored, pseudo-MOS) corpora.
//
// On-disk layout of a dataset directory:
//
//   dataset.json   metadata: manifest echo, manifest/index hashes, codec,
//                  pseudo-MOS formula, toolkit version
//   index.tsv      one row per sample, tab separated, with header
//                  sample_id content_id degradation_id restorer_id split mos
//                  psnr pristine degraded restored
//   images/        8-bit RGB PNG files named by the first 24 hex digits of
//                  the SHA-256 of their bytes
//
// Every restorer is applied to every (content, degradation) cell. A sample
// is "train" when both its content and its restorer are in the training
// partitions, "val" when both are in the validation partitions, and "none"
// otherwise, so validation sees unseen contents and unseen restorers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ckdn/degradation.hpp"
#include "ckdn/error.hpp"
#include "ckdn/hash.hpp"
#include "ckdn/image.hpp"
#include "ckdn/restoration.hpp"
#include "json.hpp"

namespace ckdn {

using json = nlohmann::json;

/// Pseudo-MOS placement on an Elo-like scale:
///   mos = mu + M * (min(psnr, ceiling_db) - pivot_db) / span_db
/// A restoration `span_db` dB better than another is M points ahead.
struct MosScale {
  double mu = 1500.0;
  double M = 400.0;
  double pivot_db = 30.0;
  double span_db = 10.0;
  double ceiling_db = 60.0;

  std::string formula() const {
    std::ostringstream s;
    s << "mos = " << mu << " + " << M << " * (min(psnr_db, " << ceiling_db << ") - " << pivot_db << ") / "
      << span_db;
    return s.str();
  }

  void validate() const {
    if (!(M > 0) || !(span_db > 0) || !std::isfinite(mu) || !std::isfinite(ceiling_db)) {
      throw ConfigError("mos_scale: M and span_db must be positive, mu and ceiling_db finite");
    }
  }
};

inline double pseudo_mos_from_psnr(double psnr_db, const MosScale& scale) {
  const double p = std::min(psnr_db, scale.ceiling_db);
  return scale.mu + scale.M * (p - scale.pivot_db) / scale.span_db;
}

/// PSNR-monotone pseudo opinion score of `restored` against `pristine`.
inline double pseudo_mos(const Image& pristine, const Image& restored, const MosScale& scale) {
  return pseudo_mos_from_psnr(psnr(pristine, restored), scale);
}

struct DatasetManifest {
  int format_version = 1;
  std::filesystem::path corpus_dir;
  std::size_t patch_size = 96;
  std::size_t n_contents = 1;
  std::vector<DegradationSpec> degradations;
  std::vector<RestorerSpec> restorers;
  double content_train = 0.875;
  double content_val = 0.125;
  std::vector<std::string> restorer_train;
  std::vector<std::string> restorer_val;
  std::uint64_t global_seed = 0;
  MosScale mos_scale;
  bool standard_menu = false;

  const RestorerSpec& restorer(const std::string& id) const {
    for (const auto& r : restorers)
      if (r.id == id) return r;
    throw ConfigError("manifest: unknown restorer id '" + id + "'");
  }

  void validate() const {
    if (format_version != 1) throw ConfigError("manifest: unsupported format_version " + std::to_string(format_version));
    if (n_contents == 0) throw ConfigError("manifest: n_contents must be >= 1");
    if (patch_size == 0 || patch_size % 4 != 0) throw ConfigError("manifest: patch_size must be a positive multiple of 4");
    if (degradations.empty()) throw ConfigError("manifest: no degradations");
    if (restorers.empty()) throw ConfigError("manifest: no restorers");
    std::set<std::string> deg_ids;
    for (const auto& d : degradations) {
      d.validate(standard_menu);
      if (d.kind == DegradationKind::downsample && patch_size % static_cast<std::size_t>(d.strength) != 0) {
        throw ConfigError("manifest: patch_size not divisible by downsample factor " + d.id());
      }
      if (!deg_ids.insert(d.id()).second) throw ConfigError("manifest: duplicate degradation " + d.id());
    }
    std::set<std::string> ids;
    for (const auto& r : restorers) {
      if (r.id.empty() || r.id.find_first_of("\t\n ") != std::string::npos) {
        throw ConfigError("manifest: restorer ids must be non-empty without whitespace");
      }
      if (!ids.insert(r.id).second) throw ConfigError("manifest: duplicate restorer id " + r.id);
    }
    if (content_train < 0 || content_val < 0 || content_train + content_val > 1.0 + 1e-9) {
      throw ConfigError("manifest: content_split fractions must be >= 0 and sum to <= 1");
    }
    std::set<std::string> train_set;
    for (const auto& id : restorer_train) {
      restorer(id);
      train_set.insert(id);
    }
    for (const auto& id : restorer_val) {
      restorer(id);
      if (train_set.count(id)) throw ConfigError("manifest: restorer '" + id + "' is in both train and val splits");
    }
    mos_scale.validate();
  }
};

inline void to_json(json& j, const DegradationSpec& d) {
  j = json{{"kind", to_string(d.kind)}, {"strength", d.strength}, {"seed", d.seed}};
}

inline void from_json(const json& j, DegradationSpec& d) {
  d.kind = degradation_kind_from_string(j.at("kind").get<std::string>());
  d.strength = j.at("strength").get<double>();
  d.seed = j.value("seed", std::uint64_t{0});
}

inline void to_json(json& j, const RestorerSpec& r) {
  j = json{{"id", r.id}, {"kind", to_string(r.kind)}, {"params", r.params}};
}

inline void from_json(const json& j, RestorerSpec& r) {
  r.id = j.at("id").get<std::string>();
  r.kind = restorer_kind_from_string(j.at("kind").get<std::string>());
  r.params = j.value("params", std::vector<double>{});
}

inline void to_json(json& j, const MosScale& m) {
  j = json{{"mu", m.mu}, {"M", m.M}, {"pivot_db", m.pivot_db}, {"span_db", m.span_db}, {"ceiling_db", m.ceiling_db}};
}

inline void from_json(const json& j, MosScale& m) {
  MosScale d;
  m.mu = j.value("mu", d.mu);
  m.M = j.value("M", d.M);
  m.pivot_db = j.value("pivot_db", d.pivot_db);
  m.span_db = j.value("span_db", d.span_db);
  m.ceiling_db = j.value("ceiling_db", d.ceiling_db);
}

inline void to_json(json& j, const DatasetManifest& m) {
  j = json{{"format_version", m.format_version},
           {"corpus_dir", m.corpus_dir.generic_string()},
           {"patch_size", m.patch_size},
           {"n_contents", m.n_contents},
           {"degradations", m.degradations},
           {"restorers", m.restorers},
           {"content_split", {{"train", m.content_train}, {"val", m.content_val}}},
           {"restorer_split", {{"train", m.restorer_train}, {"val", m.restorer_val}}},
           {"global_seed", m.global_seed},
           {"mos_scale", m.mos_scale},
           {"standard_menu", m.standard_menu}};
}

inline void from_json(const json& j, DatasetManifest& m) {
  m.format_version = j.value("format_version", 1);
  m.corpus_dir = j.at("corpus_dir").get<std::string>();
  m.patch_size = j.at("patch_size").get<std::size_t>();
  m.n_contents = j.at("n_contents").get<std::size_t>();
  m.degradations = j.at("degradations").get<std::vector<DegradationSpec>>();
  m.restorers = j.at("restorers").get<std::vector<RestorerSpec>>();
  const auto& cs = j.at("content_split");
  m.content_train = cs.at("train").get<double>();
  m.content_val = cs.at("val").get<double>();
  const auto& rs = j.at("restorer_split");
  m.restorer_train = rs.at("train").get<std::vector<std::string>>();
  m.restorer_val = rs.at("val").get<std::vector<std::string>>();
  m.global_seed = j.value("global_seed", std::uint64_t{0});
  m.mos_scale = j.value("mos_scale", MosScale{});
  m.standard_menu = j.value("standard_menu", false);
}

/// Parses a manifest file; relative corpus paths resolve against the
/// manifest's directory.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    m = json::parse(in).get<DatasetManifest>();
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  if (m.corpus_dir.is_relative()) m.corpus_dir = path.parent_path() / m.corpus_dir;
  m.validate();
  return m;
}

/// Restorer menu used by the bundled presets: seven classical restorers,
/// four for training and three held out for validation.
inline std::vector<RestorerSpec> preset_restorers() {
  return {{"identity", RestorerKind::identity, {}},
          {"gauss_s1.0", RestorerKind::gaussian_denoise, {1.0}},
          {"median_r1", RestorerKind::median_denoise, {1}},
          {"sharpen_s1.0_a0.8", RestorerKind::sharpen_up, {1.0, 0.8}},
          {"bicubic_f2", RestorerKind::bicubic_up, {2}},
          {"box_r1", RestorerKind::box_blur_up, {1}},
          {"inject_s1.0_n6", RestorerKind::noise_injecting, {1.0, 6.0}}};
}

/// Desk-scale preset: 96x96 patches, the seven reference degradations, seven
/// restorers with a 4/3 restorer split and a 150/25 content split.
inline DatasetManifest desk_manifest(const std::filesystem::path& corpus_dir, std::size_t n_contents = 175,
                                     std::uint64_t seed = 2021) {
  DatasetManifest m;
  m.corpus_dir = corpus_dir;
  m.patch_size = 96;
  m.n_contents = n_contents;
  m.degradations = reference_degradations();
  m.restorers = preset_restorers();
  m.content_train = 150.0 / 175.0;
  m.content_val = 25.0 / 175.0;
  m.restorer_train = {"identity", "gauss_s1.0", "median_r1", "sharpen_s1.0_a0.8"};
  m.restorer_val = {"bicubic_f2", "box_r1", "inject_s1.0_n6"};
  m.global_seed = seed;
  m.standard_menu = true;
  return m;
}

enum class Split { train, val, none };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::none: return "none";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "none") return Split::none;
  throw DataError("unknown split '" + s + "'");
}

struct SampleRecord {
  std::string sample_id, content_id, degradation_id, restorer_id;
  Split split = Split::none;
  double mos = 0, psnr = 0;
  std::string pristine, degraded, restored;  // file names under images/
};

struct BuildResult {
  std::size_t n_samples = 0;
  std::string index_hash;
  bool reused = false;  // an identical dataset already existed
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

/// Seeded Fisher-Yates permutation of 0..n-1 (no reliance on library
/// distribution internals).
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

inline std::string write_image(const std::filesystem::path& images_dir, const Image& img) {
  const auto bytes = encode_png(img);
  const std::string name = sha256_hex(bytes).substr(0, 24) + ".png";
  const auto path = images_dir / name;
  if (!std::filesystem::exists(path)) write_file_bytes(path, bytes);
  return name;
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

}  // namespace detail

inline std::string manifest_hash(const DatasetManifest& m) { return sha256_hex(json(m).dump()); }

/// Synthesizes every sample of `manifest` into `out_dir`. Rebuilding an
/// identical manifest over an unchanged directory is a no-op.
inline BuildResult build_dataset(const DatasetManifest& manifest, const std::filesystem::path& out_dir) {
  manifest.validate();
  const std::string mhash = manifest_hash(manifest);
  const auto meta_path = out_dir / "dataset.json";
  const auto index_path = out_dir / "index.tsv";
  if (std::filesystem::exists(meta_path) && std::filesystem::exists(index_path)) {
    try {
      const json meta = json::parse(detail::read_text(meta_path));
      const std::string index_text = detail::read_text(index_path);
      if (meta.value("manifest_hash", "") == mhash && meta.value("index_hash", "") == sha256_hex(index_text)) {
        return {meta.at("n_samples").get<std::size_t>(), meta.at("index_hash").get<std::string>(), true};
      }
    } catch (const json::exception&) {
      // fall through and rebuild
    }
  }

  const auto files = detail::list_corpus(manifest.corpus_dir);
  if (files.size() < manifest.n_contents) {
    throw DataError("corpus " + manifest.corpus_dir.string() + " has " + std::to_string(files.size()) +
                    " images, manifest needs " + std::to_string(manifest.n_contents));
  }

  const std::size_t n = manifest.n_contents;
  const auto perm = detail::permutation(n, detail::mix_seed(manifest.global_seed, 1));
  const auto n_train = static_cast<std::size_t>(std::llround(manifest.content_train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(manifest.content_val * static_cast<double>(n))));
  std::vector<Split> content_split(n, Split::none);
  for (std::size_t k = 0; k < n; ++k) {
    if (k < n_train) content_split[perm[k]] = Split::train;
    else if (k < n_train + n_val) content_split[perm[k]] = Split::val;
  }
  auto restorer_split = [&](const std::string& id) {
    if (std::find(manifest.restorer_train.begin(), manifest.restorer_train.end(), id) != manifest.restorer_train.end())
      return Split::train;
    if (std::find(manifest.restorer_val.begin(), manifest.restorer_val.end(), id) != manifest.restorer_val.end())
      return Split::val;
    return Split::none;
  };

  const auto images_dir = out_dir / "images";
  std::filesystem::create_directories(images_dir);
  std::ostringstream index;
  index << "sample_id\tcontent_id\tdegradation_id\trestorer_id\tsplit\tmos\tpsnr\tpristine\tdegraded\trestored\n";
  std::size_t count = 0;
  std::vector<std::string> content_ids;
  for (std::size_t c = 0; c < n; ++c) {
    Image source = load_image(files[c]);
    if (source.height() < manifest.patch_size || source.width() < manifest.patch_size) {
      throw DataError("corpus image " + files[c].string() + " is smaller than patch_size");
    }
    const Image pristine = quantize8(center_crop(source, manifest.patch_size));
    const std::string content_id = files[c].stem().string();
    if (std::find(content_ids.begin(), content_ids.end(), content_id) != content_ids.end()) {
      throw DataError("corpus has two images with content id '" + content_id + "'");
    }
    content_ids.push_back(content_id);
    const std::string pristine_file = detail::write_image(images_dir, pristine);
    for (std::size_t d = 0; d < manifest.degradations.size(); ++d) {
      const auto& dspec = manifest.degradations[d];
      const Image degraded = quantize8(degrade(pristine, dspec, detail::mix_seed(manifest.global_seed, c)));
      const std::string degraded_file = detail::write_image(images_dir, degraded);
      for (std::size_t r = 0; r < manifest.restorers.size(); ++r) {
        const auto& rspec = manifest.restorers[r];
        const std::uint64_t rseed = detail::mix_seed(detail::mix_seed(manifest.global_seed, c), 1000 + d * 64 + r);
        const Image restored = quantize8(restore(degraded, rspec, rseed));
        const double p = psnr(pristine, restored);
        const double mos = pseudo_mos_from_psnr(p, manifest.mos_scale);
        Split split = Split::none;
        const Split rs = restorer_split(rspec.id);
        if (content_split[c] == rs) split = rs;
        char sid[32];
        std::snprintf(sid, sizeof(sid), "s%06zu", count++);
        index << sid << '\t' << content_id << '\t' << dspec.id() << '\t' << rspec.id << '\t' << to_string(split) << '\t'
              << detail::format_double(mos) << '\t' << detail::format_double(std::min(p, 999.0)) << '\t'
              << pristine_file << '\t' << degraded_file << '\t' << detail::write_image(images_dir, restored) << '\n';
      }
    }
  }
  const std::string index_text = index.str();
  detail::write_text(index_path, index_text);
  const std::string ihash = sha256_hex(index_text);
  json meta = {{"format_version", 1},
               {"toolkit_version", std::string(kToolkitVersion)},
               {"manifest", manifest},
               {"manifest_hash", mhash},
               {"index_hash", ihash},
               {"n_samples", count},
               {"contents", content_ids},
               {"jpeg_codec", jpeg_codec_identity()},
               {"mos_formula", manifest.mos_scale.formula()}};
  detail::write_text(out_dir / "manifest.json", json(manifest).dump(2) + "\n");
  detail::write_text(meta_path, meta.dump(2) + "\n");
  return {count, ihash, false};
}

/// A built dataset with an in-memory image cache.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& dir) {
    Dataset ds;
    ds.root_ = dir;
    json meta;
    try {
      meta = json::parse(detail::read_text(dir / "dataset.json"));
      ds.manifest_ = meta.at("manifest").get<DatasetManifest>();
      ds.contents_ = meta.at("contents").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw DataError("dataset " + dir.string() + ": bad dataset.json: " + e.what());
    }
    const std::string text = detail::read_text(dir / "index.tsv");
    ds.index_hash_ = sha256_hex(text);
    if (meta.value("index_hash", "") != ds.index_hash_) throw DataError("dataset " + dir.string() + ": index hash mismatch");
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream fields(line);
      SampleRecord r;
      std::string split, mos, p;
      std::getline(fields, r.sample_id, '\t');
      std::getline(fields, r.content_id, '\t');
      std::getline(fields, r.degradation_id, '\t');
      std::getline(fields, r.restorer_id, '\t');
      std::getline(fields, split, '\t');
      std::getline(fields, mos, '\t');
      std::getline(fields, p, '\t');
      std::getline(fields, r.pristine, '\t');
      std::getline(fields, r.degraded, '\t');
      std::getline(fields, r.restored, '\t');
      if (r.restored.empty()) throw DataError("dataset " + dir.string() + ": malformed index row: " + line);
      r.split = split_from_string(split);
      r.mos = std::stod(mos);
      r.psnr = std::stod(p);
      ds.records_.push_back(std::move(r));
    }
    return ds;
  }

  const std::filesystem::path& root() const { return root_; }
  const DatasetManifest& manifest() const { return manifest_; }
  const std::string& index_hash() const { return index_hash_; }
  const std::vector<SampleRecord>& records() const { return records_; }
  const SampleRecord& record(std::size_t i) const { return records_.at(i); }

  /// Position of a content in corpus order; seeds its degradations.
  std::size_t content_index(const std::string& content_id) const {
    const auto it = std::find(contents_.begin(), contents_.end(), content_id);
    if (it == contents_.end()) throw DataError("unknown content id '" + content_id + "'");
    return static_cast<std::size_t>(it - contents_.begin());
  }

  /// Seed offset used for the degradations of content `c`.
  std::uint64_t degradation_seed(std::size_t c) const { return detail::mix_seed(manifest_.global_seed, c); }

  std::vector<std::size_t> split_indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records_.size(); ++i)
      if (records_[i].split == s) out.push_back(i);
    return out;
  }

  /// Decoded image by file name; decoded once and cached.
  const Image& image(const std::string& file) const {
    auto it = cache_.find(file);
    if (it == cache_.end()) it = cache_.emplace(file, load_image(root_ / "images" / file)).first;
    return it->second;
  }

  void clear_cache() const { cache_.clear(); }

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
  std::string index_hash_;
  std::vector<std::string> contents_;
  std::vector<SampleRecord> records_;
  mutable std::unordered_map<std::string, Image> cache_;
};

/// All unordered pairs of records in `split` that share a (content,
/// degradation) cell, grouped by cell.
inline std::vector<std::vector<std::size_t>> pair_cells(const Dataset& ds, Split split) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> cells;
  for (std::size_t i : ds.split_indices(split)) {
    const auto& r = ds.record(i);
    cells[{r.content_id, r.degradation_id}].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  for (auto& [key, members] : cells)
    if (members.size() >= 2) out.push_back(std::move(members));
  return out;
}

/// Draws `n_pairs` ordered pairs of restorations of the same content and
/// degradation: a cell uniformly, then two distinct members uniformly.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(const Dataset& ds, Split split, std::size_t n_pairs,
                                                                     std::uint64_t seed) {
  const auto cells = pair_cells(ds, split);
  if (cells.empty()) throw DataError("sample_pairs: no (content, degradation) cell with two or more restorations");
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const auto& cell = cells[static_cast<std::size_t>(rng() % cells.size())];
    const std::size_t a = static_cast<std::size_t>(rng() % cell.size());
    std::size_t b = static_cast<std::size_t>(rng() % (cell.size() - 1));
    if (b >= a) ++b;
    out.emplace_back(cell[a], cell[b]);
  }
  return out;
}

}  // namespace ckdn
