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

// Checkpoint container, little-endian:
//
//   "CKDNCKPT"            8-byte magic
//   u32 format version    (1)
//   u64 header length, then that many bytes of UTF-8 JSON
//   12 float32 blocks:    params  dte, dte_teacher, qse, csp
//                         momentum dte, dte_teacher, qse, csp
//                         second moment dte, dte_teacher, qse, csp (empty
//                         unless the optimizer is Adam)
//                         each as u64 count followed by raw IEEE-754 values
//
// The header carries the model configuration, stage tag, run config hash,
// architecture hash, epoch/step counters, RNG state and metrics.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ckdn/config.hpp"
#include "ckdn/error.hpp"
#include "ckdn/hash.hpp"
#include "ckdn/model.hpp"
#include "json.hpp"

namespace ckdn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'C', 'K', 'D', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Stage { pretrained_qse, ckdn };

inline std::string to_string(Stage s) { return s == Stage::pretrained_qse ? "pretrained-qse" : "ckdn"; }

inline Stage stage_from_string(const std::string& s) {
  if (s == "pretrained-qse") return Stage::pretrained_qse;
  if (s == "ckdn") return Stage::ckdn;
  throw DataError("unknown checkpoint stage '" + s + "'");
}

struct Checkpoint {
  Stage stage = Stage::ckdn;
  CKDNParams<float> params;
  CKDNGrads<float> momentum;
  CKDNGrads<float> second_moment;
  std::string config_hash;
  std::size_t epoch = 0;  // completed epochs of `stage`
  std::size_t step = 0;   // optimizer steps taken in `stage`
  std::string rng_state;
  json metrics = json::object();
  json extra = json::object();

  json header() const {
    return json{{"toolkit_version", std::string(kToolkitVersion)},
                {"stage", to_string(stage)},
                {"model", params.config},
                {"architecture_hash", architecture_hash(params.config)},
                {"config_hash", config_hash},
                {"epoch", epoch},
                {"step", step},
                {"rng_state", rng_state},
                {"metrics", metrics},
                {"extra", extra}};
  }
};

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

inline void put_block(std::string& out, const std::vector<float>& v) {
  const std::uint64_t n = v.size();
  put_bytes(out, &n, sizeof(n));
  put_bytes(out, v.data(), v.size() * sizeof(float));
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  void get(void* p, std::size_t n) {
    if (pos + n > data.size()) throw DataError("checkpoint: truncated file");
    std::memcpy(p, data.data() + pos, n);
    pos += n;
  }

  std::vector<float> block(std::size_t expected, bool may_be_empty = false) {
    std::uint64_t n = 0;
    get(&n, sizeof(n));
    if (n != expected && !(may_be_empty && n == 0)) {
      throw DataError("checkpoint: parameter block size does not match the model configuration");
    }
    std::vector<float> v(n);
    get(v.data(), n * sizeof(float));
    return v;
  }
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out;
  out.append(kCheckpointMagic, 8);
  detail::put_bytes(out, &kCheckpointVersion, sizeof(kCheckpointVersion));
  const std::string header = ck.header().dump();
  const std::uint64_t len = header.size();
  detail::put_bytes(out, &len, sizeof(len));
  out += header;
  for (const auto* v : {&ck.params.dte, &ck.params.dte_teacher, &ck.params.qse, &ck.params.csp}) detail::put_block(out, *v);
  for (const auto* v : {&ck.momentum.dte, &ck.momentum.dte_teacher, &ck.momentum.qse, &ck.momentum.csp}) {
    detail::put_block(out, *v);
  }
  for (const auto* v : {&ck.second_moment.dte, &ck.second_moment.dte_teacher, &ck.second_moment.qse,
                        &ck.second_moment.csp}) {
    detail::put_block(out, *v);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& data) {
  detail::Reader in{data};
  char magic[8];
  in.get(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("checkpoint: bad magic (not a checkpoint file)");
  std::uint32_t version = 0;
  in.get(&version, sizeof(version));
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  std::uint64_t len = 0;
  in.get(&len, sizeof(len));
  if (len > data.size()) throw DataError("checkpoint: truncated header");
  std::string header_text(len, '\0');
  in.get(header_text.data(), len);
  Checkpoint ck;
  try {
    const json h = json::parse(header_text);
    ck.stage = stage_from_string(h.at("stage").get<std::string>());
    from_json(h.at("model"), ck.params.config);
    ck.config_hash = h.at("config_hash").get<std::string>();
    ck.epoch = h.at("epoch").get<std::size_t>();
    ck.step = h.at("step").get<std::size_t>();
    ck.rng_state = h.at("rng_state").get<std::string>();
    ck.metrics = h.value("metrics", json::object());
    ck.extra = h.value("extra", json::object());
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }
  ck.params.config.validate();
  const CKDNModel model(ck.params.config);
  const std::size_t ne = model.embedding().param_count(), ns = model.predictor().param_count();
  ck.params.dte = in.block(ne);
  ck.params.dte_teacher = in.block(ne);
  ck.params.qse = in.block(ne);
  ck.params.csp = in.block(ns);
  ck.momentum.dte = in.block(ne);
  ck.momentum.dte_teacher = in.block(ne);
  ck.momentum.qse = in.block(ne);
  ck.momentum.csp = in.block(ns);
  ck.second_moment.dte = in.block(ne, true);
  ck.second_moment.dte_teacher = in.block(ne, true);
  ck.second_moment.qse = in.block(ne, true);
  ck.second_moment.csp = in.block(ns, true);
  if (in.pos != data.size()) throw DataError("checkpoint: trailing bytes");
  return ck;
}

/// Writes through a temporary file and a rename so readers never observe a
/// partially written checkpoint.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(data);
}

/// SHA-256 over one parameter group's raw bytes.
inline std::string group_hash(const std::vector<float>& v) { return sha256_hex_of_values<float>(v); }

}  // namespace ckdn
