// SPDX-License-Identifier: Apache-2.0
//
// Versioned model serialization: a JSON header (config snapshot, vocabulary
// fingerprint, provenance, head inventory, parameter manifest) followed by
// a CRC-checksummed block of raw little-endian doubles. Parameters and
// optional optimizer moments round-trip bitwise.
//
// Layout:  "TNCK" | u32 version | u64 header_len | header JSON |
//          payload doubles | u32 crc32(payload)

#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinynlp/common.hpp"
#include "tinynlp/optim.hpp"
#include "tinynlp/tensor.hpp"
#include "tinynlp/vocab.hpp"

namespace tinynlp {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'T', 'N', 'C', 'K'};

struct NamedParam {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

struct HeadInfo {
  int num_classes = 0;
  std::vector<std::string> labels;  // index order defines the class ids
};

/// Per-parameter Adam moments; present only when a run wants bitwise
/// resumability.
struct OptimizerSlot {
  std::int64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

struct ModelCheckpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::string model_kind;        // "gru" | "encoder"
  nlohmann::json config;         // full config snapshot, optimizer constants included
  std::string vocab_kind;        // "word" | "subword"
  std::string vocab_fingerprint; // content hash of the vocabulary file
  std::string provenance = "scratch";  // scratch | pretrained-generic | pretrained-indomain
  std::map<std::string, HeadInfo> heads;
  std::vector<NamedParam> params;
  std::vector<OptimizerSlot> optimizer;  // empty or aligned with params
  std::uint64_t next_epoch = 0;          // resume cursor

  const NamedParam* find(const std::string& name) const {
    for (const auto& p : params) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  const NamedParam& require(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw CheckpointError(CheckpointError::Kind::corrupted,
                          "checkpoint is missing parameter '" + name + "'");
  }
};

inline void require_fingerprint(const ModelCheckpoint& ckpt, const Vocabulary& vocab) {
  if (ckpt.vocab_fingerprint != vocab.fingerprint()) {
    throw CheckpointError(CheckpointError::Kind::fingerprint_mismatch,
                          "vocabulary fingerprint " + vocab.fingerprint() +
                              " does not match checkpoint fingerprint " +
                              ckpt.vocab_fingerprint);
  }
}

/// Compares two config snapshots field by field and reports every
/// difference, not just the first.
inline void require_matching_config(const nlohmann::json& expected, const nlohmann::json& actual) {
  std::vector<std::string> diffs;
  for (auto it = expected.begin(); it != expected.end(); ++it) {
    if (!actual.contains(it.key())) {
      diffs.push_back(it.key() + ": missing");
    } else if (actual[it.key()] != it.value()) {
      diffs.push_back(it.key() + ": " + it.value().dump() + " vs " + actual[it.key()].dump());
    }
  }
  for (auto it = actual.begin(); it != actual.end(); ++it) {
    if (!expected.contains(it.key())) diffs.push_back(it.key() + ": unexpected");
  }
  if (!diffs.empty()) {
    std::string msg = "checkpoint config mismatch:";
    for (const auto& d : diffs) msg += " [" + d + "]";
    throw CheckpointError(CheckpointError::Kind::config_mismatch, msg);
  }
}

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["model_kind"] = ckpt.model_kind;
  header["config"] = ckpt.config;
  header["vocab_kind"] = ckpt.vocab_kind;
  header["vocab_fingerprint"] = ckpt.vocab_fingerprint;
  header["provenance"] = ckpt.provenance;
  header["next_epoch"] = ckpt.next_epoch;
  nlohmann::json heads = nlohmann::json::object();
  for (const auto& [name, info] : ckpt.heads) {
    heads[name] = {{"num_classes", info.num_classes}, {"labels", info.labels}};
  }
  header["heads"] = heads;

  std::vector<double> payload;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& p : ckpt.params) {
    manifest.push_back({{"name", p.name},
                        {"shape", p.shape},
                        {"offset", payload.size()},
                        {"count", p.values.size()}});
    payload.insert(payload.end(), p.values.begin(), p.values.end());
  }
  header["params"] = manifest;

  if (!ckpt.optimizer.empty()) {
    if (ckpt.optimizer.size() != ckpt.params.size()) {
      throw ContractError("optimizer slots must align with parameters");
    }
    nlohmann::json opt = nlohmann::json::array();
    for (std::size_t i = 0; i < ckpt.optimizer.size(); ++i) {
      const auto& o = ckpt.optimizer[i];
      opt.push_back({{"step", o.step}, {"offset", payload.size()}});
      payload.insert(payload.end(), o.first_moment.begin(), o.first_moment.end());
      payload.insert(payload.end(), o.second_moment.begin(), o.second_moment.end());
    }
    header["optimizer"] = opt;
  }

  const std::string header_s = header.dump();
  std::string blob;
  blob.reserve(4 + 4 + 8 + header_s.size() + payload.size() * 8 + 4);
  blob.append(kCheckpointMagic, 4);
  const std::uint32_t version = ckpt.format_version;
  blob.append(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t header_len = header_s.size();
  blob.append(reinterpret_cast<const char*>(&header_len), 8);
  blob.append(header_s);
  const char* payload_bytes = reinterpret_cast<const char*>(payload.data());
  const std::size_t payload_size = payload.size() * sizeof(double);
  blob.append(payload_bytes, payload_size);
  const std::uint32_t crc = crc32(payload_bytes, payload_size);
  blob.append(reinterpret_cast<const char*>(&crc), 4);
  write_file_atomic(path, blob);
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::string blob;
  try {
    blob = read_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(CheckpointError::Kind::io, e.what());
  }
  if (blob.size() < 16 || std::memcmp(blob.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "not a checkpoint file: " + path.string());
  }
  std::uint32_t version = 0;
  std::memcpy(&version, blob.data() + 4, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::version_mismatch,
                          "checkpoint format version " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointVersion));
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, blob.data() + 8, 8);
  if (blob.size() < 16 + header_len + 4) {
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint truncated: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::corrupted,
                          std::string("bad checkpoint header: ") + e.what());
  }

  const std::size_t payload_size = blob.size() - 16 - header_len - 4;
  if (payload_size % sizeof(double) != 0) {
    throw CheckpointError(CheckpointError::Kind::truncated, "payload not a whole double count");
  }
  const char* payload_bytes = blob.data() + 16 + header_len;
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, blob.data() + blob.size() - 4, 4);
  if (crc32(payload_bytes, payload_size) != stored_crc) {
    throw CheckpointError(CheckpointError::Kind::corrupted,
                          "checkpoint payload failed integrity check: " + path.string());
  }
  std::vector<double> payload(payload_size / sizeof(double));
  std::memcpy(payload.data(), payload_bytes, payload_size);

  ModelCheckpoint ckpt;
  ckpt.format_version = version;
  try {
    ckpt.model_kind = header.at("model_kind").get<std::string>();
    ckpt.config = header.at("config");
    ckpt.vocab_kind = header.at("vocab_kind").get<std::string>();
    ckpt.vocab_fingerprint = header.at("vocab_fingerprint").get<std::string>();
    ckpt.provenance = header.at("provenance").get<std::string>();
    ckpt.next_epoch = header.at("next_epoch").get<std::uint64_t>();
    for (auto it = header.at("heads").begin(); it != header.at("heads").end(); ++it) {
      HeadInfo info;
      info.num_classes = it.value().at("num_classes").get<int>();
      info.labels = it.value().at("labels").get<std::vector<std::string>>();
      ckpt.heads[it.key()] = std::move(info);
    }
    for (const auto& m : header.at("params")) {
      NamedParam p;
      p.name = m.at("name").get<std::string>();
      p.shape = m.at("shape").get<std::vector<int>>();
      const auto offset = m.at("offset").get<std::size_t>();
      const auto count = m.at("count").get<std::size_t>();
      if (offset + count > payload.size()) {
        throw CheckpointError(CheckpointError::Kind::truncated,
                              "parameter '" + p.name + "' extends past payload");
      }
      p.values.assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                      payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
      ckpt.params.push_back(std::move(p));
    }
    if (header.contains("optimizer")) {
      const auto& opt = header.at("optimizer");
      if (opt.size() != ckpt.params.size()) {
        throw CheckpointError(CheckpointError::Kind::corrupted,
                              "optimizer slots do not align with parameters");
      }
      for (std::size_t i = 0; i < opt.size(); ++i) {
        OptimizerSlot slot;
        slot.step = opt[i].at("step").get<std::int64_t>();
        const auto offset = opt[i].at("offset").get<std::size_t>();
        const std::size_t count = ckpt.params[i].values.size();
        if (offset + 2 * count > payload.size()) {
          throw CheckpointError(CheckpointError::Kind::truncated,
                                "optimizer state extends past payload");
        }
        slot.first_moment.assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                 payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
        slot.second_moment.assign(
            payload.begin() + static_cast<std::ptrdiff_t>(offset + count),
            payload.begin() + static_cast<std::ptrdiff_t>(offset + 2 * count));
        ckpt.optimizer.push_back(std::move(slot));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::corrupted,
                          std::string("bad checkpoint header field: ") + e.what());
  }
  return ckpt;
}

}  // namespace tinynlp
