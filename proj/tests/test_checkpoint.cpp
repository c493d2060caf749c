// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tinynlp/checkpoint.hpp"
#include "tinynlp/encoder.hpp"
#include "tinynlp/vocab.hpp"

using namespace tinynlp;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

Vocabulary demo_vocab() {
  std::vector<std::string> corpus{"aa bb cc dd", "aa bb", "cc dd ee"};
  return train_subword_vocab(corpus, 48);
}

ModelCheckpoint demo_checkpoint() {
  Vocabulary v = demo_vocab();
  EncoderConfig cfg = EncoderConfig::desk(v.size(), 12);
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn_inner = 16;
  RngStream rng(3);
  EncoderParams params = EncoderParams::init(cfg, rng);
  ModelCheckpoint ckpt = make_encoder_checkpoint(params, cfg, v.fingerprint());
  ckpt.heads["irony"] = {2, {"non-ironic", "ironic"}};
  return ckpt;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  ModelCheckpoint ckpt = demo_checkpoint();
  auto path = temp_path("tinynlp_ckpt_roundtrip.bin");
  save_checkpoint(ckpt, path);
  ModelCheckpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.model_kind, ckpt.model_kind);
  EXPECT_EQ(loaded.config, ckpt.config);
  EXPECT_EQ(loaded.vocab_fingerprint, ckpt.vocab_fingerprint);
  EXPECT_EQ(loaded.provenance, ckpt.provenance);
  ASSERT_EQ(loaded.params.size(), ckpt.params.size());
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    EXPECT_EQ(loaded.params[i].name, ckpt.params[i].name);
    EXPECT_EQ(loaded.params[i].shape, ckpt.params[i].shape);
    EXPECT_EQ(loaded.params[i].values, ckpt.params[i].values);  // bitwise
  }
  ASSERT_EQ(loaded.heads.size(), 1u);
  EXPECT_EQ(loaded.heads.at("irony").num_classes, 2);
  std::filesystem::remove(path);
}

TEST(Checkpoint, OptimizerStateRoundTrips) {
  ModelCheckpoint ckpt = demo_checkpoint();
  for (const auto& p : ckpt.params) {
    OptimizerSlot slot;
    slot.step = 17;
    slot.first_moment.assign(p.values.size(), 0.25);
    slot.second_moment.assign(p.values.size(), 0.5);
    ckpt.optimizer.push_back(std::move(slot));
  }
  auto path = temp_path("tinynlp_ckpt_opt.bin");
  save_checkpoint(ckpt, path);
  ModelCheckpoint loaded = load_checkpoint(path);
  ASSERT_EQ(loaded.optimizer.size(), ckpt.optimizer.size());
  EXPECT_EQ(loaded.optimizer[2].step, 17);
  EXPECT_EQ(loaded.optimizer[2].first_moment, ckpt.optimizer[2].first_moment);
  EXPECT_EQ(loaded.optimizer[2].second_moment, ckpt.optimizer[2].second_moment);
  std::filesystem::remove(path);
}

TEST(Checkpoint, SingleBitCorruptionDetected) {
  ModelCheckpoint ckpt = demo_checkpoint();
  auto path = temp_path("tinynlp_ckpt_corrupt.bin");
  save_checkpoint(ckpt, path);
  std::string blob = read_file(path);
  blob[blob.size() / 2] = static_cast<char>(blob[blob.size() / 2] ^ 0x10);  // flip one bit
  write_file_atomic(path, blob);
  try {
    load_checkpoint(path);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::corrupted);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, VersionMismatchDetected) {
  ModelCheckpoint ckpt = demo_checkpoint();
  auto path = temp_path("tinynlp_ckpt_version.bin");
  save_checkpoint(ckpt, path);
  std::string blob = read_file(path);
  blob[4] = 9;  // bump the little-endian version field
  write_file_atomic(path, blob);
  try {
    load_checkpoint(path);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::version_mismatch);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncationDetected) {
  ModelCheckpoint ckpt = demo_checkpoint();
  auto path = temp_path("tinynlp_ckpt_trunc.bin");
  save_checkpoint(ckpt, path);
  std::string blob = read_file(path);
  write_file_atomic(path, blob.substr(0, blob.size() / 3));
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, WrongVocabularyFingerprintRejected) {
  ModelCheckpoint ckpt = demo_checkpoint();
  std::vector<std::string> other_corpus{"zz yy xx"};
  Vocabulary other = train_subword_vocab(other_corpus, 32);
  try {
    require_fingerprint(ckpt, other);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::fingerprint_mismatch);
  }
  require_fingerprint(ckpt, demo_vocab());  // matching vocab passes
}

TEST(Checkpoint, ConfigMismatchListsEveryDifferingField) {
  nlohmann::json a = {{"layers", 2}, {"hidden", 16}, {"heads", 2}};
  nlohmann::json b = {{"layers", 4}, {"hidden", 16}, {"heads", 4}};
  try {
    require_matching_config(a, b);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::config_mismatch);
    std::string msg = e.what();
    EXPECT_NE(msg.find("layers"), std::string::npos);
    EXPECT_NE(msg.find("heads"), std::string::npos);
    EXPECT_EQ(msg.find("hidden"), std::string::npos);
  }
}

TEST(AtomicWrite, FailureLeavesNoTarget) {
  auto path = temp_path("tinynlp_never_written.txt");
  std::filesystem::remove(path);
  // Simulate a writer crash: the temp file exists briefly, the target never.
  struct Thrower {
    operator std::string_view() const { throw std::runtime_error("boom"); }
  };
  try {
    write_file_atomic(path, Thrower());
    FAIL() << "expected exception";
  } catch (const std::runtime_error&) {
  }
  EXPECT_FALSE(std::filesystem::exists(path));
}
