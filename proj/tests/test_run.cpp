// SPDX-License-Identifier: Apache-2.0
//
// End-to-end manifest runs over generated synthetic data.

#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "tinynlp/manifest.hpp"
#include "tinynlp/synthetic.hpp"

using namespace tinynlp;
namespace fs = std::filesystem;

namespace {

class RunFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / "tinynlp_run_tests";
    fs::remove_all(root_);
    SyntheticOptions opt;
    opt.seed = 7;
    opt.examples_per_task = 60;
    opt.corpus_lines = 80;
    generate_synthetic(root_ / "data", opt);
  }

  void TearDown() override { fs::remove_all(root_); }

  nlohmann::json tiny_gru_manifest() {
    return nlohmann::json{
        {"experiment", "t-gru"},
        {"model", "gru"},
        {"seed", 11},
        {"output_dir", "out-gru"},
        {"vocab", {{"kind", "word"}, {"max_size", 500}}},
        {"tasks", nlohmann::json::array(
                      {{{"name", "irony"},
                        {"labels", {"non-ironic", "ironic"}},
                        {"train", "data/tasks/irony.tsv"},
                        {"target", true}}})},
        {"gru",
         {{"hidden", 12}, {"embedding_dim", 8}, {"max_len", 12}, {"epochs", 2}, {"batch", 8}}}};
  }

  nlohmann::json tiny_mt_manifest() {
    return nlohmann::json{
        {"experiment", "t-mt"},
        {"model", "encoder-mt"},
        {"seed", 13},
        {"output_dir", "out-mt"},
        {"vocab",
         {{"kind", "subword"},
          {"train_from", {"data/corpus-generic.txt", "data/corpus-indomain.txt"}},
          {"target_size", 340}}},
        {"tasks", nlohmann::json::array(
                      {{{"name", "irony"},
                        {"labels", {"non-ironic", "ironic"}},
                        {"train", "data/tasks/irony.tsv"},
                        {"target", true}},
                       {{"name", "sentiment"},
                        {"labels", {"negative", "positive"}},
                        {"train", "data/tasks/sentiment.tsv"}}})},
        {"encoder",
         {{"preset", "desk"}, {"layers", 1}, {"hidden", 16}, {"heads", 2}, {"ffn_inner", 32},
          {"max_len", 12}}},
        {"pretrain",
         {{"generic_corpus", "data/corpus-generic.txt"},
          {"generic_config", {{"epochs", 1}, {"batch", 16}, {"lr", 1e-3}, {"min_doc_words", 21}}},
          {"indomain_corpus", "data/corpus-indomain.txt"},
          {"config", {{"epochs", 1}, {"batch", 16}, {"lr", 1e-3}, {"min_doc_words", 21}}}}},
        {"finetune", {{"max_len", 12}, {"batch", 8}, {"lr", 1e-3}, {"epochs", 2}}}};
  }

  fs::path root_;
};

}  // namespace

TEST_F(RunFixture, GruManifestProducesAllArtifacts) {
  RunManifest m = parse_manifest(tiny_gru_manifest(), root_);
  run(m);
  const fs::path out = root_ / "out-gru";
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "final.ckpt"));
  EXPECT_TRUE(fs::exists(out / "metrics" / "train.tsv"));
  EXPECT_TRUE(fs::exists(out / "predictions" / "irony-dev.tsv"));
  EXPECT_TRUE(fs::exists(out / "vocab-word.txt"));
  auto summary = nlohmann::json::parse(read_file(out / "run-summary.json"));
  EXPECT_EQ(summary.at("status"), "ok");
  EXPECT_FALSE(summary.at("input_hashes").empty());
  EXPECT_FALSE(fs::exists(out / ".lock"));
}

TEST_F(RunFixture, EncoderMtManifestRunsAllPhases) {
  RunManifest m = parse_manifest(tiny_mt_manifest(), root_);
  run(m);
  const fs::path out = root_ / "out-mt";
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "pretrain-generic.ckpt"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "pretrain-indomain.ckpt"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "final.ckpt"));
  EXPECT_TRUE(fs::exists(out / "metrics" / "pretrain-generic-loss.tsv"));
  EXPECT_TRUE(fs::exists(out / "metrics" / "finetune.tsv"));
  EXPECT_TRUE(fs::exists(out / "predictions" / "irony-dev.tsv"));
  auto summary = nlohmann::json::parse(read_file(out / "run-summary.json"));
  ASSERT_EQ(summary.at("status"), "ok");
  std::vector<std::string> phases;
  for (const auto& p : summary.at("phases")) phases.push_back(p.at("name"));
  EXPECT_EQ(phases, (std::vector<std::string>{"ingest", "pretrain-generic",
                                              "pretrain-indomain", "finetune", "predict"}));
  // The in-domain phase resumed from the generic phase's weights.
  ModelCheckpoint indomain = load_checkpoint(out / "checkpoints" / "pretrain-indomain.ckpt");
  EXPECT_EQ(indomain.provenance, "pretrained-indomain");
}

TEST_F(RunFixture, RerunWithSameSeedIsByteIdentical) {
  RunManifest m = parse_manifest(tiny_gru_manifest(), root_);
  run(m, root_ / "out-a");
  run(m, root_ / "out-b");
  for (const char* rel : {"metrics/train.tsv", "predictions/irony-dev.tsv",
                          "run-summary.json"}) {
    EXPECT_EQ(read_file(root_ / "out-a" / rel), read_file(root_ / "out-b" / rel)) << rel;
  }
}

TEST_F(RunFixture, MissingInputFailsValidationBeforeAnyPhase) {
  nlohmann::json j = tiny_gru_manifest();
  j["tasks"][0]["train"] = "data/tasks/absent.tsv";
  RunManifest m = parse_manifest(j, root_);
  EXPECT_THROW(run(m), ConfigError);
  EXPECT_FALSE(fs::exists(root_ / "out-gru" / "run-summary.json"));
}

TEST_F(RunFixture, LockedOutputDirectoryRejected) {
  RunManifest m = parse_manifest(tiny_gru_manifest(), root_);
  fs::create_directories(root_ / "out-gru" / ".lock");
  EXPECT_THROW(run(m), ConfigError);
}

TEST_F(RunFixture, FailedPhaseRecordsFailurePointAndKeepsArtifacts) {
  nlohmann::json j = tiny_mt_manifest();
  // Force the finetune phase to fail: batch of zero is invalid.
  j["finetune"]["batch"] = 0;
  RunManifest m = parse_manifest(j, root_);
  EXPECT_THROW(run(m), ConfigError);
  const fs::path out = root_ / "out-mt";
  auto summary = nlohmann::json::parse(read_file(out / "run-summary.json"));
  EXPECT_EQ(summary.at("status"), "failed");
  EXPECT_EQ(summary.at("failed_phase"), "finetune");
  // Earlier phases' artifacts were kept.
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "pretrain-indomain.ckpt"));
}

TEST_F(RunFixture, UseAllTrainingDataFoldsDevIntoTrain) {
  RunManifest m = parse_manifest(tiny_gru_manifest(), root_);
  run(m, root_ / "out-all", /*use_all_training_data_flag=*/true);
  auto summary = nlohmann::json::parse(read_file(root_ / "out-all" / "run-summary.json"));
  EXPECT_EQ(summary.at("use_all_training_data"), true);
  EXPECT_EQ(summary.at("status"), "ok");
}

TEST_F(RunFixture, ManifestRequiresSeed) {
  nlohmann::json j = tiny_gru_manifest();
  j.erase("seed");
  RunManifest m = parse_manifest(j, root_);
  EXPECT_THROW(run(m), ConfigError);
}
