// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "tinynlp/masking.hpp"
#include "tinynlp/vocab.hpp"

using namespace tinynlp;

namespace {

Vocabulary tiny_subword_vocab() {
  std::vector<std::string> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back("tok" + std::to_string(i) + " fil" +
                                                std::to_string(i % 9));
  return train_subword_vocab(corpus, 160);
}

}  // namespace

TEST(MaskForMlm, TinyRateSelectsNothing) {
  Vocabulary v = tiny_subword_vocab();
  RngStream rng(1);
  std::vector<TokenSequence> batch{encode("tok1 tok2 tok3", v, 12)};
  MaskedBatch masked = mask_for_mlm(batch, v, 1e-12, rng);
  for (int t : masked.mlm_targets[0]) EXPECT_EQ(t, -1);
  EXPECT_EQ(masked.inputs[0].ids, batch[0].ids);
}

TEST(MaskForMlm, RateBoundsEnforced) {
  Vocabulary v = tiny_subword_vocab();
  RngStream rng(1);
  std::vector<TokenSequence> batch{encode("tok1", v, 8)};
  EXPECT_THROW(mask_for_mlm(batch, v, 0.0, rng), ConfigError);
  EXPECT_THROW(mask_for_mlm(batch, v, 1.0, rng), ConfigError);
}

TEST(MaskForMlm, SpecialPositionsNeverSelected) {
  Vocabulary v = tiny_subword_vocab();
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RngStream rng(seed);
    std::vector<TokenSequence> batch{encode("tok1 tok2", v, 10)};
    TokenSequence before = batch[0];
    MaskedBatch masked = mask_for_mlm(batch, v, 0.9, rng);
    const auto& seq = masked.inputs[0];
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      if (v.is_special(before.ids[i])) {
        EXPECT_EQ(seq.ids[i], before.ids[i]);
        EXPECT_EQ(masked.mlm_targets[0][i], -1);
      }
    }
  }
}

TEST(MaskForMlm, SelectionAndBranchFractionsConcentrate) {
  Vocabulary v = tiny_subword_vocab();
  RngStream rng(77);
  // One long synthetic sequence batch with 10,000 candidate positions.
  std::string text;
  for (int i = 0; i < 100; ++i) text += "tok" + std::to_string(i % 30) + " ";
  std::vector<TokenSequence> batch;
  // each sequence: [CLS] + 100 one-piece tokens + [SEP] in max_len 102
  for (int s = 0; s < 100; ++s) batch.push_back(encode(text, v, 102));
  std::size_t candidates = 0;
  for (const auto& seq : batch) {
    for (int id : seq.ids) candidates += !v.is_special(id);
  }
  ASSERT_GE(candidates, 9000u);

  MaskedBatch masked = mask_for_mlm(batch, v, 0.15, rng);
  std::size_t selected = 0, became_mask = 0;
  for (std::size_t s = 0; s < masked.inputs.size(); ++s) {
    for (std::size_t i = 0; i < masked.inputs[s].ids.size(); ++i) {
      if (masked.mlm_targets[s][i] == -1) continue;
      ++selected;
      became_mask += masked.inputs[s].ids[i] == v.mask_id();
    }
  }
  EXPECT_NEAR(static_cast<double>(selected) / static_cast<double>(candidates), 0.15, 0.01);
  EXPECT_NEAR(static_cast<double>(became_mask) / static_cast<double>(selected), 0.80, 0.02);
}

TEST(MaskForMlm, NeverTouchesMaskOrSegments) {
  Vocabulary v = tiny_subword_vocab();
  RngStream rng(9);
  std::vector<TokenSequence> batch{encode("tok1 tok2 tok3", v, 12, "tok4 tok5")};
  TokenSequence before = batch[0];
  MaskedBatch masked = mask_for_mlm(batch, v, 0.5, rng);
  EXPECT_EQ(masked.inputs[0].attention_mask, before.attention_mask);
  EXPECT_EQ(masked.inputs[0].segment_ids, before.segment_ids);
}

TEST(MaskForMlm, TargetsRecordOriginals) {
  Vocabulary v = tiny_subword_vocab();
  RngStream rng(42);
  std::vector<TokenSequence> batch{encode("tok1 tok2 tok3 tok4 tok5 tok6", v, 16)};
  TokenSequence before = batch[0];
  MaskedBatch masked = mask_for_mlm(batch, v, 0.6, rng);
  for (std::size_t i = 0; i < before.ids.size(); ++i) {
    const int target = masked.mlm_targets[0][i];
    if (target != -1) {
      EXPECT_EQ(target, before.ids[i]);
    } else {
      EXPECT_EQ(masked.inputs[0].ids[i], before.ids[i]);
    }
  }
}

TEST(NspPairs, SingleDocumentRejected) {
  RngStream rng(1);
  std::vector<std::vector<std::string>> docs{{"s1", "s2", "s3"}};
  EXPECT_THROW(make_nsp_pairs(docs, rng), DataError);
}

TEST(NspPairs, ShortDocumentRejected) {
  RngStream rng(1);
  std::vector<std::vector<std::string>> docs{{"s1", "s2"}, {"only"}};
  EXPECT_THROW(make_nsp_pairs(docs, rng), DataError);
}

TEST(NspPairs, PositiveFractionConcentratesAtHalf) {
  RngStream rng(123);
  std::vector<std::vector<std::string>> docs;
  for (int d = 0; d < 50; ++d) {
    std::vector<std::string> doc;
    for (int s = 0; s < 22; ++s) doc.push_back("d" + std::to_string(d) + "s" + std::to_string(s));
    docs.push_back(std::move(doc));
  }
  auto pairs = make_nsp_pairs(docs, rng);  // 50 * 21 = 1050 pairs
  ASSERT_GE(pairs.size(), 1000u);
  double positives = 0;
  for (const auto& p : pairs) positives += p.label;
  EXPECT_NEAR(positives / static_cast<double>(pairs.size()), 0.5, 0.03);
}

TEST(NspPairs, PositivesAreAdjacentNegativesCrossDocuments) {
  RngStream rng(7);
  std::vector<std::vector<std::string>> docs{
      {"a0", "a1", "a2", "a3"}, {"b0", "b1", "b2"}, {"c0", "c1"}};
  auto pairs = make_nsp_pairs(docs, rng);
  auto doc_of = [&](const std::string& s) { return s[0]; };
  for (const auto& p : pairs) {
    if (p.label == 1) {
      EXPECT_EQ(doc_of(p.first), doc_of(p.second));
      EXPECT_EQ(p.first[1] + 1, p.second[1]);  // adjacent indices
    } else {
      EXPECT_NE(doc_of(p.first), doc_of(p.second));
    }
  }
}
