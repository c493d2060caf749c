// SPDX-License-Identifier: Apache-2.0
//
// Masked-LM target selection and next-sentence pair construction.

#pragma once

#include <string>
#include <vector>

#include "tinynlp/common.hpp"
#include "tinynlp/vocab.hpp"

namespace tinynlp {

/// Encoded inputs with per-position MLM targets (-1 where the position was
/// not selected) and per-pair NSP labels.
struct MaskedBatch {
  std::vector<TokenSequence> inputs;
  std::vector<std::vector<int>> mlm_targets;
  std::vector<int> nsp_labels;
};

/// Selects each non-special position independently with probability
/// mask_rate; of the selected, 80% become [MASK], 10% a random non-special
/// vocabulary id, 10% stay unchanged. Draw order: sequences in order,
/// positions in order; one uniform for selection, one for the 80/10/10
/// branch, one id draw on the random branch. attention_mask and segment_ids
/// are never touched.
inline MaskedBatch mask_for_mlm(std::vector<TokenSequence> inputs, const Vocabulary& vocab,
                                double mask_rate, RngStream& rng) {
  if (vocab.kind() != VocabKind::subword) {
    throw ConfigError("mask_for_mlm requires a subword vocabulary");
  }
  if (mask_rate <= 0.0 || mask_rate >= 1.0) {
    throw ConfigError("mask_rate must lie in (0, 1), got " + repr(mask_rate));
  }
  const int n_specials = vocab.num_specials();
  const int n_random = vocab.size() - n_specials;
  MaskedBatch out;
  out.inputs = std::move(inputs);
  out.mlm_targets.reserve(out.inputs.size());
  for (auto& seq : out.inputs) {
    std::vector<int> targets(seq.ids.size(), -1);
    for (std::size_t pos = 0; pos < seq.ids.size(); ++pos) {
      const int original = seq.ids[pos];
      if (original < n_specials) continue;  // PAD/UNK/CLS/SEP/MASK never selected
      if (!rng.next_bernoulli(mask_rate)) continue;
      targets[pos] = original;
      const double branch = rng.next_double();
      if (branch < 0.8) {
        seq.ids[pos] = vocab.mask_id();
      } else if (branch < 0.9 && n_random > 0) {
        seq.ids[pos] = n_specials + static_cast<int>(rng.next_below(
                                        static_cast<std::uint64_t>(n_random)));
      }  // else: keep the original token
    }
    out.mlm_targets.push_back(std::move(targets));
  }
  return out;
}

struct SentencePair {
  std::string first;
  std::string second;
  int label = 0;  // 1: second follows first in the same document
};

/// One candidate pair per adjacent sentence pair per document; a fair coin
/// keeps the true successor (label 1) or swaps in a random sentence from a
/// different document (label 0).
inline std::vector<SentencePair> make_nsp_pairs(
    const std::vector<std::vector<std::string>>& documents, RngStream& rng) {
  if (documents.size() < 2) {
    throw DataError("make_nsp_pairs: need at least 2 documents for negative sampling, got " +
                    std::to_string(documents.size()));
  }
  for (std::size_t d = 0; d < documents.size(); ++d) {
    if (documents[d].size() < 2) {
      throw DataError("make_nsp_pairs: document " + std::to_string(d) +
                      " has fewer than 2 sentences");
    }
  }
  std::vector<SentencePair> pairs;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    const auto& doc = documents[d];
    for (std::size_t i = 0; i + 1 < doc.size(); ++i) {
      SentencePair p;
      p.first = doc[i];
      if (rng.next_bernoulli(0.5)) {
        p.second = doc[i + 1];
        p.label = 1;
      } else {
        std::size_t other = rng.next_below(documents.size() - 1);
        if (other >= d) ++other;
        const auto& src = documents[other];
        p.second = src[rng.next_below(src.size())];
        p.label = 0;
      }
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

}  // namespace tinynlp
