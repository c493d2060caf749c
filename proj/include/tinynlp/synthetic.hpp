// SPDX-License-Identifier: Apache-2.0
//
// Synthetic, format-compatible stand-ins for the real corpora: six
// classification task files over a shared word universe, two pre-training
// corpora with deliberately shifted vocabulary (generic vs in-domain), a
// held-out in-domain file, a strongly separable 32-row irony set, and
// ready-to-run manifests.
//
// Word universe: w000..w399. The generic distribution draws from
// w000..w299, the in-domain one from w250..w399, so continued pre-training
// on in-domain text has genuinely novel tokens to learn. Task keyword
// blocks live inside the generic range and are disjoint across tasks.

#pragma once

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "tinynlp/common.hpp"

namespace tinynlp {

struct SyntheticOptions {
  std::uint64_t seed = 1;
  int examples_per_task = 120;
  int corpus_lines = 240;
  int separable_examples = 32;
};

inline const std::vector<std::pair<std::string, std::vector<std::string>>>&
synthetic_task_schemas() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> schemas{
      {"irony", {"non-ironic", "ironic"}},
      {"gender", {"female", "male"}},
      {"age", {"under25", "25to34", "above35"}},
      {"variety",
       {"algeria", "egypt", "iraq", "kuwait", "lebanon-syria", "libya", "morocco", "oman",
        "palestine-jordan", "qatar", "saudi-arabia", "sudan", "tunisia", "uae", "yemen"}},
      {"emotion",
       {"anger", "anticipation", "disgust", "fear", "joy", "sadness", "surprise", "trust"}},
      {"sentiment", {"negative", "positive"}}};
  return schemas;
}

namespace detail {

inline std::string synth_word(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%03d", index);
  return buf;
}

/// Keyword j of class c in task block ti; blocks of 50 words keep tasks
/// disjoint (15 classes * 3 keywords = 45 < 50).
inline std::string task_keyword(int task_index, int class_index, int j) {
  return synth_word(task_index * 50 + class_index * 3 + j);
}

/// Corpus text is built mostly from two-word "phrases" (word 2p always
/// followed by word 2p+1, phrase choice Zipf-like via u^zipf_power) so
/// masked tokens are predictable from context the way real text is; a 15%
/// sprinkle of uniform singleton words keeps it from being fully
/// deterministic.
inline std::string corpus_line(RngStream& rng, int lo_word, int hi_word, int n_words,
                               int zipf_power) {
  const int phrases = (hi_word - lo_word) / 2;
  std::vector<std::string> words;
  while (static_cast<int>(words.size()) < n_words) {
    if (rng.next_double() < 0.85) {
      double skew = 1.0;
      const double u = rng.next_double();
      for (int k = 0; k < zipf_power; ++k) skew *= u;
      const int p = static_cast<int>(skew * phrases);
      words.push_back(synth_word(lo_word + 2 * p));
      words.push_back(synth_word(lo_word + 2 * p + 1));
    } else {
      words.push_back(synth_word(
          lo_word + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(hi_word - lo_word)))));
    }
  }
  words.resize(static_cast<std::size_t>(n_words));
  std::string line;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) line += ' ';
    line += words[i];
  }
  return line;
}

}  // namespace detail

inline std::string synthetic_task_tsv(int task_index, const std::vector<std::string>& labels,
                                      int examples, RngStream& rng) {
  std::string out = "id\ttext\tlabel\n";
  const int classes = static_cast<int>(labels.size());
  for (int i = 0; i < examples; ++i) {
    const int c = i % classes;
    std::string text;
    const int n_kw = 2 + static_cast<int>(rng.next_below(3));
    for (int k = 0; k < n_kw; ++k) {
      if (k) text += ' ';
      text += detail::task_keyword(task_index, c, static_cast<int>(rng.next_below(3)));
    }
    const int n_noise = 3 + static_cast<int>(rng.next_below(4));
    for (int k = 0; k < n_noise; ++k) {
      text += ' ' + detail::synth_word(static_cast<int>(rng.next_below(300)));
    }
    out += "t" + std::to_string(i) + "\t" + text + "\t" +
           labels[static_cast<std::size_t>(c)] + "\n";
  }
  return out;
}

/// 32 rows whose label is decided by a four-fold repeated class keyword;
/// trivially separable, used by the overfit harnesses.
inline std::string synthetic_separable_irony_tsv(int examples, RngStream& rng) {
  std::string out = "id\ttext\tlabel\n";
  const auto& labels = synthetic_task_schemas()[0].second;
  for (int i = 0; i < examples; ++i) {
    const int c = i % 2;
    const std::string kw = detail::task_keyword(0, c, 0);
    std::string text = kw + " " + kw + " " + kw + " " + kw;
    for (int k = 0; k < 2; ++k) {
      text += ' ' + detail::synth_word(200 + static_cast<int>(rng.next_below(60)));
    }
    out += "s" + std::to_string(i) + "\t" + text + "\t" + labels[static_cast<std::size_t>(c)] +
           "\n";
  }
  return out;
}

/// 60% of lines clear the >20-word bar, the rest are short, so corpus
/// filtering has something to do. Higher zipf_power concentrates the
/// phrase distribution, lowering the text's unigram entropy.
inline std::string synthetic_corpus(int lines, int lo_word, int hi_word, RngStream& rng,
                                    int zipf_power = 4) {
  std::string out;
  for (int i = 0; i < lines; ++i) {
    const bool long_line = rng.next_below(10) < 6;
    const int n = long_line ? 21 + static_cast<int>(rng.next_below(7))
                            : 8 + static_cast<int>(rng.next_below(8));
    out += detail::corpus_line(rng, lo_word, hi_word, n, zipf_power) + "\n";
  }
  return out;
}

inline void generate_synthetic(const std::filesystem::path& dir, const SyntheticOptions& opt) {
  RngStream root(opt.seed);
  const auto& schemas = synthetic_task_schemas();
  for (std::size_t ti = 0; ti < schemas.size(); ++ti) {
    RngStream rng = root.child("task-" + schemas[ti].first);
    write_file_atomic(dir / "tasks" / (schemas[ti].first + ".tsv"),
                      synthetic_task_tsv(static_cast<int>(ti), schemas[ti].second,
                                         opt.examples_per_task, rng));
  }
  RngStream sep_rng = root.child("separable");
  write_file_atomic(dir / "tasks" / "irony-separable.tsv",
                    synthetic_separable_irony_tsv(opt.separable_examples, sep_rng));

  RngStream gen_rng = root.child("corpus-generic");
  write_file_atomic(dir / "corpus-generic.txt",
                    synthetic_corpus(opt.corpus_lines, 0, 300, gen_rng));
  RngStream dom_rng = root.child("corpus-indomain");
  write_file_atomic(dir / "corpus-indomain.txt",
                    synthetic_corpus(opt.corpus_lines, 250, 400, dom_rng));
  RngStream held_rng = root.child("corpus-indomain-heldout");
  write_file_atomic(dir / "corpus-indomain-heldout.txt",
                    synthetic_corpus(opt.corpus_lines / 2, 250, 400, held_rng));

  // Ready-to-run manifests for the two model families.
  const std::string gru_manifest = R"({
  "experiment": "demo-gru",
  "model": "gru",
  "seed": 1234,
  "output_dir": "out/demo-gru",
  "dev_fraction": 0.10,
  "vocab": {"kind": "word", "max_size": 22000},
  "tasks": [
    {"name": "irony", "labels": ["non-ironic", "ironic"], "train": "tasks/irony.tsv", "target": true}
  ],
  "gru": {"hidden": 64, "embedding_dim": 32, "max_len": 24, "epochs": 8, "batch": 16}
})";
  write_file_atomic(dir / "manifest-gru.json", gru_manifest);

  const std::string mt_manifest = R"({
  "experiment": "demo-encoder-mt",
  "model": "encoder-mt",
  "seed": 1234,
  "output_dir": "out/demo-mt",
  "dev_fraction": 0.10,
  "vocab": {"kind": "subword", "train_from": ["corpus-generic.txt", "corpus-indomain.txt"], "target_size": 360},
  "tasks": [
    {"name": "irony", "labels": ["non-ironic", "ironic"], "train": "tasks/irony.tsv", "target": true},
    {"name": "sentiment", "labels": ["negative", "positive"], "train": "tasks/sentiment.tsv"}
  ],
  "encoder": {"preset": "desk", "layers": 2, "hidden": 32, "heads": 2, "ffn_inner": 64, "max_len": 24},
  "pretrain": {
    "generic_corpus": "corpus-generic.txt",
    "indomain_corpus": "corpus-indomain.txt",
    "generic_config": {"epochs": 2, "batch": 16, "lr": 1e-3, "min_doc_words": 21},
    "config": {"epochs": 2, "batch": 16, "lr": 2e-5, "min_doc_words": 21}
  },
  "finetune": {"max_len": 24, "batch": 16, "lr": 1e-4, "epochs": 4}
})";
  write_file_atomic(dir / "manifest-encoder-mt.json", mt_manifest);

  // Full six-task joint run: irony target plus all five auxiliary tasks.
  const std::string mt6_manifest = R"({
  "experiment": "demo-encoder-mt6",
  "model": "encoder-mt",
  "seed": 1234,
  "output_dir": "out/demo-mt6",
  "dev_fraction": 0.10,
  "vocab": {"kind": "subword", "train_from": ["corpus-generic.txt", "corpus-indomain.txt"], "target_size": 360},
  "tasks": [
    {"name": "irony", "labels": ["non-ironic", "ironic"], "train": "tasks/irony.tsv", "target": true},
    {"name": "gender", "labels": ["female", "male"], "train": "tasks/gender.tsv"},
    {"name": "age", "labels": ["under25", "25to34", "above35"], "train": "tasks/age.tsv"},
    {"name": "variety", "labels": ["algeria", "egypt", "iraq", "kuwait", "lebanon-syria", "libya", "morocco", "oman", "palestine-jordan", "qatar", "saudi-arabia", "sudan", "tunisia", "uae", "yemen"], "train": "tasks/variety.tsv"},
    {"name": "emotion", "labels": ["anger", "anticipation", "disgust", "fear", "joy", "sadness", "surprise", "trust"], "train": "tasks/emotion.tsv"},
    {"name": "sentiment", "labels": ["negative", "positive"], "train": "tasks/sentiment.tsv"}
  ],
  "encoder": {"preset": "desk", "layers": 2, "hidden": 32, "heads": 2, "ffn_inner": 64, "max_len": 24},
  "pretrain": {
    "generic_corpus": "corpus-generic.txt",
    "indomain_corpus": "corpus-indomain.txt",
    "generic_config": {"epochs": 2, "batch": 16, "lr": 1e-3, "min_doc_words": 21},
    "config": {"epochs": 2, "batch": 16, "lr": 2e-5, "min_doc_words": 21}
  },
  "finetune": {"max_len": 24, "batch": 16, "lr": 1e-4, "epochs": 4, "aux_multiple": 1.0}
})";
  write_file_atomic(dir / "manifest-encoder-mt6.json", mt6_manifest);
}

}  // namespace tinynlp
