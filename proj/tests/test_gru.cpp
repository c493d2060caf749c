// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "tinynlp/gradcheck.hpp"
#include "tinynlp/gru.hpp"

using namespace tinynlp;

namespace {

GruParams scalar_all_ones_params() {
  GruParams p;
  p.embedding = Tensor::from_data({2, 1}, {0.0, 1.0}, true);
  for (Tensor* t : {&p.update_w, &p.update_u, &p.reset_w, &p.reset_u, &p.cand_w, &p.cand_u}) {
    *t = Tensor::from_data({1, 1}, {1.0}, true);
  }
  p.head_w = Tensor::from_data({1, 2}, {1.0, -1.0}, true);
  p.head_b = Tensor::from_data({2}, {0.0, 0.0}, true);
  return p;
}

GruParams random_params(int vocab, int emb, int hidden, int classes, std::uint64_t seed) {
  GruConfig cfg;
  cfg.vocab_size = vocab;
  cfg.embedding_dim = emb;
  cfg.hidden = hidden;
  cfg.num_classes = classes;
  RngStream rng(seed);
  return GruParams::init(cfg, rng);
}

}  // namespace

TEST(GruCell, ZeroInputIsFixedPoint) {
  GruParams p = scalar_all_ones_params();
  Tensor x = Tensor::zeros({1, 1});
  Tensor h = Tensor::zeros({1, 1});
  Tensor out = gru_cell_step(x, h, p);
  EXPECT_EQ(out.at(0, 0), 0.0);
  GruGates g = gru_cell_gates(x, h, p);
  EXPECT_DOUBLE_EQ(g.update.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g.reset.at(0, 0), 0.5);
  EXPECT_EQ(g.candidate.at(0, 0), 0.0);
}

TEST(GruCell, ScalarAllOnesMatchesHandEvaluation) {
  GruParams p = scalar_all_ones_params();
  Tensor x = Tensor::full({1, 1}, 1.0);
  Tensor h = Tensor::full({1, 1}, 1.0);
  Tensor out = gru_cell_step(x, h, p);

  // Independent hand route through the four equations.
  const double z = 1.0 / (1.0 + std::exp(-2.0));
  const double r = z;
  const double cand = std::tanh(1.0 + r * 1.0);
  const double expected = (1.0 - z) * 1.0 + z * cand;
  EXPECT_NEAR(out.at(0, 0), expected, 1e-15);
  EXPECT_NEAR(out.at(0, 0), 0.9599, 1e-4);
}

TEST(GruCell, BlendEndpointsAreExact) {
  RngStream rng(3);
  Tensor h_prev = Tensor::uniform({2, 4}, rng, -1, 1);
  Tensor cand = Tensor::uniform({2, 4}, rng, -1, 1);
  Tensor all_on = Tensor::full({2, 4}, 1.0);
  Tensor all_off = Tensor::zeros({2, 4});
  EXPECT_EQ(gru_blend(all_on, h_prev, cand).data(), cand.data());
  EXPECT_EQ(gru_blend(all_off, h_prev, cand).data(), h_prev.data());
}

TEST(GruCell, GatesStayInOpenUnitIntervals) {
  GruParams p = random_params(4, 3, 3, 2, 11);
  RngStream rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor x = Tensor::uniform({2, 3}, rng, -8, 8);
    Tensor h = Tensor::uniform({2, 3}, rng, -1, 1);
    GruGates g = gru_cell_gates(x, h, p);
    for (double v : g.update.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    for (double v : g.reset.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    for (double v : g.candidate.data()) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
    // Hence the state never escapes max(|h_prev|, 1).
    Tensor h_next = gru_blend(g.update, h, g.candidate);
    for (std::size_t i = 0; i < h_next.data().size(); ++i) {
      EXPECT_LT(std::abs(h_next.data()[i]), std::max(std::abs(h.data()[i]), 1.0));
    }
  }
}

TEST(GruCell, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GruParams p = random_params(4, 3, 3, 2, 100 + seed);
    RngStream rng(seed);
    Tensor x0 = Tensor::uniform({2, 3}, rng, -1, 1);
    Tensor h0 = Tensor::uniform({2, 3}, rng, -1, 1);
    Tensor w = Tensor::uniform({2, 3}, rng, -1, 1);

    Tensor x = Tensor::from_data(x0.shape(), x0.data(), true);
    Tensor h = Tensor::from_data(h0.shape(), h0.data(), true);
    sum(hadamard(gru_cell_step(x, h, p), w)).backward();

    std::vector<Tensor> inputs{x, h, p.update_w, p.update_u, p.reset_w, p.reset_u, p.cand_w,
                               p.cand_u};
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) analytic.push_back(t.grad());
    auto loss_fn = [&] {
      return sum(hadamard(gru_cell_step(x, h, p), w)).item();
    };
    EXPECT_LT(max_gradient_error(loss_fn, inputs, analytic, 1e-5), 1e-4);
  }
}

TEST(GruForward, AllPadInputYieldsHeadBias) {
  GruConfig cfg;
  cfg.vocab_size = 6;
  cfg.embedding_dim = 4;
  cfg.hidden = 5;
  cfg.max_len = 7;
  RngStream rng(5);
  GruParams p = GruParams::init(cfg, rng);
  std::vector<std::string> corpus{"a b c d"};
  Vocabulary v = build_word_vocab(corpus, 6);
  TokenSequence empty = encode("", v, cfg.max_len);
  RngStream fwd(1);
  Tensor logits = gru_forward(empty, p, cfg, false, fwd);
  EXPECT_EQ(logits.at(0), p.head_b.at(0));
  EXPECT_EQ(logits.at(1), p.head_b.at(1));
}

TEST(GruForward, EvalModeIsDeterministic) {
  GruConfig cfg;
  cfg.vocab_size = 8;
  cfg.embedding_dim = 4;
  cfg.hidden = 6;
  cfg.max_len = 5;
  RngStream rng(9);
  GruParams p = GruParams::init(cfg, rng);
  std::vector<std::string> corpus{"a b c d e f"};
  Vocabulary v = build_word_vocab(corpus, 8);
  TokenSequence seq = encode("a c e", v, cfg.max_len);
  RngStream r1(1), r2(2);
  Tensor l1 = gru_forward(seq, p, cfg, false, r1);
  Tensor l2 = gru_forward(seq, p, cfg, false, r2);
  EXPECT_EQ(l1.data(), l2.data());
}

TEST(GruForward, SingleTokenEqualsStandaloneCellStep) {
  GruConfig cfg;
  cfg.vocab_size = 8;
  cfg.embedding_dim = 4;
  cfg.hidden = 6;
  cfg.max_len = 4;
  cfg.dropout = 0.5;
  RngStream rng(13);
  GruParams p = GruParams::init(cfg, rng);
  std::vector<std::string> corpus{"a b c d e f"};
  Vocabulary v = build_word_vocab(corpus, 8);
  TokenSequence seq = encode("c", v, cfg.max_len);
  RngStream fwd(1);
  Tensor logits = gru_forward(seq, p, cfg, false, fwd);

  std::vector<int> ids{seq.ids[0]};
  Tensor x = embedding_lookup(p.embedding, ids);
  Tensor h = gru_cell_step(x, Tensor::zeros({1, cfg.hidden}), p);
  Tensor expected = add_bias(matmul(h, p.head_w), p.head_b);
  EXPECT_EQ(logits.at(0), expected.at(0, 0));
  EXPECT_EQ(logits.at(1), expected.at(0, 1));
}

TEST(GruForward, ExternalStepLoopMatchesInternalLoop) {
  GruConfig cfg;
  cfg.vocab_size = 10;
  cfg.embedding_dim = 4;
  cfg.hidden = 5;
  cfg.max_len = 6;
  RngStream rng(21);
  GruParams p = GruParams::init(cfg, rng);
  std::vector<std::string> corpus{"a b c d e f g h"};
  Vocabulary v = build_word_vocab(corpus, 10);
  TokenSequence seq = encode("a d g b", v, cfg.max_len);
  RngStream fwd(1);
  Tensor logits = gru_forward(seq, p, cfg, false, fwd);

  Tensor h = Tensor::zeros({1, cfg.hidden});
  for (int t = 0; t < seq.original_length; ++t) {
    std::vector<int> ids{seq.ids[static_cast<std::size_t>(t)]};
    h = gru_cell_step(embedding_lookup(p.embedding, ids), h, p);
  }
  Tensor expected = add_bias(matmul(h, p.head_w), p.head_b);
  EXPECT_EQ(logits.at(0), expected.at(0, 0));
  EXPECT_EQ(logits.at(1), expected.at(0, 1));
}

namespace {

// Two-class corpus where the marker word decides the label.
std::pair<std::vector<EncodedExample>, Vocabulary> separable_set(int n, int max_len) {
  std::vector<std::string> texts;
  std::vector<int> labels;
  RngStream rng(33);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    std::string text = label ? "marker marker marker" : "plain plain plain";
    for (int w = 0; w < 3; ++w) text += " filler" + std::to_string(rng.next_below(6));
    texts.push_back(text);
    labels.push_back(label);
  }
  Vocabulary v = build_word_vocab(texts, 32);
  std::vector<EncodedExample> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({encode(texts[static_cast<std::size_t>(i)], v, max_len),
                   labels[static_cast<std::size_t>(i)]});
  }
  return {out, v};
}

}  // namespace

TEST(TrainGru, OverfitsTinySeparableSet) {
  auto [examples, vocab] = separable_set(8, 8);
  GruConfig cfg;
  cfg.hidden = 16;
  cfg.embedding_dim = 8;
  cfg.max_len = 8;
  cfg.vocab_size = vocab.size();
  cfg.batch = 4;
  cfg.epochs = 15;
  cfg.lr = 1e-2;
  cfg.dropout = 0.1;
  GruTrainResult r = train_gru(examples, examples, cfg, vocab, 7);
  double final_train_acc = 0;
  for (const auto& rec : r.records) {
    if (rec.split == "train" && rec.epoch == cfg.epochs) final_train_acc = rec.accuracy;
  }
  EXPECT_EQ(final_train_acc, 1.0);
}

TEST(TrainGru, SeededRerunReproducesMetricsExactly) {
  auto [examples, vocab] = separable_set(10, 8);
  GruConfig cfg;
  cfg.hidden = 6;
  cfg.embedding_dim = 4;
  cfg.max_len = 8;
  cfg.vocab_size = vocab.size();
  cfg.batch = 4;
  cfg.epochs = 3;
  GruTrainResult a = train_gru(examples, examples, cfg, vocab, 99);
  GruTrainResult b = train_gru(examples, examples, cfg, vocab, 99);
  EXPECT_EQ(serialize_metrics(a.records), serialize_metrics(b.records));
  ASSERT_EQ(a.best.params.size(), b.best.params.size());
  for (std::size_t i = 0; i < a.best.params.size(); ++i) {
    EXPECT_EQ(a.best.params[i].values, b.best.params[i].values);
  }
}

TEST(TrainGru, EmptySplitRejected) {
  auto [examples, vocab] = separable_set(4, 8);
  GruConfig cfg;
  cfg.vocab_size = vocab.size();
  std::vector<EncodedExample> empty;
  EXPECT_THROW(train_gru(empty, examples, cfg, vocab, 1), DataError);
  EXPECT_THROW(train_gru(examples, empty, cfg, vocab, 1), DataError);
}
