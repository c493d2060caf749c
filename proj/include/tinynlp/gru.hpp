// SPDX-License-Identifier: Apache-2.0
//
// One-layer unidirectional GRU classifier, the recurrent baseline.
//
// The cell follows the bias-free formulation exactly: update and reset
// gates from sigmoid-squashed input/recurrent projections, a tanh candidate
// whose recurrent term is reset-gated, and a convex blend
// h = (1-z) * h_prev + z * candidate. No bias terms anywhere in the cell.
//
// Padding never interacts with the recurrence result: the classifier reads
// the hidden state at the last non-PAD position (the zero initial state for
// empty inputs), so logits for an all-PAD sequence are exactly the output
// bias.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tinynlp/checkpoint.hpp"
#include "tinynlp/metrics.hpp"
#include "tinynlp/optim.hpp"
#include "tinynlp/tensor.hpp"
#include "tinynlp/vocab.hpp"

namespace tinynlp {

struct GruConfig {
  int hidden = 500;
  int embedding_dim = 128;
  int max_len = 50;
  int vocab_size = 22000;
  int num_classes = 2;
  double lr = 1e-3;
  double dropout = 0.5;
  int batch = 64;
  int epochs = 20;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (hidden <= 0 || embedding_dim <= 0 || max_len <= 0 || vocab_size <= 0 ||
        num_classes <= 0 || batch <= 0 || epochs <= 0 || lr <= 0) {
      throw ConfigError("gru config fields must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw ConfigError("gru dropout must lie in [0, 1), got " + repr(dropout));
    }
  }

  nlohmann::json to_json() const {
    return {{"kind", "gru"},
            {"hidden", hidden},
            {"embedding_dim", embedding_dim},
            {"max_len", max_len},
            {"vocab_size", vocab_size},
            {"num_classes", num_classes},
            {"lr", lr},
            {"dropout", dropout},
            {"batch", batch},
            {"epochs", epochs},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_epsilon", adam_epsilon}};
  }

  static GruConfig from_json(const nlohmann::json& j) {
    GruConfig c;
    c.hidden = j.at("hidden").get<int>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.lr = j.at("lr").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.batch = j.at("batch").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_epsilon = j.at("adam_epsilon").get<double>();
    return c;
  }
};

struct GruParams {
  Tensor embedding;            // [vocab x emb], standard normal init
  Tensor update_w, update_u;   // input->hidden, hidden->hidden for the update gate
  Tensor reset_w, reset_u;
  Tensor cand_w, cand_u;       // candidate activation projections
  Tensor head_w, head_b;       // linear output layer

  /// Embeddings draw from N(0,1) per the training recipe; projection
  /// matrices use Glorot-uniform so a 500-unit cell starts in the gates'
  /// responsive range; head starts small, bias at zero.
  static GruParams init(const GruConfig& cfg, RngStream& rng) {
    cfg.validate();
    GruParams p;
    auto glorot = [&rng](int rows, int cols) {
      const double limit = std::sqrt(6.0 / (rows + cols));
      return Tensor::uniform({rows, cols}, rng, -limit, limit, true);
    };
    p.embedding = Tensor::randn({cfg.vocab_size, cfg.embedding_dim}, rng, 0.0, 1.0, true);
    p.update_w = glorot(cfg.embedding_dim, cfg.hidden);
    p.update_u = glorot(cfg.hidden, cfg.hidden);
    p.reset_w = glorot(cfg.embedding_dim, cfg.hidden);
    p.reset_u = glorot(cfg.hidden, cfg.hidden);
    p.cand_w = glorot(cfg.embedding_dim, cfg.hidden);
    p.cand_u = glorot(cfg.hidden, cfg.hidden);
    p.head_w = Tensor::randn({cfg.hidden, cfg.num_classes}, rng, 0.0, 0.02, true);
    p.head_b = Tensor::zeros({cfg.num_classes}, true);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    return {{"embedding", embedding}, {"update.w", update_w}, {"update.u", update_u},
            {"reset.w", reset_w},     {"reset.u", reset_u},   {"candidate.w", cand_w},
            {"candidate.u", cand_u},  {"head.weight", head_w}, {"head.bias", head_b}};
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  static GruParams from_checkpoint(const ModelCheckpoint& ckpt) {
    if (ckpt.model_kind != "gru") {
      throw CheckpointError(CheckpointError::Kind::config_mismatch,
                            "expected a gru checkpoint, found '" + ckpt.model_kind + "'");
    }
    auto tensor_of = [&ckpt](const std::string& name) {
      const NamedParam& p = ckpt.require(name);
      return Tensor::from_data(p.shape, p.values, true);
    };
    GruParams p;
    p.embedding = tensor_of("embedding");
    p.update_w = tensor_of("update.w");
    p.update_u = tensor_of("update.u");
    p.reset_w = tensor_of("reset.w");
    p.reset_u = tensor_of("reset.u");
    p.cand_w = tensor_of("candidate.w");
    p.cand_u = tensor_of("candidate.u");
    p.head_w = tensor_of("head.weight");
    p.head_b = tensor_of("head.bias");
    return p;
  }
};

struct GruGates {
  Tensor update;
  Tensor reset;
  Tensor candidate;
};

inline GruGates gru_cell_gates(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  GruGates g;
  g.update = sigmoid(add(matmul(x, p.update_w), matmul(h_prev, p.update_u)));
  g.reset = sigmoid(add(matmul(x, p.reset_w), matmul(h_prev, p.reset_u)));
  g.candidate = tanh(add(matmul(x, p.cand_w), hadamard(g.reset, matmul(h_prev, p.cand_u))));
  return g;
}

/// h = (1 - update) * h_prev + update * candidate. Exposed separately so the
/// interpolation endpoints are testable in isolation.
inline Tensor gru_blend(const Tensor& update, const Tensor& h_prev, const Tensor& candidate) {
  return add(hadamard(affine(update, -1.0, 1.0), h_prev), hadamard(update, candidate));
}

/// One recurrence step for a batch: x [B x emb], h_prev [B x hidden].
inline Tensor gru_cell_step(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  GruGates g = gru_cell_gates(x, h_prev, p);
  return gru_blend(g.update, h_prev, g.candidate);
}

namespace detail {

inline int non_pad_length(const TokenSequence& seq) {
  int n = 0;
  for (std::size_t i = 0; i < seq.attention_mask.size(); ++i) {
    if (seq.attention_mask[i] == 1) n = static_cast<int>(i) + 1;
  }
  return n;
}

}  // namespace detail

/// Batched forward pass. Embeds ids (PAD embeds like any token), runs the
/// cell left to right from a zero state, reads each row's state at its last
/// non-PAD position, applies dropout to that state in training, then the
/// linear head. Returns [B x num_classes] logits.
inline Tensor gru_forward_batch(const std::vector<TokenSequence>& seqs, const GruParams& p,
                                const GruConfig& cfg, bool training, RngStream& rng) {
  if (seqs.empty()) throw DataError("gru_forward_batch: empty batch");
  if (p.embedding.dim(0) != cfg.vocab_size) {
    throw ConfigError("gru vocabulary mismatch: embedding holds " +
                      std::to_string(p.embedding.dim(0)) + " rows, config declares " +
                      std::to_string(cfg.vocab_size));
  }
  const int batch = static_cast<int>(seqs.size());
  std::vector<int> steps(seqs.size());
  int max_steps = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (static_cast<int>(seqs[i].ids.size()) != cfg.max_len) {
      throw ConfigError("gru_forward_batch: sequence length " +
                        std::to_string(seqs[i].ids.size()) + " != configured max_len " +
                        std::to_string(cfg.max_len));
    }
    steps[i] = detail::non_pad_length(seqs[i]);
    max_steps = std::max(max_steps, steps[i]);
  }

  std::vector<Tensor> states;
  states.push_back(Tensor::zeros({batch, cfg.hidden}));
  for (int t = 0; t < max_steps; ++t) {
    std::vector<int> column(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) column[i] = seqs[i].ids[static_cast<std::size_t>(t)];
    Tensor x_t = embedding_lookup(p.embedding, column);
    states.push_back(gru_cell_step(x_t, states.back(), p));
  }

  // Row i of the final state comes from states[steps[i]].
  Tensor stacked = concat_rows(states);
  std::vector<int> pick(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    pick[i] = steps[i] * batch + static_cast<int>(i);
  }
  Tensor final_state = row_gather(stacked, pick);
  final_state = dropout(final_state, cfg.dropout, training, rng);
  return add_bias(matmul(final_state, p.head_w), p.head_b);
}

/// Single-sequence convenience wrapper; returns [num_classes] logits.
inline Tensor gru_forward(const TokenSequence& seq, const GruParams& p, const GruConfig& cfg,
                          bool training, RngStream& rng) {
  Tensor logits = gru_forward_batch({seq}, p, cfg, training, rng);
  return reshape(logits, {cfg.num_classes});
}

struct GruTrainResult {
  ModelCheckpoint best;
  std::vector<MetricsRecord> records;
  int best_epoch = 0;
};

struct GruPrediction {
  int label = 0;
  std::vector<double> probabilities;
};

/// Deterministic eval-mode predictions; ties keep the lowest class index.
inline std::vector<GruPrediction> gru_predict(const std::vector<EncodedExample>& examples,
                                              const GruParams& p, const GruConfig& cfg,
                                              int batch_size) {
  NoGradGuard ng;
  RngStream unused(0);
  std::vector<GruPrediction> preds;
  for (std::size_t start = 0; start < examples.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::vector<TokenSequence> batch;
    for (std::size_t i = start;
         i < std::min(examples.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      batch.push_back(examples[i].seq);
    }
    Tensor probs = softmax(gru_forward_batch(batch, p, cfg, /*training=*/false, unused), 1);
    for (int r = 0; r < probs.dim(0); ++r) {
      GruPrediction pred;
      pred.probabilities.resize(static_cast<std::size_t>(probs.dim(1)));
      for (int c = 0; c < probs.dim(1); ++c) {
        pred.probabilities[static_cast<std::size_t>(c)] = probs.at(r, c);
      }
      int arg = 0;
      for (int c = 1; c < probs.dim(1); ++c) {
        if (probs.at(r, c) > probs.at(r, arg)) arg = c;
      }
      pred.label = arg;
      preds.push_back(std::move(pred));
    }
  }
  return preds;
}

namespace detail {

inline std::vector<int> gru_predict_labels(const std::vector<EncodedExample>& examples,
                                           const GruParams& p, const GruConfig& cfg,
                                           int batch_size) {
  std::vector<int> labels;
  for (const auto& pred : gru_predict(examples, p, cfg, batch_size)) {
    labels.push_back(pred.label);
  }
  return labels;
}

inline MetricsRecord eval_examples(const std::vector<EncodedExample>& examples,
                                   const GruParams& p, const GruConfig& cfg, int epoch,
                                   const std::string& split, const std::string& task) {
  std::vector<int> preds = gru_predict_labels(examples, p, cfg, cfg.batch);
  std::vector<int> golds;
  for (const auto& e : examples) golds.push_back(e.label);
  MacroF1 f1 = macro_f1(preds, golds, cfg.num_classes);
  MetricsRecord rec{epoch, split, task, accuracy(preds, golds), f1.value, f1.per_class};
  return rec;
}

}  // namespace detail

inline ModelCheckpoint make_gru_checkpoint(const GruParams& p, const GruConfig& cfg,
                                           const std::string& vocab_fingerprint) {
  ModelCheckpoint ckpt;
  ckpt.model_kind = "gru";
  ckpt.config = cfg.to_json();
  ckpt.vocab_kind = "word";
  ckpt.vocab_fingerprint = vocab_fingerprint;
  for (const auto& [name, t] : p.named()) ckpt.params.push_back({name, t.shape(), t.data()});
  return ckpt;
}

/// Fixed-lr Adam over shuffled mini-batches; per-epoch train and dev
/// metrics; returns the checkpoint of the best dev-macro-F1 epoch (ties go
/// to the earlier epoch).
inline GruTrainResult train_gru(const std::vector<EncodedExample>& train_set,
                                const std::vector<EncodedExample>& dev_set,
                                const GruConfig& cfg, const Vocabulary& vocab,
                                std::uint64_t seed, const std::string& task = "irony") {
  cfg.validate();
  if (train_set.empty() || dev_set.empty()) {
    throw DataError("train_gru: empty train or dev split");
  }
  for (const auto& e : train_set) {
    if (e.label < 0 || e.label >= cfg.num_classes) {
      throw LabelError("train_gru: label " + std::to_string(e.label) + " outside [0, " +
                       std::to_string(cfg.num_classes) + ")");
    }
  }
  RngStream root(seed);
  RngStream init_rng = root.child("gru-init");
  GruParams params = GruParams::init(cfg, init_rng);
  AdamOptimizer opt(params.parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
                    cfg.adam_epsilon);

  GruTrainResult result;
  double best_f1 = -1.0;
  std::vector<std::vector<double>> best_values;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    RngStream shuffle_rng = root.child("gru-shuffle", static_cast<std::uint64_t>(epoch));
    RngStream dropout_rng = root.child("gru-dropout", static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      std::vector<TokenSequence> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch)); ++i) {
        batch.push_back(train_set[order[i]].seq);
        labels.push_back(train_set[order[i]].label);
      }
      Tensor logits = gru_forward_batch(batch, params, cfg, /*training=*/true, dropout_rng);
      Tensor loss = cross_entropy(logits, labels);
      loss.backward();
      opt.step();
    }

    result.records.push_back(detail::eval_examples(train_set, params, cfg, epoch, "train", task));
    MetricsRecord dev = detail::eval_examples(dev_set, params, cfg, epoch, "dev", task);
    result.records.push_back(dev);
    if (dev.macro_f1 > best_f1) {
      best_f1 = dev.macro_f1;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& [name, t] : params.named()) best_values.push_back(t.data());
    }
  }

  // Restore the best epoch's parameters into the checkpoint.
  ModelCheckpoint ckpt = make_gru_checkpoint(params, cfg, vocab.fingerprint());
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) ckpt.params[i].values = best_values[i];
  result.best = std::move(ckpt);
  return result;
}

}  // namespace tinynlp
