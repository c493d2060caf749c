// SPDX-License-Identifier: Apache-2.0
//
// Masked-LM + next-sentence pre-training from scratch, plus the continued
// in-domain phase: resume from an earlier checkpoint and keep optimizing on
// text closer to the target distribution.
//
// An epoch is one pass over freshly generated (pair, mask) instances; pair
// sampling, masking, shuffling, and dropout all derive their streams from
// (seed, epoch index), so a run checkpointed after k epochs and resumed
// reproduces the uninterrupted run bitwise.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tinynlp/checkpoint.hpp"
#include "tinynlp/encoder.hpp"
#include "tinynlp/masking.hpp"
#include "tinynlp/optim.hpp"

namespace tinynlp {

struct PretrainConfig {
  double mask_rate = 0.15;
  double mlm_weight = 1.0;
  double nsp_weight = 1.0;
  double lr = 2e-5;        // continued-phase default
  int epochs = 10;         // continued-phase default
  int batch = 16;
  int min_doc_words = 21;  // keep lines with strictly more than 20 words
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (mask_rate <= 0.0 || mask_rate >= 1.0) {
      throw ConfigError("pretrain mask_rate must lie in (0, 1)");
    }
    if (mlm_weight < 0.0 || nsp_weight < 0.0 || (mlm_weight == 0.0 && nsp_weight == 0.0)) {
      throw ConfigError("pretrain loss weights must be non-negative and not both zero");
    }
    if (lr <= 0.0 || epochs <= 0 || batch <= 0) {
      throw ConfigError("pretrain lr, epochs, and batch must be positive");
    }
  }

  nlohmann::json to_json() const {
    return {{"mask_rate", mask_rate}, {"mlm_weight", mlm_weight}, {"nsp_weight", nsp_weight},
            {"lr", lr},               {"epochs", epochs},         {"batch", batch},
            {"min_doc_words", min_doc_words}, {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2}, {"adam_epsilon", adam_epsilon}};
  }
};

struct Corpus {
  std::vector<std::string> lines;  // kept documents, input order preserved
  std::vector<std::vector<std::string>> documents;  // sentence lists for NSP
  std::string provenance = "generic";  // generic | in-domain
};

inline int count_words(std::string_view line) {
  return static_cast<int>(whitespace_tokens(line).size());
}

/// Sentence split on . ! ? runs; the punctuation is consumed. A line with
/// no sentence break is one sentence.
inline std::vector<std::string> split_sentences(std::string_view line) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    auto toks = whitespace_tokens(current);
    if (!toks.empty()) {
      std::string s = toks[0];
      for (std::size_t i = 1; i < toks.size(); ++i) s += " " + toks[i];
      out.push_back(std::move(s));
    }
    current.clear();
  };
  for (char c : line) {
    if (c == '.' || c == '!' || c == '?') {
      flush();
    } else {
      current += c;
    }
  }
  flush();
  return out;
}

/// Groups lines into NSP-ready documents: a line splitting into 2+
/// sentences is its own document; single-sentence lines are chunked four at
/// a time into pseudo-documents so that "next sentence" means "next kept
/// line". A lone trailing sentence joins the previous document.
inline std::vector<std::vector<std::string>> build_documents(
    std::span<const std::string> lines) {
  std::vector<std::vector<std::string>> docs;
  std::vector<std::string> pending;
  for (const auto& line : lines) {
    auto sents = split_sentences(line);
    if (sents.size() >= 2) {
      docs.push_back(std::move(sents));
    } else if (sents.size() == 1) {
      pending.push_back(std::move(sents[0]));
      if (pending.size() == 4) {
        docs.push_back(std::move(pending));
        pending.clear();
      }
    }
  }
  if (pending.size() >= 2) {
    docs.push_back(std::move(pending));
  } else if (pending.size() == 1) {
    if (!docs.empty()) docs.back().push_back(std::move(pending[0]));
  }
  return docs;
}

/// Keeps lines with at least min_doc_words whitespace words (min 21 keeps
/// strictly-longer-than-20 lines), in input order, then builds documents.
inline Corpus filter_corpus(std::span<const std::string> raw_lines, int min_doc_words,
                            const std::string& provenance = "generic") {
  Corpus c;
  c.provenance = provenance;
  for (const auto& line : raw_lines) {
    if (count_words(line) >= min_doc_words) c.lines.push_back(line);
  }
  c.documents = build_documents(c.lines);
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& path, int min_doc_words,
                          const std::string& provenance = "generic") {
  auto content = read_file(path);
  std::vector<std::string> lines;
  for (auto v : split_view(content, '\n')) {
    if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
    if (!v.empty()) lines.emplace_back(v);
  }
  return filter_corpus(lines, min_doc_words, provenance);
}

struct PretrainHeads {
  Tensor mlm_w, mlm_b;  // hidden -> vocab, separate projection (not tied)
  Tensor nsp_w, nsp_b;  // pooled -> 2

  static PretrainHeads init(const EncoderConfig& cfg, RngStream& rng) {
    PretrainHeads h;
    h.mlm_w = Tensor::randn({cfg.hidden, cfg.vocab_size}, rng, 0.0, 0.02, true);
    h.mlm_b = Tensor::zeros({cfg.vocab_size}, true);
    h.nsp_w = Tensor::randn({cfg.hidden, 2}, rng, 0.0, 0.02, true);
    h.nsp_b = Tensor::zeros({2}, true);
    return h;
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    return {{"mlm.weight", mlm_w}, {"mlm.bias", mlm_b}, {"nsp.weight", nsp_w},
            {"nsp.bias", nsp_b}};
  }
};

struct PretrainModel {
  EncoderParams encoder;
  PretrainHeads heads;

  std::vector<std::pair<std::string, Tensor>> named() const {
    auto out = encoder.named();
    for (auto& [name, t] : heads.named()) out.emplace_back(name, t);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }
};

inline PretrainModel init_pretrain_model(const EncoderConfig& cfg, RngStream& rng) {
  PretrainModel m;
  m.encoder = EncoderParams::init(cfg, rng);
  m.heads = PretrainHeads::init(cfg, rng);
  return m;
}

inline ModelCheckpoint make_pretrain_checkpoint(const PretrainModel& model,
                                                const EncoderConfig& enc_cfg,
                                                const PretrainConfig& cfg,
                                                const Vocabulary& vocab,
                                                const std::string& provenance = "scratch") {
  ModelCheckpoint ckpt;
  ckpt.model_kind = "encoder";
  ckpt.config = {{"encoder", enc_cfg.to_json()}, {"pretrain", cfg.to_json()}};
  ckpt.vocab_kind = "subword";
  ckpt.vocab_fingerprint = vocab.fingerprint();
  ckpt.provenance = provenance;
  for (const auto& [name, t] : model.named()) ckpt.params.push_back({name, t.shape(), t.data()});
  return ckpt;
}

struct MlmLoss {
  Tensor loss;     // undefined when count == 0
  int count = 0;   // number of predicted positions
};

/// Cross-entropy of the MLM projection at exactly the positions whose
/// target is not -1; rows with target -1 never enter the loss.
inline MlmLoss mlm_loss_at_targets(const Tensor& hidden, std::span<const int> flat_targets,
                                   const PretrainHeads& heads) {
  if (static_cast<int>(flat_targets.size()) != hidden.dim(0)) {
    throw ShapeError("mlm_loss_at_targets: " + std::to_string(flat_targets.size()) +
                     " targets for " + std::to_string(hidden.dim(0)) + " hidden rows");
  }
  std::vector<int> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < flat_targets.size(); ++i) {
    if (flat_targets[i] != -1) {
      rows.push_back(static_cast<int>(i));
      labels.push_back(flat_targets[i]);
    }
  }
  MlmLoss out;
  out.count = static_cast<int>(rows.size());
  if (out.count == 0) return out;
  Tensor picked = row_gather(hidden, rows);
  Tensor logits = add_bias(matmul(picked, heads.mlm_w), heads.mlm_b);
  out.loss = cross_entropy(logits, labels);
  return out;
}

struct LossTraceEntry {
  int epoch = 0;
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
};

/// One line per epoch: epoch<TAB>mlm_loss<TAB>nsp_loss.
inline std::string serialize_loss_trace(std::span<const LossTraceEntry> trace) {
  std::string out;
  for (const auto& e : trace) {
    out += std::to_string(e.epoch) + "\t" + repr(e.mlm_loss) + "\t" + repr(e.nsp_loss) + "\n";
  }
  return out;
}

struct PretrainResult {
  ModelCheckpoint checkpoint;
  std::vector<LossTraceEntry> trace;
};

namespace detail {

inline PretrainModel pretrain_model_from_checkpoint(const ModelCheckpoint& ckpt,
                                                    const EncoderConfig& cfg, RngStream& rng) {
  PretrainModel model;
  model.encoder = EncoderParams::from_checkpoint(ckpt, cfg);
  if (ckpt.find("mlm.weight") != nullptr) {
    auto tensor_of = [&ckpt](const std::string& name) {
      const NamedParam& p = ckpt.require(name);
      return Tensor::from_data(p.shape, p.values, true);
    };
    model.heads.mlm_w = tensor_of("mlm.weight");
    model.heads.mlm_b = tensor_of("mlm.bias");
    model.heads.nsp_w = tensor_of("nsp.weight");
    model.heads.nsp_b = tensor_of("nsp.bias");
  } else {
    model.heads = PretrainHeads::init(cfg, rng);
  }
  return model;
}

struct EpochInstances {
  std::vector<TokenSequence> inputs;
  std::vector<std::vector<int>> targets;
  std::vector<int> nsp_labels;
};

/// Deterministic per-epoch instance generation: fresh pairs, fresh masks.
inline EpochInstances make_epoch_instances(const Corpus& corpus, const Vocabulary& vocab,
                                           const EncoderConfig& enc_cfg,
                                           const PretrainConfig& cfg, const RngStream& root,
                                           int epoch) {
  RngStream pair_rng = root.child("pretrain-pairs", static_cast<std::uint64_t>(epoch));
  auto pairs = make_nsp_pairs(corpus.documents, pair_rng);

  RngStream order_rng = root.child("pretrain-order", static_cast<std::uint64_t>(epoch));
  shuffle(pairs, order_rng);

  std::vector<TokenSequence> encoded;
  encoded.reserve(pairs.size());
  std::vector<int> labels;
  for (const auto& p : pairs) {
    encoded.push_back(encode(p.first, vocab, enc_cfg.max_len, p.second));
    labels.push_back(p.label);
  }
  RngStream mask_rng = root.child("pretrain-mask", static_cast<std::uint64_t>(epoch));
  MaskedBatch masked = mask_for_mlm(std::move(encoded), vocab, cfg.mask_rate, mask_rng);

  EpochInstances out;
  out.inputs = std::move(masked.inputs);
  out.targets = std::move(masked.mlm_targets);
  out.nsp_labels = std::move(labels);
  return out;
}

}  // namespace detail

/// MLM + NSP pre-training. `initial` resumes from a checkpoint: with
/// `resume` set, optimizer moments and the epoch cursor carry over
/// (bitwise continuation of the same run); without it, a fresh phase
/// starts from the checkpoint's weights (the continued, in-domain phase).
inline PretrainResult pretrain(const Corpus& corpus, const EncoderConfig& enc_cfg,
                               const PretrainConfig& cfg, const Vocabulary& vocab,
                               std::uint64_t seed,
                               const std::optional<ModelCheckpoint>& initial = std::nullopt,
                               bool resume = false) {
  enc_cfg.validate();
  cfg.validate();
  if (corpus.documents.size() < 2) {
    throw DataError("pretrain: corpus yields fewer than 2 documents; NSP needs negatives");
  }
  if (vocab.kind() != VocabKind::subword) {
    throw ConfigError("pretrain requires a subword vocabulary");
  }

  RngStream root(seed);
  RngStream init_rng = root.child("pretrain-init");
  PretrainModel model;
  int start_epoch = 1;
  if (initial) {
    if (initial->model_kind != "encoder") {
      throw CheckpointError(CheckpointError::Kind::config_mismatch,
                            "pretrain expects an encoder checkpoint, found '" +
                                initial->model_kind + "'");
    }
    require_fingerprint(*initial, vocab);
    require_compatible_encoder_config(initial->config.at("encoder"), enc_cfg);
    model = detail::pretrain_model_from_checkpoint(*initial, enc_cfg, init_rng);
  } else {
    model.encoder = EncoderParams::init(enc_cfg, init_rng);
    model.heads = PretrainHeads::init(enc_cfg, init_rng);
  }

  AdamOptimizer opt(model.parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
                    cfg.adam_epsilon);
  if (resume) {
    if (!initial) throw ConfigError("pretrain: resume needs an initial checkpoint");
    if (initial->optimizer.empty()) {
      throw CheckpointError(CheckpointError::Kind::config_mismatch,
                            "pretrain: resume checkpoint has no optimizer state");
    }
    for (std::size_t i = 0; i < opt.size(); ++i) {
      opt.state(i).step = initial->optimizer[i].step;
      opt.state(i).first_moment = initial->optimizer[i].first_moment;
      opt.state(i).second_moment = initial->optimizer[i].second_moment;
    }
    start_epoch = static_cast<int>(initial->next_epoch);
  }

  PretrainResult result;
  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    detail::EpochInstances inst =
        detail::make_epoch_instances(corpus, vocab, enc_cfg, cfg, root, epoch);
    RngStream dropout_rng = root.child("pretrain-dropout", static_cast<std::uint64_t>(epoch));

    double mlm_sum = 0.0, nsp_sum = 0.0;
    long long mlm_count = 0, nsp_count = 0;
    for (std::size_t start = 0; start < inst.inputs.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop =
          std::min(inst.inputs.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<TokenSequence> batch(inst.inputs.begin() + static_cast<std::ptrdiff_t>(start),
                                       inst.inputs.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<int> labels(inst.nsp_labels.begin() + static_cast<std::ptrdiff_t>(start),
                              inst.nsp_labels.begin() + static_cast<std::ptrdiff_t>(stop));
      std::vector<int> flat_targets;
      for (std::size_t i = start; i < stop; ++i) {
        flat_targets.insert(flat_targets.end(), inst.targets[i].begin(), inst.targets[i].end());
      }

      EncoderOutput out = encoder_forward(batch, model.encoder, enc_cfg, /*training=*/true,
                                          dropout_rng);
      MlmLoss mlm = mlm_loss_at_targets(out.hidden, flat_targets, model.heads);
      Tensor nsp_logits = add_bias(matmul(out.pooled, model.heads.nsp_w), model.heads.nsp_b);
      Tensor nsp = cross_entropy(nsp_logits, labels);

      Tensor total = scale(nsp, cfg.nsp_weight);
      if (mlm.count > 0) total = add(total, scale(mlm.loss, cfg.mlm_weight));
      total.backward();
      opt.step();

      if (mlm.count > 0) {
        mlm_sum += mlm.loss.item() * mlm.count;
        mlm_count += mlm.count;
      }
      nsp_sum += nsp.item() * static_cast<double>(labels.size());
      nsp_count += static_cast<long long>(labels.size());
    }
    result.trace.push_back({epoch, mlm_count ? mlm_sum / static_cast<double>(mlm_count) : 0.0,
                            nsp_count ? nsp_sum / static_cast<double>(nsp_count) : 0.0});
  }

  ModelCheckpoint ckpt = make_pretrain_checkpoint(
      model, enc_cfg, cfg, vocab,
      corpus.provenance == "in-domain" ? "pretrained-indomain" : "pretrained-generic");
  for (std::size_t i = 0; i < opt.size(); ++i) {
    ckpt.optimizer.push_back(
        {opt.state(i).step, opt.state(i).first_moment, opt.state(i).second_moment});
    if (ckpt.optimizer.back().first_moment.empty()) {
      ckpt.optimizer.back().first_moment.assign(opt.param(i).size(), 0.0);
      ckpt.optimizer.back().second_moment.assign(opt.param(i).size(), 0.0);
    }
  }
  ckpt.next_epoch = static_cast<std::uint64_t>(cfg.epochs) + 1;
  result.checkpoint = std::move(ckpt);
  return result;
}

/// Deterministic masked cross-entropy of a checkpointed model on held-out
/// text. Same seed, same loss.
inline double mlm_eval(const ModelCheckpoint& ckpt, const Corpus& corpus,
                       const Vocabulary& vocab, double mask_rate, std::uint64_t seed,
                       int batch = 16) {
  if (ckpt.model_kind != "encoder") {
    throw CheckpointError(CheckpointError::Kind::config_mismatch,
                          "mlm_eval expects an encoder checkpoint");
  }
  require_fingerprint(ckpt, vocab);
  EncoderConfig enc_cfg = EncoderConfig::from_json(ckpt.config.at("encoder"));
  if (corpus.documents.size() < 2) {
    throw DataError("mlm_eval: corpus yields fewer than 2 documents");
  }
  RngStream root(seed);
  RngStream init_rng = root.child("eval-init");
  PretrainModel model = detail::pretrain_model_from_checkpoint(ckpt, enc_cfg, init_rng);

  PretrainConfig gen;
  gen.mask_rate = mask_rate;
  detail::EpochInstances inst =
      detail::make_epoch_instances(corpus, vocab, enc_cfg, gen, root, /*epoch=*/0);

  NoGradGuard ng;
  RngStream unused(0);
  double sum = 0.0;
  long long count = 0;
  for (std::size_t start = 0; start < inst.inputs.size();
       start += static_cast<std::size_t>(batch)) {
    const std::size_t stop = std::min(inst.inputs.size(), start + static_cast<std::size_t>(batch));
    std::vector<TokenSequence> chunk(inst.inputs.begin() + static_cast<std::ptrdiff_t>(start),
                                     inst.inputs.begin() + static_cast<std::ptrdiff_t>(stop));
    std::vector<int> flat_targets;
    for (std::size_t i = start; i < stop; ++i) {
      flat_targets.insert(flat_targets.end(), inst.targets[i].begin(), inst.targets[i].end());
    }
    EncoderOutput out = encoder_forward(chunk, model.encoder, enc_cfg, /*training=*/false,
                                        unused);
    MlmLoss mlm = mlm_loss_at_targets(out.hidden, flat_targets, model.heads);
    if (mlm.count > 0) {
      sum += mlm.loss.item() * mlm.count;
      count += mlm.count;
    }
  }
  if (count == 0) throw DataError("mlm_eval: no positions were selected for prediction");
  return sum / static_cast<double>(count);
}

}  // namespace tinynlp
