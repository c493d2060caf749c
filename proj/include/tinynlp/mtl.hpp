// SPDX-License-Identifier: Apache-2.0
//
// Single-task and multi-task fine-tuning of a shared encoder with one
// linear head per task, batch-level task mixing, and dev-driven model
// selection on the target task.
//
// Multi-task and single-task mode share one code path, so a multi-task run
// over exactly one task is bitwise the single-task run. Each optimization
// step backpropagates through the shared encoder and the head of the
// scheduled task only; heads outside the step's graph receive no gradient
// and their Adam slots do not advance, leaving them bitwise untouched.

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tinynlp/checkpoint.hpp"
#include "tinynlp/data.hpp"
#include "tinynlp/encoder.hpp"
#include "tinynlp/metrics.hpp"
#include "tinynlp/optim.hpp"

namespace tinynlp {

struct TaskSpec {
  std::string name;
  std::vector<std::string> labels;  // index order defines class ids
  std::string train_path;
  std::string dev_path;  // empty: split from train at run time
  bool is_target = false;

  int num_classes() const { return static_cast<int>(labels.size()); }
};

struct FinetuneConfig {
  int max_len = 50;
  int batch = 32;
  double lr = 2e-5;
  int epochs = 20;
  double aux_multiple = 1.0;  // per-epoch cap on auxiliary data, in target sizes
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (max_len <= 0 || batch <= 0 || epochs <= 0 || lr <= 0.0 || aux_multiple <= 0.0) {
      throw ConfigError("finetune config fields must be positive");
    }
  }

  nlohmann::json to_json() const {
    return {{"max_len", max_len}, {"batch", batch},         {"lr", lr},
            {"epochs", epochs},   {"aux_multiple", aux_multiple},
            {"adam_beta1", adam_beta1}, {"adam_beta2", adam_beta2},
            {"adam_epsilon", adam_epsilon}};
  }
};

struct TaskHead {
  Tensor weight;  // hidden -> num_classes
  Tensor bias;
  std::vector<std::string> labels;
};

struct ClassifierModel {
  EncoderParams encoder;
  std::map<std::string, TaskHead> heads;  // ordered: deterministic parameter layout

  std::vector<std::pair<std::string, Tensor>> named() const {
    auto out = encoder.named();
    for (const auto& [task, head] : heads) {
      out.emplace_back("heads." + task + ".weight", head.weight);
      out.emplace_back("heads." + task + ".bias", head.bias);
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }
};

/// One linear head per task over the pooled vector, N(0, 0.02^2) weights,
/// zero bias. Rejects duplicate task names.
inline ClassifierModel attach_heads(EncoderParams encoder, std::span<const TaskSpec> tasks,
                                    int hidden, RngStream& rng) {
  ClassifierModel model;
  model.encoder = std::move(encoder);
  for (const auto& t : tasks) {
    if (t.labels.empty()) throw ConfigError("task '" + t.name + "' declares no labels");
    if (model.heads.count(t.name)) {
      throw ConfigError("duplicate task name '" + t.name + "'");
    }
    TaskHead head;
    head.weight = Tensor::randn({hidden, t.num_classes()}, rng, 0.0, 0.02, true);
    head.bias = Tensor::zeros({t.num_classes()}, true);
    head.labels = t.labels;
    model.heads.emplace(t.name, std::move(head));
  }
  return model;
}

struct MixedSchedule {
  std::vector<std::pair<std::string, int>> order;  // (task name, batch index)
};

/// Concatenates every task's batch indices and applies one seeded
/// permutation: every batch appears exactly once.
inline MixedSchedule build_mixed_schedule(
    std::span<const std::pair<std::string, int>> task_batch_counts, std::uint64_t seed) {
  MixedSchedule s;
  for (const auto& [task, count] : task_batch_counts) {
    if (count <= 0) throw ConfigError("task '" + task + "' has no batches to schedule");
    for (int b = 0; b < count; ++b) s.order.emplace_back(task, b);
  }
  RngStream rng(seed);
  shuffle(s.order, rng);
  return s;
}

/// Head input per the config: pooled [CLS] vector (default) or the raw
/// [CLS] state.
inline Tensor head_input(const EncoderOutput& out, const EncoderConfig& cfg) {
  if (cfg.pooled_for_heads) return out.pooled;
  std::vector<int> cls_rows(static_cast<std::size_t>(out.batch));
  for (int b = 0; b < out.batch; ++b) cls_rows[static_cast<std::size_t>(b)] = b * out.len;
  return row_gather(out.hidden, cls_rows);
}

inline Tensor classifier_logits(const ClassifierModel& model, const EncoderConfig& cfg,
                                const std::string& task, const std::vector<TokenSequence>& seqs,
                                bool training, RngStream& rng) {
  auto it = model.heads.find(task);
  if (it == model.heads.end()) {
    std::string available;
    for (const auto& [name, head] : model.heads) {
      if (!available.empty()) available += ", ";
      available += name;
    }
    throw TaskLookupError("unknown task '" + task + "'; available heads: " + available);
  }
  EncoderOutput out = encoder_forward(seqs, model.encoder, cfg, training, rng);
  return add_bias(matmul(head_input(out, cfg), it->second.weight), it->second.bias);
}

/// One fine-tuning step: cross-entropy on this task's mini-batch, backward
/// through the shared encoder and this task's head only, one Adam update of
/// exactly the touched parameters.
inline double mtl_step(ClassifierModel& model, AdamOptimizer& opt, const EncoderConfig& cfg,
                       const std::string& task, const std::vector<TokenSequence>& seqs,
                       std::span<const int> labels, RngStream& dropout_rng) {
  Tensor logits = classifier_logits(model, cfg, task, seqs, /*training=*/true, dropout_rng);
  Tensor loss = cross_entropy(logits, labels);
  loss.backward();
  opt.step();
  return loss.item();
}

struct Prediction {
  int label = 0;
  std::string label_name;
  std::vector<double> probabilities;
};

/// Deterministic eval-mode predictions; softmax probabilities sum to one,
/// argmax ties resolve to the lowest class index. Batching never changes a
/// text's output.
inline std::vector<Prediction> predict_encoded(const ClassifierModel& model,
                                               const EncoderConfig& cfg, const std::string& task,
                                               std::span<const TokenSequence> seqs,
                                               int batch_size = 32) {
  auto head_it = model.heads.find(task);
  if (head_it == model.heads.end()) {
    std::string available;
    for (const auto& [name, head] : model.heads) {
      if (!available.empty()) available += ", ";
      available += name;
    }
    throw TaskLookupError("unknown task '" + task + "'; available heads: " + available);
  }
  NoGradGuard ng;
  RngStream unused(0);
  std::vector<Prediction> out;
  for (std::size_t start = 0; start < seqs.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(seqs.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<TokenSequence> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(start),
                                     seqs.begin() + static_cast<std::ptrdiff_t>(stop));
    Tensor logits = classifier_logits(model, cfg, task, chunk, /*training=*/false, unused);
    Tensor probs = softmax(logits, 1);
    for (int r = 0; r < probs.dim(0); ++r) {
      Prediction p;
      p.probabilities.resize(static_cast<std::size_t>(probs.dim(1)));
      for (int c = 0; c < probs.dim(1); ++c) {
        p.probabilities[static_cast<std::size_t>(c)] = probs.at(r, c);
      }
      int arg = 0;
      for (int c = 1; c < probs.dim(1); ++c) {
        if (probs.at(r, c) > probs.at(r, arg)) arg = c;  // strict: ties keep lowest index
      }
      p.label = arg;
      p.label_name = head_it->second.labels[static_cast<std::size_t>(arg)];
      out.push_back(std::move(p));
    }
  }
  return out;
}

struct TaskData {
  TaskSpec spec;
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> dev;  // may be empty for auxiliary tasks
};

enum class FinetuneMode { single, multi };

struct FinetuneResult {
  ModelCheckpoint best;
  std::vector<MetricsRecord> records;
  int best_epoch = 0;
};

namespace detail {

inline MetricsRecord eval_task(const ClassifierModel& model, const EncoderConfig& cfg,
                               const std::string& task, std::span<const EncodedExample> examples,
                               int num_classes, int batch, int epoch, const std::string& split) {
  std::vector<TokenSequence> seqs;
  std::vector<int> golds;
  for (const auto& e : examples) {
    seqs.push_back(e.seq);
    golds.push_back(e.label);
  }
  auto preds_full = predict_encoded(model, cfg, task, seqs, batch);
  std::vector<int> preds;
  for (const auto& p : preds_full) preds.push_back(p.label);
  MacroF1 f1 = macro_f1(preds, golds, num_classes);
  return {epoch, split, task, accuracy(preds, golds), f1.value, f1.per_class};
}

}  // namespace detail

inline ModelCheckpoint make_classifier_checkpoint(const ClassifierModel& model,
                                                  const EncoderConfig& enc_cfg,
                                                  const FinetuneConfig& cfg,
                                                  const std::string& vocab_fingerprint,
                                                  const std::string& provenance) {
  ModelCheckpoint ckpt;
  ckpt.model_kind = "encoder";
  ckpt.config = {{"encoder", enc_cfg.to_json()}, {"finetune", cfg.to_json()}};
  ckpt.vocab_kind = "subword";
  ckpt.vocab_fingerprint = vocab_fingerprint;
  ckpt.provenance = provenance;
  for (const auto& [task, head] : model.heads) {
    ckpt.heads[task] = {static_cast<int>(head.labels.size()), head.labels};
  }
  for (const auto& [name, t] : model.named()) ckpt.params.push_back({name, t.shape(), t.data()});
  return ckpt;
}

inline ClassifierModel classifier_from_checkpoint(const ModelCheckpoint& ckpt,
                                                  const EncoderConfig& enc_cfg) {
  ClassifierModel model;
  model.encoder = EncoderParams::from_checkpoint(ckpt, enc_cfg);
  for (const auto& [task, info] : ckpt.heads) {
    TaskHead head;
    const NamedParam& w = ckpt.require("heads." + task + ".weight");
    const NamedParam& b = ckpt.require("heads." + task + ".bias");
    head.weight = Tensor::from_data(w.shape, w.values, true);
    head.bias = Tensor::from_data(b.shape, b.values, true);
    head.labels = info.labels;
    model.heads.emplace(task, std::move(head));
  }
  return model;
}

/// Joint fine-tuning. Epochs count passes over the target task's data;
/// auxiliary sets larger than aux_multiple * target are sub-sampled per
/// epoch with a seeded draw. Dev metrics are logged for every task that
/// has dev data, but only the target task's dev macro F1 drives best-epoch
/// selection (ties to the earlier epoch).
inline FinetuneResult finetune(std::span<const TaskData> tasks, const EncoderConfig& enc_cfg,
                               const FinetuneConfig& cfg, const Vocabulary& vocab,
                               std::uint64_t seed, FinetuneMode mode,
                               const std::optional<ModelCheckpoint>& initial = std::nullopt) {
  enc_cfg.validate();
  cfg.validate();
  if (tasks.empty()) throw ConfigError("finetune: no tasks");
  if (mode == FinetuneMode::single && tasks.size() != 1) {
    throw ConfigError("finetune: single mode requires exactly one task, got " +
                      std::to_string(tasks.size()));
  }
  std::size_t target_index = tasks.size();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].train.empty()) {
      throw DataError("finetune: task '" + tasks[i].spec.name + "' has no training data");
    }
    if (tasks[i].spec.is_target) {
      if (target_index != tasks.size()) {
        throw ConfigError("finetune: more than one target task");
      }
      target_index = i;
    }
  }
  if (target_index == tasks.size()) {
    if (tasks.size() == 1) {
      target_index = 0;
    } else {
      throw ConfigError("finetune: exactly one task must be the target");
    }
  }
  const TaskData& target = tasks[target_index];
  if (target.dev.empty()) {
    throw DataError("finetune: target task '" + target.spec.name + "' has no dev data");
  }

  RngStream root(seed);
  std::string provenance = initial ? initial->provenance : "scratch";
  EncoderParams encoder;
  if (initial) {
    if (initial->model_kind != "encoder") {
      throw CheckpointError(CheckpointError::Kind::config_mismatch,
                            "finetune expects an encoder checkpoint, found '" +
                                initial->model_kind + "'");
    }
    require_fingerprint(*initial, vocab);
    require_compatible_encoder_config(initial->config.at("encoder"), enc_cfg);
    encoder = EncoderParams::from_checkpoint(*initial, enc_cfg);
  } else {
    RngStream init_rng = root.child("finetune-encoder-init");
    encoder = EncoderParams::init(enc_cfg, init_rng);
  }
  std::vector<TaskSpec> specs;
  for (const auto& t : tasks) specs.push_back(t.spec);
  RngStream head_rng = root.child("finetune-head-init");
  ClassifierModel model = attach_heads(std::move(encoder), specs, enc_cfg.hidden, head_rng);

  AdamOptimizer opt(model.parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
                    cfg.adam_epsilon);

  FinetuneResult result;
  double best_f1 = -1.0;
  std::vector<std::vector<double>> best_values;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Per-task epoch batches: the target uses everything, auxiliaries are
    // capped at aux_multiple * |target|.
    std::map<std::string, std::vector<std::vector<std::size_t>>> batches;
    std::vector<std::pair<std::string, int>> counts;
    for (const auto& t : tasks) {
      std::vector<std::size_t> index(t.train.size());
      for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
      RngStream order_rng =
          root.child("finetune-order-" + t.spec.name, static_cast<std::uint64_t>(epoch));
      shuffle(index, order_rng);
      if (&t != &target) {
        const auto cap = static_cast<std::size_t>(
            std::max(1.0, cfg.aux_multiple * static_cast<double>(target.train.size())));
        if (index.size() > cap) index.resize(cap);
      }
      std::vector<std::vector<std::size_t>> task_batches;
      for (std::size_t start = 0; start < index.size();
           start += static_cast<std::size_t>(cfg.batch)) {
        const std::size_t stop = std::min(index.size(), start + static_cast<std::size_t>(cfg.batch));
        task_batches.emplace_back(index.begin() + static_cast<std::ptrdiff_t>(start),
                                  index.begin() + static_cast<std::ptrdiff_t>(stop));
      }
      counts.emplace_back(t.spec.name, static_cast<int>(task_batches.size()));
      batches.emplace(t.spec.name, std::move(task_batches));
    }
    MixedSchedule schedule = build_mixed_schedule(
        counts, root.child("finetune-schedule", static_cast<std::uint64_t>(epoch)).seed());

    RngStream dropout_rng = root.child("finetune-dropout", static_cast<std::uint64_t>(epoch));
    for (const auto& [task_name, batch_idx] : schedule.order) {
      const TaskData* t = nullptr;
      for (const auto& cand : tasks) {
        if (cand.spec.name == task_name) t = &cand;
      }
      const auto& members = batches.at(task_name)[static_cast<std::size_t>(batch_idx)];
      std::vector<TokenSequence> seqs;
      std::vector<int> labels;
      for (std::size_t i : members) {
        seqs.push_back(t->train[i].seq);
        labels.push_back(t->train[i].label);
      }
      mtl_step(model, opt, enc_cfg, task_name, seqs, labels, dropout_rng);
    }

    result.records.push_back(detail::eval_task(model, enc_cfg, target.spec.name, target.train,
                                               target.spec.num_classes(), cfg.batch, epoch,
                                               "train"));
    for (const auto& t : tasks) {
      if (t.dev.empty()) continue;
      MetricsRecord rec = detail::eval_task(model, enc_cfg, t.spec.name, t.dev,
                                            t.spec.num_classes(), cfg.batch, epoch, "dev");
      const bool is_target_rec = t.spec.name == target.spec.name;
      result.records.push_back(rec);
      if (is_target_rec && rec.macro_f1 > best_f1) {
        best_f1 = rec.macro_f1;
        result.best_epoch = epoch;
        best_values.clear();
        for (const auto& [name, tens] : model.named()) best_values.push_back(tens.data());
      }
    }
  }

  ModelCheckpoint ckpt =
      make_classifier_checkpoint(model, enc_cfg, cfg, vocab.fingerprint(), provenance);
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) ckpt.params[i].values = best_values[i];
  result.best = std::move(ckpt);
  return result;
}

/// Raw-text prediction against a loaded checkpoint.
inline std::vector<Prediction> predict(const ModelCheckpoint& ckpt, const std::string& task,
                                       std::span<const std::string> texts,
                                       const Vocabulary& vocab, int batch_size = 32) {
  if (texts.empty()) return {};
  require_fingerprint(ckpt, vocab);
  EncoderConfig enc_cfg = EncoderConfig::from_json(ckpt.config.at("encoder"));
  ClassifierModel model = classifier_from_checkpoint(ckpt, enc_cfg);
  std::vector<TokenSequence> seqs;
  for (const auto& t : texts) seqs.push_back(encode(t, vocab, enc_cfg.max_len));
  return predict_encoded(model, enc_cfg, task, seqs, batch_size);
}

}  // namespace tinynlp
