// SPDX-License-Identifier: Apache-2.0
//
// Declarative experiment manifests and the phase runner.
//
// A manifest is complete: every hyperparameter comes from the file (plus
// explicit CLI flags), never from environment state, so a rerun with the
// same seed reproduces byte-identical metrics and prediction files. The
// runner owns its output directory via a lock, writes every artifact
// atomically, records a content hash of every input file in the run
// summary, and keeps partial artifacts when a phase fails.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinynlp/data.hpp"
#include "tinynlp/gru.hpp"
#include "tinynlp/mtl.hpp"
#include "tinynlp/pretrain.hpp"

namespace tinynlp {

struct ManifestTask {
  TaskSpec spec;
};

struct RunManifest {
  std::string experiment;
  std::string model;  // gru | encoder-st | encoder-mt
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::filesystem::path base_dir;  // directory of the manifest file; paths resolve against it
  std::filesystem::path output_dir;
  double dev_fraction = 0.10;
  bool stratified_split = false;
  std::optional<std::string> strip_pattern;

  // vocabulary: either a pre-built file or train-from-corpora
  std::string vocab_kind;  // word | subword
  int word_vocab_max_size = 22000;
  std::optional<std::filesystem::path> vocab_path;
  std::vector<std::filesystem::path> vocab_train_from;
  int subword_target_size = 0;

  std::vector<TaskSpec> tasks;
  nlohmann::json gru_overrides = nlohmann::json::object();
  nlohmann::json encoder_overrides = nlohmann::json::object();
  std::string encoder_preset = "desk";
  std::optional<std::filesystem::path> generic_corpus;
  std::optional<std::filesystem::path> indomain_corpus;
  nlohmann::json pretrain_generic_config = nlohmann::json::object();
  nlohmann::json pretrain_indomain_config = nlohmann::json::object();
  std::optional<std::filesystem::path> initial_checkpoint;
  nlohmann::json finetune_overrides = nlohmann::json::object();
  bool use_all_training_data = false;
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::string& path) {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base / p;
}

template <class T>
void override_field(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

inline GruConfig gru_config_from(const nlohmann::json& j) {
  GruConfig c;
  override_field(j, "hidden", c.hidden);
  override_field(j, "embedding_dim", c.embedding_dim);
  override_field(j, "max_len", c.max_len);
  override_field(j, "vocab_size", c.vocab_size);
  override_field(j, "lr", c.lr);
  override_field(j, "dropout", c.dropout);
  override_field(j, "batch", c.batch);
  override_field(j, "epochs", c.epochs);
  return c;
}

inline EncoderConfig encoder_config_from(const std::string& preset, const nlohmann::json& j,
                                         int vocab_size) {
  EncoderConfig c = preset == "paper-full" ? EncoderConfig::paper_full(vocab_size)
                                           : EncoderConfig::desk(vocab_size);
  override_field(j, "layers", c.layers);
  override_field(j, "hidden", c.hidden);
  override_field(j, "heads", c.heads);
  override_field(j, "ffn_inner", c.ffn_inner);
  override_field(j, "max_len", c.max_len);
  override_field(j, "dropout", c.dropout);
  override_field(j, "activation", c.activation);
  override_field(j, "pooled_for_heads", c.pooled_for_heads);
  return c;
}

inline PretrainConfig pretrain_config_from(const nlohmann::json& j) {
  PretrainConfig c;
  override_field(j, "mask_rate", c.mask_rate);
  override_field(j, "mlm_weight", c.mlm_weight);
  override_field(j, "nsp_weight", c.nsp_weight);
  override_field(j, "lr", c.lr);
  override_field(j, "epochs", c.epochs);
  override_field(j, "batch", c.batch);
  override_field(j, "min_doc_words", c.min_doc_words);
  return c;
}

inline FinetuneConfig finetune_config_from(const nlohmann::json& j) {
  FinetuneConfig c;
  override_field(j, "max_len", c.max_len);
  override_field(j, "batch", c.batch);
  override_field(j, "lr", c.lr);
  override_field(j, "epochs", c.epochs);
  override_field(j, "aux_multiple", c.aux_multiple);
  return c;
}

}  // namespace detail

inline RunManifest parse_manifest(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir) {
  RunManifest m;
  m.base_dir = base_dir;
  try {
    m.experiment = j.at("experiment").get<std::string>();
    m.model = j.at("model").get<std::string>();
    if (m.model != "gru" && m.model != "encoder-st" && m.model != "encoder-mt") {
      throw ConfigError("manifest model must be gru, encoder-st, or encoder-mt, got '" +
                        m.model + "'");
    }
    if (j.contains("seed")) {
      m.seed = j.at("seed").get<std::uint64_t>();
      m.seed_set = true;
    }
    if (j.contains("output_dir")) {
      m.output_dir = detail::resolve(base_dir, j.at("output_dir").get<std::string>());
    }
    if (j.contains("dev_fraction")) m.dev_fraction = j.at("dev_fraction").get<double>();
    if (j.contains("stratified_split")) m.stratified_split = j.at("stratified_split").get<bool>();
    if (j.contains("strip_pattern") && !j.at("strip_pattern").is_null()) {
      m.strip_pattern = j.at("strip_pattern").get<std::string>();
    }

    const auto& v = j.at("vocab");
    m.vocab_kind = v.at("kind").get<std::string>();
    if (m.vocab_kind != "word" && m.vocab_kind != "subword") {
      throw ConfigError("manifest vocab.kind must be word or subword");
    }
    if (v.contains("max_size")) m.word_vocab_max_size = v.at("max_size").get<int>();
    if (v.contains("path")) {
      m.vocab_path = detail::resolve(base_dir, v.at("path").get<std::string>());
    }
    if (v.contains("train_from")) {
      for (const auto& p : v.at("train_from")) {
        m.vocab_train_from.push_back(detail::resolve(base_dir, p.get<std::string>()));
      }
      m.subword_target_size = v.at("target_size").get<int>();
    }

    for (const auto& t : j.at("tasks")) {
      TaskSpec spec;
      spec.name = t.at("name").get<std::string>();
      spec.labels = t.at("labels").get<std::vector<std::string>>();
      spec.train_path = detail::resolve(base_dir, t.at("train").get<std::string>()).string();
      if (t.contains("dev") && !t.at("dev").is_null()) {
        spec.dev_path = detail::resolve(base_dir, t.at("dev").get<std::string>()).string();
      }
      if (t.contains("target")) spec.is_target = t.at("target").get<bool>();
      m.tasks.push_back(std::move(spec));
    }
    if (m.tasks.empty()) throw ConfigError("manifest declares no tasks");

    if (j.contains("gru")) m.gru_overrides = j.at("gru");
    if (j.contains("encoder")) {
      m.encoder_overrides = j.at("encoder");
      if (m.encoder_overrides.contains("preset")) {
        m.encoder_preset = m.encoder_overrides.at("preset").get<std::string>();
      }
    }
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      if (p.contains("generic_corpus")) {
        m.generic_corpus = detail::resolve(base_dir, p.at("generic_corpus").get<std::string>());
      }
      if (p.contains("indomain_corpus")) {
        m.indomain_corpus = detail::resolve(base_dir, p.at("indomain_corpus").get<std::string>());
      }
      if (p.contains("generic_config")) m.pretrain_generic_config = p.at("generic_config");
      if (p.contains("config")) m.pretrain_indomain_config = p.at("config");
    }
    if (j.contains("initial_checkpoint") && !j.at("initial_checkpoint").is_null()) {
      m.initial_checkpoint =
          detail::resolve(base_dir, j.at("initial_checkpoint").get<std::string>());
    }
    if (j.contains("finetune")) m.finetune_overrides = j.at("finetune");
    if (j.contains("use_all_training_data")) {
      m.use_all_training_data = j.at("use_all_training_data").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad manifest: ") + e.what());
  }
  return m;
}

inline RunManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_manifest(j, path.has_parent_path() ? path.parent_path()
                                                  : std::filesystem::path("."));
}

/// Every referenced input must exist before any phase starts.
inline void validate_manifest(const RunManifest& m) {
  if (!m.seed_set) throw ConfigError("manifest requires an explicit seed");
  if (m.output_dir.empty()) throw ConfigError("manifest requires an output_dir");
  if (m.model == "gru" && m.vocab_kind != "word") {
    throw ConfigError("gru runs use a word vocabulary");
  }
  if (m.model != "gru" && m.vocab_kind != "subword") {
    throw ConfigError("encoder runs use a subword vocabulary");
  }
  if (m.model == "encoder-st" && m.tasks.size() != 1) {
    throw ConfigError("encoder-st takes exactly one task");
  }
  std::vector<std::filesystem::path> required;
  for (const auto& t : m.tasks) {
    required.emplace_back(t.train_path);
    if (!t.dev_path.empty()) required.emplace_back(t.dev_path);
  }
  if (m.vocab_path) required.push_back(*m.vocab_path);
  for (const auto& p : m.vocab_train_from) required.push_back(p);
  if (m.generic_corpus) required.push_back(*m.generic_corpus);
  if (m.indomain_corpus) required.push_back(*m.indomain_corpus);
  if (m.initial_checkpoint) required.push_back(*m.initial_checkpoint);
  for (const auto& p : required) {
    if (!std::filesystem::exists(p)) {
      throw ConfigError("manifest references a missing file: " + p.string());
    }
  }
}

struct RunSummary {
  nlohmann::json json = nlohmann::json::object();
};

/// Exclusive ownership of an output directory for the duration of a run.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir) : lock_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    if (!std::filesystem::create_directory(lock_)) {
      throw ConfigError("output directory is locked by another run: " + dir.string());
    }
  }
  ~OutputLock() {
    std::error_code ec;
    std::filesystem::remove(lock_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path lock_;
};

/// Executes the manifest's phases in order; returns the summary that was
/// also written to <out>/run-summary.json. On phase failure the summary
/// records the failure point, completed artifacts stay on disk, and the
/// exception propagates.
inline RunSummary run(const RunManifest& manifest,
                      const std::optional<std::filesystem::path>& output_override = std::nullopt,
                      bool use_all_training_data_flag = false) {
  RunManifest m = manifest;
  if (output_override) m.output_dir = *output_override;
  if (use_all_training_data_flag) m.use_all_training_data = true;
  validate_manifest(m);

  const std::filesystem::path out = m.output_dir;
  OutputLock lock(out);

  RunSummary summary;
  summary.json["experiment"] = m.experiment;
  summary.json["model"] = m.model;
  summary.json["seed"] = m.seed;
  summary.json["use_all_training_data"] = m.use_all_training_data;
  summary.json["phases"] = nlohmann::json::array();
  nlohmann::json input_hashes = nlohmann::json::object();
  auto hash_input = [&input_hashes](const std::filesystem::path& p) {
    input_hashes[p.string()] = hex64(fnv1a64(read_file(p)));
  };

  auto flush_summary = [&] {
    summary.json["input_hashes"] = input_hashes;
    write_file_atomic(out / "run-summary.json", summary.json.dump(2) + "\n");
  };

  std::string phase = "ingest";
  try {
    // ---- ingest: datasets, splits, vocabulary -------------------------
    for (const auto& t : m.tasks) {
      hash_input(t.train_path);
      if (!t.dev_path.empty()) hash_input(t.dev_path);
    }
    std::vector<std::pair<TaskSpec, TrainDevSplit>> task_data;
    for (const auto& t : m.tasks) {
      auto rows = load_dataset(t.train_path, t.labels, m.strip_pattern);
      TrainDevSplit split;
      if (!t.dev_path.empty()) {
        split.train = std::move(rows);
        split.dev = load_dataset(t.dev_path, t.labels, m.strip_pattern);
      } else {
        split = split_train_dev(std::move(rows), m.dev_fraction,
                                m.seed ^ fnv1a64(t.name), m.stratified_split);
      }
      task_data.emplace_back(t, std::move(split));
    }
    TaskSpec* target_spec = nullptr;
    TrainDevSplit* target_split = nullptr;
    for (auto& [spec, split] : task_data) {
      if (spec.is_target || task_data.size() == 1) {
        target_spec = &spec;
        target_split = &split;
        break;
      }
    }
    if (target_spec == nullptr) throw ConfigError("no target task declared");

    if (m.use_all_training_data) {
      // Fold dev back into train for final training; dev stays as the
      // (now seen) selection split.
      for (const auto& e : target_split->dev) target_split->train.push_back(e);
    }

    Vocabulary vocab;
    if (m.vocab_kind == "word") {
      std::vector<std::string> corpus;
      for (const auto& e : target_split->train) corpus.push_back(e.text);
      vocab = build_word_vocab(corpus, m.word_vocab_max_size);
      vocab.save(out / "vocab-word.txt");
    } else if (m.vocab_path) {
      hash_input(*m.vocab_path);
      vocab = Vocabulary::load(*m.vocab_path);
    } else if (!m.vocab_train_from.empty()) {
      std::vector<std::string> corpus;
      for (const auto& p : m.vocab_train_from) {
        hash_input(p);
        const std::string content = read_file(p);
        for (auto line : split_view(content, '\n')) {
          if (!line.empty()) corpus.emplace_back(line);
        }
      }
      vocab = train_subword_vocab(corpus, m.subword_target_size);
      vocab.save(out / "vocab-subword.txt");
    } else {
      throw ConfigError("manifest vocab needs either a path or train_from corpora");
    }
    summary.json["vocab_fingerprint"] = vocab.fingerprint();
    summary.json["phases"].push_back({{"name", "ingest"}, {"status", "ok"}});

    // ---- model-specific phases ----------------------------------------
    if (m.model == "gru") {
      phase = "train-gru";
      GruConfig cfg = detail::gru_config_from(m.gru_overrides);
      cfg.vocab_size = vocab.size();
      cfg.num_classes = target_spec->num_classes();
      auto train_enc = encode_examples(target_split->train, vocab, cfg.max_len);
      auto dev_enc = encode_examples(target_split->dev, vocab, cfg.max_len);
      GruTrainResult r = train_gru(train_enc, dev_enc, cfg, vocab, m.seed, target_spec->name);
      save_checkpoint(r.best, out / "checkpoints" / "final.ckpt");
      write_file_atomic(out / "metrics" / "train.tsv", serialize_metrics(r.records));
      summary.json["best_epoch"] = r.best_epoch;
      summary.json["phases"].push_back(
          {{"name", "train-gru"}, {"status", "ok"}, {"best_epoch", r.best_epoch}});

      phase = "predict";
      GruParams params = GruParams::from_checkpoint(r.best);
      auto preds = gru_predict(dev_enc, params, cfg, cfg.batch);
      std::string pred_file;
      for (std::size_t i = 0; i < target_split->dev.size(); ++i) {
        pred_file += target_split->dev[i].id + "\t" +
                     target_spec->labels[static_cast<std::size_t>(preds[i].label)] + "\t";
        for (std::size_t c = 0; c < preds[i].probabilities.size(); ++c) {
          if (c) pred_file += ',';
          pred_file += repr(preds[i].probabilities[c]);
        }
        pred_file += '\n';
      }
      write_file_atomic(out / "predictions" / (target_spec->name + "-dev.tsv"), pred_file);
      summary.json["phases"].push_back({{"name", "predict"}, {"status", "ok"}});
    } else {
      EncoderConfig enc_cfg =
          detail::encoder_config_from(m.encoder_preset, m.encoder_overrides, vocab.size());
      std::optional<ModelCheckpoint> current;
      if (m.initial_checkpoint) {
        hash_input(*m.initial_checkpoint);
        current = load_checkpoint(*m.initial_checkpoint);
      }

      if (m.generic_corpus) {
        phase = "pretrain-generic";
        PretrainConfig pc = detail::pretrain_config_from(m.pretrain_generic_config);
        Corpus corpus = load_corpus(*m.generic_corpus, pc.min_doc_words, "generic");
        hash_input(*m.generic_corpus);
        PretrainResult r = pretrain(corpus, enc_cfg, pc, vocab,
                                    RngStream(m.seed).child("phase-generic").seed(), current);
        save_checkpoint(r.checkpoint, out / "checkpoints" / "pretrain-generic.ckpt");
        write_file_atomic(out / "metrics" / "pretrain-generic-loss.tsv",
                          serialize_loss_trace(r.trace));
        current = std::move(r.checkpoint);
        summary.json["phases"].push_back({{"name", "pretrain-generic"}, {"status", "ok"}});
      }
      if (m.indomain_corpus) {
        phase = "pretrain-indomain";
        PretrainConfig pc = detail::pretrain_config_from(m.pretrain_indomain_config);
        Corpus corpus = load_corpus(*m.indomain_corpus, pc.min_doc_words, "in-domain");
        hash_input(*m.indomain_corpus);
        PretrainResult r = pretrain(corpus, enc_cfg, pc, vocab,
                                    RngStream(m.seed).child("phase-indomain").seed(), current);
        save_checkpoint(r.checkpoint, out / "checkpoints" / "pretrain-indomain.ckpt");
        write_file_atomic(out / "metrics" / "pretrain-indomain-loss.tsv",
                          serialize_loss_trace(r.trace));
        current = std::move(r.checkpoint);
        summary.json["phases"].push_back({{"name", "pretrain-indomain"}, {"status", "ok"}});
      }

      phase = "finetune";
      FinetuneConfig fc = detail::finetune_config_from(m.finetune_overrides);
      std::vector<TaskData> tasks;
      for (auto& [spec, split] : task_data) {
        TaskData td;
        td.spec = spec;
        if (task_data.size() == 1) td.spec.is_target = true;
        td.train = encode_examples(split.train, vocab, fc.max_len);
        td.dev = encode_examples(split.dev, vocab, fc.max_len);
        tasks.push_back(std::move(td));
      }
      const FinetuneMode mode =
          m.model == "encoder-st" ? FinetuneMode::single : FinetuneMode::multi;
      FinetuneResult r = finetune(tasks, enc_cfg, fc, vocab,
                                  RngStream(m.seed).child("phase-finetune").seed(), mode,
                                  current);
      save_checkpoint(r.best, out / "checkpoints" / "final.ckpt");
      write_file_atomic(out / "metrics" / "finetune.tsv", serialize_metrics(r.records));
      summary.json["best_epoch"] = r.best_epoch;
      summary.json["phases"].push_back(
          {{"name", "finetune"}, {"status", "ok"}, {"best_epoch", r.best_epoch}});

      phase = "predict";
      std::vector<std::string> texts;
      for (const auto& e : target_split->dev) texts.push_back(e.text);
      auto preds = predict(r.best, target_spec->name, texts, vocab, fc.batch);
      std::string pred_file;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        pred_file += target_split->dev[i].id + "\t" + preds[i].label_name + "\t";
        for (std::size_t c = 0; c < preds[i].probabilities.size(); ++c) {
          if (c) pred_file += ',';
          pred_file += repr(preds[i].probabilities[c]);
        }
        pred_file += '\n';
      }
      write_file_atomic(out / "predictions" / (target_spec->name + "-dev.tsv"), pred_file);
      summary.json["phases"].push_back({{"name", "predict"}, {"status", "ok"}});
    }

    summary.json["status"] = "ok";
    flush_summary();
  } catch (...) {
    summary.json["status"] = "failed";
    summary.json["failed_phase"] = phase;
    flush_summary();
    throw;
  }
  return summary;
}

}  // namespace tinynlp
