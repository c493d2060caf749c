// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synthetic data generation, vocabulary building,
// pre-training, fine-tuning, evaluation, prediction, and manifest-driven
// experiment runs. Every training subcommand requires an explicit --seed;
// nothing is read from environment state.

#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tinynlp/data.hpp"
#include "tinynlp/gru.hpp"
#include "tinynlp/manifest.hpp"
#include "tinynlp/metrics.hpp"
#include "tinynlp/mtl.hpp"
#include "tinynlp/pretrain.hpp"
#include "tinynlp/synthetic.hpp"
#include "tinynlp/vocab.hpp"

namespace {

using namespace tinynlp;

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  const std::string content = read_file(path);
  for (auto v : split_view(content, '\n')) {
    if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
    if (!v.empty()) lines.emplace_back(v);
  }
  return lines;
}

// Task descriptor: name=NAME,labels=a|b|c,train=PATH[,dev=PATH][,target]
TaskSpec parse_task_descriptor(const std::string& descriptor) {
  TaskSpec spec;
  for (auto field : split_view(descriptor, ',')) {
    if (field == "target") {
      spec.is_target = true;
      continue;
    }
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("bad task descriptor field '" + std::string(field) + "'");
    }
    const std::string key(field.substr(0, eq));
    const std::string value(field.substr(eq + 1));
    if (key == "name") {
      spec.name = value;
    } else if (key == "labels") {
      for (auto l : split_view(value, '|')) spec.labels.emplace_back(l);
    } else if (key == "train") {
      spec.train_path = value;
    } else if (key == "dev") {
      spec.dev_path = value;
    } else {
      throw ConfigError("unknown task descriptor key '" + key + "'");
    }
  }
  if (spec.name.empty() || spec.labels.empty() || spec.train_path.empty()) {
    throw ConfigError("task descriptor needs name=, labels=, and train=");
  }
  return spec;
}

struct EncoderFlags {
  std::string preset = "desk";
  int layers = -1, hidden = -1, heads = -1, ffn_inner = -1, max_len = -1;
  double dropout = -1.0;
  std::string activation;

  void attach(CLI::App* cmd) {
    cmd->add_option("--encoder-preset", preset, "desk or paper-full");
    cmd->add_option("--layers", layers);
    cmd->add_option("--hidden", hidden);
    cmd->add_option("--heads", heads);
    cmd->add_option("--ffn-inner", ffn_inner);
    cmd->add_option("--max-len", max_len);
    cmd->add_option("--dropout", dropout);
    cmd->add_option("--activation", activation, "gelu, relu, or tanh");
  }

  EncoderConfig build(int vocab_size) const {
    EncoderConfig cfg = preset == "paper-full" ? EncoderConfig::paper_full(vocab_size)
                                               : EncoderConfig::desk(vocab_size);
    if (layers >= 0) cfg.layers = layers;
    if (hidden > 0) cfg.hidden = hidden;
    if (heads > 0) cfg.heads = heads;
    if (ffn_inner > 0) cfg.ffn_inner = ffn_inner;
    if (max_len > 0) cfg.max_len = max_len;
    if (dropout >= 0) cfg.dropout = dropout;
    if (!activation.empty()) cfg.activation = activation;
    return cfg;
  }
};

int run_cli(int argc, char** argv) {
  CLI::App app{"desk-scale text-classification training stack"};
  app.require_subcommand(1);

  // ---- gen-synthetic --------------------------------------------------
  auto* gen = app.add_subcommand("gen-synthetic", "write synthetic task and corpus files");
  std::string gen_out;
  SyntheticOptions gen_opt;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_opt.seed, "generator seed")->required();
  gen->add_option("--examples", gen_opt.examples_per_task, "rows per task file");
  gen->add_option("--corpus-lines", gen_opt.corpus_lines, "lines per corpus file");
  gen->callback([&] {
    generate_synthetic(gen_out, gen_opt);
    std::cout << "wrote synthetic data under " << gen_out << "\n";
  });

  // ---- build-vocab ----------------------------------------------------
  auto* bv = app.add_subcommand("build-vocab", "build a word or subword vocabulary file");
  std::string bv_kind, bv_out;
  std::vector<std::string> bv_corpora;
  int bv_max_size = 22000, bv_target_size = 0;
  bv->add_option("--kind", bv_kind, "word or subword")->required();
  bv->add_option("--out", bv_out, "vocabulary file to write")->required();
  bv->add_option("--corpus", bv_corpora, "corpus file(s), one document per line")->required();
  bv->add_option("--max-size", bv_max_size, "word vocabulary cap (specials included)");
  bv->add_option("--target-size", bv_target_size, "subword vocabulary size");
  bv->callback([&] {
    std::vector<std::string> lines;
    for (const auto& p : bv_corpora) {
      auto more = read_lines(p);
      lines.insert(lines.end(), more.begin(), more.end());
    }
    Vocabulary v;
    if (bv_kind == "word") {
      v = build_word_vocab(lines, bv_max_size);
    } else if (bv_kind == "subword") {
      if (bv_target_size <= 0) throw ConfigError("subword vocabularies need --target-size");
      v = train_subword_vocab(lines, bv_target_size);
    } else {
      throw ConfigError("--kind must be word or subword");
    }
    v.save(bv_out);
    std::cout << "wrote " << v.size() << "-entry " << bv_kind << " vocabulary to " << bv_out
              << " (fingerprint " << v.fingerprint() << ")\n";
  });

  // ---- pretrain -------------------------------------------------------
  auto* pt = app.add_subcommand("pretrain", "masked-LM + next-sentence pre-training");
  std::string pt_corpus, pt_vocab, pt_out, pt_trace, pt_initial, pt_provenance = "generic";
  std::uint64_t pt_seed = 0;
  PretrainConfig pt_cfg;
  EncoderFlags pt_enc;
  pt->add_option("--corpus", pt_corpus, "text corpus, one document per line")->required();
  pt->add_option("--vocab", pt_vocab, "subword vocabulary file")->required();
  pt->add_option("--out", pt_out, "checkpoint to write")->required();
  pt->add_option("--seed", pt_seed, "run seed")->required();
  pt->add_option("--loss-trace", pt_trace, "per-epoch loss file to write");
  pt->add_option("--initial", pt_initial, "checkpoint to continue from");
  pt->add_option("--provenance", pt_provenance, "generic or in-domain");
  pt->add_option("--epochs", pt_cfg.epochs);
  pt->add_option("--batch", pt_cfg.batch);
  pt->add_option("--lr", pt_cfg.lr);
  pt->add_option("--mask-rate", pt_cfg.mask_rate);
  pt->add_option("--min-doc-words", pt_cfg.min_doc_words);
  pt_enc.attach(pt);
  pt->callback([&] {
    Vocabulary vocab = Vocabulary::load(pt_vocab);
    EncoderConfig enc_cfg = pt_enc.build(vocab.size());
    Corpus corpus = load_corpus(pt_corpus, pt_cfg.min_doc_words, pt_provenance);
    std::optional<ModelCheckpoint> initial;
    if (!pt_initial.empty()) initial = load_checkpoint(pt_initial);
    PretrainResult r = pretrain(corpus, enc_cfg, pt_cfg, vocab, pt_seed, initial);
    save_checkpoint(r.checkpoint, pt_out);
    if (!pt_trace.empty()) write_file_atomic(pt_trace, serialize_loss_trace(r.trace));
    for (const auto& e : r.trace) {
      std::cout << "epoch " << e.epoch << "  mlm " << e.mlm_loss << "  nsp " << e.nsp_loss
                << "\n";
    }
    std::cout << "wrote " << pt_out << "\n";
  });

  // ---- finetune -------------------------------------------------------
  auto* ft = app.add_subcommand("finetune", "single- or multi-task fine-tuning");
  std::vector<std::string> ft_tasks;
  std::string ft_vocab, ft_out_dir, ft_initial, ft_mode = "multi";
  std::uint64_t ft_seed = 0;
  double ft_dev_fraction = 0.10;
  FinetuneConfig ft_cfg;
  EncoderFlags ft_enc;
  ft->add_option("--task", ft_tasks,
                 "task descriptor: name=N,labels=a|b|c,train=PATH[,dev=PATH][,target]")
      ->required();
  ft->add_option("--vocab", ft_vocab, "subword vocabulary file")->required();
  ft->add_option("--out", ft_out_dir, "output directory")->required();
  ft->add_option("--seed", ft_seed, "run seed")->required();
  ft->add_option("--initial", ft_initial, "encoder checkpoint to start from");
  ft->add_option("--mode", ft_mode, "single or multi");
  ft->add_option("--dev-fraction", ft_dev_fraction, "dev split when no dev file is given");
  ft->add_option("--epochs", ft_cfg.epochs);
  ft->add_option("--batch", ft_cfg.batch);
  ft->add_option("--lr", ft_cfg.lr);
  ft->add_option("--finetune-max-len", ft_cfg.max_len);
  ft->add_option("--aux-multiple", ft_cfg.aux_multiple);
  ft_enc.attach(ft);
  ft->callback([&] {
    Vocabulary vocab = Vocabulary::load(ft_vocab);
    EncoderConfig enc_cfg = ft_enc.build(vocab.size());
    std::vector<TaskData> tasks;
    for (const auto& d : ft_tasks) {
      TaskSpec spec = parse_task_descriptor(d);
      auto rows = load_dataset(spec.train_path, spec.labels);
      TrainDevSplit split;
      if (!spec.dev_path.empty()) {
        split.train = std::move(rows);
        split.dev = load_dataset(spec.dev_path, spec.labels);
      } else {
        split = split_train_dev(std::move(rows), ft_dev_fraction,
                                ft_seed ^ fnv1a64(spec.name));
      }
      TaskData td;
      td.spec = spec;
      if (ft_tasks.size() == 1) td.spec.is_target = true;
      td.train = encode_examples(split.train, vocab, ft_cfg.max_len);
      td.dev = encode_examples(split.dev, vocab, ft_cfg.max_len);
      tasks.push_back(std::move(td));
    }
    std::optional<ModelCheckpoint> initial;
    if (!ft_initial.empty()) initial = load_checkpoint(ft_initial);
    const FinetuneMode mode = ft_mode == "single" ? FinetuneMode::single : FinetuneMode::multi;
    FinetuneResult r = finetune(tasks, enc_cfg, ft_cfg, vocab, ft_seed, mode, initial);
    std::filesystem::path out(ft_out_dir);
    save_checkpoint(r.best, out / "final.ckpt");
    write_file_atomic(out / "metrics.tsv", serialize_metrics(r.records));
    std::cout << "best epoch " << r.best_epoch << "; wrote " << (out / "final.ckpt").string()
              << "\n";
  });

  // ---- evaluate -------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "score a predictions file against gold labels");
  std::string ev_pred, ev_gold, ev_labels, ev_out;
  ev->add_option("--pred", ev_pred, "predictions TSV (id, label, probabilities)")->required();
  ev->add_option("--gold", ev_gold, "gold dataset TSV (id, text, label)")->required();
  ev->add_option("--labels", ev_labels, "comma-separated label set in index order")->required();
  ev->add_option("--out", ev_out, "metrics file to write");
  ev->callback([&] {
    std::vector<std::string> labels;
    for (auto l : split_view(ev_labels, ',')) labels.emplace_back(l);
    auto gold_rows = load_dataset(ev_gold, labels);
    std::map<std::string, int> gold_by_id;
    for (const auto& e : gold_rows) gold_by_id[e.id] = e.label;

    std::vector<int> preds, golds;
    const std::string pred_content = read_file(ev_pred);
    auto lines = split_view(pred_content, '\n');
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto fields = split_view(lines[i], '\t');
      if (fields.size() < 2) throw ParseError("predictions line needs id and label", i + 1);
      const std::string id(fields[0]);
      const std::string label(fields[1]);
      auto git = gold_by_id.find(id);
      if (git == gold_by_id.end()) {
        throw ParseError("prediction id '" + id + "' not in gold", i + 1);
      }
      auto lit = std::find(labels.begin(), labels.end(), label);
      if (lit == labels.end()) {
        throw ParseError("unknown predicted label '" + label + "'", i + 1);
      }
      preds.push_back(static_cast<int>(lit - labels.begin()));
      golds.push_back(git->second);
    }
    MacroF1 f1 = macro_f1(preds, golds, static_cast<int>(labels.size()));
    const double acc = accuracy(preds, golds);
    std::printf("accuracy %.4f  macro_f1 %.4f\n", acc, f1.value);
    for (std::size_t c = 0; c < f1.per_class.size(); ++c) {
      std::printf("  %-16s p %.4f  r %.4f  f1 %.4f\n", labels[c].c_str(),
                  f1.per_class[c].precision, f1.per_class[c].recall, f1.per_class[c].f1);
    }
    if (!ev_out.empty()) {
      MetricsRecord rec{0, "test", "evaluate", acc, f1.value, f1.per_class};
      write_file_atomic(ev_out, serialize_metrics_line(rec));
    }
  });

  // ---- predict ----------------------------------------------------------
  auto* pr = app.add_subcommand("predict", "label texts with a fine-tuned checkpoint");
  std::string pr_ckpt, pr_vocab, pr_task, pr_input, pr_out;
  pr->add_option("--checkpoint", pr_ckpt)->required();
  pr->add_option("--vocab", pr_vocab)->required();
  pr->add_option("--task", pr_task, "head to use")->required();
  pr->add_option("--input", pr_input, "TSV with id<TAB>text (extra columns ignored)")
      ->required();
  pr->add_option("--out", pr_out, "predictions file to write")->required();
  pr->callback([&] {
    Vocabulary vocab = Vocabulary::load(pr_vocab);
    ModelCheckpoint ckpt = load_checkpoint(pr_ckpt);
    std::vector<std::string> ids, texts;
    const std::string input_content = read_file(pr_input);
    auto lines = split_view(input_content, '\n');
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string_view line = lines[i];
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty()) continue;
      if (i == 0 && line.rfind("id\t", 0) == 0) continue;
      auto fields = split_view(line, '\t');
      if (fields.size() < 2) throw ParseError("input line needs id<TAB>text", i + 1);
      ids.emplace_back(fields[0]);
      texts.emplace_back(fields[1]);
    }
    auto preds = predict(ckpt, pr_task, texts, vocab);
    std::string out_content;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      out_content += ids[i] + "\t" + preds[i].label_name + "\t";
      for (std::size_t c = 0; c < preds[i].probabilities.size(); ++c) {
        if (c) out_content += ',';
        out_content += repr(preds[i].probabilities[c]);
      }
      out_content += '\n';
    }
    write_file_atomic(pr_out, out_content);
    std::cout << "wrote " << preds.size() << " predictions to " << pr_out << "\n";
  });

  // ---- run --------------------------------------------------------------
  auto* rn = app.add_subcommand("run", "execute a manifest end to end");
  std::string rn_manifest, rn_out;
  bool rn_all_data = false;
  rn->add_option("--manifest", rn_manifest, "manifest JSON file")->required();
  rn->add_option("--output-dir", rn_out, "override the manifest output_dir");
  rn->add_flag("--use-all-training-data", rn_all_data,
               "fold the dev split back into training before the final phase");
  rn->callback([&] {
    RunManifest m = load_manifest(rn_manifest);
    std::optional<std::filesystem::path> out_override;
    if (!rn_out.empty()) out_override = rn_out;
    run(m, out_override, rn_all_data);
    std::cout << "run '" << m.experiment << "' finished; summary at "
              << ((out_override ? *out_override : m.output_dir) / "run-summary.json").string()
              << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const tinynlp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
