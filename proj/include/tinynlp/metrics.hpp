// SPDX-License-Identifier: Apache-2.0
//
// Accuracy and macro-averaged F1 with best-epoch selection. Any 0/0
// precision or recall ratio is defined as 0; the macro average runs over
// all declared classes, including ones absent from the gold labels.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "tinynlp/common.hpp"

namespace tinynlp {

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MacroF1 {
  double value = 0.0;
  std::vector<ClassScore> per_class;
};

inline void check_eval_inputs(std::span<const int> preds, std::span<const int> golds) {
  if (preds.empty() || golds.empty()) throw DataError("metrics: empty prediction or gold list");
  if (preds.size() != golds.size()) {
    throw DataError("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(golds.size()) + " golds");
  }
}

inline double accuracy(std::span<const int> preds, std::span<const int> golds) {
  check_eval_inputs(preds, golds);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

inline MacroF1 macro_f1(std::span<const int> preds, std::span<const int> golds, int num_classes) {
  check_eval_inputs(preds, golds);
  if (num_classes <= 0) throw ConfigError("macro_f1: num_classes must be positive");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int v : {preds[i], golds[i]}) {
      if (v < 0 || v >= num_classes) {
        throw LabelError("macro_f1: label " + std::to_string(v) + " at index " +
                         std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }
  std::vector<long long> tp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long long> fp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long long> fn(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == golds[i]) {
      ++tp[static_cast<std::size_t>(golds[i])];
    } else {
      ++fp[static_cast<std::size_t>(preds[i])];
      ++fn[static_cast<std::size_t>(golds[i])];
    }
  }
  MacroF1 out;
  out.per_class.resize(static_cast<std::size_t>(num_classes));
  double total = 0.0;
  for (std::size_t c = 0; c < out.per_class.size(); ++c) {
    auto& s = out.per_class[c];
    const double p_den = static_cast<double>(tp[c] + fp[c]);
    const double r_den = static_cast<double>(tp[c] + fn[c]);
    s.precision = p_den == 0.0 ? 0.0 : static_cast<double>(tp[c]) / p_den;
    s.recall = r_den == 0.0 ? 0.0 : static_cast<double>(tp[c]) / r_den;
    s.f1 = (s.precision + s.recall) == 0.0 ? 0.0
                                           : 2.0 * s.precision * s.recall /
                                                 (s.precision + s.recall);
    total += s.f1;
  }
  out.value = total / static_cast<double>(num_classes);
  return out;
}

struct MetricsRecord {
  int epoch = 0;
  std::string split;  // train | dev | test
  std::string task;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassScore> per_class;
};

/// Epoch with the highest dev macro F1; ties go to the earlier epoch.
inline int select_best(std::span<const MetricsRecord> records) {
  bool found = false;
  int best_epoch = 0;
  double best_f1 = 0.0;
  for (const auto& r : records) {
    if (r.split != "dev") continue;
    if (!found || r.macro_f1 > best_f1) {
      found = true;
      best_f1 = r.macro_f1;
      best_epoch = r.epoch;
    }
  }
  if (!found) throw DataError("select_best: no dev records");
  return best_epoch;
}

/// One record per line, fixed field order:
/// epoch<TAB>split<TAB>task<TAB>accuracy<TAB>macro_f1<TAB>p:r:f1,p:r:f1,...
/// Values use shortest round-trip decimals so a parsed trace selects the
/// same best epoch as the in-memory one.
inline std::string serialize_metrics_line(const MetricsRecord& r) {
  std::string line = std::to_string(r.epoch) + "\t" + r.split + "\t" + r.task + "\t" +
                     repr(r.accuracy) + "\t" + repr(r.macro_f1) + "\t";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    if (c) line += ',';
    line += repr(r.per_class[c].precision) + ":" + repr(r.per_class[c].recall) + ":" +
            repr(r.per_class[c].f1);
  }
  return line + "\n";
}

inline MetricsRecord parse_metrics_line(std::string_view line, std::size_t line_no = 0) {
  auto fields = split_view(line, '\t');
  if (fields.size() != 6) throw ParseError("metrics line needs 6 fields", line_no);
  MetricsRecord r;
  r.epoch = static_cast<int>(parse_double(fields[0], line_no));
  r.split = std::string(fields[1]);
  r.task = std::string(fields[2]);
  r.accuracy = parse_double(fields[3], line_no);
  r.macro_f1 = parse_double(fields[4], line_no);
  if (!fields[5].empty()) {
    for (auto cls : split_view(fields[5], ',')) {
      auto prf = split_view(cls, ':');
      if (prf.size() != 3) throw ParseError("per-class scores need p:r:f1", line_no);
      r.per_class.push_back({parse_double(prf[0], line_no), parse_double(prf[1], line_no),
                             parse_double(prf[2], line_no)});
    }
  }
  return r;
}

inline std::string serialize_metrics(std::span<const MetricsRecord> records) {
  std::string out;
  for (const auto& r : records) out += serialize_metrics_line(r);
  return out;
}

inline std::vector<MetricsRecord> parse_metrics(std::string_view content) {
  std::vector<MetricsRecord> out;
  auto lines = split_view(content, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    out.push_back(parse_metrics_line(lines[i], i + 1));
  }
  return out;
}

}  // namespace tinynlp
