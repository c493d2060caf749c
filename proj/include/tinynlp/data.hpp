// SPDX-License-Identifier: Apache-2.0
//
// TSV dataset ingestion and the seeded train/dev split.
//
// Dataset schema: tab-separated rows of (id, text, label name); a first
// line equal to "id<TAB>text<TAB>label" is treated as a header. Labels are
// mapped to indices by the declared label-set order.

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "tinynlp/common.hpp"
#include "tinynlp/vocab.hpp"

namespace tinynlp {

struct Example {
  std::string id;
  std::string text;
  int label = 0;
};

/// Parses TSV content. `strip_pattern`, when set, is an ECMAScript regex
/// whose matches are removed from every text before anything else sees it
/// (off by default).
inline std::vector<Example> parse_dataset(std::string_view content,
                                          std::span<const std::string> label_set,
                                          const std::optional<std::string>& strip_pattern =
                                              std::nullopt) {
  if (label_set.empty()) throw ConfigError("parse_dataset: empty label set");
  std::optional<std::regex> strip;
  if (strip_pattern) strip.emplace(*strip_pattern);

  std::vector<Example> out;
  std::set<std::string> seen_ids;
  auto lines = split_view(content, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (i == 0 && line == "id\ttext\tlabel") continue;
    auto fields = split_view(line, '\t');
    if (fields.size() != 3) {
      throw ParseError("expected 3 tab-separated fields, found " +
                           std::to_string(fields.size()),
                       i + 1);
    }
    Example e;
    e.id = std::string(fields[0]);
    e.text = std::string(fields[1]);
    if (!seen_ids.insert(e.id).second) {
      throw ParseError("duplicate id '" + e.id + "'", i + 1);
    }
    const std::string label(fields[2]);
    auto it = std::find(label_set.begin(), label_set.end(), label);
    if (it == label_set.end()) {
      throw ParseError("label '" + label + "' not in declared label set", i + 1);
    }
    e.label = static_cast<int>(it - label_set.begin());
    if (strip) e.text = std::regex_replace(e.text, *strip, "");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Example> load_dataset(const std::filesystem::path& path,
                                         std::span<const std::string> label_set,
                                         const std::optional<std::string>& strip_pattern =
                                             std::nullopt) {
  return parse_dataset(read_file(path), label_set, strip_pattern);
}

struct TrainDevSplit {
  std::vector<Example> train;
  std::vector<Example> dev;
};

/// Canonical sort by id, seeded shuffle, then split. The dev side takes
/// n - floor(n * (1 - dev_fraction)) rows, which reproduces a 3,621/403
/// split of 4,024 rows at 0.10. Sorting first makes the split invariant to
/// the input row order. `stratified` applies the same rule per class.
inline TrainDevSplit split_train_dev(std::vector<Example> examples, double dev_fraction,
                                     std::uint64_t seed, bool stratified = false) {
  if (dev_fraction <= 0.0 || dev_fraction >= 1.0) {
    throw ConfigError("dev_fraction must lie in (0, 1), got " + repr(dev_fraction));
  }
  if (examples.size() < 2) {
    throw DataError("split_train_dev: need at least 2 examples, got " +
                    std::to_string(examples.size()));
  }
  std::sort(examples.begin(), examples.end(),
            [](const Example& a, const Example& b) { return a.id < b.id; });
  RngStream rng = RngStream(seed).child("split");
  shuffle(examples, rng);

  auto train_count = [dev_fraction](std::size_t n) {
    return static_cast<std::size_t>(
        std::floor(static_cast<double>(n) * (1.0 - dev_fraction) + 1e-9));
  };

  TrainDevSplit out;
  if (!stratified) {
    const std::size_t n_train = train_count(examples.size());
    out.train.assign(examples.begin(), examples.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.dev.assign(examples.begin() + static_cast<std::ptrdiff_t>(n_train), examples.end());
  } else {
    std::map<int, std::vector<Example>> by_class;
    for (auto& e : examples) by_class[e.label].push_back(std::move(e));
    for (auto& [label, members] : by_class) {
      const std::size_t n_train = train_count(members.size());
      for (std::size_t i = 0; i < members.size(); ++i) {
        (i < n_train ? out.train : out.dev).push_back(std::move(members[i]));
      }
    }
  }
  if (out.train.empty() || out.dev.empty()) {
    throw DataError("split_train_dev: a side of the split came up empty");
  }
  return out;
}

inline std::vector<EncodedExample> encode_examples(std::span<const Example> examples,
                                                   const Vocabulary& vocab, int max_len) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back({encode(e.text, vocab, max_len), e.label});
  return out;
}

}  // namespace tinynlp
