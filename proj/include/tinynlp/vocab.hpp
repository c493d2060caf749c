// SPDX-License-Identifier: Apache-2.0
//
// Word-level vocabulary for the recurrent baseline and a trainable
// subword vocabulary (greedy frequency pair merges emitting "##"
// continuation pieces) for the encoder, plus sequence encoding.
//
// Text handling: input is treated as UTF-8 that is already NFC-normalized;
// tokens split on ASCII whitespace, segmentation operates on code points,
// and nothing is case-folded.

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tinynlp/common.hpp"

namespace tinynlp {

enum class VocabKind { word, subword };

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (i < text.size()) {
    while (i < text.size() && is_ws(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_ws(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

inline std::vector<std::string> utf8_codepoints(std::string_view word) {
  std::vector<std::string> cps;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if ((c >> 5) == 0x6) len = 2;
    else if ((c >> 4) == 0xE) len = 3;
    else if ((c >> 3) == 0x1E) len = 4;
    len = std::min(len, word.size() - i);
    cps.emplace_back(word.substr(i, len));
    i += len;
  }
  return cps;
}

/// Token/id bijection with reserved special ids at the lowest indices.
/// Word kind reserves [PAD], [UNK]; subword kind additionally [CLS], [SEP],
/// [MASK], in that fixed order.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;

  Vocabulary() = default;
  Vocabulary(VocabKind kind, std::vector<std::string> tokens) : kind_(kind) {
    const auto& specials = special_tokens(kind);
    for (std::size_t i = 0; i < specials.size(); ++i) {
      if (i >= tokens.size() || tokens[i] != specials[i]) {
        throw ConfigError("vocabulary must start with special tokens in fixed order");
      }
    }
    token_of_ = std::move(tokens);
    for (std::size_t i = 0; i < token_of_.size(); ++i) {
      auto [it, inserted] = id_of_.emplace(token_of_[i], static_cast<int>(i));
      if (!inserted) throw ConfigError("duplicate vocabulary token: " + token_of_[i]);
    }
  }

  static const std::vector<std::string>& special_tokens(VocabKind kind) {
    static const std::vector<std::string> word_specials{"[PAD]", "[UNK]"};
    static const std::vector<std::string> subword_specials{"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                           "[MASK]"};
    return kind == VocabKind::word ? word_specials : subword_specials;
  }

  VocabKind kind() const { return kind_; }
  int size() const { return static_cast<int>(token_of_.size()); }
  int num_specials() const { return static_cast<int>(special_tokens(kind_).size()); }
  bool is_special(int id) const { return id >= 0 && id < num_specials(); }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) {
      throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(size()));
    }
    return token_of_[static_cast<std::size_t>(id)];
  }

  /// Exact lookup including specials; -1 when absent.
  int id(std::string_view token) const {
    auto it = id_of_.find(std::string(token));
    return it == id_of_.end() ? -1 : it->second;
  }

  /// Lookup for tokens coming from raw text: special token strings are not
  /// reachable and map to UNK, preserving the mask/PAD invariants.
  int text_token_id(std::string_view token) const {
    const int found = id(token);
    return (found < 0 || found < num_specials()) ? kUnk : found;
  }

  bool has_piece(const std::string& piece) const {
    const int found = id(piece);
    return found >= num_specials();
  }

  int pad_id() const { return kPad; }
  int unk_id() const { return kUnk; }
  int cls_id() const { return require_subword("cls_id"), kCls; }
  int sep_id() const { return require_subword("sep_id"), kSep; }
  int mask_id() const { return require_subword("mask_id"), kMask; }

  std::string serialize() const {
    std::string out = "tinynlp-vocab v1 kind=";
    out += kind_ == VocabKind::word ? "word" : "subword";
    out += " size=" + std::to_string(size()) + "\n";
    for (const auto& t : token_of_) {
      out += t;
      out += '\n';
    }
    return out;
  }

  /// Content hash of the serialized vocabulary; stored in checkpoints so a
  /// model can refuse to run with the wrong token mapping.
  std::string fingerprint() const { return hex64(fnv1a64(serialize())); }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

  static Vocabulary load(const std::filesystem::path& path) {
    return parse(read_file(path), path.string());
  }

  static Vocabulary parse(std::string_view content, const std::string& origin = "<memory>") {
    auto lines = split_view(content, '\n');
    if (lines.empty()) throw ParseError("empty vocabulary file: " + origin, 1);
    auto header = whitespace_tokens(lines[0]);
    if (header.size() != 4 || header[0] != "tinynlp-vocab" || header[1] != "v1" ||
        header[2].rfind("kind=", 0) != 0 || header[3].rfind("size=", 0) != 0) {
      throw ParseError("bad vocabulary header in " + origin, 1);
    }
    const std::string kind_s = header[2].substr(5);
    VocabKind kind;
    if (kind_s == "word") kind = VocabKind::word;
    else if (kind_s == "subword") kind = VocabKind::subword;
    else throw ParseError("unknown vocabulary kind '" + kind_s + "' in " + origin, 1);
    const auto n = static_cast<std::size_t>(parse_double(header[3].substr(5), 1));
    if (lines.size() < n + 1) {
      throw ParseError("vocabulary file truncated: expected " + std::to_string(n) + " tokens",
                       lines.size());
    }
    std::vector<std::string> tokens;
    tokens.reserve(n);
    for (std::size_t i = 1; i <= n; ++i) tokens.emplace_back(lines[i]);
    return Vocabulary(kind, std::move(tokens));
  }

 private:
  void require_subword(const char* what) const {
    if (kind_ != VocabKind::subword) {
      throw ContractError(std::string(what) + " requires a subword vocabulary");
    }
  }

  VocabKind kind_ = VocabKind::word;
  std::vector<std::string> token_of_;
  std::unordered_map<std::string, int> id_of_;
};

/// Most frequent whitespace types, ties broken lexicographically; total
/// size (specials included) capped at max_size.
inline Vocabulary build_word_vocab(std::span<const std::string> corpus_lines, int max_size) {
  std::map<std::string, long long> counts;
  for (const auto& line : corpus_lines) {
    for (auto& tok : whitespace_tokens(line)) ++counts[tok];
  }
  if (counts.empty()) throw DataError("build_word_vocab: empty corpus");
  auto specials = Vocabulary::special_tokens(VocabKind::word);
  if (max_size <= static_cast<int>(specials.size())) {
    throw ConfigError("build_word_vocab: max_size " + std::to_string(max_size) +
                      " leaves no room beyond the " + std::to_string(specials.size()) +
                      " special tokens");
  }
  std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens(specials.begin(), specials.end());
  const std::size_t room = static_cast<std::size_t>(max_size) - specials.size();
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary(VocabKind::word, std::move(tokens));
}

/// Greedy frequency pair merges over code-point symbols, WordPiece-style
/// "##" continuation marks. Deterministic: ties on pair frequency resolve
/// to the lexicographically smallest (first, second) pair. Produces at most
/// target_size entries; fewer when the corpus runs out of mergeable pairs.
inline Vocabulary train_subword_vocab(std::span<const std::string> corpus_lines,
                                      int target_size) {
  std::map<std::string, long long> word_counts;
  for (const auto& line : corpus_lines) {
    for (auto& tok : whitespace_tokens(line)) ++word_counts[tok];
  }
  if (word_counts.empty()) throw DataError("train_subword_vocab: empty corpus");

  struct WordEntry {
    std::vector<std::string> symbols;
    long long count;
  };
  std::vector<WordEntry> words;
  std::map<std::string, long long> alphabet;
  for (const auto& [word, count] : word_counts) {
    auto cps = utf8_codepoints(word);
    WordEntry e;
    e.count = count;
    for (std::size_t i = 0; i < cps.size(); ++i) {
      std::string sym = i == 0 ? cps[i] : "##" + cps[i];
      alphabet[sym] += count;
      e.symbols.push_back(std::move(sym));
    }
    words.push_back(std::move(e));
  }

  auto specials = Vocabulary::special_tokens(VocabKind::subword);
  std::vector<std::string> tokens(specials.begin(), specials.end());
  for (const auto& [sym, _] : alphabet) tokens.push_back(sym);
  if (target_size < static_cast<int>(tokens.size())) {
    throw ConfigError("train_subword_vocab: target_size " + std::to_string(target_size) +
                      " below specials + alphabet = " + std::to_string(tokens.size()));
  }

  while (static_cast<int>(tokens.size()) < target_size) {
    std::map<std::pair<std::string, std::string>, long long> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    if (pair_counts.empty()) break;
    auto best = pair_counts.begin();
    for (auto it = std::next(pair_counts.begin()); it != pair_counts.end(); ++it) {
      if (it->second > best->second) best = it;  // map order already breaks ties lexically
    }
    const auto& [first, second] = best->first;
    // Continuation marks: "ab" + "##cd" -> "abcd"; "##ab" + "##cd" -> "##abcd".
    std::string merged = first + second.substr(2);
    for (auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size();) {
        if (w.symbols[i] == first && w.symbols[i + 1] == second) {
          w.symbols[i] = merged;
          w.symbols.erase(w.symbols.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        } else {
          ++i;
        }
      }
    }
    tokens.push_back(merged);
  }
  return Vocabulary(VocabKind::subword, std::move(tokens));
}

/// Greedy longest-match-first segmentation of one word; UNK piece when no
/// prefix matches at some point.
inline std::vector<std::string> segment_word(const std::string& word, const Vocabulary& vocab) {
  auto cps = utf8_codepoints(word);
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < cps.size()) {
    std::string best;
    std::size_t best_len = 0;
    std::string cand = i == 0 ? "" : "##";
    for (std::size_t l = i; l < cps.size(); ++l) {
      cand += cps[l];
      if (vocab.has_piece(cand)) {
        best = cand;
        best_len = l - i + 1;
      }
    }
    if (best_len == 0) return {"[UNK]"};  // whole word degrades to UNK
    pieces.push_back(std::move(best));
    i += best_len;
  }
  return pieces;
}

struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> attention_mask;  // 1 exactly on non-PAD positions
  std::vector<int> segment_ids;     // 0/1, sentence-pair tasks
  int original_length = 0;          // token count before pad/truncate

  bool operator==(const TokenSequence&) const = default;
};

struct EncodedExample {
  TokenSequence seq;
  int label = 0;
};

/// Deterministic, pure encoding. Word kind: whitespace tokens to ids with
/// UNK fallback, tail-truncated and PAD-padded to max_len. Subword kind:
/// greedy segmentation wrapped in [CLS] ... [SEP] (pair text appends a
/// second segment and [SEP]); when over length the tail of the currently
/// longer segment is cut first (ties cut the first segment), preserving
/// [CLS] and both [SEP]s.
inline TokenSequence encode(std::string_view text, const Vocabulary& vocab, int max_len,
                            std::optional<std::string_view> pair = std::nullopt) {
  TokenSequence out;
  if (vocab.kind() == VocabKind::word) {
    if (max_len < 1) throw ConfigError("encode: max_len must be positive");
    if (pair.has_value()) throw ConfigError("encode: sentence pairs need a subword vocabulary");
    auto toks = whitespace_tokens(text);
    out.original_length = static_cast<int>(toks.size());
    for (const auto& t : toks) {
      if (static_cast<int>(out.ids.size()) == max_len) break;
      out.ids.push_back(vocab.text_token_id(t));
    }
  } else {
    if (max_len <= 2) {
      throw ConfigError("encode: subword max_len must exceed 2 to fit [CLS] and [SEP]");
    }
    auto seg_ids = [&vocab](std::string_view s) {
      std::vector<int> ids;
      for (const auto& w : whitespace_tokens(s)) {
        for (const auto& piece : segment_word(w, vocab)) {
          ids.push_back(piece == "[UNK]" ? vocab.unk_id() : vocab.id(piece));
        }
      }
      return ids;
    };
    std::vector<int> a = seg_ids(text);
    std::vector<int> b = pair ? seg_ids(*pair) : std::vector<int>{};
    const int n_specials = pair ? 3 : 2;
    out.original_length = static_cast<int>(a.size() + b.size()) + n_specials;
    while (static_cast<int>(a.size() + b.size()) + n_specials > max_len) {
      if (b.size() > a.size()) b.pop_back();
      else if (!a.empty()) a.pop_back();
      else b.pop_back();
    }
    out.ids.push_back(vocab.cls_id());
    for (int idv : a) out.ids.push_back(idv);
    out.ids.push_back(vocab.sep_id());
    out.segment_ids.assign(out.ids.size(), 0);
    if (pair) {
      for (int idv : b) {
        out.ids.push_back(idv);
        out.segment_ids.push_back(1);
      }
      out.ids.push_back(vocab.sep_id());
      out.segment_ids.push_back(1);
    }
  }
  out.ids.resize(static_cast<std::size_t>(max_len), vocab.pad_id());
  out.segment_ids.resize(static_cast<std::size_t>(max_len), 0);
  out.attention_mask.resize(static_cast<std::size_t>(max_len));
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    out.attention_mask[i] = out.ids[i] == vocab.pad_id() ? 0 : 1;
  }
  return out;
}

/// Inverse of encode for in-vocabulary text: drops specials, re-joins "##"
/// continuations, separates words with single spaces.
inline std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int idv : ids) {
    if (vocab.is_special(idv)) continue;
    const std::string& tok = vocab.token(idv);
    if (tok.rfind("##", 0) == 0) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

inline std::string decode(const TokenSequence& seq, const Vocabulary& vocab) {
  return decode(seq.ids, vocab);
}

}  // namespace tinynlp
