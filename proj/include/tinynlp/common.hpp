// SPDX-License-Identifier: Apache-2.0
//
// Shared plumbing: error types, the seeded counter-based RNG, content
// hashing, and atomic file IO. Every other header builds on this one.

#pragma once

#include <cmath>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tinynlp {

// --------------------------------------------------------------- errors

/// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimension mismatch; message names the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (rate out of range, bad preset, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unusable input data (empty corpus, empty split, too few documents).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Class label outside the declared range; message carries the index.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// API contract violation (non-scalar loss, out-of-range id, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Optimizer state arrays out of sync with their parameter.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Unknown task name; message lists the available heads.
class TaskLookupError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint load/save failure with a machine-checkable kind.
class CheckpointError : public Error {
 public:
  enum class Kind {
    version_mismatch,
    fingerprint_mismatch,
    truncated,
    corrupted,
    config_mismatch,
    io,
  };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline std::string format_shape(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// -------------------------------------------------------------- hashing

/// FNV-1a 64-bit over raw bytes.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

/// CRC-32 (IEEE, reflected). Detects any single-bit flip in the block.
inline std::uint32_t crc32(const void* data, std::size_t n) {
  static const auto table = [] {
    std::vector<std::uint32_t> t(256);
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

// ------------------------------------------------------------------ rng

/// Counter-based pseudorandom stream.
///
/// Draw number i (1-based) returns splitmix64_mix(seed + i * 2^64/phi), so a
/// stream is a pure function of (seed, draw index): identical seeds replay
/// identical sequences on every platform. Sub-streams are derived from the
/// parent seed and a tag, independent of how much the parent has consumed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draw_count() const { return draw_count_; }

  std::uint64_t next_u64() {
    ++draw_count_;
    std::uint64_t z = seed_ + draw_count_ * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 usable bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller, cosine branch, two draws per value.
  double next_gaussian() {
    const double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Unbiased integer in [0, n) via rejection.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw ContractError("next_below: n must be positive");
    const std::uint64_t limit = ~0ull - ~0ull % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  bool next_bernoulli(double p) { return next_double() < p; }

  /// Derived stream keyed by (seed, tag); consumption of the parent does not
  /// shift the child.
  RngStream child(std::string_view tag) const {
    std::uint64_t h = fnv1a64(&seed_, sizeof(seed_));
    h = fnv1a64(tag, h);
    return RngStream(h);
  }

  RngStream child(std::string_view tag, std::uint64_t index) const {
    std::uint64_t h = fnv1a64(&seed_, sizeof(seed_));
    h = fnv1a64(tag, h);
    h = fnv1a64(&index, sizeof(index), h);
    return RngStream(h);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t draw_count_ = 0;
};

/// Seeded Fisher-Yates; identical to no std facility so the permutation is
/// stable across standard libraries.
template <class T>
void shuffle(std::vector<T>& v, RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.next_below(i))]);
  }
}

// ------------------------------------------------------------------- io

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write-to-temp-then-rename so readers never observe a half-written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Shortest decimal representation that round-trips the double exactly, so
/// that serialized metrics re-parse to the same bits.
inline std::string repr(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

inline double parse_double(std::string_view s, std::size_t line = 0) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ParseError("bad number: '" + std::string(s) + "'", line);
  }
  return v;
}

inline std::vector<std::string_view> split_view(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace tinynlp
