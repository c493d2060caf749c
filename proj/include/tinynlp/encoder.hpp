// SPDX-License-Identifier: Apache-2.0
//
// Multi-layer bidirectional transformer encoder: multi-head scaled-dot
// self-attention and a position-wise feed-forward network per layer, each
// sublayer wrapped in residual-add followed by layer norm (post-norm).
// Learned absolute position embeddings; token + position + segment
// embeddings are summed with no embedding-level norm, so a zero-layer
// stack returns the raw embedded input. Classification reads a pooled
// vector: tanh(linear(state at the [CLS] position)).

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tinynlp/checkpoint.hpp"
#include "tinynlp/tensor.hpp"
#include "tinynlp/vocab.hpp"

namespace tinynlp {

struct EncoderConfig {
  int layers = 4;
  int hidden = 128;
  int heads = 4;
  int ffn_inner = 512;
  int max_len = 50;
  int vocab_size = 0;
  double dropout = 0.1;
  std::string activation = "gelu";  // gelu | relu | tanh
  bool pooled_for_heads = true;     // heads consume the pooled CLS vector

  /// Desk-scale preset: pre-training runs in minutes on a CPU.
  static EncoderConfig desk(int vocab_size, int max_len = 50) {
    EncoderConfig c;
    c.vocab_size = vocab_size;
    c.max_len = max_len;
    return c;
  }

  /// Full-scale shape of the reference setup; constructible, not exercised
  /// by the test suite.
  static EncoderConfig paper_full(int vocab_size) {
    EncoderConfig c;
    c.layers = 12;
    c.hidden = 768;
    c.heads = 12;
    c.ffn_inner = 3072;
    c.vocab_size = vocab_size;
    return c;
  }

  int head_dim() const { return hidden / heads; }

  void validate() const {
    if (layers < 0 || hidden <= 0 || heads <= 0 || ffn_inner <= 0 || max_len <= 0 ||
        vocab_size <= 0) {
      throw ConfigError("encoder config fields must be positive");
    }
    if (hidden % heads != 0) {
      throw ConfigError("encoder hidden " + std::to_string(hidden) +
                        " not divisible by heads " + std::to_string(heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw ConfigError("encoder dropout must lie in [0, 1)");
    }
    if (activation != "gelu" && activation != "relu" && activation != "tanh") {
      throw ConfigError("unknown encoder activation '" + activation + "'");
    }
  }

  nlohmann::json to_json() const {
    return {{"kind", "encoder"},
            {"layers", layers},
            {"hidden", hidden},
            {"heads", heads},
            {"ffn_inner", ffn_inner},
            {"max_len", max_len},
            {"vocab_size", vocab_size},
            {"dropout", dropout},
            {"activation", activation},
            {"pooled_for_heads", pooled_for_heads}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.layers = j.at("layers").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_inner = j.at("ffn_inner").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.activation = j.at("activation").get<std::string>();
    c.pooled_for_heads = j.at("pooled_for_heads").get<bool>();
    return c;
  }
};

struct EncoderLayerParams {
  Tensor query_w, query_b;
  Tensor key_w, key_b;
  Tensor value_w, value_b;
  Tensor attn_out_w, attn_out_b;
  Tensor ln_attn_gain, ln_attn_bias;
  Tensor ffn_in_w, ffn_in_b;
  Tensor ffn_out_w, ffn_out_b;
  Tensor ln_ffn_gain, ln_ffn_bias;
};

struct EncoderParams {
  Tensor token_embedding;     // [vocab x hidden]
  Tensor position_embedding;  // [max_len x hidden]
  Tensor segment_embedding;   // [2 x hidden]
  std::vector<EncoderLayerParams> layers;
  Tensor pooler_w, pooler_b;

  static EncoderParams init(const EncoderConfig& cfg, RngStream& rng) {
    cfg.validate();
    const double sd = 0.02;
    auto w = [&](int rows, int cols) { return Tensor::randn({rows, cols}, rng, 0.0, sd, true); };
    auto b = [](int n) { return Tensor::zeros({n}, true); };
    EncoderParams p;
    p.token_embedding = w(cfg.vocab_size, cfg.hidden);
    p.position_embedding = w(cfg.max_len, cfg.hidden);
    p.segment_embedding = w(2, cfg.hidden);
    for (int l = 0; l < cfg.layers; ++l) {
      EncoderLayerParams lp;
      lp.query_w = w(cfg.hidden, cfg.hidden);
      lp.query_b = b(cfg.hidden);
      lp.key_w = w(cfg.hidden, cfg.hidden);
      lp.key_b = b(cfg.hidden);
      lp.value_w = w(cfg.hidden, cfg.hidden);
      lp.value_b = b(cfg.hidden);
      lp.attn_out_w = w(cfg.hidden, cfg.hidden);
      lp.attn_out_b = b(cfg.hidden);
      lp.ln_attn_gain = Tensor::full({cfg.hidden}, 1.0, true);
      lp.ln_attn_bias = b(cfg.hidden);
      lp.ffn_in_w = w(cfg.hidden, cfg.ffn_inner);
      lp.ffn_in_b = b(cfg.ffn_inner);
      lp.ffn_out_w = w(cfg.ffn_inner, cfg.hidden);
      lp.ffn_out_b = b(cfg.hidden);
      lp.ln_ffn_gain = Tensor::full({cfg.hidden}, 1.0, true);
      lp.ln_ffn_bias = b(cfg.hidden);
      p.layers.push_back(std::move(lp));
    }
    p.pooler_w = w(cfg.hidden, cfg.hidden);
    p.pooler_b = b(cfg.hidden);
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out{
        {"embeddings.token", token_embedding},
        {"embeddings.position", position_embedding},
        {"embeddings.segment", segment_embedding}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string base = "layers." + std::to_string(l) + ".";
      const auto& lp = layers[l];
      out.emplace_back(base + "attention.query.weight", lp.query_w);
      out.emplace_back(base + "attention.query.bias", lp.query_b);
      out.emplace_back(base + "attention.key.weight", lp.key_w);
      out.emplace_back(base + "attention.key.bias", lp.key_b);
      out.emplace_back(base + "attention.value.weight", lp.value_w);
      out.emplace_back(base + "attention.value.bias", lp.value_b);
      out.emplace_back(base + "attention.output.weight", lp.attn_out_w);
      out.emplace_back(base + "attention.output.bias", lp.attn_out_b);
      out.emplace_back(base + "attention.norm.gain", lp.ln_attn_gain);
      out.emplace_back(base + "attention.norm.bias", lp.ln_attn_bias);
      out.emplace_back(base + "ffn.in.weight", lp.ffn_in_w);
      out.emplace_back(base + "ffn.in.bias", lp.ffn_in_b);
      out.emplace_back(base + "ffn.out.weight", lp.ffn_out_w);
      out.emplace_back(base + "ffn.out.bias", lp.ffn_out_b);
      out.emplace_back(base + "ffn.norm.gain", lp.ln_ffn_gain);
      out.emplace_back(base + "ffn.norm.bias", lp.ln_ffn_bias);
    }
    out.emplace_back("pooler.weight", pooler_w);
    out.emplace_back("pooler.bias", pooler_b);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  static EncoderParams from_checkpoint(const ModelCheckpoint& ckpt, const EncoderConfig& cfg) {
    auto tensor_of = [&ckpt](const std::string& name) {
      const NamedParam& p = ckpt.require(name);
      return Tensor::from_data(p.shape, p.values, true);
    };
    EncoderParams p;
    p.token_embedding = tensor_of("embeddings.token");
    p.position_embedding = tensor_of("embeddings.position");
    p.segment_embedding = tensor_of("embeddings.segment");
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string base = "layers." + std::to_string(l) + ".";
      EncoderLayerParams lp;
      lp.query_w = tensor_of(base + "attention.query.weight");
      lp.query_b = tensor_of(base + "attention.query.bias");
      lp.key_w = tensor_of(base + "attention.key.weight");
      lp.key_b = tensor_of(base + "attention.key.bias");
      lp.value_w = tensor_of(base + "attention.value.weight");
      lp.value_b = tensor_of(base + "attention.value.bias");
      lp.attn_out_w = tensor_of(base + "attention.output.weight");
      lp.attn_out_b = tensor_of(base + "attention.output.bias");
      lp.ln_attn_gain = tensor_of(base + "attention.norm.gain");
      lp.ln_attn_bias = tensor_of(base + "attention.norm.bias");
      lp.ffn_in_w = tensor_of(base + "ffn.in.weight");
      lp.ffn_in_b = tensor_of(base + "ffn.in.bias");
      lp.ffn_out_w = tensor_of(base + "ffn.out.weight");
      lp.ffn_out_b = tensor_of(base + "ffn.out.bias");
      lp.ln_ffn_gain = tensor_of(base + "ffn.norm.gain");
      lp.ln_ffn_bias = tensor_of(base + "ffn.norm.bias");
      p.layers.push_back(std::move(lp));
    }
    p.pooler_w = tensor_of("pooler.weight");
    p.pooler_b = tensor_of("pooler.bias");
    return p;
  }
};

/// Architecture compatibility for loading encoder weights: every field must
/// match except max_len, which may shrink (the stored position table just
/// needs at least as many rows as the new sequence length). Pre-training
/// long and fine-tuning short is the normal workflow.
inline void require_compatible_encoder_config(const nlohmann::json& stored,
                                              const EncoderConfig& wanted) {
  nlohmann::json a = stored;
  nlohmann::json b = wanted.to_json();
  const int stored_max_len = a.value("max_len", 0);
  a.erase("max_len");
  b.erase("max_len");
  require_matching_config(a, b);
  if (wanted.max_len > stored_max_len) {
    throw CheckpointError(CheckpointError::Kind::config_mismatch,
                          "checkpoint position table covers max_len " +
                              std::to_string(stored_max_len) + ", run wants " +
                              std::to_string(wanted.max_len));
  }
}

inline Tensor activation_fn(const std::string& name, const Tensor& x) {
  if (name == "gelu") return gelu(x);
  if (name == "relu") return relu(x);
  if (name == "tanh") return tanh(x);
  throw ConfigError("unknown activation '" + name + "'");
}

/// Additive attention bias from a key-side mask: 0 on attendable columns,
/// -1e9 on PAD columns, replicated over `rows` query rows.
inline Tensor attention_bias(std::span<const int> key_mask, int rows) {
  const int cols = static_cast<int>(key_mask.size());
  std::vector<double> bias(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (key_mask[static_cast<std::size_t>(c)] == 0) {
        bias[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) +
             static_cast<std::size_t>(c)] = -1e9;
      }
    }
  }
  return Tensor::from_data({rows, cols}, std::move(bias));
}

/// softmax(Q K^T / sqrt(d) + mask_bias) V. `key_mask` marks PAD key
/// positions with 0; masked columns end up with exactly zero weight.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                   std::span<const int> key_mask = {}) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0)) {
    throw ShapeError("scaled_dot_attention: incompatible shapes Q " + format_shape(q.shape()) +
                     ", K " + format_shape(k.shape()) + ", V " + format_shape(v.shape()));
  }
  if (!key_mask.empty() && static_cast<int>(key_mask.size()) != k.dim(0)) {
    throw ShapeError("scaled_dot_attention: mask length " + std::to_string(key_mask.size()) +
                     " != key count " + std::to_string(k.dim(0)));
  }
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  if (!key_mask.empty()) scores = add(scores, attention_bias(key_mask, q.dim(0)));
  return matmul(softmax(scores, 1), v);
}

/// Attention weights only; exposed for the row-stochasticity checks.
inline Tensor attention_weights(const Tensor& q, const Tensor& k,
                                std::span<const int> key_mask = {}) {
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  if (!key_mask.empty()) scores = add(scores, attention_bias(key_mask, q.dim(0)));
  return softmax(scores, 1);
}

/// Per-head attention over already-projected q/k/v, concatenated back to
/// full width. Shared by the op-level API and the batched forward pass.
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                             std::span<const int> key_mask) {
  const int hidden = q.dim(1);
  if (hidden % heads != 0) {
    throw ShapeError("attention_core: hidden " + std::to_string(hidden) +
                     " not divisible by heads " + std::to_string(heads));
  }
  const int dh = hidden / heads;
  std::vector<Tensor> per_head;
  per_head.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = col_slice(q, h * dh, (h + 1) * dh);
    Tensor kh = col_slice(k, h * dh, (h + 1) * dh);
    Tensor vh = col_slice(v, h * dh, (h + 1) * dh);
    per_head.push_back(scaled_dot_attention(qh, kh, vh, key_mask));
  }
  return concat_cols(per_head);
}

/// Full multi-head attention for one sequence: linear projections, per-head
/// scaled-dot attention, concatenation, output projection. Residual add and
/// layer norm belong to the caller.
inline Tensor multi_head_attention(const Tensor& x, const EncoderLayerParams& lp, int heads,
                                   std::span<const int> key_mask = {}) {
  Tensor q = add_bias(matmul(x, lp.query_w), lp.query_b);
  Tensor k = add_bias(matmul(x, lp.key_w), lp.key_b);
  Tensor v = add_bias(matmul(x, lp.value_w), lp.value_b);
  Tensor ctx = attention_core(q, k, v, heads, key_mask);
  return add_bias(matmul(ctx, lp.attn_out_w), lp.attn_out_b);
}

/// Position-wise feed-forward sublayer (no residual/norm).
inline Tensor ffn_sublayer(const Tensor& x, const EncoderLayerParams& lp,
                           const std::string& activation) {
  Tensor inner = activation_fn(activation, add_bias(matmul(x, lp.ffn_in_w), lp.ffn_in_b));
  return add_bias(matmul(inner, lp.ffn_out_w), lp.ffn_out_b);
}

struct EncoderOutput {
  Tensor hidden;  // [batch*len x hidden], row b*len + t
  Tensor pooled;  // [batch x hidden]
  int batch = 0;
  int len = 0;
};

/// Batched forward pass over uniformly-sized sequences. Projections run on
/// the flattened [batch*len x hidden] matrix (row-independent, so batching
/// never changes a sequence's result); the attention core runs per example
/// with that example's PAD mask.
inline EncoderOutput encoder_forward(const std::vector<TokenSequence>& seqs,
                                     const EncoderParams& params, const EncoderConfig& cfg,
                                     bool training, RngStream& rng) {
  cfg.validate();
  if (seqs.empty()) throw DataError("encoder_forward: empty batch");
  const int len = static_cast<int>(seqs[0].ids.size());
  if (len > cfg.max_len) {
    throw ContractError("encoder_forward: sequence length " + std::to_string(len) +
                        " exceeds max_len " + std::to_string(cfg.max_len) +
                        "; encode must truncate first");
  }
  const int batch = static_cast<int>(seqs.size());
  std::vector<int> ids, positions, segments;
  ids.reserve(static_cast<std::size_t>(batch * len));
  for (const auto& s : seqs) {
    if (static_cast<int>(s.ids.size()) != len) {
      throw ContractError("encoder_forward: batch mixes sequence lengths");
    }
    for (int t = 0; t < len; ++t) {
      ids.push_back(s.ids[static_cast<std::size_t>(t)]);
      positions.push_back(t);
      segments.push_back(s.segment_ids.empty() ? 0 : s.segment_ids[static_cast<std::size_t>(t)]);
    }
  }

  Tensor x = add(add(embedding_lookup(params.token_embedding, ids),
                     embedding_lookup(params.position_embedding, positions)),
                 embedding_lookup(params.segment_embedding, segments));

  // One bias matrix per example, shared across layers and heads.
  std::vector<Tensor> bias_cache;
  bias_cache.reserve(static_cast<std::size_t>(batch));
  for (const auto& s : seqs) bias_cache.push_back(attention_bias(s.attention_mask, len));

  for (const auto& lp : params.layers) {
    Tensor q = add_bias(matmul(x, lp.query_w), lp.query_b);
    Tensor k = add_bias(matmul(x, lp.key_w), lp.key_b);
    Tensor v = add_bias(matmul(x, lp.value_w), lp.value_b);

    const int dh = cfg.head_dim();
    std::vector<Tensor> per_example;
    per_example.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      std::vector<int> rows(static_cast<std::size_t>(len));
      for (int t = 0; t < len; ++t) rows[static_cast<std::size_t>(t)] = b * len + t;
      Tensor qb = row_gather(q, rows);
      Tensor kb = row_gather(k, rows);
      Tensor vb = row_gather(v, rows);
      std::vector<Tensor> per_head;
      per_head.reserve(static_cast<std::size_t>(cfg.heads));
      for (int h = 0; h < cfg.heads; ++h) {
        Tensor qh = col_slice(qb, h * dh, (h + 1) * dh);
        Tensor kh = col_slice(kb, h * dh, (h + 1) * dh);
        Tensor vh = col_slice(vb, h * dh, (h + 1) * dh);
        Tensor scores =
            scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        scores = add(scores, bias_cache[static_cast<std::size_t>(b)]);
        per_head.push_back(matmul(softmax(scores, 1), vh));
      }
      per_example.push_back(concat_cols(per_head));
    }
    Tensor ctx = concat_rows(per_example);
    Tensor attn_out = add_bias(matmul(ctx, lp.attn_out_w), lp.attn_out_b);
    attn_out = dropout(attn_out, cfg.dropout, training, rng);
    x = layer_norm(add(x, attn_out), lp.ln_attn_gain, lp.ln_attn_bias);

    Tensor ffn_out = ffn_sublayer(x, lp, cfg.activation);
    ffn_out = dropout(ffn_out, cfg.dropout, training, rng);
    x = layer_norm(add(x, ffn_out), lp.ln_ffn_gain, lp.ln_ffn_bias);
  }

  std::vector<int> cls_rows(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) cls_rows[static_cast<std::size_t>(b)] = b * len;
  Tensor cls = row_gather(x, cls_rows);
  Tensor pooled = tanh(add_bias(matmul(cls, params.pooler_w), params.pooler_b));

  EncoderOutput out;
  out.hidden = x;
  out.pooled = pooled;
  out.batch = batch;
  out.len = len;
  return out;
}

inline ModelCheckpoint make_encoder_checkpoint(const EncoderParams& p, const EncoderConfig& cfg,
                                               const std::string& vocab_fingerprint,
                                               const std::string& provenance = "scratch") {
  ModelCheckpoint ckpt;
  ckpt.model_kind = "encoder";
  ckpt.config = cfg.to_json();
  ckpt.vocab_kind = "subword";
  ckpt.vocab_fingerprint = vocab_fingerprint;
  ckpt.provenance = provenance;
  for (const auto& [name, t] : p.named()) ckpt.params.push_back({name, t.shape(), t.data()});
  return ckpt;
}

}  // namespace tinynlp
