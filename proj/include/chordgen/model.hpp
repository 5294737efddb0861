#pragma once

// Decoder-only chord transformer with relative-position self-attention.
//
// Default architecture (25,661,440 parameters at d_model 512 / 8 heads /
// d_ff 2048 / 8 layers):
//   token embedding (no absolute positions)
//   per block, pre-norm:
//     x += dropout(W_o · attn(LN1(x)))      q/k/v/o projections with biases
//     x += dropout(W_2 · relu(W_1 · LN2(x)))
//   final LayerNorm, output head tied to the token embedding.
// Each block owns one relative table [2 * max_len - 1, d_head] shared by its
// heads.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chordgen/attention.hpp"
#include "chordgen/checkpoint.hpp"
#include "chordgen/random.hpp"
#include "chordgen/tokenizer.hpp"

namespace chordgen {

enum class RelTable { none, per_layer, per_head, shared };

inline std::string_view to_string(RelTable r) {
  switch (r) {
    case RelTable::none: return "none";
    case RelTable::per_layer: return "per_layer";
    case RelTable::per_head: return "per_head";
    case RelTable::shared: return "shared";
  }
  return "?";
}

inline RelTable parse_rel_table(std::string_view s) {
  if (s == "none") return RelTable::none;
  if (s == "per_layer") return RelTable::per_layer;
  if (s == "per_head") return RelTable::per_head;
  if (s == "shared") return RelTable::shared;
  throw Error(ErrorCode::invalid_argument, "unknown relative-table variant `" + std::string(s) + "`");
}

struct ModelConfig {
  std::size_t vocab_size = kVocabSize;
  std::size_t d_model = 512;
  std::size_t heads = 8;
  std::size_t d_ff = 2048;
  std::size_t layers = 8;
  std::size_t max_len = kMaxSequenceLength;
  double dropout = 0.1;

  // Architecture variant.
  bool pre_norm = true;  // pre-norm blocks plus a final LayerNorm; post-norm has neither
  bool tied_head = true;
  bool biases = true;  // biases on every linear map
  RelTable rel_table = RelTable::per_layer;

  std::size_t d_head() const { return d_model / heads; }

  void validate() const {
    if (heads == 0 || d_model % heads != 0) {
      throw Error(ErrorCode::invalid_argument, "d_model must be divisible by heads");
    }
    if (max_len < 2) throw Error(ErrorCode::invalid_argument, "max_len must be at least 2");
    if (vocab_size == 0 || d_model == 0) throw Error(ErrorCode::invalid_argument, "empty model dimensions");
    if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::invalid_argument, "dropout must lie in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"vocab_size", vocab_size}, {"d_model", d_model},     {"heads", heads},
            {"d_ff", d_ff},             {"layers", layers},       {"max_len", max_len},
            {"dropout", dropout},       {"pre_norm", pre_norm},   {"tied_head", tied_head},
            {"biases", biases},         {"rel_table", to_string(rel_table)}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.layers = j.value("layers", c.layers);
    c.max_len = j.value("max_len", c.max_len);
    c.dropout = j.value("dropout", c.dropout);
    c.pre_norm = j.value("pre_norm", c.pre_norm);
    c.tied_head = j.value("tied_head", c.tied_head);
    c.biases = j.value("biases", c.biases);
    c.rel_table = parse_rel_table(j.value("rel_table", std::string(to_string(c.rel_table))));
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class InitKind { embedding, projection, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::zeros;

  std::size_t count() const { return shape_size(shape); }
};

/// The full named parameter list of a config, in canonical order.
inline std::vector<ParamSpec> parameter_specs(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, rel_rows = 2 * c.max_len - 1;
  std::vector<ParamSpec> out;
  const auto linear = [&](const std::string& prefix, const std::string& w, const std::string& b, std::size_t in,
                          std::size_t outdim) {
    out.push_back({prefix + w, {in, outdim}, InitKind::projection});
    if (c.biases) out.push_back({prefix + b, {outdim}, InitKind::zeros});
  };
  const auto norm = [&](const std::string& prefix) {
    out.push_back({prefix + ".gamma", {d}, InitKind::ones});
    out.push_back({prefix + ".beta", {d}, InitKind::zeros});
  };
  out.push_back({"tok_emb", {c.vocab_size, d}, InitKind::embedding});
  if (c.rel_table == RelTable::shared) out.push_back({"rel", {rel_rows, c.d_head()}, InitKind::embedding});
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    norm(p + ".ln1");
    linear(p + ".attn.", "wq", "bq", d, d);
    linear(p + ".attn.", "wk", "bk", d, d);
    linear(p + ".attn.", "wv", "bv", d, d);
    linear(p + ".attn.", "wo", "bo", d, d);
    if (c.rel_table == RelTable::per_layer) out.push_back({p + ".attn.rel", {rel_rows, c.d_head()}, InitKind::embedding});
    if (c.rel_table == RelTable::per_head) out.push_back({p + ".attn.rel", {rel_rows, d}, InitKind::embedding});
    norm(p + ".ln2");
    linear(p + ".ffn.", "w1", "b1", d, c.d_ff);
    linear(p + ".ffn.", "w2", "b2", c.d_ff, d);
  }
  if (c.pre_norm) norm("ln_f");
  if (!c.tied_head) linear("head.", "w", "b", d, c.vocab_size);
  return out;
}

struct ParameterCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> breakdown;

  /// One line per tensor plus a total line.
  std::string table() const {
    std::string out;
    for (const auto& [name, n] : breakdown) out += name + "\t" + std::to_string(n) + "\n";
    out += "total\t" + std::to_string(total) + "\n";
    return out;
  }
};

inline ParameterCount count_parameters(const ModelConfig& c) {
  ParameterCount pc;
  for (const auto& spec : parameter_specs(c)) {
    pc.breakdown.emplace_back(spec.name, spec.count());
    pc.total += spec.count();
  }
  return pc;
}

/// Every combination of norm placement, head tying, biases and relative
/// table layout applied to `base`, in a fixed enumeration order.
inline std::vector<ModelConfig> architecture_variants(const ModelConfig& base) {
  std::vector<ModelConfig> out;
  for (bool pre : {true, false}) {
    for (bool tied : {true, false}) {
      for (bool biases : {true, false}) {
        for (RelTable rel : {RelTable::per_layer, RelTable::per_head, RelTable::shared, RelTable::none}) {
          ModelConfig c = base;
          c.pre_norm = pre;
          c.tied_head = tied;
          c.biases = biases;
          c.rel_table = rel;
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

inline std::string describe_variant(const ModelConfig& c) {
  return std::string(c.pre_norm ? "pre-norm+final-LN" : "post-norm") + ", " + (c.tied_head ? "tied head" : "untied head") +
         ", " + (c.biases ? "biases" : "no biases") + ", rel=" + std::string(to_string(c.rel_table));
}

/// Variants of `base` whose parameter count equals `target`.
inline std::vector<ModelConfig> variants_matching(const ModelConfig& base, std::size_t target) {
  std::vector<ModelConfig> out;
  for (const auto& c : architecture_variants(base)) {
    if (count_parameters(c).total == target) out.push_back(c);
  }
  return out;
}

/// Padded [batch, length] token block. Rows shorter than `length` are filled
/// with PAD on the right.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> ids;

  static TokenBatch from(const std::vector<std::vector<TokenId>>& rows) {
    TokenBatch b;
    b.batch = rows.size();
    for (const auto& r : rows) b.length = std::max(b.length, r.size());
    b.ids.assign(b.batch * b.length, Vocabulary::kPad);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), b.ids.begin() + i * b.length);
    return b;
  }
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

template <class T = double>
class ChordTransformer {
 public:
  ChordTransformer() = default;

  /// Fresh weights: embeddings and relative tables N(0, 0.02²), projections
  /// N(0, 1/d_model), biases and LayerNorm shifts 0, LayerNorm gains 1.
  static ChordTransformer init(const ModelConfig& cfg, std::uint64_t seed) {
    ChordTransformer m;
    m.cfg_ = cfg;
    Rng rng(seed);
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (const auto& spec : parameter_specs(cfg)) {
      Tensor<T> t(spec.shape);
      const double std_dev = spec.init == InitKind::embedding ? 0.02 : proj_std;
      for (std::size_t i = 0; i < t.size(); ++i) {
        switch (spec.init) {
          case InitKind::embedding:
          case InitKind::projection: t[i] = static_cast<T>(std_dev * rng.normal()); break;
          case InitKind::zeros: t[i] = T(0); break;
          case InitKind::ones: t[i] = T(1); break;
        }
      }
      m.params_.emplace_back(spec.name, std::move(t), spec.shape.size() >= 2);
    }
    m.index_parameters();
    return m;
  }

  /// Rebuild from a checkpoint; every documented tensor must be present with
  /// the documented shape.
  static ChordTransformer from_checkpoint(const CheckpointFile& file) {
    ChordTransformer m;
    if (!file.config.contains("model")) throw Error(ErrorCode::format_error, "checkpoint has no model config");
    m.cfg_ = ModelConfig::from_json(file.config.at("model"));
    for (const auto& spec : parameter_specs(m.cfg_)) {
      const auto* stored = file.find(spec.name);
      if (!stored) throw Error(ErrorCode::format_error, "checkpoint is missing " + spec.name);
      if (stored->value.shape() != spec.shape) {
        throw Error(ErrorCode::shape_mismatch, spec.name + " has shape " + shape_string(stored->value.shape()) +
                                                   ", expected " + shape_string(spec.shape));
      }
      m.params_.emplace_back(spec.name, stored->value.template cast<T>(), spec.shape.size() >= 2);
    }
    m.index_parameters();
    return m;
  }

  CheckpointFile to_checkpoint(const nlohmann::json& provenance = nlohmann::json::object()) const {
    CheckpointFile file;
    file.config = {{"model", cfg_.to_json()},
                   {"provenance", provenance},
                   {"vocab_version", Vocabulary::build().version()},
                   {"parameter_count", count_parameters(cfg_).total}};
    for (const auto& p : params_) file.tensors.push_back(store_parameter(p));
    return file;
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

  std::vector<Parameter<T>*> parameter_ptrs() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  Parameter<T>& param(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw Error(ErrorCode::invalid_argument, "no parameter " + name);
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Logits [batch * length, vocab] for every position of the batch.
  Var forward(Graph<T>& g, const TokenBatch& batch, const ForwardOptions& opt = {}) {
    const auto& c = cfg_;
    if (batch.length > c.max_len) {
      throw Error(ErrorCode::sequence_too_long,
                  "sequence length " + std::to_string(batch.length) + " exceeds max_len " + std::to_string(c.max_len));
    }
    if (batch.batch == 0 || batch.length == 0) throw Error(ErrorCode::invalid_argument, "empty batch");
    for (TokenId id : batch.ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
        throw Error(ErrorCode::invalid_argument, "token id " + std::to_string(id) + " outside the vocabulary");
      }
    }
    AttentionLayout layout{batch.batch, batch.length, c.heads, c.max_len, {}};
    layout.key_valid.resize(batch.ids.size());
    for (std::size_t i = 0; i < batch.ids.size(); ++i) layout.key_valid[i] = batch.ids[i] != Vocabulary::kPad;

    std::size_t drop_site = 0;
    const auto drop = [&](Var x) {
      return dropout(g, x, c.dropout, derive_seed(opt.dropout_seed, drop_site++), opt.training);
    };
    const auto linear = [&](Var x, const std::string& w, const std::string& b) {
      Var y = matmul(g, x, g.param(*by_name_.at(w)));
      if (c.biases) y = add_bias(g, y, g.param(*by_name_.at(b)));
      return y;
    };
    const auto norm = [&](Var x, const std::string& prefix) {
      return layer_norm(g, x, g.param(*by_name_.at(prefix + ".gamma")), g.param(*by_name_.at(prefix + ".beta")));
    };

    const Var emb = g.param(*by_name_.at("tok_emb"));
    Var x = drop(embedding(g, emb, batch.ids));
    std::optional<Var> shared_rel;
    if (c.rel_table == RelTable::shared) shared_rel = g.param(*by_name_.at("rel"));
    for (std::size_t i = 0; i < c.layers; ++i) {
      const std::string p = "blocks." + std::to_string(i);
      std::optional<Var> rel = shared_rel;
      if (c.rel_table == RelTable::per_layer || c.rel_table == RelTable::per_head) {
        rel = g.param(*by_name_.at(p + ".attn.rel"));
      }
      const Var a_in = c.pre_norm ? norm(x, p + ".ln1") : x;
      const Var q = linear(a_in, p + ".attn.wq", p + ".attn.bq");
      const Var k = linear(a_in, p + ".attn.wk", p + ".attn.bk");
      const Var v = linear(a_in, p + ".attn.wv", p + ".attn.bv");
      const Var att = relative_attention(g, q, k, v, rel, layout);
      x = add(g, x, drop(linear(att, p + ".attn.wo", p + ".attn.bo")));
      if (!c.pre_norm) x = norm(x, p + ".ln1");
      const Var f_in = c.pre_norm ? norm(x, p + ".ln2") : x;
      const Var hidden = relu(g, linear(f_in, p + ".ffn.w1", p + ".ffn.b1"));
      x = add(g, x, drop(linear(hidden, p + ".ffn.w2", p + ".ffn.b2")));
      if (!c.pre_norm) x = norm(x, p + ".ln2");
    }
    if (c.pre_norm) x = norm(x, "ln_f");
    return c.tied_head ? matmul_nt(g, x, emb) : linear(x, "head.w", "head.b");
  }

  /// Inference logits [length, vocab] for one unpadded sequence.
  Tensor<T> logits(const std::vector<TokenId>& ids) {
    Graph<T> g(false);
    const Var out = forward(g, TokenBatch::from({ids}));
    return g.value(out);
  }

 private:
  void index_parameters() {
    by_name_.clear();
    for (auto& p : params_) by_name_.emplace(p.name, &p);
  }

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::map<std::string, Parameter<T>*> by_name_;

 public:
  ChordTransformer(const ChordTransformer& other) : cfg_(other.cfg_), params_(other.params_) { index_parameters(); }
  ChordTransformer& operator=(const ChordTransformer& other) {
    cfg_ = other.cfg_;
    params_ = other.params_;
    index_parameters();
    return *this;
  }
  ChordTransformer(ChordTransformer&& other) noexcept : cfg_(std::move(other.cfg_)), params_(std::move(other.params_)) {
    index_parameters();
  }
  ChordTransformer& operator=(ChordTransformer&& other) noexcept {
    cfg_ = std::move(other.cfg_);
    params_ = std::move(other.params_);
    index_parameters();
    return *this;
  }
};

/// Next-token training example: inputs drop the last token, targets drop the
/// first. Target PAD positions are masked.
struct LmBatch {
  TokenBatch inputs;
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> mask;
  std::size_t target_count = 0;
};

inline LmBatch make_lm_batch(const std::vector<const TokenSequence*>& seqs) {
  std::vector<std::vector<TokenId>> rows;
  std::size_t length = 0;
  for (const auto* s : seqs) {
    if (s->size() < 2) throw Error(ErrorCode::invalid_argument, "training sequence needs at least two tokens");
    rows.emplace_back(s->ids.begin(), s->ids.end() - 1);
    length = std::max(length, s->size() - 1);
  }
  LmBatch b;
  b.inputs = TokenBatch::from(rows);
  b.targets.assign(b.inputs.batch * length, Vocabulary::kPad);
  b.mask.assign(b.targets.size(), 0);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    for (std::size_t t = 1; t < seqs[i]->size(); ++t) {
      const TokenId target = seqs[i]->ids[t];
      b.targets[i * length + t - 1] = target;
      if (target != Vocabulary::kPad) {
        b.mask[i * length + t - 1] = 1;
        ++b.target_count;
      }
    }
  }
  return b;
}

}  // namespace chordgen
