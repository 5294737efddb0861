#pragma once

// Temperature and nucleus sampling of chord continuations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "chordgen/model.hpp"
#include "chordgen/tokenizer.hpp"

namespace chordgen {

struct SampleParams {
  double top_p = 0.9;
  double temperature = 0.8;
  std::size_t max_new_tokens = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::invalid_argument, "top_p must be in (0, 1]");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw Error(ErrorCode::invalid_argument, "temperature must be positive");
    }
  }

  nlohmann::json to_json() const {
    return {{"top_p", top_p}, {"temperature", temperature}, {"max_new_tokens", max_new_tokens}, {"seed", seed}};
  }
};

/// Keep the smallest set of most probable tokens (ties by lower id) whose mass
/// reaches `p`, zero the rest and renormalize.
inline std::vector<double> nucleus_filter(const std::vector<double>& probs, double p) {
  if (probs.empty()) throw Error(ErrorCode::invalid_distribution, "empty distribution");
  double total = 0.0;
  for (double q : probs) {
    if (!(q >= 0.0) || !std::isfinite(q)) throw Error(ErrorCode::invalid_distribution, "negative or non-finite probability");
    total += q;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_distribution, "probabilities sum to " + std::to_string(total));
  }
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::invalid_argument, "top_p must be in (0, 1]");
  if (p == 1.0) return probs;
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0.0;
  std::size_t kept = 0;
  while (kept < order.size()) {
    mass += probs[order[kept++]];
    if (mass >= p) break;
  }
  for (std::size_t i = 0; i < kept; ++i) out[order[i]] = probs[order[i]] / mass;
  return out;
}

/// Softmax of logits / temperature over the tokens with `allowed[id]` set.
inline std::vector<double> tempered_softmax(const double* logits, std::size_t V, double temperature,
                                            const std::vector<std::uint8_t>& allowed) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < V; ++i) {
    if (allowed[i]) mx = std::max(mx, logits[i] / temperature);
  }
  std::vector<double> out(V, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < V; ++i) {
    if (allowed[i]) sum += (out[i] = std::exp(logits[i] / temperature - mx));
  }
  for (auto& q : out) q /= sum;
  return out;
}

struct PromptSpec {
  std::string name;
  Genre genre = Genre::pop;
  Key key;
  Meter meter{4, 4};
  std::vector<Bar> bars;

  SongRecord song() const {
    SongRecord s;
    s.id = name;
    s.genre = genre;
    s.key = key;
    s.meter = meter;
    s.bars = bars;
    return s;
  }

  /// Encoded prompt without its closing EOS.
  TokenSequence prefix(const Vocabulary& vocab) const {
    auto seq = encode(song(), vocab);
    if (!seq.ids.empty() && seq.ids.back() == Vocabulary::kEos) seq.ids.pop_back();
    return seq;
  }
};

inline PromptSpec make_prompt(std::string name, Genre genre, const std::string& key, const std::vector<std::vector<std::string>>& bars) {
  PromptSpec p{std::move(name), genre, parse_key(key), Meter{4, 4}, {}};
  for (const auto& bar : bars) {
    Bar b;
    for (const auto& c : bar) b.push_back(parse_chord(c, Dialect::guitar));
    p.bars.push_back(std::move(b));
  }
  return p;
}

/// The five evaluation prompts. The Bb turnaround is I-VI7-ii-V7.
inline std::vector<PromptSpec> builtin_prompts() {
  return {make_prompt("pop_I_vi_ii_V_C", Genre::pop, "C", {{"C", "Am"}, {"Dm", "G"}}),
          make_prompt("pop_I_V_vi_IV_G", Genre::pop, "G", {{"G", "D"}, {"Em", "C"}}),
          make_prompt("jazz_ii_V_I_C", Genre::jazz, "C", {{"Dm7", "G7"}, {"Cmaj7"}}),
          make_prompt("jazz_turnaround_Bb", Genre::jazz, "Bb", {{"Bbmaj7", "G7"}, {"Cm7", "F7"}}),
          make_prompt("jazz_minor_ii_V_Cm", Genre::jazz, "Cm", {{"Dm7b5", "G7"}, {"Cm7"}})};
}

struct Continuation {
  TokenSequence tokens;            // prompt followed by the generated tokens
  std::vector<TokenId> generated;
  bool ended = false;              // EOS was drawn
};

/// Autoregressive continuation. Only BAR, EOS and chord tokens can be drawn,
/// so the result always decodes. Generation also stops at the model's context
/// length.
template <class Model>
Continuation sample_continuation(Model& model, const TokenSequence& prompt, const SampleParams& params) {
  params.validate();
  const std::size_t max_len = model.config().max_len;
  if (prompt.size() >= max_len) {
    throw Error(ErrorCode::prompt_too_long,
                "prompt has " + std::to_string(prompt.size()) + " tokens, model context is " + std::to_string(max_len));
  }
  const std::size_t V = model.config().vocab_size;
  std::vector<std::uint8_t> allowed(V, 0);
  allowed[Vocabulary::kBar] = allowed[Vocabulary::kEos] = 1;
  for (std::size_t i = Vocabulary::kChordBase; i < V; ++i) allowed[i] = 1;

  Continuation out{prompt, {}, false};
  Rng rng(params.seed);
  while (out.generated.size() < params.max_new_tokens && out.tokens.size() < max_len) {
    const auto logits = model.logits(out.tokens.ids);
    const auto row = logits.template cast<double>();
    const double* last = row.data() + (out.tokens.size() - 1) * V;
    const auto probs = nucleus_filter(tempered_softmax(last, V, params.temperature, allowed), params.top_p);
    const auto id = static_cast<TokenId>(rng.categorical(probs));
    out.tokens.ids.push_back(id);
    out.generated.push_back(id);
    if (id == Vocabulary::kEos) {
      out.ended = true;
      break;
    }
  }
  return out;
}

/// Indices of bars holding more than `limit` chords.
inline std::vector<std::size_t> overlong_bars(const SongRecord& song, std::size_t limit = 8) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < song.bars.size(); ++i) {
    if (song.bars[i].size() > limit) out.push_back(i);
  }
  return out;
}

/// Generated bars only: chords after the prompt, split at each BAR. Chords
/// that continue the prompt's last bar form the first entry.
inline std::vector<std::vector<std::string>> continuation_bars(const Continuation& c) {
  std::vector<std::vector<std::string>> bars;
  bool open = false;
  for (TokenId id : c.generated) {
    if (id == Vocabulary::kBar) {
      bars.emplace_back();
      open = true;
    } else if (Vocabulary::is_chord(id)) {
      if (!open) {
        bars.emplace_back();
        open = true;
      }
      bars.back().push_back(render_chord(Vocabulary::chord_of(id)));
    }
  }
  return bars;
}

inline nlohmann::json continuation_to_json(const PromptSpec& prompt, const SampleParams& params, const Continuation& c,
                                           const Vocabulary& vocab) {
  nlohmann::json chords = nlohmann::json::array();
  for (const auto& bar : decode(c.tokens, vocab).bars) {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& ch : bar) b.push_back(render_chord(ch));
    chords.push_back(std::move(b));
  }
  nlohmann::json tokens = nlohmann::json::array();
  for (TokenId id : c.tokens.ids) tokens.push_back(vocab.token(id).payload);
  return {{"prompt", prompt.name},
          {"params", params.to_json()},
          {"tokens", tokens},
          {"chords", chords},
          {"continuation", continuation_bars(c)},
          {"ended", c.ended}};
}

}  // namespace chordgen
