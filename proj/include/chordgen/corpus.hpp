#pragma once

// Song-level dataset handling: JSONL corpora, seeded 80/10/10 splits,
// transposition-invariant dedup, rehearsal mixes and synthetic Markov genres.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "chordgen/error.hpp"
#include "chordgen/notation.hpp"
#include "chordgen/random.hpp"
#include "chordgen/song.hpp"

namespace chordgen {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// JSONL

inline Json song_to_json(const SongRecord& song) {
  Json bars = Json::array();
  for (const auto& bar : song.bars) {
    Json b = Json::array();
    for (const auto& c : bar) b.push_back(render_chord(c));
    bars.push_back(std::move(b));
  }
  return Json{{"id", song.id},        {"genre", to_string(song.genre)},   {"key", to_string(song.key)},
              {"meter", to_string(song.meter)}, {"bars", std::move(bars)}, {"source", song.source},
              {"split", to_string(song.split)}};
}

inline SongRecord song_from_json(const Json& j, Dialect dialect = Dialect::guitar) {
  if (!j.is_object()) throw Error(ErrorCode::format_error, "song record must be a JSON object");
  SongRecord song;
  try {
    song.id = j.at("id").get<std::string>();
    song.genre = parse_genre(j.at("genre").get<std::string>());
    song.key = parse_key(j.at("key").get<std::string>());
    song.meter = parse_meter(j.value("meter", std::string("4/4")));
    song.source = j.value("source", std::string());
    song.split = parse_split(j.value("split", std::string("unassigned")));
    for (const auto& bar : j.at("bars")) {
      Bar b;
      for (const auto& c : bar) b.push_back(parse_chord(c.get<std::string>(), dialect));
      song.bars.push_back(std::move(b));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::format_error, std::string("bad song record: ") + e.what());
  }
  return song;
}

inline std::vector<SongRecord> read_corpus_jsonl(const std::filesystem::path& path, Dialect dialect = Dialect::guitar) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open corpus " + path.string());
  std::vector<SongRecord> songs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::format_error, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    songs.push_back(song_from_json(j, dialect));
  }
  return songs;
}

inline void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<SongRecord>& songs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot write corpus " + path.string());
  for (const auto& s : songs) out << song_to_json(s).dump() << '\n';
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Splits

/// 80/10/10 per source corpus: ids sorted, seeded Fisher-Yates, contiguous
/// slices. Val and test take floor(n / 10) each; the remainder goes to train.
inline std::vector<SongRecord> split_songs(std::vector<SongRecord> songs, std::uint64_t seed) {
  if (songs.empty()) throw Error(ErrorCode::empty_corpus, "cannot split an empty corpus");
  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < songs.size(); ++i) {
    if (songs[i].split != Split::unassigned) {
      throw Error(ErrorCode::invalid_argument, "song " + songs[i].id + " already has a split");
    }
    by_source[songs[i].source].push_back(i);
  }
  for (auto& [source, indices] : by_source) {
    std::stable_sort(indices.begin(), indices.end(),
                     [&](std::size_t a, std::size_t b) { return songs[a].id < songs[b].id; });
    Rng rng(seed);
    rng.shuffle(indices);
    const std::size_t n = indices.size();
    const std::size_t n_val = n / 10;
    const std::size_t n_test = n / 10;
    const std::size_t n_train = n - n_val - n_test;
    for (std::size_t k = 0; k < n; ++k) {
      songs[indices[k]].split = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
    }
  }
  return songs;
}

inline std::vector<SongRecord> filter_split(const std::vector<SongRecord>& songs, Split split) {
  std::vector<SongRecord> out;
  for (const auto& s : songs) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

inline std::vector<SongRecord> filter_genre(const std::vector<SongRecord>& songs, Genre genre) {
  std::vector<SongRecord> out;
  for (const auto& s : songs) {
    if (s.genre == genre) out.push_back(s);
  }
  return out;
}

struct GenreTestSets {
  std::vector<SongRecord> pop;
  std::vector<SongRecord> jazz;
};

/// Test split partitioned by genre.
inline GenreTestSets genre_test_sets(const std::vector<SongRecord>& songs) {
  GenreTestSets sets;
  for (const auto& s : songs) {
    if (s.split != Split::test) continue;
    (s.genre == Genre::pop ? sets.pop : sets.jazz).push_back(s);
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Dedup

/// Chord sequence transposed so the key tonic is C; equal fingerprints mean
/// the same song in different keys.
inline std::string transposition_fingerprint(const SongRecord& song) {
  const int shift = -song.key.tonic.value();
  std::string out;
  for (const auto& bar : song.bars) {
    out += '|';
    for (const auto& c : bar) {
      out += render_chord(c.transposed(shift));
      out += ' ';
    }
  }
  return out;
}

/// Drop songs whose transposition fingerprint was already seen, keeping the
/// record from the highest-priority source (earlier in `source_priority`;
/// unlisted sources rank last, ties keep the first occurrence). Survivors stay
/// in input order.
inline std::vector<SongRecord> dedup(const std::vector<SongRecord>& songs,
                                     const std::vector<std::string>& source_priority = {}) {
  const auto rank = [&](const std::string& source) {
    const auto it = std::find(source_priority.begin(), source_priority.end(), source);
    return static_cast<std::size_t>(it - source_priority.begin());
  };
  std::unordered_map<std::string, std::size_t> keeper;
  for (std::size_t i = 0; i < songs.size(); ++i) {
    const auto fp = transposition_fingerprint(songs[i]);
    const auto [it, inserted] = keeper.emplace(fp, i);
    if (!inserted && rank(songs[i].source) < rank(songs[it->second].source)) it->second = i;
  }
  std::vector<bool> keep(songs.size(), false);
  for (const auto& [fp, index] : keeper) keep[index] = true;
  std::vector<SongRecord> out;
  for (std::size_t i = 0; i < songs.size(); ++i) {
    if (keep[i]) out.push_back(songs[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rehearsal mixes

struct MixConfig {
  std::string name;
  std::size_t pop_mix = 0;
  std::size_t jazz_count = 0;
  std::uint64_t seed = 42;
};

/// F1..F5 with the standard rehearsal volumes.
inline std::vector<MixConfig> standard_mix_sweep(std::size_t jazz_count, std::uint64_t seed = 42) {
  return {{"ft_jazz_pop80", 10000, jazz_count, seed},
          {"ft_jazz_pop67", 5000, jazz_count, seed},
          {"ft_jazz_pop50", 2500, jazz_count, seed},
          {"ft_jazz_pop29", 1000, jazz_count, seed},
          {"ft_jazz_only", 0, jazz_count, seed}};
}

/// All jazz songs followed by a seeded without-replacement sample of pop.
inline std::vector<SongRecord> build_finetune_mix(const std::vector<SongRecord>& jazz_train,
                                                  const std::vector<SongRecord>& pop_train, const MixConfig& cfg) {
  if (cfg.jazz_count != jazz_train.size()) {
    throw Error(ErrorCode::invalid_argument, "mix " + cfg.name + " expects " + std::to_string(cfg.jazz_count) +
                                                 " jazz songs, got " + std::to_string(jazz_train.size()));
  }
  if (cfg.pop_mix > pop_train.size()) {
    throw Error(ErrorCode::insufficient_pop, "mix " + cfg.name + " needs " + std::to_string(cfg.pop_mix) +
                                                 " pop songs, only " + std::to_string(pop_train.size()) + " available");
  }
  std::vector<SongRecord> out = jazz_train;
  std::vector<std::size_t> order(pop_train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(cfg.seed);
  for (std::size_t i = 0; i < cfg.pop_mix; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(order.size() - i));
    std::swap(order[i], order[j]);
    out.push_back(pop_train[order[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic genres

/// First-order Markov chain over chords written relative to a C tonic.
struct GenreSpec {
  std::string name;
  Genre genre = Genre::pop;
  std::vector<CanonicalChord> states;
  std::vector<std::vector<double>> matrix;
  std::vector<double> initial;                          // empty = uniform
  std::vector<std::pair<int, double>> bars;             // (bar count, weight)
  std::vector<std::pair<int, double>> chords_per_bar;   // (chords, weight)
  std::vector<std::pair<Key, double>> keys;             // (key, weight)
  Meter meter;

  void validate() const {
    const std::size_t n = states.size();
    if (n == 0 || matrix.size() != n) throw Error(ErrorCode::invalid_matrix, name + ": matrix must be square over states");
    const auto check_row = [&](const std::vector<double>& row, const std::string& what) {
      if (row.size() != n) throw Error(ErrorCode::invalid_matrix, name + ": " + what + " has wrong length");
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorCode::invalid_matrix, name + ": negative entry in " + what);
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::invalid_matrix, name + ": " + what + " does not sum to 1");
    };
    for (std::size_t i = 0; i < n; ++i) check_row(matrix[i], "row " + std::to_string(i));
    if (!initial.empty()) check_row(initial, "initial distribution");
    if (bars.empty() || chords_per_bar.empty() || keys.empty()) {
      throw Error(ErrorCode::invalid_matrix, name + ": length and key distributions must be non-empty");
    }
  }

  static GenreSpec from_json(const Json& j) {
    GenreSpec spec;
    try {
      spec.name = j.value("name", std::string("synthetic"));
      spec.genre = parse_genre(j.value("genre", std::string("pop")));
      for (const auto& s : j.at("states")) spec.states.push_back(parse_chord(s.get<std::string>(), Dialect::guitar));
      spec.matrix = j.at("matrix").get<std::vector<std::vector<double>>>();
      if (j.contains("initial")) spec.initial = j.at("initial").get<std::vector<double>>();
      const auto& len = j.at("length_dist");
      for (const auto& e : len.at("bars")) spec.bars.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
      for (const auto& e : len.at("chords_per_bar")) {
        spec.chords_per_bar.emplace_back(e.at(0).get<int>(), e.at(1).get<double>());
      }
      for (const auto& e : j.at("key_dist")) spec.keys.emplace_back(parse_key(e.at(0).get<std::string>()), e.at(1).get<double>());
      spec.meter = parse_meter(j.value("meter", std::string("4/4")));
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::format_error, std::string("bad genre spec: ") + e.what());
    }
    spec.validate();
    return spec;
  }

  static GenreSpec load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open genre spec " + path.string());
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::format_error, path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  std::size_t state_index(const CanonicalChord& chord) const {
    const auto it = std::find(states.begin(), states.end(), chord);
    if (it == states.end()) throw Error(ErrorCode::invalid_argument, "chord not a state of " + name);
    return static_cast<std::size_t>(it - states.begin());
  }
};

namespace detail {

template <class T>
T draw_weighted(Rng& rng, const std::vector<std::pair<T, double>>& table) {
  std::vector<double> weights;
  for (const auto& e : table) weights.push_back(e.second);
  return table[rng.categorical(weights)].first;
}

}  // namespace detail

/// One Markov walk per song; song i uses its own seed stream, so songs are
/// independent of generation order.
inline std::vector<SongRecord> generate_synthetic_genre(const GenreSpec& spec, std::size_t n, std::uint64_t seed,
                                                        const std::string& id_prefix = {}) {
  spec.validate();
  if (n == 0) throw Error(ErrorCode::invalid_argument, "synthetic generation needs n >= 1");
  const std::string prefix = id_prefix.empty() ? spec.name : id_prefix;
  const std::size_t digits = std::to_string(n - 1).size();
  std::vector<SongRecord> songs;
  songs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    SongRecord song;
    std::string index = std::to_string(i);
    song.id = prefix + "-" + std::string(digits - index.size(), '0') + index;
    song.genre = spec.genre;
    song.source = spec.name;
    song.meter = spec.meter;
    song.key = detail::draw_weighted(rng, spec.keys);
    const int shift = song.key.tonic.value();
    const int n_bars = detail::draw_weighted(rng, spec.bars);
    std::size_t state = spec.initial.empty() ? static_cast<std::size_t>(rng.uniform_index(spec.states.size()))
                                             : rng.categorical(spec.initial);
    bool first = true;
    for (int b = 0; b < n_bars; ++b) {
      Bar bar;
      const int n_chords = detail::draw_weighted(rng, spec.chords_per_bar);
      for (int c = 0; c < n_chords; ++c) {
        if (!first) state = rng.categorical(spec.matrix[state]);
        first = false;
        bar.push_back(spec.states[state].transposed(shift));
      }
      song.bars.push_back(std::move(bar));
    }
    songs.push_back(std::move(song));
  }
  return songs;
}

}  // namespace chordgen
