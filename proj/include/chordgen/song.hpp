#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "chordgen/error.hpp"
#include "chordgen/notation.hpp"

namespace chordgen {

enum class Genre { pop, jazz };

inline std::string_view to_string(Genre g) { return g == Genre::pop ? "pop" : "jazz"; }

inline Genre parse_genre(std::string_view text) {
  if (text == "pop") return Genre::pop;
  if (text == "jazz") return Genre::jazz;
  throw Error(ErrorCode::invalid_argument, "unknown genre `" + std::string(text) + "`");
}

enum class Mode { major, minor };

struct Key {
  PitchClass tonic;
  Mode mode = Mode::major;

  /// Key signature named by its major tonic (relative major for minor keys).
  PitchClass signature() const { return mode == Mode::major ? tonic : tonic.transposed(3); }

  bool operator==(const Key&) const = default;
};

/// "C", "Bb", "F#m" (trailing m = minor).
inline Key parse_key(std::string_view text) {
  Key key;
  if (!text.empty() && text.back() == 'm') {
    key.mode = Mode::minor;
    text.remove_suffix(1);
  }
  const auto tonic = parse_note(text);
  if (!tonic) throw Error(ErrorCode::invalid_argument, "bad key `" + std::string(text) + "`");
  key.tonic = *tonic;
  return key;
}

inline std::string to_string(const Key& key) {
  std::string out(pitch_name(key.tonic));
  if (key.mode == Mode::minor) out += 'm';
  return out;
}

struct Meter {
  int numerator = 4;
  int denominator = 4;
  bool operator==(const Meter&) const = default;
};

inline Meter parse_meter(std::string_view text) {
  const auto parts = detail::split(text, '/');
  if (parts.size() == 2) {
    const auto num = detail::parse_int(parts[0]);
    const auto den = detail::parse_int(parts[1]);
    if (num && den && *num > 0 && *den > 0) return Meter{*num, *den};
  }
  throw Error(ErrorCode::invalid_argument, "bad meter `" + std::string(text) + "`");
}

inline std::string to_string(const Meter& m) { return std::to_string(m.numerator) + "/" + std::to_string(m.denominator); }

enum class Split { unassigned, train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::unassigned: return "unassigned";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  if (text.empty() || text == "unassigned") return Split::unassigned;
  throw Error(ErrorCode::invalid_argument, "unknown split `" + std::string(text) + "`");
}

using Bar = std::vector<CanonicalChord>;

struct SongRecord {
  std::string id;
  Genre genre = Genre::pop;
  Key key;
  Meter meter;
  std::vector<Bar> bars;
  std::string source;
  Split split = Split::unassigned;

  std::size_t chord_count() const {
    std::size_t n = 0;
    for (const auto& bar : bars) n += bar.size();
    return n;
  }

  bool operator==(const SongRecord&) const = default;
};

/// Musical content only: genre, key, meter, bars. Ignores id/source/split.
inline bool same_content(const SongRecord& a, const SongRecord& b) {
  return a.genre == b.genre && a.key == b.key && a.meter == b.meter && a.bars == b.bars;
}

}  // namespace chordgen
