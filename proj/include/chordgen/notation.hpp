#pragma once

// Chord symbols in several notation dialects, normalized to canonical
// (root, quality, bass) tuples over a fixed quality palette.

#include <array>
#include <bit>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "chordgen/builtin_data.hpp"
#include "chordgen/detail/text.hpp"
#include "chordgen/error.hpp"

namespace chordgen {

class PitchClass {
 public:
  constexpr PitchClass() = default;
  constexpr explicit PitchClass(int semitone)
      : value_(static_cast<std::uint8_t>(((semitone % 12) + 12) % 12)) {}

  constexpr int value() const { return value_; }
  constexpr PitchClass transposed(int semitones) const { return PitchClass(value_ + semitones); }

  constexpr auto operator<=>(const PitchClass&) const = default;

 private:
  std::uint8_t value_ = 0;
};

inline constexpr std::array<std::string_view, 12> kPitchNames = {"C",  "Db", "D",  "Eb", "E",  "F",
                                                                 "F#", "G",  "Ab", "A",  "Bb", "B"};

constexpr std::string_view pitch_name(PitchClass pc) { return kPitchNames[static_cast<std::size_t>(pc.value())]; }

/// Parse a note name (letter plus any run of accidentals) at the start of
/// `text`. Returns the pitch class and the number of bytes consumed.
inline std::optional<std::pair<PitchClass, std::size_t>> parse_note_prefix(std::string_view text) {
  static constexpr std::array<int, 7> kLetter = {9, 11, 0, 2, 4, 5, 7};  // A..G
  if (text.empty() || text[0] < 'A' || text[0] > 'G') return std::nullopt;
  int semitone = kLetter[static_cast<std::size_t>(text[0] - 'A')];
  std::size_t pos = 1;
  while (pos < text.size()) {
    const std::string_view rest = text.substr(pos);
    if (rest[0] == '#') {
      ++semitone;
      ++pos;
    } else if (rest[0] == 'b') {
      --semitone;
      ++pos;
    } else if (detail::starts_with(rest, "♯")) {  // sharp sign
      ++semitone;
      pos += 3;
    } else if (detail::starts_with(rest, "♭")) {  // flat sign
      --semitone;
      pos += 3;
    } else {
      break;
    }
  }
  return std::pair{PitchClass(semitone), pos};
}

inline std::optional<PitchClass> parse_note(std::string_view text) {
  const auto parsed = parse_note_prefix(text);
  if (!parsed || parsed->second != text.size()) return std::nullopt;
  return parsed->first;
}

/// Index into a Palette.
struct Quality {
  std::uint8_t index = 0;
  constexpr auto operator<=>(const Quality&) const = default;
};

struct QualityInfo {
  std::string id;
  std::vector<int> offsets;
  std::uint16_t mask = 0;  // offsets reduced mod 12
  std::string render;
};

constexpr std::uint16_t pitch_mask(std::initializer_list<int> offsets) {
  std::uint16_t mask = 0;
  for (int o : offsets) mask |= static_cast<std::uint16_t>(1u << (((o % 12) + 12) % 12));
  return mask;
}

/// The quality palette: versioned, line-oriented
/// `quality_id<TAB>offsets<TAB>render` table.
class Palette {
 public:
  static Palette parse(std::string_view text) {
    Palette palette;
    bool saw_version = false;
    for (auto raw : detail::lines(text)) {
      if (raw.empty() || raw.front() == '#') continue;
      const auto fields = detail::split(raw, '\t');
      if (!saw_version) {
        if (fields.size() != 2 || fields[0] != "version") {
          throw Error(ErrorCode::format_error, "palette: first entry must be `version<TAB>name`");
        }
        palette.version_ = std::string(fields[1]);
        saw_version = true;
        continue;
      }
      if (fields.size() != 3) {
        throw Error(ErrorCode::format_error, "palette: expected 3 tab-separated fields in `" + std::string(raw) + "`");
      }
      QualityInfo info;
      info.id = std::string(fields[0]);
      info.render = std::string(fields[2]);
      int previous = -1;
      for (auto tok : detail::split(fields[1], ',')) {
        const auto value = detail::parse_int(tok);
        if (!value || *value < 0 || *value > 23 || *value <= previous) {
          throw Error(ErrorCode::format_error, "palette: bad offsets for quality " + info.id);
        }
        info.offsets.push_back(*value);
        info.mask |= static_cast<std::uint16_t>(1u << (*value % 12));
        previous = *value;
      }
      if (info.offsets.empty() || info.offsets.front() != 0) {
        throw Error(ErrorCode::format_error, "palette: offsets must start at 0 for quality " + info.id);
      }
      for (const auto& existing : palette.qualities_) {
        if (existing.id == info.id || existing.render == info.render) {
          throw Error(ErrorCode::format_error, "palette: duplicate quality " + info.id);
        }
        if (existing.mask == info.mask) {
          throw Error(ErrorCode::ambiguous_chord,
                      "palette: qualities " + existing.id + " and " + info.id + " share a degree set");
        }
      }
      palette.qualities_.push_back(std::move(info));
    }
    if (!saw_version) throw Error(ErrorCode::format_error, "palette: missing version line");
    if (palette.qualities_.size() > 255) throw Error(ErrorCode::format_error, "palette: too many qualities");
    return palette;
  }

  static Palette load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open palette file " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
  }

  static const Palette& builtin() {
    static const Palette palette = parse(data::kPaletteTsv);
    return palette;
  }

  std::size_t size() const { return qualities_.size(); }
  const std::string& version() const { return version_; }
  const QualityInfo& info(Quality q) const { return qualities_.at(q.index); }

  std::optional<Quality> find_id(std::string_view id) const {
    for (std::size_t i = 0; i < qualities_.size(); ++i) {
      if (qualities_[i].id == id) return Quality{static_cast<std::uint8_t>(i)};
    }
    return std::nullopt;
  }

  /// Largest palette degree set contained in `mask`; ties go to the lower
  /// palette index. Empty when nothing is contained.
  std::optional<Quality> nearest(std::uint16_t mask) const {
    std::optional<Quality> best;
    int best_size = -1;
    for (std::size_t i = 0; i < qualities_.size(); ++i) {
      const std::uint16_t q = qualities_[i].mask;
      if ((q & ~mask) != 0) continue;
      const int size = std::popcount(q);
      if (size > best_size) {
        best_size = size;
        best = Quality{static_cast<std::uint8_t>(i)};
      }
    }
    return best;
  }

 private:
  std::string version_;
  std::vector<QualityInfo> qualities_;
};

struct CanonicalChord {
  PitchClass root;
  Quality quality;
  std::optional<PitchClass> bass;  // absent when equal to the root

  static CanonicalChord make(PitchClass root, Quality quality, std::optional<PitchClass> bass = std::nullopt) {
    if (bass && *bass == root) bass.reset();
    return CanonicalChord{root, quality, bass};
  }

  CanonicalChord transposed(int semitones) const {
    CanonicalChord out = *this;
    out.root = root.transposed(semitones);
    if (bass) out.bass = bass->transposed(semitones);
    return out;
  }

  CanonicalChord without_bass() const { return CanonicalChord{root, quality, std::nullopt}; }

  bool operator==(const CanonicalChord&) const = default;
};

enum class Dialect { guitar, ireal, interval, classed };

inline std::string_view to_string(Dialect d) {
  switch (d) {
    case Dialect::guitar: return "guitar";
    case Dialect::ireal: return "ireal";
    case Dialect::interval: return "interval";
    case Dialect::classed: return "classed";
  }
  return "?";
}

inline Dialect parse_dialect(std::string_view name) {
  if (name == "guitar") return Dialect::guitar;
  if (name == "ireal") return Dialect::ireal;
  if (name == "interval") return Dialect::interval;
  if (name == "classed") return Dialect::classed;
  throw Error(ErrorCode::invalid_argument, "unknown dialect `" + std::string(name) + "`");
}

/// Label table for the `classed` dialect: `label<TAB>quality_id`.
class ClassLabels {
 public:
  static ClassLabels parse(std::string_view text, const Palette& palette) {
    ClassLabels table;
    bool saw_version = false;
    for (auto raw : detail::lines(text)) {
      if (raw.empty() || raw.front() == '#') continue;
      const auto fields = detail::split(raw, '\t');
      if (fields.size() != 2) throw Error(ErrorCode::format_error, "class labels: bad line `" + std::string(raw) + "`");
      if (!saw_version) {
        if (fields[0] != "version") throw Error(ErrorCode::format_error, "class labels: missing version line");
        saw_version = true;
        continue;
      }
      const auto quality = palette.find_id(fields[1]);
      if (!quality) {
        throw Error(ErrorCode::format_error, "class labels: unknown quality id `" + std::string(fields[1]) + "`");
      }
      table.labels_.emplace(std::string(fields[0]), *quality);
    }
    return table;
  }

  static const ClassLabels& builtin() {
    static const ClassLabels table = parse(data::kClassedLabelsTsv, Palette::builtin());
    return table;
  }

  std::optional<Quality> find(std::string_view label) const {
    const auto it = labels_.find(std::string(label));
    if (it == labels_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::unordered_map<std::string, Quality> labels_;
};

namespace detail {

[[noreturn]] inline void unparseable(std::string_view text, std::string_view why) {
  throw Error(ErrorCode::unparseable_chord, "`" + std::string(text) + "`: " + std::string(why));
}

/// Interval structure of a chord suffix before palette projection.
struct ChordShape {
  enum class Third { major, minor, sus2, sus4 };
  enum class Fifth { perfect, flat, sharp };
  enum class Seventh { none, minor, major, diminished };

  Third third = Third::major;
  Fifth fifth = Fifth::perfect;
  Seventh seventh = Seventh::none;
  std::uint32_t extra = 0;  // bit per semitone offset in [0, 23]
  bool power = false;

  void add(int semitone) { extra |= 1u << semitone; }

  std::uint16_t mask() const {
    if (power) return pitch_mask({0, 4, 7});  // power chords are read as major triads
    std::uint32_t bits = 1u;
    switch (third) {
      case Third::major: bits |= 1u << 4; break;
      case Third::minor: bits |= 1u << 3; break;
      case Third::sus2: bits |= 1u << 2; break;
      case Third::sus4: bits |= 1u << 5; break;
    }
    switch (fifth) {
      case Fifth::perfect: bits |= 1u << 7; break;
      case Fifth::flat: bits |= 1u << 6; break;
      case Fifth::sharp: bits |= 1u << 8; break;
    }
    switch (seventh) {
      case Seventh::none: break;
      case Seventh::minor: bits |= 1u << 10; break;
      case Seventh::major: bits |= 1u << 11; break;
      case Seventh::diminished: bits |= 1u << 9; break;
    }
    bits |= extra;
    return static_cast<std::uint16_t>((bits | (bits >> 12)) & 0xfffu);
  }
};

struct SuffixCursor {
  std::string_view rest;

  bool take(std::string_view token) {
    if (!starts_with(rest, token)) return false;
    rest.remove_prefix(token.size());
    return true;
  }

  template <std::size_t N>
  bool take_any(const std::array<std::string_view, N>& tokens) {
    for (auto t : tokens) {
      if (take(t)) return true;
    }
    return false;
  }
};

/// Parse the part of a guitar or iReal chord symbol after the root (bass
/// already removed, parentheses and commas stripped).
inline ChordShape parse_suffix(std::string_view full_text, std::string_view suffix, Dialect dialect) {
  using Third = ChordShape::Third;
  using Fifth = ChordShape::Fifth;
  using Seventh = ChordShape::Seventh;

  ChordShape shape;
  SuffixCursor cur{suffix};
  bool major_flag = false;   // maj / ^ seen: a following 7/9/11/13 has a major seventh
  bool implied_major7 = false;  // ^, Δ or mMaj alone already means a major seventh
  bool diminished = false;
  bool halfdim = false;

  if (dialect == Dialect::guitar) {
    if (cur.rest == "5") {
      shape.power = true;
      return shape;
    }
    static constexpr std::array<std::string_view, 6> kMinMaj = {"mMaj", "mmaj", "minMaj", "minmaj", "mM", "mΔ"};
    static constexpr std::array<std::string_view, 3> kMaj = {"maj", "Maj", "M"};
    static constexpr std::array<std::string_view, 3> kMin = {"min", "mi", "m"};
    static constexpr std::array<std::string_view, 3> kDim = {"dim", "°", "o"};
    static constexpr std::array<std::string_view, 2> kAug = {"aug", "+"};
    if (cur.take_any(kMinMaj)) {
      shape.third = Third::minor;
      major_flag = implied_major7 = true;
    } else if (cur.take("Δ")) {
      major_flag = implied_major7 = true;
    } else if (cur.take_any(kMaj)) {
      major_flag = true;
    } else if (cur.rest.size() > 2 && cur.rest.substr(0, 2) == "ma" && cur.rest[2] >= '0' && cur.rest[2] <= '9') {
      cur.take("ma");
      major_flag = true;
    } else if (cur.take_any(kMin)) {
      shape.third = Third::minor;
    } else if (cur.take_any(kDim)) {
      shape.third = Third::minor;
      shape.fifth = Fifth::flat;
      diminished = true;
    } else if (cur.take_any(kAug)) {
      shape.fifth = Fifth::sharp;
    } else if (cur.take("ø")) {
      halfdim = true;
    }
  } else {
    static constexpr std::array<std::string_view, 2> kMinMaj = {"-^", "-Δ"};
    static constexpr std::array<std::string_view, 2> kMaj = {"^", "Δ"};
    static constexpr std::array<std::string_view, 2> kHalf = {"h", "ø"};
    if (cur.take_any(kMinMaj)) {
      shape.third = Third::minor;
      major_flag = implied_major7 = true;
    } else if (cur.take_any(kMaj)) {
      major_flag = implied_major7 = true;
    } else if (cur.take("-")) {
      shape.third = Third::minor;
    } else if (cur.take_any(kHalf)) {
      halfdim = true;
    } else if (cur.take("o")) {
      shape.third = Third::minor;
      shape.fifth = Fifth::flat;
      diminished = true;
    } else if (cur.take("+")) {
      shape.fifth = Fifth::sharp;
    }
  }

  if (halfdim) {
    shape.third = Third::minor;
    shape.fifth = Fifth::flat;
    shape.seventh = Seventh::minor;
  }

  const auto seventh_kind = [&] {
    if (major_flag) return Seventh::major;
    if (diminished) return Seventh::diminished;
    return Seventh::minor;
  };

  bool saw_number = false;
  if (cur.take("69") || cur.take("6/9")) {
    shape.add(9);
    shape.add(14);
    saw_number = true;
  } else if (cur.take("13")) {
    shape.seventh = seventh_kind();
    shape.add(14);
    shape.add(21);
    saw_number = true;
  } else if (cur.take("11")) {
    shape.seventh = seventh_kind();
    shape.add(14);
    shape.add(17);
    saw_number = true;
  } else if (cur.take("9")) {
    shape.seventh = seventh_kind();
    shape.add(14);
    saw_number = true;
  } else if (cur.take("7")) {
    shape.seventh = seventh_kind();
    saw_number = true;
  } else if (cur.take("6")) {
    shape.add(9);
    saw_number = true;
  } else if (cur.take("2")) {
    shape.add(14);
    saw_number = true;
  }
  if (!saw_number && implied_major7) shape.seventh = Seventh::major;

  while (!cur.rest.empty()) {
    if (cur.take("sus2")) {
      shape.third = Third::sus2;
    } else if (cur.take("sus4") || cur.take("sus")) {
      shape.third = Third::sus4;
    } else if (cur.take("alt")) {
      for (int s : {13, 15, 18, 20}) shape.add(s);
    } else if (cur.take("add")) {
      static constexpr std::array<std::pair<std::string_view, int>, 9> kAdds = {
          {{"#11", 18}, {"b9", 13}, {"#9", 15}, {"b13", 20}, {"13", 21}, {"11", 17}, {"9", 14}, {"6", 9}, {"4", 17}}};
      bool matched = false;
      for (const auto& [token, semis] : kAdds) {
        if (cur.take(token)) {
          shape.add(semis);
          matched = true;
          break;
        }
      }
      if (!matched && cur.take("2")) {
        shape.add(14);
        matched = true;
      }
      if (!matched) unparseable(full_text, "unknown added tone");
    } else if (cur.take("b5") || cur.take("♭5")) {
      shape.fifth = Fifth::flat;
    } else if (cur.take("#5") || cur.take("♯5")) {
      shape.fifth = Fifth::sharp;
    } else if (cur.take("b9") || cur.take("♭9")) {
      shape.add(13);
    } else if (cur.take("#9") || cur.take("♯9")) {
      shape.add(15);
    } else if (cur.take("#11") || cur.take("♯11")) {
      shape.add(18);
    } else if (cur.take("b13") || cur.take("♭13")) {
      shape.add(20);
    } else if (cur.take("13")) {
      shape.add(21);
    } else if (cur.take("9")) {
      shape.add(14);
    } else {
      unparseable(full_text, "unexpected `" + std::string(cur.rest) + "`");
    }
  }
  return shape;
}

inline std::optional<int> harte_degree(std::string_view text) {
  int shift = 0;
  while (!text.empty() && (text.front() == 'b' || text.front() == '#')) {
    shift += text.front() == '#' ? 1 : -1;
    text.remove_prefix(1);
  }
  static constexpr std::array<int, 14> kMajorScale = {0, 0, 2, 4, 5, 7, 9, 11, 12, 14, 16, 17, 19, 21};
  const auto degree = parse_int(text);
  if (!degree || *degree < 1 || *degree > 13) return std::nullopt;
  return kMajorScale[static_cast<std::size_t>(*degree)] + shift;
}

inline Quality project(std::string_view text, std::uint16_t mask, const Palette& palette) {
  const auto quality = palette.nearest(mask);
  if (!quality) unparseable(text, "no palette quality is contained in the chord");
  return *quality;
}

}  // namespace detail

/// Map a sorted semitone-offset set (0 present, each in [0, 23]) to the
/// palette quality with the largest contained degree set.
inline CanonicalChord parse_interval_chord(std::string_view root, const std::vector<int>& intervals,
                                           const Palette& palette = Palette::builtin()) {
  const auto root_pc = parse_note(root);
  if (!root_pc) detail::unparseable(root, "bad root");
  if (intervals.empty() || intervals.front() != 0) detail::unparseable(root, "interval set must contain 0");
  std::uint16_t mask = 0;
  int previous = -1;
  for (int o : intervals) {
    if (o < 0 || o > 23 || o <= previous) detail::unparseable(root, "intervals must be ascending in [0, 23]");
    mask |= static_cast<std::uint16_t>(1u << (o % 12));
    previous = o;
  }
  return CanonicalChord::make(*root_pc, detail::project(root, mask, palette));
}

inline CanonicalChord parse_chord(std::string_view text, Dialect dialect, const Palette& palette = Palette::builtin(),
                                  const ClassLabels& labels = ClassLabels::builtin()) {
  const std::string_view original = text;
  text = detail::trim(text);
  if (text.empty()) detail::unparseable(original, "empty chord symbol");

  const auto root = parse_note_prefix(text);
  if (!root) detail::unparseable(original, "missing root");
  std::string_view rest = text.substr(root->second);

  std::optional<PitchClass> bass;
  std::optional<int> bass_degree;
  if (const auto slash = rest.rfind('/'); slash != std::string_view::npos) {
    const std::string_view after = rest.substr(slash + 1);
    if (auto note = parse_note(after)) {
      bass = note;
      rest = rest.substr(0, slash);
    } else if (dialect == Dialect::classed) {
      bass_degree = detail::harte_degree(after);
      if (!bass_degree) detail::unparseable(original, "bad bass degree");
      rest = rest.substr(0, slash);
    }
  }
  if (bass_degree) bass = root->first.transposed(*bass_degree);

  switch (dialect) {
    case Dialect::guitar:
    case Dialect::ireal: {
      std::string suffix;
      for (char c : rest) {
        if (c != '(' && c != ')' && c != ',' && c != ' ') suffix.push_back(c);
      }
      const auto shape = detail::parse_suffix(original, suffix, dialect);
      return CanonicalChord::make(root->first, detail::project(original, shape.mask(), palette), bass);
    }
    case Dialect::classed: {
      if (rest.empty() || rest.front() != ':') detail::unparseable(original, "expected `root:label`");
      const auto quality = labels.find(rest.substr(1));
      if (!quality) detail::unparseable(original, "unknown chord class label");
      return CanonicalChord::make(root->first, *quality, bass);
    }
    case Dialect::interval: {
      if (!rest.empty() && rest.front() == ':') rest.remove_prefix(1);
      if (rest.size() < 2 || rest.front() != '(' || rest.back() != ')') {
        detail::unparseable(original, "expected `root:(offsets)`");
      }
      std::vector<int> offsets;
      for (auto tok : detail::split(rest.substr(1, rest.size() - 2), ',')) {
        const auto value = detail::parse_int(tok);
        if (!value) detail::unparseable(original, "bad interval");
        offsets.push_back(*value);
      }
      auto chord = parse_interval_chord(pitch_name(root->first), offsets, palette);
      return CanonicalChord::make(chord.root, chord.quality, bass);
    }
  }
  detail::unparseable(original, "unknown dialect");
}

/// Canonical display form, re-parseable in the guitar dialect.
inline std::string render_chord(const CanonicalChord& chord, const Palette& palette = Palette::builtin()) {
  std::string out(pitch_name(chord.root));
  out += palette.info(chord.quality).render;
  if (chord.bass) {
    out += '/';
    out += pitch_name(*chord.bass);
  }
  return out;
}

}  // namespace chordgen
