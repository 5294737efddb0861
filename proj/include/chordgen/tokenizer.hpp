#pragma once

// The fixed 351-entry token vocabulary and song <-> token-sequence coding.
//
// Id layout (stable, serialized with the vocabulary version):
//   0 PAD, 1 BOS, 2 EOS, 3 BAR            structural
//   4 <POP>, 5 <JAZZ>                     genre
//   6..17  KEY_<major tonic>              key signature
//   18..38 TS_<n>_<d>, TS_RESERVED_<k>    time signature
//   39..350 chord (root * 26 + quality)

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chordgen/error.hpp"
#include "chordgen/notation.hpp"
#include "chordgen/song.hpp"

namespace chordgen {

using TokenId = std::int32_t;

inline constexpr std::size_t kRoots = 12;
inline constexpr std::size_t kQualities = 26;
inline constexpr std::size_t kChordTokens = kRoots * kQualities;
inline constexpr std::size_t kKeyTokens = 12;
inline constexpr std::size_t kTimeSignatureTokens = 21;
inline constexpr std::size_t kGenreTokens = 2;
inline constexpr std::size_t kStructuralTokens = 4;
inline constexpr std::size_t kVocabSize =
    kChordTokens + kKeyTokens + kTimeSignatureTokens + kGenreTokens + kStructuralTokens;
static_assert(kChordTokens == 312);
static_assert(kVocabSize == 351);

inline constexpr std::size_t kMaxSequenceLength = 256;

enum class TokenKind { structural, genre, key_signature, time_signature, chord };

inline std::string_view to_string(TokenKind k) {
  switch (k) {
    case TokenKind::structural: return "structural";
    case TokenKind::genre: return "genre";
    case TokenKind::key_signature: return "key";
    case TokenKind::time_signature: return "time";
    case TokenKind::chord: return "chord";
  }
  return "?";
}

struct Token {
  TokenId id = 0;
  TokenKind kind = TokenKind::structural;
  std::string payload;
};

struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// Meters with a dedicated token; the remaining slots are reserved.
inline constexpr std::array<Meter, 17> kSupportedMeters = {{
    {2, 4}, {3, 4}, {4, 4}, {5, 4}, {6, 4}, {7, 4}, {9, 4}, {12, 4},
    {2, 8}, {3, 8}, {4, 8}, {5, 8}, {6, 8}, {7, 8}, {9, 8}, {12, 8},
    {2, 2},
}};

struct EncodeStats {
  std::size_t dropped_bass = 0;
  std::size_t truncated = 0;
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kBar = 3;
  static constexpr TokenId kGenreBase = 4;
  static constexpr TokenId kKeyBase = kGenreBase + static_cast<TokenId>(kGenreTokens);
  static constexpr TokenId kTimeBase = kKeyBase + static_cast<TokenId>(kKeyTokens);
  static constexpr TokenId kChordBase = kTimeBase + static_cast<TokenId>(kTimeSignatureTokens);

  static Vocabulary build(const Palette& palette = Palette::builtin()) {
    if (palette.size() != kQualities) {
      throw Error(ErrorCode::palette_mismatch,
                  "palette has " + std::to_string(palette.size()) + " qualities, expected " + std::to_string(kQualities));
    }
    Vocabulary v;
    v.palette_ = palette;
    v.version_ = "vocab-v1+" + palette.version();
    const auto add = [&](TokenKind kind, std::string payload) {
      v.tokens_.push_back(Token{static_cast<TokenId>(v.tokens_.size()), kind, std::move(payload)});
    };
    for (const char* s : {"PAD", "BOS", "EOS", "BAR"}) add(TokenKind::structural, s);
    add(TokenKind::genre, "<POP>");
    add(TokenKind::genre, "<JAZZ>");
    for (auto name : kPitchNames) add(TokenKind::key_signature, "KEY_" + std::string(name));
    for (const auto& m : kSupportedMeters) {
      add(TokenKind::time_signature, "TS_" + std::to_string(m.numerator) + "_" + std::to_string(m.denominator));
    }
    for (std::size_t r = 0; v.tokens_.size() < static_cast<std::size_t>(kChordBase); ++r) {
      add(TokenKind::time_signature, "TS_RESERVED_" + std::to_string(r));
    }
    for (int root = 0; root < 12; ++root) {
      for (std::uint8_t q = 0; q < kQualities; ++q) {
        add(TokenKind::chord, render_chord(CanonicalChord{PitchClass(root), Quality{q}, std::nullopt}, palette));
      }
    }
    if (v.tokens_.size() != kVocabSize) throw Error(ErrorCode::palette_mismatch, "vocabulary size mismatch");
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& version() const { return version_; }
  const Palette& palette() const { return palette_; }
  const Token& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenKind kind(TokenId id) const { return token(id).kind; }

  std::size_t count(TokenKind kind) const {
    std::size_t n = 0;
    for (const auto& t : tokens_) n += t.kind == kind;
    return n;
  }

  static TokenId genre(Genre g) { return kGenreBase + (g == Genre::pop ? 0 : 1); }
  static TokenId key(PitchClass signature) { return kKeyBase + signature.value(); }

  static std::optional<TokenId> time_signature(const Meter& m) {
    for (std::size_t i = 0; i < kSupportedMeters.size(); ++i) {
      if (kSupportedMeters[i] == m) return kTimeBase + static_cast<TokenId>(i);
    }
    return std::nullopt;
  }

  static TokenId chord(PitchClass root, Quality q) {
    return kChordBase + static_cast<TokenId>(root.value() * static_cast<int>(kQualities) + q.index);
  }

  static bool is_chord(TokenId id) { return id >= kChordBase && id < static_cast<TokenId>(kVocabSize); }

  static CanonicalChord chord_of(TokenId id) {
    const int offset = id - kChordBase;
    return CanonicalChord{PitchClass(offset / static_cast<int>(kQualities)),
                          Quality{static_cast<std::uint8_t>(offset % static_cast<int>(kQualities))}, std::nullopt};
  }

  /// `#version<TAB>...` then one `id<TAB>kind<TAB>payload` line per token.
  std::string serialize() const {
    std::string out = "#version\t" + version_ + "\n";
    for (const auto& t : tokens_) {
      out += std::to_string(t.id);
      out += '\t';
      out += to_string(t.kind);
      out += '\t';
      out += t.payload;
      out += '\n';
    }
    return out;
  }

 private:
  Palette palette_;
  std::string version_;
  std::vector<Token> tokens_;
};

/// [BOS, genre, key, meter, (BAR chord*)*, EOS], truncated to 256 with EOS
/// forced into the last slot. Slash bass is not representable and is dropped.
inline TokenSequence encode(const SongRecord& song, const Vocabulary& vocab, EncodeStats* stats = nullptr) {
  (void)vocab;
  const auto ts = Vocabulary::time_signature(song.meter);
  if (!ts) throw Error(ErrorCode::unsupported_meter, "no token for meter " + to_string(song.meter));
  TokenSequence seq;
  seq.ids = {Vocabulary::kBos, Vocabulary::genre(song.genre), Vocabulary::key(song.key.signature()), *ts};
  for (const auto& bar : song.bars) {
    seq.ids.push_back(Vocabulary::kBar);
    for (const auto& c : bar) {
      if (c.quality.index >= kQualities) {
        throw Error(ErrorCode::unknown_chord, "quality index " + std::to_string(c.quality.index) + " not in vocabulary");
      }
      if (c.bass && stats) ++stats->dropped_bass;
      seq.ids.push_back(Vocabulary::chord(c.root, c.quality));
    }
  }
  seq.ids.push_back(Vocabulary::kEos);
  if (seq.ids.size() > kMaxSequenceLength) {
    seq.ids.resize(kMaxSequenceLength);
    seq.ids.back() = Vocabulary::kEos;
    if (stats) ++stats->truncated;
  }
  return seq;
}

inline SongRecord decode(const TokenSequence& seq, const Vocabulary& vocab) {
  const auto fail = [](const std::string& why) -> SongRecord {
    throw Error(ErrorCode::malformed_sequence, why);
  };
  const auto& ids = seq.ids;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) return fail("token id out of range");
  }
  if (ids.size() < 4) return fail("sequence shorter than the header");
  if (ids[0] != Vocabulary::kBos) return fail("sequence must start with BOS");
  if (vocab.kind(ids[1]) != TokenKind::genre) return fail("missing genre token");
  if (vocab.kind(ids[2]) != TokenKind::key_signature) return fail("missing key-signature token");
  if (vocab.kind(ids[3]) != TokenKind::time_signature) return fail("missing time-signature token");
  const std::size_t meter_index = static_cast<std::size_t>(ids[3] - Vocabulary::kTimeBase);
  if (meter_index >= kSupportedMeters.size()) return fail("reserved time-signature token");

  SongRecord song;
  song.genre = ids[1] == Vocabulary::genre(Genre::pop) ? Genre::pop : Genre::jazz;
  song.key = Key{PitchClass(ids[2] - Vocabulary::kKeyBase), Mode::major};
  song.meter = kSupportedMeters[meter_index];

  std::size_t i = 4;
  for (; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id == Vocabulary::kEos || id == Vocabulary::kPad) break;
    if (id == Vocabulary::kBar) {
      song.bars.emplace_back();
    } else if (Vocabulary::is_chord(id)) {
      if (song.bars.empty()) return fail("chord token before the first BAR");
      song.bars.back().push_back(Vocabulary::chord_of(id));
    } else {
      return fail("unexpected " + std::string(to_string(vocab.kind(id))) + " token in body");
    }
  }
  if (i < ids.size() && ids[i] == Vocabulary::kEos) ++i;
  for (; i < ids.size(); ++i) {
    if (ids[i] != Vocabulary::kPad) return fail("non-PAD token after end of song");
  }
  return song;
}

/// Shift every chord root and the key signature by `semitones` (mod 12).
inline TokenSequence transpose(const TokenSequence& seq, int semitones, const Vocabulary& vocab) {
  (void)vocab;
  TokenSequence out = seq;
  for (auto& id : out.ids) {
    if (Vocabulary::is_chord(id)) {
      const auto c = Vocabulary::chord_of(id);
      id = Vocabulary::chord(c.root.transposed(semitones), c.quality);
    } else if (id >= Vocabulary::kKeyBase && id < Vocabulary::kTimeBase) {
      id = Vocabulary::key(PitchClass(id - Vocabulary::kKeyBase).transposed(semitones));
    }
  }
  return out;
}

/// Song-major, semitone 0..11 within each song.
inline std::vector<TokenSequence> augment_twelve_keys(const std::vector<TokenSequence>& songs,
                                                      const Vocabulary& vocab) {
  std::vector<TokenSequence> out;
  out.reserve(songs.size() * 12);
  for (const auto& s : songs) {
    for (int k = 0; k < 12; ++k) out.push_back(transpose(s, k, vocab));
  }
  return out;
}

/// What decode(encode(song)) reconstructs: bass dropped, key reduced to its
/// signature, bookkeeping fields cleared.
inline SongRecord tokenizable_projection(const SongRecord& song) {
  SongRecord out;
  out.genre = song.genre;
  out.key = Key{song.key.signature(), Mode::major};
  out.meter = song.meter;
  for (const auto& bar : song.bars) {
    Bar b;
    for (const auto& c : bar) b.push_back(c.without_bass());
    out.bars.push_back(std::move(b));
  }
  return out;
}

}  // namespace chordgen
