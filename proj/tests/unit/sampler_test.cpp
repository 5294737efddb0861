#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chordgen/sampler.hpp"

using namespace chordgen;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.layers = 1;
  c.max_len = 40;
  c.dropout = 0.0;
  return c;
}

// Minimal prefix by brute force: for each k, sum the k largest (ties by id)
// from scratch and stop at the first k reaching p.
std::vector<std::uint8_t> brute_force_kept(const std::vector<double>& probs, double p) {
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
  });
  std::size_t k = probs.size();
  for (std::size_t n = 1; n <= probs.size(); ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += probs[idx[i]];
    if (s >= p) {
      k = n;
      break;
    }
  }
  std::vector<std::uint8_t> kept(probs.size(), 0);
  for (std::size_t i = 0; i < k; ++i) kept[idx[i]] = 1;
  return kept;
}

std::vector<double> random_distribution(Rng& rng, std::size_t n) {
  std::vector<double> d(n);
  double s = 0.0;
  for (auto& x : d) {
    // Occasional exact ties and zeros.
    const double u = rng.uniform01();
    x = u < 0.1 ? 0.0 : (u < 0.3 ? 0.25 : -std::log(rng.uniform01() + 1e-300));
    s += x;
  }
  if (s == 0.0) {
    d[0] = s = 1.0;
  }
  for (auto& x : d) x /= s;
  return d;
}

/// Fixed next-token logits regardless of context.
struct FixedLogits {
  ModelConfig cfg;
  std::vector<double> row;
  const ModelConfig& config() const { return cfg; }
  Tensor<double> logits(const std::vector<TokenId>& ids) const {
    Tensor<double> t({ids.size(), cfg.vocab_size});
    for (std::size_t r = 0; r < ids.size(); ++r) std::copy(row.begin(), row.end(), t.data() + r * cfg.vocab_size);
    return t;
  }
};

}  // namespace

TEST(Nucleus, WorkedExample) {
  const auto out = nucleus_filter({0.5, 0.3, 0.2}, 0.7);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_DOUBLE_EQ(out[0], 0.625);
  EXPECT_DOUBLE_EQ(out[1], 0.375);
  EXPECT_EQ(out[2], 0.0);
}

TEST(Nucleus, FullMassIsIdentity) {
  const std::vector<double> d = {0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(nucleus_filter(d, 1.0), d);
}

TEST(Nucleus, MatchesBruteForceOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(40);
    const auto d = random_distribution(rng, n);
    const double p = 0.05 + 0.95 * rng.uniform01();
    const auto out = nucleus_filter(d, p);
    const auto kept = brute_force_kept(d, p);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_GE(out[i], 0.0);
      sum += out[i];
      if (!kept[i]) ASSERT_EQ(out[i], 0.0) << "trial " << trial;
      if (kept[i] && d[i] > 0.0) ASSERT_GT(out[i], 0.0) << "trial " << trial;
    }
    ASSERT_NEAR(sum, 1.0, 1e-9);
    // Refiltering can only shrink the support.
    const auto twice = nucleus_filter(out, p);
    for (std::size_t i = 0; i < n; ++i) {
      if (out[i] == 0.0) ASSERT_EQ(twice[i], 0.0);
    }
  }
}

TEST(Nucleus, RefilteringAfterRenormalization) {
  // Idempotent when the kept mass renormalizes without crossing p again.
  const auto once = nucleus_filter({0.5, 0.3, 0.2}, 0.7);
  EXPECT_EQ(nucleus_filter(once, 0.7), once);
  // Not idempotent in general: 0.6 / 0.95 already reaches 0.62.
  const auto first = nucleus_filter({0.6, 0.35, 0.05}, 0.62);
  EXPECT_GT(first[1], 0.0);
  const auto second = nucleus_filter(first, 0.62);
  EXPECT_EQ(second, (std::vector<double>{1.0, 0.0, 0.0}));
}

TEST(Nucleus, Errors) {
  try {
    nucleus_filter({0.5, 0.4}, 0.9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_distribution);
  }
  EXPECT_THROW(nucleus_filter({1.2, -0.2}, 0.9), Error);
  EXPECT_THROW(nucleus_filter({}, 0.9), Error);
  EXPECT_THROW(nucleus_filter({1.0}, 0.0), Error);
}

TEST(Prompts, FiveBuiltins) {
  const auto vocab = Vocabulary::build();
  const auto prompts = builtin_prompts();
  ASSERT_EQ(prompts.size(), 5u);
  for (const auto& p : prompts) {
    const auto prefix = p.prefix(vocab);
    EXPECT_NE(prefix.ids.back(), Vocabulary::kEos);
    auto closed = prefix;
    closed.ids.push_back(Vocabulary::kEos);
    EXPECT_EQ(decode(closed, vocab).bars.size(), p.bars.size()) << p.name;
  }
  const auto render = [](const PromptSpec& p) {
    std::vector<std::vector<std::string>> out;
    for (const auto& bar : p.bars) {
      out.emplace_back();
      for (const auto& c : bar) out.back().push_back(render_chord(c));
    }
    return out;
  };
  using Bars = std::vector<std::vector<std::string>>;
  EXPECT_EQ(render(prompts[2]), (Bars{{"Dm7", "G7"}, {"Cmaj7"}}));
  EXPECT_EQ(render(prompts[1]), (Bars{{"G", "D"}, {"Em", "C"}}));
  EXPECT_EQ(prompts[2].genre, Genre::jazz);
  EXPECT_EQ(prompts[0].genre, Genre::pop);
}

TEST(Sampling, DeterministicAndDecodable) {
  const auto vocab = Vocabulary::build();
  auto model = ChordTransformer<double>::init(small_config(), 1);
  for (const auto& p : builtin_prompts()) {
    const SampleParams params{0.9, 0.8, 20, 7};
    const auto a = sample_continuation(model, p.prefix(vocab), params);
    const auto b = sample_continuation(model, p.prefix(vocab), params);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_LE(a.generated.size(), 20u);
    EXPECT_NO_THROW(decode(a.tokens, vocab));
    for (TokenId id : a.generated) {
      EXPECT_TRUE(id == Vocabulary::kBar || id == Vocabulary::kEos || Vocabulary::is_chord(id));
    }
  }
}

TEST(Sampling, StopsAtContextLength) {
  const auto vocab = Vocabulary::build();
  auto model = ChordTransformer<double>::init(small_config(), 2);
  const auto prompt = builtin_prompts()[0].prefix(vocab);
  SampleParams params{1.0, 1.0, 1000, 3};
  const auto out = sample_continuation(model, prompt, params);
  EXPECT_LE(out.tokens.size(), small_config().max_len);

  TokenSequence long_prompt = prompt;
  while (long_prompt.size() < small_config().max_len) long_prompt.ids.push_back(Vocabulary::kBar);
  try {
    sample_continuation(model, long_prompt, params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::prompt_too_long);
  }
}

TEST(Sampling, LowTemperatureIsGreedy) {
  const auto vocab = Vocabulary::build();
  auto model = ChordTransformer<double>::init(small_config(), 4);
  const auto prompt = builtin_prompts()[2].prefix(vocab);
  const auto out = sample_continuation(model, prompt, SampleParams{0.9, 1e-6, 12, 5});
  auto greedy = prompt;
  for (std::size_t step = 0; step < 12; ++step) {
    const auto logits = model.logits(greedy.ids);
    const double* row = logits.data() + (greedy.size() - 1) * kVocabSize;
    TokenId best = Vocabulary::kBar;
    for (std::size_t i = 0; i < kVocabSize; ++i) {
      const bool allowed = i == Vocabulary::kBar || i == Vocabulary::kEos || Vocabulary::is_chord(static_cast<TokenId>(i));
      if (allowed && row[i] > row[best]) best = static_cast<TokenId>(i);
    }
    greedy.ids.push_back(best);
    if (best == Vocabulary::kEos) break;
  }
  EXPECT_EQ(out.tokens, greedy);
}

TEST(Sampling, FrequenciesMatchFilteredDistribution) {
  FixedLogits m;
  m.cfg = small_config();
  m.cfg.max_len = 64;
  m.row.assign(kVocabSize, -1e9);
  const std::vector<TokenId> ids = {Vocabulary::kBar, 40, 41, 42};
  const std::vector<double> probs = {0.45, 0.3, 0.15, 0.1};
  for (std::size_t i = 0; i < ids.size(); ++i) m.row[ids[i]] = std::log(probs[i]);
  // With temperature 1 and top_p 0.8 the kept set is {BAR, 40, 41}.
  const auto filtered = nucleus_filter(probs, 0.8);
  const auto vocab = Vocabulary::build();
  const auto prompt = builtin_prompts()[0].prefix(vocab);
  std::vector<double> counts(4, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto c = sample_continuation(m, prompt, SampleParams{0.8, 1.0, 1, static_cast<std::uint64_t>(i)});
    const auto it = std::find(ids.begin(), ids.end(), c.generated.at(0));
    ASSERT_NE(it, ids.end());
    counts[static_cast<std::size_t>(it - ids.begin())] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < 4; ++i) tv += 0.5 * std::abs(counts[i] / draws - filtered[i]);
  EXPECT_LT(tv, 0.02);
  EXPECT_EQ(counts[3], 0.0);
}

TEST(Sampling, BarValidatorAndJson) {
  SongRecord s;
  s.bars = {Bar(3), Bar(9), Bar(8)};
  EXPECT_EQ(overlong_bars(s), (std::vector<std::size_t>{1}));
  EXPECT_EQ(overlong_bars(s, 2), (std::vector<std::size_t>{0, 1, 2}));

  const auto vocab = Vocabulary::build();
  auto model = ChordTransformer<double>::init(small_config(), 5);
  const auto prompt = builtin_prompts()[2];
  const SampleParams params{0.9, 0.8, 10, 11};
  const auto c = sample_continuation(model, prompt.prefix(vocab), params);
  const auto j = continuation_to_json(prompt, params, c, vocab);
  EXPECT_EQ(j.at("prompt"), "jazz_ii_V_I_C");
  EXPECT_EQ(j.at("tokens").size(), c.tokens.size());
  EXPECT_EQ(j.at("chords").at(0), (nlohmann::json{"Dm7", "G7"}));
  EXPECT_EQ(j.at("params").at("seed"), 11);
}
