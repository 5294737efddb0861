#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chordgen/evaluator.hpp"
#include "chordgen/model.hpp"
#include "support/gradcheck.hpp"

using namespace chordgen;
using chordgen::testing::random_tensor;

namespace {

struct UniformStub {
  Tensor<double> logits(const std::vector<TokenId>& ids) const { return Tensor<double>({ids.size(), kVocabSize}); }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("chordgen_eval_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<TokenSequence> sample_split(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    TokenSequence s{{Vocabulary::kBos, Vocabulary::genre(i % 2 ? Genre::jazz : Genre::pop), Vocabulary::key(PitchClass(0)),
                     Vocabulary::kTimeBase}};
    const std::size_t bars = 1 + rng.uniform_index(4);
    for (std::size_t b = 0; b < bars; ++b) {
      s.ids.push_back(Vocabulary::kBar);
      for (std::size_t c = 0; c < 2; ++c) s.ids.push_back(static_cast<TokenId>(Vocabulary::kChordBase + rng.uniform_index(40)));
    }
    s.ids.push_back(Vocabulary::kEos);
    out.push_back(std::move(s));
  }
  return out;
}

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.layers = 1;
  c.max_len = 32;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST(TopK, ExhaustiveAndArgmax) {
  Rng rng(1);
  const auto logits = random_tensor({50, kVocabSize}, rng);
  std::vector<TokenId> targets(50), argmax(50);
  for (std::size_t r = 0; r < 50; ++r) {
    targets[r] = static_cast<TokenId>(rng.uniform_index(kVocabSize));
    const auto* row = logits.data() + r * kVocabSize;
    argmax[r] = static_cast<TokenId>(std::max_element(row, row + kVocabSize) - row);
  }
  const std::vector<std::uint8_t> mask(50, 1);
  EXPECT_EQ(topk_accuracy(logits, targets, kVocabSize, mask), 100.0);
  EXPECT_EQ(topk_accuracy(logits, argmax, 1, mask), 100.0);
}

TEST(TopK, MonotoneInK) {
  Rng rng(2);
  const auto logits = random_tensor({200, kVocabSize}, rng);
  std::vector<TokenId> targets(200);
  for (auto& t : targets) t = static_cast<TokenId>(rng.uniform_index(kVocabSize));
  std::vector<std::uint8_t> mask(200, 1);
  mask[3] = mask[17] = 0;
  double prev = 0.0;
  for (std::size_t k = 1; k <= kVocabSize; k += 7) {
    const double acc = topk_accuracy(logits, targets, k, mask);
    EXPECT_GE(acc, prev);
    prev = acc;
  }
}

TEST(TopK, RandomLogitsMonteCarlo) {
  Rng rng(3);
  const auto logits = random_tensor({1000, kVocabSize}, rng);
  std::vector<TokenId> targets(1000);
  for (auto& t : targets) t = static_cast<TokenId>(rng.uniform_index(kVocabSize));
  const double acc = topk_accuracy(logits, targets, 5, std::vector<std::uint8_t>(1000, 1));
  EXPECT_NEAR(acc, 100.0 * 5.0 / 351.0, 1.0);
}

TEST(TopK, TiesGoToLowerId) {
  const Tensor<double> logits({1, 4}, {1.0, 2.0, 2.0, 0.0});
  const std::vector<std::uint8_t> mask{1};
  EXPECT_EQ(topk_accuracy(logits, {1}, 1, mask), 100.0);
  EXPECT_EQ(topk_accuracy(logits, {2}, 1, mask), 0.0);
  EXPECT_EQ(topk_accuracy(logits, {2}, 2, mask), 100.0);
}

TEST(TopK, Errors) {
  const Tensor<double> logits({2, 4});
  try {
    topk_accuracy(logits, {1, 2}, 1, {0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::all_masked);
  }
  EXPECT_THROW(topk_accuracy(logits, {1, 2}, 0, {1, 1}), Error);
}

TEST(EvaluateSplit, UniformStubAnalytic) {
  const auto split = sample_split(20, 4);
  UniformStub stub;
  const auto res = evaluate_split(stub, split, "val");
  EXPECT_NEAR(res.all.loss, std::log(351.0), 1e-12);
  EXPECT_NEAR(res.chord.loss, std::log(351.0), 1e-12);
  // With every logit equal, the lower-id rule ranks token t at position t, so
  // top-k counts exactly the targets with id < k.
  std::size_t n = 0, below1 = 0, below5 = 0;
  for (const auto& s : split) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      ++n;
      below1 += s.ids[t] < 1;
      below5 += s.ids[t] < 5;
    }
  }
  EXPECT_EQ(res.all.n_positions, n);
  EXPECT_EQ(res.all.top1, 100.0 * below1 / n);
  EXPECT_EQ(res.all.top5, 100.0 * below5 / n);
  EXPECT_EQ(res.chord.top1, 0.0);
  EXPECT_EQ(res.all.split, "val.all");
  EXPECT_EQ(res.chord.split, "val.chord");
}

TEST(EvaluateSplit, DuplicationAndOrderInvariance) {
  auto model = ChordTransformer<double>::init(small_config(), 5);
  const auto split = sample_split(12, 6);
  const auto base = evaluate_split(model, split, "pop_test", 2);
  auto doubled = split;
  doubled.insert(doubled.end(), split.begin(), split.end());
  const auto dup = evaluate_split(model, doubled, "pop_test", 2);
  EXPECT_NEAR(dup.all.loss, base.all.loss, 1e-12);
  EXPECT_EQ(dup.all.top1, base.all.top1);
  EXPECT_EQ(dup.all.top5, base.all.top5);
  EXPECT_NEAR(dup.chord.loss, base.chord.loss, 1e-12);
  EXPECT_EQ(dup.chord.top1, base.chord.top1);
  EXPECT_EQ(dup.all.n_positions, 2 * base.all.n_positions);

  auto shuffled = split;
  std::reverse(shuffled.begin(), shuffled.end());
  std::rotate(shuffled.begin(), shuffled.begin() + 5, shuffled.end());
  EXPECT_EQ(evaluate_split(model, shuffled, "pop_test", 2).all, base.all);
  EXPECT_EQ(evaluate_split(model, shuffled, "pop_test", 2).chord, base.chord);
}

TEST(EvaluateSplit, RowInvariants) {
  auto model = ChordTransformer<double>::init(small_config(), 7);
  const auto res = evaluate_split(model, sample_split(10, 8), "jazz_test");
  for (const auto& r : {res.all, res.chord}) {
    EXPECT_NEAR(r.ppl, std::exp(r.loss), 1e-9);
    EXPECT_LE(0.0, r.top1);
    EXPECT_LE(r.top1, r.top5);
    EXPECT_LE(r.top5, 100.0);
  }
  EXPECT_LT(res.chord.n_positions, res.all.n_positions);
}

TEST(EvaluateSplit, EmptySplit) {
  UniformStub stub;
  try {
    evaluate_split(stub, {}, "val");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_split);
  }
}

TEST(EvalCsv, GoldenFile) {
  const std::vector<EvalRow> rows = {{0, "val.all", 1.5, std::exp(1.5), 12.5, 40.0, 128},
                                     {1, "jazz_test.chord", 0.25, std::exp(0.25), 87.654321, 99.9999996, 7}};
  const auto dir = temp_dir("golden");
  write_eval_csv(rows, dir / "eval_results.csv");
  const auto golden = slurp(std::string(CHORDGEN_SOURCE_DIR) + "/tests/fixtures/eval_golden.csv");
  EXPECT_EQ(slurp(dir / "eval_results.csv"), golden);
  EXPECT_EQ(golden.find('\r'), std::string::npos);

  write_eval_csv(rows, dir / "again.csv");
  EXPECT_EQ(slurp(dir / "again.csv"), slurp(dir / "eval_results.csv"));

  for (const auto& r : read_eval_csv(dir / "eval_results.csv")) EXPECT_NEAR(r.ppl, std::exp(r.loss), 1e-6);
}

TEST(EvalCsv, EmptyAndSingleRow) {
  const auto dir = temp_dir("sizes");
  write_eval_csv({}, dir / "empty.csv");
  EXPECT_EQ(slurp(dir / "empty.csv"), "epoch,split,loss,ppl,top1,top5,n_positions\n");
  write_eval_csv({EvalRow{3, "val.chord", 0.0, 1.0, 50.0, 75.0, 4}}, dir / "one.csv");
  const auto one = slurp(dir / "one.csv");
  EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 2);
  EXPECT_EQ(one, "epoch,split,loss,ppl,top1,top5,n_positions\n3,val.chord,0.000000,1.000000,50.000000,75.000000,4\n");
}

TEST(EvalCsv, AppendWritesHeaderOnce) {
  const auto dir = temp_dir("append");
  const EvalRow row{0, "val.all", 1.0, std::exp(1.0), 10.0, 20.0, 5};
  append_eval_csv({row}, dir / "a.csv");
  append_eval_csv({row}, dir / "a.csv");
  const auto rows = read_eval_csv(dir / "a.csv");
  EXPECT_EQ(rows.size(), 2u);
  EXPECT_EQ(records_from_rows(rows).size(), 1u);
}

TEST(SelectBestEpoch, ConstraintExcludesLateEpoch) {
  const std::vector<EpochRecord> records = {EpochRecord::scores(0, 84, 80), EpochRecord::scores(1, 80, 82)};
  const auto best = select_best_epoch(records, 84.24);
  EXPECT_EQ(best.epoch, 0);
  EXPECT_FALSE(best.constraint_unsatisfiable);
  EXPECT_EQ(best.excluded, 1u);
}

TEST(SelectBestEpoch, PlainArgmaxWhenAllFeasible) {
  const std::vector<EpochRecord> records = {EpochRecord::scores(0, 90, 70), EpochRecord::scores(1, 89, 75),
                                            EpochRecord::scores(2, 88, 75), EpochRecord::scores(3, 90, 72)};
  const auto best = select_best_epoch(records, 88.0);
  EXPECT_EQ(best.epoch, 1);
  EXPECT_EQ(best.excluded, 0u);
}

TEST(SelectBestEpoch, FloorIsInclusive) {
  const std::vector<EpochRecord> records = {EpochRecord::scores(0, 85, 60), EpochRecord::scores(1, 82, 61)};
  EXPECT_EQ(select_best_epoch(records, 85.0).epoch, 1);
}

TEST(SelectBestEpoch, UnsatisfiableFallsBackToSource) {
  const std::vector<EpochRecord> records = {EpochRecord::scores(0, 70, 80), EpochRecord::scores(1, 75, 70),
                                            EpochRecord::scores(2, 75, 90)};
  const auto best = select_best_epoch(records, 84.24);
  EXPECT_TRUE(best.constraint_unsatisfiable);
  EXPECT_EQ(best.epoch, 1);
  EXPECT_EQ(best.excluded, 3u);
}

TEST(SelectBestEpoch, Empty) {
  try {
    select_best_epoch({}, 80.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_records);
  }
}

TEST(Report, BaselineOnlyHasZeroDeltas) {
  const auto rec = EpochRecord::scores(0, 83.7, 61.2);
  const Baseline baseline{rec.row(kSourceTest), rec.row(kTargetTest)};
  const auto rep = report_sweep({RunSummary{"pretrain", 0, {rec}}}, baseline);
  ASSERT_EQ(rep.runs.size(), 1u);
  EXPECT_EQ(rep.runs[0].delta_source_top1, 0.0);
  EXPECT_EQ(rep.runs[0].delta_target_top1, 0.0);
  EXPECT_EQ(rep.runs[0].delta_source_top5, 0.0);
  EXPECT_EQ(rep.runs[0].delta_target_top5, 0.0);
  EXPECT_NE(rep.markdown.find("+0.00"), std::string::npos);
}

TEST(Report, ParetoStrictness) {
  const auto base = EpochRecord::scores(0, 80, 60);
  const Baseline baseline{base.row(kSourceTest), base.row(kTargetTest)};
  const std::vector<RunSummary> runs = {
      {"a", 0, {EpochRecord::scores(0, 79, 70)}},
      {"b", 100, {EpochRecord::scores(0, 79, 70)}},
      {"c", 200, {EpochRecord::scores(0, 80, 70)}},
      {"d", 400, {EpochRecord::scores(0, 81, 65)}},
  };
  const auto rep = report_sweep(runs, baseline);
  EXPECT_EQ(rep.runs[0].dominated_by, (std::vector<std::string>{"c"}));
  EXPECT_EQ(rep.runs[1].dominated_by, (std::vector<std::string>{"c"}));
  EXPECT_FALSE(rep.runs[2].dominated());
  EXPECT_FALSE(rep.runs[3].dominated());
  EXPECT_EQ(rep.fig3["points"].size(), 4u);
  EXPECT_TRUE(rep.fig3["points"][0]["dominated"].get<bool>());

  const std::vector<RunSummary> twins = {{"x", 0, {EpochRecord::scores(0, 79, 70)}}, {"y", 0, {EpochRecord::scores(0, 79, 70)}}};
  for (const auto& r : report_sweep(twins, baseline).runs) EXPECT_FALSE(r.dominated());
}

TEST(Report, WritesBundle) {
  const auto base = EpochRecord::scores(0, 80, 60);
  const auto rep = report_sweep({{"a", 0, {EpochRecord::scores(0, 79, 70), EpochRecord::scores(1, 76, 72)}}},
                                Baseline{base.row(kSourceTest), base.row(kTargetTest)});
  EXPECT_EQ(rep.runs[0].best.epoch, 0);
  EXPECT_EQ(rep.fig2["runs"][0]["epochs"].size(), 2u);
  const auto dir = temp_dir("bundle");
  write_report(rep, dir);
  for (const char* f : {"report.md", "fig1_accuracy_vs_mix.json", "fig2_epoch_trends.json", "fig3_tradeoff.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
}
