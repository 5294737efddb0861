#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "chordgen/trainer.hpp"

using namespace chordgen;

namespace {

std::string data_path(const std::string& rel) { return std::string(CHORDGEN_SOURCE_DIR) + "/data/" + rel; }

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.layers = 1;
  c.max_len = 48;
  c.dropout = 0.0;
  return c;
}

std::vector<TokenSequence> synthetic(const std::string& spec, std::size_t n, std::uint64_t seed) {
  const auto vocab = Vocabulary::build();
  return encode_all(generate_synthetic_genre(GenreSpec::load(data_path("genres/" + spec + ".json")), n, seed), vocab, false);
}

TrainConfig quick_config(std::size_t micro, std::size_t accum) {
  TrainConfig c;
  c.epochs_max = 3;
  c.peak_lr = 3e-3;
  c.warmup_epochs = 1;
  c.micro_batch = micro;
  c.accum_factor = accum;
  c.seed = 17;
  c.keep_epoch_checkpoints = false;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("chordgen_train_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(LrSchedule, Endpoints) {
  EXPECT_EQ(lr_at(0, 100, 10, 3e-4), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(10, 100, 10, 3e-4), 3e-4);
  EXPECT_NEAR(lr_at(100, 100, 10, 3e-4), 0.0, 1e-20);
  EXPECT_DOUBLE_EQ(lr_at(55, 100, 10, 3e-4), 1.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(5, 100, 10, 3e-4), 1.5e-4);
}

TEST(LrSchedule, ContinuousAndMonotone) {
  for (std::size_t w : {1u, 4u, 30u}) {
    const std::size_t total = 120;
    const double peak = 2e-5;
    EXPECT_LE(std::abs(lr_at(w - 1, total, w, peak) - lr_at(w, total, w, peak)), peak / static_cast<double>(w) + 1e-18);
    for (std::size_t s = 1; s <= total; ++s) {
      if (s <= w) {
        EXPECT_GT(lr_at(s, total, w, peak), lr_at(s - 1, total, w, peak));
      } else {
        EXPECT_LE(lr_at(s, total, w, peak), lr_at(s - 1, total, w, peak));
      }
    }
  }
  EXPECT_THROW(lr_at(11, 10, 2, 1.0), Error);
  EXPECT_THROW(lr_at(0, 10, 10, 1.0), Error);
}

TEST(TrainConfig, DefaultsAndJson) {
  const auto pre = TrainConfig::pretrain_defaults();
  EXPECT_EQ(pre.epochs_max, 3u);
  EXPECT_EQ(pre.peak_lr, 3e-4);
  EXPECT_EQ(pre.warmup_epochs, 1u);
  EXPECT_EQ(pre.micro_batch * pre.accum_factor, 128u);
  const auto ft = TrainConfig::finetune_defaults();
  EXPECT_EQ(ft.epochs_max, 10u);
  EXPECT_EQ(ft.peak_lr, 2e-5);
  EXPECT_EQ(ft.warmup_epochs, 2u);
  EXPECT_EQ(ft.early_stop_patience, 5u);
  EXPECT_EQ(TrainConfig::from_json(ft.to_json()).to_json(), ft.to_json());
  EXPECT_EQ(TrainConfig::from_json({{"phase", "finetune"}}).peak_lr, 2e-5);
  EXPECT_THROW(TrainConfig::from_json({{"micro_batch", 0}}), Error);
}

TEST(TrainEpoch, AccumulationMatchesLargeBatch) {
  const auto data = synthetic("popish", 21, 1);
  const auto init = ChordTransformer<double>::init(tiny_config(), 3);
  TrainState small(init, quick_config(4, 2), data.size());
  TrainState large(init, quick_config(8, 1), data.size());
  ASSERT_EQ(small.total_steps, large.total_steps);
  const double l1 = train_epoch(small, data, quick_config(4, 2), 0);
  const double l2 = train_epoch(large, data, quick_config(8, 1), 0);
  EXPECT_NEAR(l1, l2, 1e-12);
  for (std::size_t k = 0; k < init.params().size(); ++k) {
    const auto& a = small.model.params()[k].value;
    const auto& b = large.model.params()[k].value;
    const auto& w0 = init.params()[k].value;
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i] - w0[i], b[i] - w0[i], 1e-12) << init.params()[k].name;
  }
  EXPECT_EQ(small.step, 3u);
}

TEST(TrainEpoch, DeterministicAndOrderChangesPerEpoch) {
  const auto data = synthetic("popish", 30, 2);
  EXPECT_NE(epoch_order(30, 5, 0), epoch_order(30, 5, 1));
  EXPECT_EQ(epoch_order(30, 5, 1), epoch_order(30, 5, 1));
  auto cfg = quick_config(8, 2);
  ModelConfig mc = tiny_config();
  mc.dropout = 0.1;
  const auto init = ChordTransformer<double>::init(mc, 4);
  TrainState a(init, cfg, data.size()), b(init, cfg, data.size());
  for (int e = 0; e < 2; ++e) EXPECT_EQ(train_epoch(a, data, cfg, e), train_epoch(b, data, cfg, e));
  for (std::size_t k = 0; k < init.params().size(); ++k) EXPECT_EQ(a.model.params()[k].value, b.model.params()[k].value);
}

TEST(TrainEpoch, LossDecreasesOnTinyCorpus) {
  const auto data = synthetic("popish", 120, 3);
  auto cfg = quick_config(8, 2);
  TrainState st(ChordTransformer<double>::init(tiny_config(), 5), cfg, data.size());
  double prev = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 3; ++e) {
    const double loss = train_epoch(st, data, cfg, e);
    EXPECT_LT(loss, prev) << "epoch " << e;
    prev = loss;
  }
}

TEST(EarlyStopping, StopsExactlyPatienceAfterBest) {
  EarlyStopping s{2};
  const std::vector<double> losses = {3.0, 2.0, 2.5, 1.9, 1.9, 2.0, 1.0};
  std::vector<bool> stops;
  for (double l : losses) stops.push_back(s.update(l));
  EXPECT_EQ(stops, (std::vector<bool>{false, false, false, false, false, true, false}));
  EXPECT_EQ(s.best_epoch, 6u);

  EarlyStopping never{0};
  for (int i = 0; i < 20; ++i) EXPECT_FALSE(never.update(5.0));
}

TEST(Runs, PretrainRecordsCheckpointsAndLayout) {
  const auto train = synthetic("popish", 60, 6);
  const std::vector<EvalSet> sets = {{"val", synthetic("popish", 10, 7)}, {"pop_test", synthetic("popish", 10, 8)}};
  auto cfg = quick_config(8, 2);
  cfg.keep_epoch_checkpoints = true;
  RunOptions opt;
  opt.dir = temp_dir("pretrain");
  auto res = run_pretrain(train, sets, tiny_config(), cfg, opt);
  EXPECT_EQ(res.records.size(), 3u);
  EXPECT_FALSE(res.early_stopped);
  for (const char* f : {"config.json", "eval_results.csv", "best.bin", "log.txt", "ckpt_epoch_0.bin", "ckpt_epoch_2.bin"}) {
    EXPECT_TRUE(std::filesystem::exists(opt.dir / f)) << f;
  }
  EXPECT_EQ(read_eval_csv(opt.dir / "eval_results.csv").size(), 3u * 4u);
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    if (res.records[i].row("val.all").loss < best) best = res.records[i].row("val.all").loss, arg = i;
  }
  EXPECT_EQ(res.best_index, arg);
  auto loaded = ChordTransformer<double>::from_checkpoint(read_checkpoint(opt.dir / "best.bin"));
  const std::vector<TokenId> ids = {1, 4, 6, 21, 3, 39};
  EXPECT_EQ(loaded.logits(ids), res.best_model.logits(ids));

  EXPECT_THROW(run_pretrain({}, sets, tiny_config(), cfg), Error);
}

TEST(Runs, EarlyStoppingInRealRun) {
  // A val set from another genre stops improving once the model specializes.
  const auto train = synthetic("popish", 80, 9);
  const std::vector<EvalSet> sets = {{"val", synthetic("jazzish", 10, 10)}};
  auto cfg = quick_config(8, 1);
  cfg.epochs_max = 12;
  cfg.peak_lr = 1e-2;
  cfg.early_stop_patience = 2;
  const auto res = run_pretrain(train, sets, tiny_config(), cfg);
  std::size_t best = 0;
  for (std::size_t i = 0; i < res.records.size(); ++i) {
    if (res.records[i].row("val.all").loss < res.records[best].row("val.all").loss) best = i;
  }
  ASSERT_TRUE(res.early_stopped);
  EXPECT_EQ(res.records.size() - 1, best + cfg.early_stop_patience);
}

TEST(Runs, MixValHoldsRatio) {
  const auto jazz = generate_synthetic_genre(GenreSpec::load(data_path("genres/jazzish.json")), 30, 1);
  const auto pop = generate_synthetic_genre(GenreSpec::load(data_path("genres/popish.json")), 40, 2);
  EXPECT_EQ(build_mix_val(jazz, pop, MixConfig{"m", 0, 300, 1}).size(), 30u);
  EXPECT_EQ(build_mix_val(jazz, pop, MixConfig{"m", 300, 300, 1}).size(), 60u);
  EXPECT_EQ(build_mix_val(jazz, pop, MixConfig{"m", 150, 300, 1}).size(), 45u);
  EXPECT_EQ(build_mix_val(jazz, pop, MixConfig{"m", 1200, 300, 1}).size(), 70u);
}

TEST(Runs, SweepLeavesBaseUntouchedAndIsDeterministic) {
  const auto pop = GenreSpec::load(data_path("genres/popish.json"));
  const auto jazz = GenreSpec::load(data_path("genres/jazzish.json"));
  SweepData d;
  d.jazz_train = generate_synthetic_genre(jazz, 16, 1, "jt");
  d.pop_train = generate_synthetic_genre(pop, 32, 2, "pt");
  d.jazz_val = generate_synthetic_genre(jazz, 4, 3, "jv");
  d.pop_val = generate_synthetic_genre(pop, 8, 4, "pv");
  d.pop_test = generate_synthetic_genre(pop, 6, 5, "ps");
  d.jazz_test = generate_synthetic_genre(jazz, 6, 6, "js");
  const auto base = ChordTransformer<double>::init(tiny_config(), 11);
  const auto before = base.params();
  auto cfg = quick_config(8, 1);
  cfg.phase = Phase::finetune;
  cfg.epochs_max = 2;
  const std::vector<MixConfig> mixes = {{"mix16", 16, 16, 3}, {"only", 0, 16, 3}};
  SweepOptions opt;
  opt.dir = temp_dir("sweep");
  const auto runs = run_finetune_sweep(base, d, mixes, cfg, 10.0, opt);
  ASSERT_EQ(runs.size(), 2u);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(base.params()[k].value, before[k].value);
  for (const auto& m : mixes) EXPECT_TRUE(std::filesystem::exists(opt.dir / m.name / "eval_results.csv"));
  EXPECT_EQ(runs[0].result.records[0].rows.size(), 6u);
  EXPECT_TRUE(runs[1].result.records[0].has(kTargetTest));

  // The second mix rerun alone reproduces its rows exactly.
  const auto again = run_finetune_sweep(base, d, {mixes[1]}, cfg, 10.0);
  for (std::size_t e = 0; e < again[0].result.records.size(); ++e) {
    EXPECT_EQ(again[0].result.records[e].rows, runs[1].result.records[e].rows);
  }
}
