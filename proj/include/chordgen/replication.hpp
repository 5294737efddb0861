#pragma once

// Desk-scale rehearsal experiment on two synthetic genres: generate data,
// pretrain on the source genre, then fine-tune one run per rehearsal volume.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "chordgen/evaluator.hpp"
#include "chordgen/trainer.hpp"

namespace chordgen {

struct ReplicationConfig {
  std::filesystem::path source_genre;  // GenreSpec JSON, plays the pop role
  std::filesystem::path target_genre;  // GenreSpec JSON, plays the jazz role
  std::size_t source_train = 3000, source_val = 300, source_test = 1000;
  std::size_t target_train = 300, target_val = 60, target_test = 500;
  std::vector<std::size_t> pop_mixes = {0, 150, 300, 600, 1200};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig finetune;
  double slack = 3.0;

  /// Settings that run the three-seed experiment in roughly twelve CPU minutes.
  static ReplicationConfig desk(const std::filesystem::path& genre_dir) {
    ReplicationConfig c;
    c.source_genre = genre_dir / "popish.json";
    c.target_genre = genre_dir / "jazzish.json";
    c.model.d_model = 64;
    c.model.heads = 4;
    c.model.d_ff = 256;
    c.model.layers = 2;
    c.model.max_len = 64;
    c.model.dropout = 0.1;
    c.pretrain.epochs_max = 8;
    c.pretrain.peak_lr = 1e-3;
    c.pretrain.micro_batch = 32;
    c.pretrain.accum_factor = 1;
    c.pretrain.keep_epoch_checkpoints = false;
    c.finetune = TrainConfig::finetune_defaults();
    c.finetune.epochs_max = 15;
    c.finetune.peak_lr = 3e-3;
    c.finetune.micro_batch = 32;
    c.finetune.accum_factor = 1;
    c.finetune.keep_epoch_checkpoints = false;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"source_genre", source_genre.string()},
            {"target_genre", target_genre.string()},
            {"source_sizes", {source_train, source_val, source_test}},
            {"target_sizes", {target_train, target_val, target_test}},
            {"pop_mixes", pop_mixes},
            {"seeds", seeds},
            {"model", model.to_json()},
            {"pretrain", pretrain.to_json()},
            {"finetune", finetune.to_json()},
            {"slack", slack}};
  }

  /// Keys absent from `j` keep the desk settings. Relative genre paths are
  /// resolved against `base_dir`.
  static ReplicationConfig from_json(const nlohmann::json& j, const std::filesystem::path& genre_dir,
                                     const std::filesystem::path& base_dir = {}) {
    ReplicationConfig c = desk(genre_dir);
    try {
      const auto path = [&](const char* key, std::filesystem::path fallback) {
        if (!j.contains(key)) return fallback;
        std::filesystem::path p = j.at(key).get<std::string>();
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      };
      c.source_genre = path("source_genre", c.source_genre);
      c.target_genre = path("target_genre", c.target_genre);
      if (j.contains("source_sizes")) {
        const auto s = j.at("source_sizes").get<std::vector<std::size_t>>();
        if (s.size() != 3) throw Error(ErrorCode::invalid_argument, "source_sizes needs train, val and test counts");
        c.source_train = s[0], c.source_val = s[1], c.source_test = s[2];
      }
      if (j.contains("target_sizes")) {
        const auto s = j.at("target_sizes").get<std::vector<std::size_t>>();
        if (s.size() != 3) throw Error(ErrorCode::invalid_argument, "target_sizes needs train, val and test counts");
        c.target_train = s[0], c.target_val = s[1], c.target_test = s[2];
      }
      c.pop_mixes = j.value("pop_mixes", c.pop_mixes);
      c.seeds = j.value("seeds", c.seeds);
      if (j.contains("model")) {
        auto m = c.model.to_json();
        m.update(j.at("model"));
        c.model = ModelConfig::from_json(m);
      }
      if (j.contains("pretrain")) {
        auto t = c.pretrain.to_json();
        t.update(j.at("pretrain"));
        c.pretrain = TrainConfig::from_json(t);
      }
      if (j.contains("finetune")) {
        auto t = c.finetune.to_json();
        t.update(j.at("finetune"));
        c.finetune = TrainConfig::from_json(t);
      }
      c.slack = j.value("slack", c.slack);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format_error, std::string("bad replication config: ") + e.what());
    }
    if (c.seeds.empty() || c.pop_mixes.empty()) throw Error(ErrorCode::invalid_argument, "seeds and pop_mixes must be non-empty");
    return c;
  }
};

/// Run name from the pop share of the fine-tune set, e.g. ft_jazz_pop67.
inline std::string mix_run_name(std::size_t pop_mix, std::size_t jazz_count) {
  if (pop_mix == 0) return "ft_jazz_only";
  const double share = 100.0 * static_cast<double>(pop_mix) / static_cast<double>(pop_mix + jazz_count);
  return "ft_jazz_pop" + std::to_string(std::llround(share));
}

/// The six splits of one seed. Each is drawn from its own derived stream.
inline SweepData synthetic_sweep_data(const ReplicationConfig& cfg, std::uint64_t seed) {
  const auto pop = GenreSpec::load(cfg.source_genre);
  const auto jazz = GenreSpec::load(cfg.target_genre);
  SweepData d;
  d.pop_train = generate_synthetic_genre(pop, cfg.source_train, derive_seed(seed, 1), "pt");
  d.pop_val = generate_synthetic_genre(pop, cfg.source_val, derive_seed(seed, 2), "pv");
  d.pop_test = generate_synthetic_genre(pop, cfg.source_test, derive_seed(seed, 3), "ps");
  d.jazz_train = generate_synthetic_genre(jazz, cfg.target_train, derive_seed(seed, 4), "jt");
  d.jazz_val = generate_synthetic_genre(jazz, cfg.target_val, derive_seed(seed, 5), "jv");
  d.jazz_test = generate_synthetic_genre(jazz, cfg.target_test, derive_seed(seed, 6), "js");
  return d;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> pretrain_records;
  std::size_t pretrain_best = 0;
  Baseline baseline;
  std::vector<RunSummary> runs;  // in pop_mixes order
  SweepReport report;
};

/// One seed end to end. With `dir` set, writes pretrain/, baseline.csv,
/// runs/<name>/ and report/ under it.
inline SeedOutcome run_replication_seed(const ReplicationConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir = {},
                                        const Logger& log = {}) {
  const auto vocab = Vocabulary::build();
  const auto data = synthetic_sweep_data(cfg, seed);
  const std::vector<EvalSet> sets = {{"val", encode_all(data.pop_val, vocab, false)},
                                     {"pop_test", encode_all(data.pop_test, vocab, false)},
                                     {"jazz_test", encode_all(data.jazz_test, vocab, false)}};
  TrainConfig pre = cfg.pretrain;
  pre.phase = Phase::pretrain;
  pre.seed = seed;
  RunOptions ro;
  if (!dir.empty()) ro.dir = dir / "pretrain";
  if (log) ro.log = [&](const std::string& line) { log("pretrain: " + line); };
  const auto base = run_pretrain(encode_all(data.pop_train, vocab, false), sets, cfg.model, pre, ro);

  SeedOutcome out;
  out.seed = seed;
  out.pretrain_records = base.records;
  out.pretrain_best = base.best_index;
  const auto& best = base.records[base.best_index];
  out.baseline = Baseline{best.row(kSourceTest), best.row(kTargetTest)};
  if (!dir.empty()) write_eval_csv(best.rows, dir / "baseline.csv");

  TrainConfig ft = cfg.finetune;
  ft.phase = Phase::finetune;
  ft.seed = seed;
  std::vector<MixConfig> mixes;
  for (std::size_t m : cfg.pop_mixes) {
    mixes.push_back({mix_run_name(m, cfg.target_train), m, cfg.target_train, derive_seed(seed, 100 + m)});
  }
  SweepOptions so;
  if (!dir.empty()) so.dir = dir / "runs";
  so.slack = cfg.slack;
  so.log = log;
  for (auto& r : run_finetune_sweep(base.best_model, data, mixes, ft, out.baseline.source.top1, so)) {
    out.runs.push_back({r.mix.name, r.mix.pop_mix, std::move(r.result.records)});
  }
  out.report = report_sweep(out.runs, out.baseline, cfg.slack);
  if (!dir.empty()) write_report(out.report, dir / "report");
  return out;
}

/// Seed-mean top-1 deltas at each run's selected epoch, in pop_mixes order.
struct MeanDeltas {
  std::string name;
  std::size_t pop_mix = 0;
  double source_top1 = 0.0;
  double target_top1 = 0.0;
};

inline std::vector<MeanDeltas> mean_deltas(const std::vector<SeedOutcome>& seeds) {
  std::vector<MeanDeltas> out;
  if (seeds.empty()) return out;
  for (std::size_t i = 0; i < seeds.front().report.runs.size(); ++i) {
    MeanDeltas m{seeds.front().report.runs[i].name, seeds.front().report.runs[i].pop_mix};
    for (const auto& s : seeds) {
      m.source_top1 += s.report.runs.at(i).delta_source_top1;
      m.target_top1 += s.report.runs.at(i).delta_target_top1;
    }
    m.source_top1 /= static_cast<double>(seeds.size());
    m.target_top1 /= static_cast<double>(seeds.size());
    out.push_back(std::move(m));
  }
  return out;
}

inline std::string format_mean_deltas(const std::vector<SeedOutcome>& seeds) {
  std::string md = "# Seed means\n\n" + std::to_string(seeds.size()) + " seeds, top-1 deltas at each run's selected epoch.\n\n";
  md += "| run | pop mix | source top-1 | target top-1 |\n|---|---|---|---|\n";
  for (const auto& m : mean_deltas(seeds)) {
    md += "| " + m.name + " | " + std::to_string(m.pop_mix) + " | " + detail::signed_fixed(m.source_top1) + " | " +
          detail::signed_fixed(m.target_top1) + " |\n";
  }
  return md;
}

}  // namespace chordgen
