#pragma once

// Pretraining and fine-tuning loops, run directories, and the rehearsal sweep.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "chordgen/corpus.hpp"
#include "chordgen/evaluator.hpp"
#include "chordgen/model.hpp"
#include "chordgen/optim.hpp"

namespace chordgen {

enum class Phase { pretrain, finetune };

inline std::string_view to_string(Phase p) { return p == Phase::pretrain ? "pretrain" : "finetune"; }

inline Phase parse_phase(std::string_view s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "finetune") return Phase::finetune;
  throw Error(ErrorCode::invalid_argument, "unknown phase `" + std::string(s) + "`");
}

struct TrainConfig {
  Phase phase = Phase::pretrain;
  std::size_t epochs_max = 3;
  double peak_lr = 3e-4;
  std::size_t warmup_epochs = 1;
  std::size_t micro_batch = 64;
  std::size_t accum_factor = 2;
  std::size_t early_stop_patience = 0;  // 0 disables early stopping
  std::uint64_t seed = 0;
  AdamWConfig adamw;
  bool keep_epoch_checkpoints = true;

  static TrainConfig pretrain_defaults() { return TrainConfig{}; }

  static TrainConfig finetune_defaults() {
    TrainConfig c;
    c.phase = Phase::finetune;
    c.epochs_max = 10;
    c.peak_lr = 2e-5;
    c.warmup_epochs = 2;
    c.early_stop_patience = 5;
    return c;
  }

  void validate() const {
    if (epochs_max == 0 || micro_batch == 0 || accum_factor == 0 || !(peak_lr > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "epochs_max, micro_batch, accum_factor and peak_lr must be positive");
    }
  }

  nlohmann::json to_json() const {
    return {{"phase", to_string(phase)},
            {"epochs_max", epochs_max},
            {"peak_lr", peak_lr},
            {"warmup_epochs", warmup_epochs},
            {"micro_batch", micro_batch},
            {"accum_factor", accum_factor},
            {"early_stop_patience", early_stop_patience},
            {"seed", seed},
            {"weight_decay", adamw.weight_decay},
            {"keep_epoch_checkpoints", keep_epoch_checkpoints}};
  }

  /// Missing keys keep the phase defaults.
  static TrainConfig from_json(const nlohmann::json& j) {
    const Phase phase = parse_phase(j.value("phase", std::string("pretrain")));
    TrainConfig c = phase == Phase::pretrain ? pretrain_defaults() : finetune_defaults();
    c.epochs_max = j.value("epochs_max", c.epochs_max);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.micro_batch = j.value("micro_batch", c.micro_batch);
    c.accum_factor = j.value("accum_factor", c.accum_factor);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.seed = j.value("seed", c.seed);
    c.adamw.weight_decay = j.value("weight_decay", c.adamw.weight_decay);
    c.keep_epoch_checkpoints = j.value("keep_epoch_checkpoints", c.keep_epoch_checkpoints);
    c.validate();
    return c;
  }
};

/// Linear warmup to `peak_lr`, then cosine decay to zero at `total_steps`.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak_lr) {
  if (step > total_steps || warmup_steps >= total_steps) {
    throw Error(ErrorCode::invalid_argument, "lr_at needs step <= total_steps and warmup_steps < total_steps");
  }
  if (step < warmup_steps) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

inline std::size_t steps_per_epoch(std::size_t n_sequences, const TrainConfig& cfg) {
  const std::size_t group = cfg.micro_batch * cfg.accum_factor;
  return (n_sequences + group - 1) / group;
}

/// Model, optimizer and schedule position of one training run.
struct TrainState {
  ChordTransformer<double> model;
  AdamW<double> optimizer;
  std::size_t step = 0;
  std::size_t total_steps = 0;
  std::size_t warmup_steps = 0;

  TrainState(ChordTransformer<double> m, const TrainConfig& cfg, std::size_t n_sequences)
      : model(std::move(m)), optimizer(cfg.adamw) {
    const std::size_t per_epoch = steps_per_epoch(n_sequences, cfg);
    total_steps = per_epoch * cfg.epochs_max;
    warmup_steps = std::min(per_epoch * cfg.warmup_epochs, total_steps - 1);
  }
};

/// Seeded permutation of [0, n) for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

/// One pass over `data`. Every group of `accum_factor` micro-batches forms one
/// optimizer step whose loss is normalized by the group's target count, so
/// accumulation matches a single large batch. Returns the mean per-token loss.
inline double train_epoch(TrainState& st, const std::vector<TokenSequence>& data, const TrainConfig& cfg, int epoch) {
  if (data.empty()) throw Error(ErrorCode::empty_corpus, "no training sequences");
  const auto order = epoch_order(data.size(), cfg.seed, epoch);
  const std::uint64_t epoch_seed = derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)), 0xd50);
  auto params = st.model.parameter_ptrs();
  const std::size_t group = cfg.micro_batch * cfg.accum_factor;
  double loss_sum = 0.0;
  std::size_t token_sum = 0, micro_index = 0;
  for (std::size_t start = 0; start < order.size(); start += group) {
    const std::size_t end = std::min(order.size(), start + group);
    std::vector<LmBatch> micros;
    std::size_t group_tokens = 0;
    for (std::size_t m = start; m < end; m += cfg.micro_batch) {
      std::vector<const TokenSequence*> seqs;
      for (std::size_t i = m; i < std::min(end, m + cfg.micro_batch); ++i) seqs.push_back(&data[order[i]]);
      micros.push_back(make_lm_batch(seqs));
      group_tokens += micros.back().target_count;
    }
    if (group_tokens == 0) continue;
    st.model.zero_grad();
    double group_loss = 0.0;
    for (const auto& mb : micros) {
      if (mb.target_count == 0) continue;
      Graph<double> g(true);
      const ForwardOptions opt{true, derive_seed(epoch_seed, micro_index++)};
      const Var loss = cross_entropy(g, st.model.forward(g, mb.inputs, opt), mb.targets, mb.mask,
                                     static_cast<double>(group_tokens));
      group_loss += g.value(loss)[0];
      g.backward(loss);
    }
    if (!std::isfinite(group_loss)) {
      throw Error(ErrorCode::non_finite_loss, "epoch " + std::to_string(epoch) + " step " + std::to_string(st.step));
    }
    ++st.step;
    st.optimizer.step(params, lr_at(std::min(st.step, st.total_steps), st.total_steps, st.warmup_steps, cfg.peak_lr));
    loss_sum += group_loss * static_cast<double>(group_tokens);
    token_sum += group_tokens;
  }
  return loss_sum / static_cast<double>(token_sum);
}

// ---------------------------------------------------------------------------
// Runs

struct EvalSet {
  std::string name;
  std::vector<TokenSequence> sequences;
};

template <class Model>
std::vector<EvalRow> evaluate_sets(Model& model, const std::vector<EvalSet>& sets, int epoch) {
  std::vector<EvalRow> rows;
  for (const auto& s : sets) {
    const auto res = evaluate_split(model, s.sequences, s.name, epoch);
    rows.push_back(res.all);
    rows.push_back(res.chord);
  }
  return rows;
}

/// Watches the monitored loss. `update` returns true once `patience` epochs
/// have passed since the last strict improvement; patience 0 never stops.
struct EarlyStopping {
  std::size_t patience = 0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t seen = 0;

  bool update(double loss) {
    const std::size_t epoch = seen++;
    if (loss < best) {
      best = loss;
      best_epoch = epoch;
      return false;
    }
    return patience > 0 && epoch - best_epoch >= patience;
  }
};

using Logger = std::function<void(const std::string&)>;

struct RunOptions {
  std::filesystem::path dir;         // empty: nothing is written
  std::string monitor = "val.all";   // loss used for best-epoch and early stopping
  std::optional<double> baseline_source_top1;  // set: best.bin follows the source-floor rule
  double slack = 3.0;
  Logger log;
  nlohmann::json extra_config = nlohmann::json::object();
};

struct RunResult {
  std::vector<EpochRecord> records;
  std::size_t best_index = 0;
  ChordTransformer<double> best_model;
  bool early_stopped = false;
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot write " + p.string());
  out << body;
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + p.string());
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

/// Train from `init`, evaluating every set after each epoch. Stops early once
/// `patience` epochs pass without improving the monitored loss.
inline RunResult run_training(const ChordTransformer<double>& init, const std::vector<TokenSequence>& train,
                              const std::vector<EvalSet>& eval_sets, const TrainConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorCode::empty_corpus, "training set is empty");
  TrainState st(init, cfg, train.size());
  RunResult result;
  std::vector<ChordTransformer<double>> snapshots;
  std::string log_text;
  const auto log = [&](const std::string& line) {
    log_text += line + "\n";
    if (opt.log) opt.log(line);
    if (!opt.dir.empty()) detail::write_text(opt.dir / "log.txt", log_text);
  };
  if (!opt.dir.empty()) {
    std::filesystem::create_directories(opt.dir);
    nlohmann::json config = {{"train", cfg.to_json()},
                             {"model", init.config().to_json()},
                             {"train_sequences", train.size()},
                             {"monitor", opt.monitor}};
    for (const auto& s : eval_sets) config["eval_sets"][s.name] = s.sequences.size();
    for (const auto& [k, v] : opt.extra_config.items()) config[k] = v;
    detail::write_text(opt.dir / "config.json", config.dump(2) + "\n");
  }
  log(std::string(to_string(cfg.phase)) + ": " + std::to_string(train.size()) + " sequences, " +
      std::to_string(st.total_steps) + " steps, warmup " + std::to_string(st.warmup_steps));

  std::vector<EvalRow> all_rows;
  EarlyStopping stopper{cfg.early_stop_patience};
  for (std::size_t e = 0; e < cfg.epochs_max; ++e) {
    const int epoch = static_cast<int>(e);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_epoch(st, train, cfg, epoch);
    rec.rows = evaluate_sets(st.model, eval_sets, epoch);
    all_rows.insert(all_rows.end(), rec.rows.begin(), rec.rows.end());
    if (!opt.dir.empty()) {
      write_eval_csv(all_rows, opt.dir / "eval_results.csv");
      if (cfg.keep_epoch_checkpoints) {
        const auto path = opt.dir / ("ckpt_epoch_" + std::to_string(epoch) + ".bin");
        write_checkpoint(path, st.model.to_checkpoint({{"phase", to_string(cfg.phase)}, {"epoch", epoch}}));
        rec.checkpoint = path.string();
      }
    }
    std::string line = "epoch " + std::to_string(epoch) + " train_loss " + detail::format_double(rec.train_loss);
    for (const auto& r : rec.rows) {
      if (r.split.ends_with(kChordSuffix) || r.split == opt.monitor) {
        line += " " + r.split + " loss " + detail::format_double(r.loss) + " top1 " + detail::format_double(r.top1);
      }
    }
    log(line);
    const double monitored = rec.has(opt.monitor) ? rec.row(opt.monitor).loss : rec.train_loss;
    result.records.push_back(std::move(rec));
    snapshots.push_back(st.model);
    if (stopper.update(monitored)) {
      result.early_stopped = true;
      log("early stop after epoch " + std::to_string(epoch));
      break;
    }
  }

  result.best_index = stopper.best_epoch;
  if (opt.baseline_source_top1) {
    result.best_index = select_best_epoch(result.records, *opt.baseline_source_top1, opt.slack).index;
  }
  result.best_model = snapshots[result.best_index];
  if (!opt.dir.empty()) {
    const int best_epoch = result.records[result.best_index].epoch;
    write_checkpoint(opt.dir / "best.bin",
                     result.best_model.to_checkpoint({{"phase", to_string(cfg.phase)}, {"epoch", best_epoch}, {"best", true}}));
    log("best epoch " + std::to_string(best_epoch));
  }
  return result;
}

/// Phase 0: train from scratch, keeping the epoch with the lowest val loss.
inline RunResult run_pretrain(const std::vector<TokenSequence>& train, const std::vector<EvalSet>& eval_sets,
                              const ModelConfig& model_cfg, const TrainConfig& cfg, const RunOptions& opt = {}) {
  if (train.empty()) throw Error(ErrorCode::empty_corpus, "pretrain corpus is empty");
  model_cfg.validate();
  return run_training(ChordTransformer<double>::init(model_cfg, derive_seed(cfg.seed, 0x1417)), train, eval_sets, cfg, opt);
}

// ---------------------------------------------------------------------------
// Rehearsal sweep

/// Held-out sets for the sweep: songs are encoded once and shared by every run.
struct SweepData {
  std::vector<SongRecord> jazz_train;
  std::vector<SongRecord> pop_train;
  std::vector<SongRecord> jazz_val;
  std::vector<SongRecord> pop_val;
  std::vector<SongRecord> pop_test;
  std::vector<SongRecord> jazz_test;
};

inline std::vector<TokenSequence> encode_all(const std::vector<SongRecord>& songs, const Vocabulary& vocab, bool augment) {
  std::vector<TokenSequence> out;
  out.reserve(songs.size());
  for (const auto& s : songs) out.push_back(encode(s, vocab));
  return augment ? augment_twelve_keys(out, vocab) : out;
}

/// Validation set of a mix: all jazz val songs plus a seeded pop val sample
/// holding the mix's pop:jazz ratio, capped by the pop val size.
inline std::vector<SongRecord> build_mix_val(const std::vector<SongRecord>& jazz_val, const std::vector<SongRecord>& pop_val,
                                             const MixConfig& mix) {
  std::size_t n_pop = 0;
  if (mix.jazz_count > 0) {
    n_pop = static_cast<std::size_t>(std::llround(static_cast<double>(mix.pop_mix) * static_cast<double>(jazz_val.size()) /
                                                  static_cast<double>(mix.jazz_count)));
  }
  n_pop = std::min(n_pop, pop_val.size());
  MixConfig val_mix{mix.name + ".val", n_pop, jazz_val.size(), derive_seed(mix.seed, 0x7a1)};
  return build_finetune_mix(jazz_val, pop_val, val_mix);
}

struct SweepOptions {
  std::filesystem::path dir;  // runs/<name>/ created under this when set
  bool augment = false;
  double slack = 3.0;
  Logger log;
};

struct SweepRun {
  MixConfig mix;
  RunResult result;
};

/// One fine-tune run per mix, each from its own copy of `base`.
inline std::vector<SweepRun> run_finetune_sweep(const ChordTransformer<double>& base, const SweepData& data,
                                                const std::vector<MixConfig>& mixes, const TrainConfig& cfg,
                                                double baseline_source_top1, const SweepOptions& opt = {}) {
  const auto vocab = Vocabulary::build();
  const std::vector<EvalSet> tests = {{"pop_test", encode_all(data.pop_test, vocab, false)},
                                      {"jazz_test", encode_all(data.jazz_test, vocab, false)}};
  std::vector<SweepRun> runs;
  for (const auto& mix : mixes) {
    const auto train = encode_all(build_finetune_mix(data.jazz_train, data.pop_train, mix), vocab, opt.augment);
    std::vector<EvalSet> sets = {{"val", encode_all(build_mix_val(data.jazz_val, data.pop_val, mix), vocab, false)}};
    sets.insert(sets.end(), tests.begin(), tests.end());
    RunOptions ro;
    if (!opt.dir.empty()) ro.dir = opt.dir / mix.name;
    ro.baseline_source_top1 = baseline_source_top1;
    ro.slack = opt.slack;
    ro.extra_config = {{"mix", {{"name", mix.name}, {"pop_mix", mix.pop_mix}, {"jazz_count", mix.jazz_count}, {"seed", mix.seed}}},
                       {"augment", opt.augment},
                       {"baseline_source_top1", baseline_source_top1}};
    if (opt.log) ro.log = [&](const std::string& line) { opt.log(mix.name + ": " + line); };
    runs.push_back(SweepRun{mix, run_training(base, train, sets, cfg, ro)});
  }
  return runs;
}

}  // namespace chordgen
