#pragma once

// Teacher-forced metrics, eval_results.csv, and sweep reports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "chordgen/detail/text.hpp"
#include "chordgen/records.hpp"
#include "chordgen/tensor.hpp"
#include "chordgen/tokenizer.hpp"

namespace chordgen {

/// Whether `target` ranks among the k largest of `logits[0..V)`. A logit
/// equal to the target's outranks it only when its token id is lower.
template <class T>
bool in_top_k(const T* logits, std::size_t V, TokenId target, std::size_t k) {
  const T t = logits[target];
  std::size_t ahead = 0;
  for (std::size_t c = 0; c < V; ++c) {
    if (logits[c] > t || (logits[c] == t && static_cast<TokenId>(c) < target)) {
      if (++ahead >= k) return false;
    }
  }
  return true;
}

/// Percentage of unmasked rows whose target is in the top k.
template <class T>
double topk_accuracy(const Tensor<T>& logits, const std::vector<TokenId>& targets, std::size_t k,
                     const std::vector<std::uint8_t>& mask) {
  if (k == 0) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
  require_shape(targets.size() == logits.rows() && mask.size() == logits.rows(), "topk targets/mask length");
  std::size_t hits = 0, counted = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    ++counted;
    hits += in_top_k(logits.data() + r * logits.cols(), logits.cols(), targets[r], k);
  }
  if (counted == 0) throw Error(ErrorCode::all_masked, "top-k accuracy with every position masked");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(counted);
}

struct SplitEval {
  EvalRow all;
  EvalRow chord;
};

namespace detail {

struct Tally {
  std::vector<double> nll_per_sequence;  // summed within a sequence
  std::size_t positions = 0;
  std::size_t top1 = 0;
  std::size_t top5 = 0;

  EvalRow row(int epoch, const std::string& split) const {
    std::vector<double> sorted = nll_per_sequence;
    std::sort(sorted.begin(), sorted.end());
    double total = 0.0;
    for (double v : sorted) total += v;
    EvalRow r;
    r.epoch = epoch;
    r.split = split;
    r.n_positions = positions;
    if (positions > 0) {
      const double n = static_cast<double>(positions);
      r.loss = total / n;
      r.top1 = 100.0 * static_cast<double>(top1) / n;
      r.top5 = 100.0 * static_cast<double>(top5) / n;
    }
    r.ppl = std::exp(r.loss);
    return r;
  }
};

}  // namespace detail

/// Metrics over every non-PAD next-token position of `split`. Sequences are
/// scored one at a time without padding; accuracies come from integer counts
/// and the loss from a sorted sum of per-sequence totals, so the result does
/// not depend on sequence order. `model` needs `logits(ids) -> Tensor`.
template <class Model>
SplitEval evaluate_split(Model& model, const std::vector<TokenSequence>& split, const std::string& name, int epoch = 0) {
  if (split.empty()) throw Error(ErrorCode::empty_split, "split " + name + " is empty");
  detail::Tally all, chord;
  for (const auto& seq : split) {
    if (seq.size() < 2) continue;
    const std::vector<TokenId> inputs(seq.ids.begin(), seq.ids.end() - 1);
    const auto logits = model.logits(inputs);
    const std::size_t V = logits.cols();
    double seq_all = 0.0, seq_chord = 0.0;
    bool any_chord = false;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const TokenId target = seq.ids[t + 1];
      if (target == Vocabulary::kPad) continue;
      const auto* row = logits.data() + t * V;
      const double mx = static_cast<double>(*std::max_element(row, row + V));
      double sum = 0.0;
      for (std::size_t c = 0; c < V; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
      const double nll = std::log(sum) + mx - static_cast<double>(row[target]);
      const bool hit1 = in_top_k(row, V, target, 1);
      const bool hit5 = in_top_k(row, V, target, 5);
      seq_all += nll;
      ++all.positions;
      all.top1 += hit1;
      all.top5 += hit5;
      if (Vocabulary::is_chord(target)) {
        any_chord = true;
        seq_chord += nll;
        ++chord.positions;
        chord.top1 += hit1;
        chord.top5 += hit5;
      }
    }
    all.nll_per_sequence.push_back(seq_all);
    if (any_chord) chord.nll_per_sequence.push_back(seq_chord);
  }
  if (all.positions == 0) throw Error(ErrorCode::empty_split, "split " + name + " has no scored positions");
  return SplitEval{all.row(epoch, name + kAllSuffix), chord.row(epoch, name + kChordSuffix)};
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kEvalCsvHeader = "epoch,split,loss,ppl,top1,top5,n_positions\n";

inline std::string format_eval_row(const EvalRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f,%.6f,%.6f,%zu\n", r.epoch, r.split.c_str(), r.loss, r.ppl, r.top1, r.top5,
                r.n_positions);
  return buf;
}

inline std::string format_eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = kEvalCsvHeader;
  for (const auto& r : rows) out += format_eval_row(r);
  return out;
}

inline void write_eval_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  out << format_eval_csv(rows);
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

/// Append rows, writing the header first when the file is new or empty.
inline void append_eval_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::io_failure, "cannot append to " + path.string());
  if (fresh) out << kEvalCsvHeader;
  for (const auto& r : rows) out << format_eval_row(r);
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

inline std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  std::vector<EvalRow> rows;
  std::string line;
  if (!std::getline(in, line) || line + "\n" != kEvalCsvHeader) {
    throw Error(ErrorCode::format_error, path.string() + ": missing eval CSV header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 7) throw Error(ErrorCode::format_error, path.string() + ": bad row `" + line + "`");
    try {
      const auto str = [&](std::size_t i) { return std::string(f[i]); };
      rows.push_back(EvalRow{std::stoi(str(0)), str(1), std::stod(str(2)), std::stod(str(3)), std::stod(str(4)),
                             std::stod(str(5)), static_cast<std::size_t>(std::stoull(str(6)))});
    } catch (const std::exception&) {
      throw Error(ErrorCode::format_error, path.string() + ": bad row `" + line + "`");
    }
  }
  return rows;
}

/// Group flat CSV rows into per-epoch records.
inline std::vector<EpochRecord> records_from_rows(const std::vector<EvalRow>& rows) {
  std::map<int, EpochRecord> by_epoch;
  for (const auto& r : rows) {
    auto& rec = by_epoch[r.epoch];
    rec.epoch = r.epoch;
    rec.rows.push_back(r);
  }
  std::vector<EpochRecord> out;
  for (auto& [e, rec] : by_epoch) out.push_back(std::move(rec));
  return out;
}

// ---------------------------------------------------------------------------
// Sweep report

struct RunSummary {
  std::string name;
  std::size_t pop_mix = 0;
  std::vector<EpochRecord> records;
};

struct Baseline {
  EvalRow source;  // pretrain best epoch, source-genre chord row
  EvalRow target;  // same checkpoint on the target genre
};

struct RunBest {
  std::string name;
  std::size_t pop_mix = 0;
  BestEpoch best;
  EvalRow source;
  EvalRow target;
  double delta_source_top1 = 0.0;
  double delta_target_top1 = 0.0;
  double delta_source_top5 = 0.0;
  double delta_target_top5 = 0.0;
  std::vector<std::string> dominated_by;

  bool dominated() const { return !dominated_by.empty(); }
};

/// X dominates Y iff X is at least as good on both top-1 axes and strictly
/// better on one.
inline bool dominates(const RunBest& x, const RunBest& y) {
  const bool ge = x.source.top1 >= y.source.top1 && x.target.top1 >= y.target.top1;
  const bool gt = x.source.top1 > y.source.top1 || x.target.top1 > y.target.top1;
  return ge && gt;
}

struct SweepReport {
  std::vector<RunBest> runs;
  std::string markdown;
  nlohmann::json fig1;  // top-1 per genre vs rehearsal volume
  nlohmann::json fig2;  // per-epoch top-1 trends per run
  nlohmann::json fig3;  // source vs target trade-off with Pareto flags
};

namespace detail {

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string signed_fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.*f", digits, v);
  return buf;
}

}  // namespace detail

inline SweepReport report_sweep(const std::vector<RunSummary>& runs, const Baseline& baseline, double slack = 3.0,
                                const std::string& source = kSourceTest, const std::string& target = kTargetTest) {
  SweepReport rep;
  for (const auto& run : runs) {
    RunBest rb;
    rb.name = run.name;
    rb.pop_mix = run.pop_mix;
    rb.best = select_best_epoch(run.records, baseline.source.top1, slack, source, target);
    rb.source = run.records[rb.best.index].row(source);
    rb.target = run.records[rb.best.index].row(target);
    rb.delta_source_top1 = rb.source.top1 - baseline.source.top1;
    rb.delta_target_top1 = rb.target.top1 - baseline.target.top1;
    rb.delta_source_top5 = rb.source.top5 - baseline.source.top5;
    rb.delta_target_top5 = rb.target.top5 - baseline.target.top5;
    rep.runs.push_back(std::move(rb));
  }
  for (auto& y : rep.runs) {
    for (const auto& x : rep.runs) {
      if (&x != &y && dominates(x, y)) y.dominated_by.push_back(x.name);
    }
  }

  using detail::fixed;
  using detail::signed_fixed;
  std::string md = "# Rehearsal sweep\n\n";
  md += "Baseline (pretrain best epoch): source top-1 " + fixed(baseline.source.top1) + ", target top-1 " +
        fixed(baseline.target.top1) + ".\n\n";
  md += "## Best epoch per run\n\n";
  md += "| run | pop mix | epoch | source top-1 | source top-5 | source ppl | target top-1 | target top-5 | target ppl | "
        "constraint |\n";
  md += "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rep.runs) {
    md += "| " + r.name + " | " + std::to_string(r.pop_mix) + " | " + std::to_string(r.best.epoch) + " | " +
          fixed(r.source.top1) + " | " + fixed(r.source.top5) + " | " + fixed(r.source.ppl, 3) + " | " + fixed(r.target.top1) +
          " | " + fixed(r.target.top5) + " | " + fixed(r.target.ppl, 3) + " | " +
          (r.best.constraint_unsatisfiable ? "unsatisfiable"
                                           : (r.best.excluded ? std::to_string(r.best.excluded) + " excluded" : "non-binding")) +
          " |\n";
  }
  md += "\n## Deltas vs baseline\n\n";
  md += "| run | source top-1 | source top-5 | target top-1 | target top-5 |\n|---|---|---|---|---|\n";
  for (const auto& r : rep.runs) {
    md += "| " + r.name + " | " + signed_fixed(r.delta_source_top1) + " | " + signed_fixed(r.delta_source_top5) + " | " +
          signed_fixed(r.delta_target_top1) + " | " + signed_fixed(r.delta_target_top5) + " |\n";
  }
  md += "\n## Pareto\n\n";
  for (const auto& r : rep.runs) {
    md += "- " + r.name + ": ";
    if (r.dominated()) {
      md += "dominated by";
      for (const auto& d : r.dominated_by) md += " " + d;
    } else {
      md += "on the frontier";
    }
    md += "\n";
  }
  rep.markdown = md;

  rep.fig1 = {{"baseline", {{"source_top1", baseline.source.top1}, {"target_top1", baseline.target.top1}}},
              {"runs", nlohmann::json::array()}};
  rep.fig2 = {{"baseline", {{"source_top1", baseline.source.top1}, {"target_top1", baseline.target.top1}}},
              {"runs", nlohmann::json::array()}};
  rep.fig3 = {{"points", nlohmann::json::array()}};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = rep.runs[i];
    rep.fig1["runs"].push_back(
        {{"name", r.name}, {"pop_mix", r.pop_mix}, {"source_top1", r.source.top1}, {"target_top1", r.target.top1}});
    nlohmann::json series = {{"name", r.name}, {"epochs", nlohmann::json::array()}};
    for (const auto& rec : runs[i].records) {
      series["epochs"].push_back(
          {{"epoch", rec.epoch}, {"source_top1", rec.row(source).top1}, {"target_top1", rec.row(target).top1}});
    }
    rep.fig2["runs"].push_back(std::move(series));
    rep.fig3["points"].push_back({{"name", r.name},
                                  {"source_top1", r.source.top1},
                                  {"target_top1", r.target.top1},
                                  {"dominated", r.dominated()},
                                  {"dominated_by", r.dominated_by}});
  }
  return rep;
}

inline void write_report(const SweepReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error(ErrorCode::io_failure, "cannot write " + (dir / name).string());
    out << body;
  };
  write("report.md", rep.markdown);
  write("fig1_accuracy_vs_mix.json", rep.fig1.dump(2) + "\n");
  write("fig2_epoch_trends.json", rep.fig2.dump(2) + "\n");
  write("fig3_tradeoff.json", rep.fig3.dump(2) + "\n");
}

}  // namespace chordgen
