#pragma once

// Per-epoch evaluation records and best-epoch selection.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "chordgen/error.hpp"

namespace chordgen {

/// Split names carry a metric-position suffix: ".all" counts every non-PAD
/// next-token position, ".chord" only positions whose target is a chord.
inline constexpr const char* kAllSuffix = ".all";
inline constexpr const char* kChordSuffix = ".chord";
inline constexpr const char* kSourceTest = "pop_test.chord";
inline constexpr const char* kTargetTest = "jazz_test.chord";

struct EvalRow {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double ppl = 1.0;
  double top1 = 0.0;  // percent
  double top5 = 0.0;  // percent
  std::size_t n_positions = 0;

  bool operator==(const EvalRow&) const = default;
};

struct EpochRecord {
  int epoch = 0;  // 0-based within the run
  double train_loss = 0.0;
  std::vector<EvalRow> rows;
  std::string checkpoint;

  const EvalRow& row(const std::string& split) const {
    for (const auto& r : rows) {
      if (r.split == split) return r;
    }
    throw Error(ErrorCode::invalid_argument, "epoch " + std::to_string(epoch) + " has no split " + split);
  }

  bool has(const std::string& split) const {
    for (const auto& r : rows) {
      if (r.split == split) return true;
    }
    return false;
  }

  /// Record carrying only source/target chord top-1, for rule checks.
  static EpochRecord scores(int epoch, double source_top1, double target_top1) {
    EpochRecord r;
    r.epoch = epoch;
    r.rows.push_back(EvalRow{epoch, kSourceTest, 0.0, 1.0, source_top1, source_top1, 0});
    r.rows.push_back(EvalRow{epoch, kTargetTest, 0.0, 1.0, target_top1, target_top1, 0});
    return r;
  }
};

struct BestEpoch {
  std::size_t index = 0;  // position in the record list
  int epoch = 0;
  bool constraint_unsatisfiable = false;
  std::size_t excluded = 0;  // records failing the source floor
};

/// Highest target top-1 among epochs whose source top-1 stays within `slack`
/// points of the baseline; ties go to the earliest epoch. When no epoch
/// qualifies, falls back to the highest source top-1 and sets the flag.
inline BestEpoch select_best_epoch(std::span<const EpochRecord> records, double baseline_source_top1,
                                   double slack = 3.0, const std::string& source = kSourceTest,
                                   const std::string& target = kTargetTest) {
  if (records.empty()) throw Error(ErrorCode::empty_records, "no epoch records to select from");
  const double floor = baseline_source_top1 - slack;
  BestEpoch best;
  bool found = false;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].row(source).top1 < floor) {
      ++best.excluded;
      continue;
    }
    if (!found || records[i].row(target).top1 > records[best.index].row(target).top1) {
      best.index = i;
      found = true;
    }
  }
  if (!found) {
    best.constraint_unsatisfiable = true;
    for (std::size_t i = 1; i < records.size(); ++i) {
      if (records[i].row(source).top1 > records[best.index].row(source).top1) best.index = i;
    }
  }
  best.epoch = records[best.index].epoch;
  return best;
}

}  // namespace chordgen
