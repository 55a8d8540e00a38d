#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mstream/config.hpp"
#include "mstream/metrics.hpp"

namespace mstream {

struct SplitRatios {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Split sizes are llround(n * ratio) for validation and test, the remainder
// going to train. With stratify set, each class is divided the same way
// (largest-remainder allocation of the split sizes across classes) and
// shuffled with its own draw from the seeded generator. Indices in each
// split are ascending. Throws StratificationError when some split lacks a
// class and DataError for fewer than 5 records.
Split split_dataset(const std::vector<int>& labels, std::uint64_t seed, const SplitRatios& ratios = {},
                    bool stratify = true);

struct EvalOptions {
  int repeats = 50;
  std::uint64_t seed_base = 0;
  double threshold = 0.5;
  int jobs = 1;
  bool stratify = true;

  static EvalOptions from_config(const Config& cfg);
  void write(Config& cfg) const;
  void validate() const;
};

// Test-set predictions of one repeat.
struct RepeatOutcome {
  std::vector<std::string> ids;
  std::vector<double> scores;  // p(MCI)
  std::vector<int> labels;
};

struct RepeatMetrics {
  int repeat = 0;
  std::uint64_t seed = 0;
  double auc = 0, acc = 0, sen = 0, spe = 0;
};

struct EvalReport {
  std::string name;
  double threshold = 0.5;
  std::uint64_t seed_base = 0;
  std::vector<RepeatMetrics> repeats;
  std::vector<RepeatOutcome> outcomes;
  Interval auc, acc, sen, spe;
  int median_repeat = 0;  // index into repeats

  // model,repeat,seed,auc,acc,sen,spe
  std::string repeats_csv(bool header = true) const;
  // model,metric,mean,ci_lower,ci_upper,repeats
  std::string summary_csv(bool header = true) const;
  RocCurve median_roc() const;
};

// Lower median by AUC; ties go to the earlier repeat.
int median_auc_repeat(const std::vector<double>& aucs);

// Metrics per outcome plus the aggregate intervals.
EvalReport summarize_repeats(const std::string& name, const EvalOptions& options,
                             std::vector<RepeatOutcome> outcomes);

using RepeatFn = std::function<RepeatOutcome(int repeat, std::uint64_t seed)>;

// Runs fn for repeats 0..R-1 with seed seed_base + r on up to options.jobs
// threads. Results are collected by index, so the report does not depend on
// the thread count. A failing repeat raises RepeatError naming the first
// failed index once all workers have finished.
EvalReport repeated_eval(const std::string& name, const EvalOptions& options, const RepeatFn& fn);

struct SkippedRow {
  std::string name;
  std::string reason;
};

// Plain-text table: one row per report with AUC, ACC, SEN and SPE as
// "mean [lower-upper]".
std::string format_table(const std::vector<EvalReport>& reports, const std::vector<SkippedRow>& skipped = {});

}  // namespace mstream
