#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "optweights/bilevel.hpp"
#include "optweights/metrics.hpp"
#include "optweights/synthetic.hpp"

namespace optw {

enum class Method { GwErm, Subg, Dfr, Gdro, Jtt };

std::string_view method_name(Method m) noexcept;
std::optional<Method> parse_method(std::string_view name);

/// User-supplied data; the run seed then only drives the split.
struct ExternalData {
  GroupedDataset train;
  ShiftSpec shift;
  GroupedDataset test;
};

struct ComparisonSetup {
  SyntheticShiftSpec data;      // its seed is replaced per run
  std::optional<ExternalData> external;  // replaces `data` when set
  double data_fraction = 1.0;   // leading share of the generated rows that is kept
  double train_share = 0.5;     // training share of the kept rows (DFR: fitting share)
  Index test_per_group = 1000;
  int ensemble_size = 10;       // DFR only
  BilevelConfig config;         // its seed is replaced per run

  void validate() const;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  MetricPair standard;
  MetricPair optimized;
  double standard_objective = 0.0;   // validation selection objective
  double optimized_objective = 0.0;
  int selected_step = 0;
};

struct MetricSummary {
  double standard_mean = 0.0;
  double standard_se = 0.0;
  double optimized_mean = 0.0;
  double optimized_se = 0.0;
  PairedTestResult test;  // optimized minus standard
};

struct ComparisonResult {
  Method method = Method::GwErm;
  std::vector<SeedOutcome> runs;
  MetricSummary weighted_average;
  MetricSummary worst_group;
};

/// Standard arm: the method's starting weights. Optimized arm: the selected
/// weights. Both are fit on the same split and scored on the same test set.
SeedOutcome run_single(const ComparisonSetup& setup, Method method, std::uint64_t seed);

ComparisonResult run_comparison(const ComparisonSetup& setup, Method method,
                                const std::vector<std::uint64_t>& seeds);

/// "*" below 0.1, "**" below 0.05.
std::string significance_marker(double p_value);

struct SweepEntry {
  std::string sweep;  // "none", "fraction" or "penalty"
  double value = 0.0;
  ComparisonResult result;
};

/// Summary table, accuracies in percent.
std::string comparison_summary_csv(const std::vector<SweepEntry>& entries);

/// One row per seed and arm.
std::string comparison_runs_csv(const std::vector<SweepEntry>& entries);

}  // namespace optw
