#include "optweights/comparison.hpp"

#include <cmath>

#include "optweights/csv_io.hpp"

namespace optw {

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::GwErm: return "gw-erm";
    case Method::Subg: return "subg";
    case Method::Dfr: return "dfr";
    case Method::Gdro: return "gdro";
    case Method::Jtt: return "jtt";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  for (Method m : {Method::GwErm, Method::Subg, Method::Dfr, Method::Gdro, Method::Jtt}) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

void ComparisonSetup::validate() const {
  if (external) {
    require(external->train.num_groups() == external->shift.num_groups() &&
                external->test.num_groups() == external->shift.num_groups(),
            ErrorKind::InvalidArgument, "compare: data, test data and shift disagree on G");
    require(external->train.dim() == external->test.dim(), ErrorKind::InvalidArgument,
            "compare: training and test data have different feature counts");
  } else {
    data.validate();
  }
  config.validate();
  require(data_fraction > 0.0 && data_fraction <= 1.0, ErrorKind::InvalidArgument,
          "compare: data fraction must lie in (0, 1]");
  require(train_share > 0.0 && train_share < 1.0, ErrorKind::InvalidArgument,
          "compare: train share must lie in (0, 1)");
  require(test_per_group >= 1, ErrorKind::InvalidArgument, "compare: test_per_group >= 1");
  require(ensemble_size >= 1, ErrorKind::InvalidArgument, "compare: ensemble_size >= 1");
}

SeedOutcome run_single(const ComparisonSetup& setup, Method method, std::uint64_t seed) {
  setup.validate();
  SyntheticShiftSpec spec = setup.data;
  spec.seed = derive_seed(seed, 0);
  std::optional<SyntheticData> generated;
  if (!setup.external) generated = generate_spurious(spec);
  GroupedDataset data = setup.external ? setup.external->train : generated->train;
  const ShiftSpec& shift = setup.external ? setup.external->shift : generated->shift;
  if (setup.data_fraction < 1.0) {
    const auto keep = static_cast<Index>(
        std::llround(setup.data_fraction * static_cast<double>(data.size())));
    require(keep >= 4, ErrorKind::SizeError, "compare: data fraction leaves too few rows");
    std::vector<Index> rows(static_cast<std::size_t>(keep));
    for (Index i = 0; i < keep; ++i) rows[static_cast<std::size_t>(i)] = i;
    data = data.subset(rows);
  }
  const GroupedDataset test = setup.external
                                  ? setup.external->test
                                  : generate_test_set(spec, setup.test_per_group, derive_seed(seed, 1));
  BilevelConfig config = setup.config;
  config.seed = derive_seed(seed, 2);
  const auto n_train =
      static_cast<Index>(std::llround(setup.train_share * static_cast<double>(data.size())));

  BilevelResult run;
  switch (method) {
    case Method::GwErm: run = optimize_gw_erm(data, shift, n_train, config); break;
    case Method::Subg: run = optimize_subg(data, shift, n_train, config); break;
    case Method::Dfr:
      run = optimize_dfr(data, shift, config, setup.ensemble_size, setup.train_share);
      break;
    case Method::Gdro: run = optimize_gdro(data, n_train, config); break;
    case Method::Jtt: run = optimize_jtt(data, n_train, config).run; break;
  }
  SeedOutcome out;
  out.seed = seed;
  out.standard = evaluate_classifier(run.initial_theta, test);
  out.optimized = evaluate_classifier(run.theta, test);
  out.standard_objective = run.trace.front().objective;
  out.optimized_objective = run.trace[static_cast<std::size_t>(run.selected_step)].objective;
  out.selected_step = run.selected_step;
  return out;
}

namespace {

std::pair<double, double> mean_and_se(const std::vector<double>& x) {
  const auto k = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= k;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double se = x.size() > 1 ? std::sqrt(ss / (k - 1.0) / k) : 0.0;
  return {mean, se};
}

MetricSummary summarize(const std::vector<double>& standard, const std::vector<double>& optimized) {
  MetricSummary s;
  std::tie(s.standard_mean, s.standard_se) = mean_and_se(standard);
  std::tie(s.optimized_mean, s.optimized_se) = mean_and_se(optimized);
  s.test = paired_one_sided_t_test(standard, optimized);
  return s;
}

}  // namespace

ComparisonResult run_comparison(const ComparisonSetup& setup, Method method,
                                const std::vector<std::uint64_t>& seeds) {
  require(seeds.size() >= 2, ErrorKind::SizeError, "compare: need at least 2 seeds");
  ComparisonResult out;
  out.method = method;
  std::vector<double> sw, ow, sg, og;
  for (std::uint64_t seed : seeds) {
    SeedOutcome r = run_single(setup, method, seed);
    sw.push_back(r.standard.weighted_average_accuracy);
    ow.push_back(r.optimized.weighted_average_accuracy);
    sg.push_back(r.standard.worst_group_accuracy);
    og.push_back(r.optimized.worst_group_accuracy);
    out.runs.push_back(std::move(r));
  }
  out.weighted_average = summarize(sw, ow);
  out.worst_group = summarize(sg, og);
  return out;
}

std::string significance_marker(double p_value) {
  if (std::isnan(p_value)) return "";
  if (p_value < 0.05) return "**";
  if (p_value < 0.1) return "*";
  return "";
}

namespace {

std::string pct(double x) { return format_double(100.0 * x); }

std::string summary_columns(const MetricSummary& s, bool optimized) {
  if (!optimized) {
    return pct(s.standard_mean) + "," + pct(s.standard_se) + ",,,,,";
  }
  const auto& t = s.test;
  const std::string p = std::isnan(t.p_value) ? "" : format_double(t.p_value);
  return pct(s.optimized_mean) + "," + pct(s.optimized_se) + "," + pct(t.mean_difference) + "," +
         pct(t.ci90_low) + "," + pct(t.ci90_high) + "," + p + "," +
         significance_marker(t.p_value);
}

}  // namespace

std::string comparison_summary_csv(const std::vector<SweepEntry>& entries) {
  std::string out =
      "sweep,value,method,weights,n_seeds,"
      "weighted_avg_acc_mean,weighted_avg_acc_se,weighted_avg_acc_diff,"
      "weighted_avg_acc_diff_ci90_low,weighted_avg_acc_diff_ci90_high,weighted_avg_acc_p,"
      "weighted_avg_acc_sig,"
      "worst_group_acc_mean,worst_group_acc_se,worst_group_acc_diff,"
      "worst_group_acc_diff_ci90_low,worst_group_acc_diff_ci90_high,worst_group_acc_p,"
      "worst_group_acc_sig,test_status\n";
  for (const auto& e : entries) {
    const auto& r = e.result;
    for (bool optimized : {false, true}) {
      out += e.sweep + "," + format_double(e.value) + "," + std::string(method_name(r.method)) +
             "," + (optimized ? "optimized" : "standard") + "," + std::to_string(r.runs.size()) +
             "," + summary_columns(r.weighted_average, optimized) + "," +
             summary_columns(r.worst_group, optimized) + "," +
             (optimized ? std::string(status_name(r.weighted_average.test.status)) : "") + "\n";
    }
  }
  return out;
}

std::string comparison_runs_csv(const std::vector<SweepEntry>& entries) {
  std::string out =
      "sweep,value,method,seed,weights,weighted_avg_acc,worst_group_acc,val_objective,"
      "selected_step\n";
  for (const auto& e : entries) {
    for (const auto& run : e.result.runs) {
      for (bool optimized : {false, true}) {
        const MetricPair& m = optimized ? run.optimized : run.standard;
        out += e.sweep + "," + format_double(e.value) + "," +
               std::string(method_name(e.result.method)) + "," + std::to_string(run.seed) + "," +
               (optimized ? "optimized" : "standard") + "," + pct(m.weighted_average_accuracy) +
               "," + pct(m.worst_group_accuracy) + "," +
               format_double(optimized ? run.optimized_objective : run.standard_objective) + "," +
               std::to_string(optimized ? run.selected_step : 0) + "\n";
      }
    }
  }
  return out;
}

}  // namespace optw
