#include "optweights/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

#include "optweights/estimators.hpp"

namespace optw {

double weighted_average_accuracy(const GroupAccuracies& per_group,
                                 const std::optional<Eigen::VectorXd>& group_weights) {
  if (group_weights) {
    require(group_weights->size() == static_cast<Index>(per_group.size()),
            ErrorKind::InvalidArgument, "weighted_average_accuracy: weight length differs from G");
  }
  double num = 0.0, den = 0.0;
  bool any = false;
  for (std::size_t g = 0; g < per_group.size(); ++g) {
    if (!per_group[g]) continue;
    any = true;
    const double acc = *per_group[g];
    require(acc >= 0.0 && acc <= 1.0, ErrorKind::InvalidArgument,
            "weighted_average_accuracy: accuracy outside [0, 1]");
    const double w = group_weights ? (*group_weights)[static_cast<Index>(g)] : 1.0;
    require(w >= 0.0 && std::isfinite(w), ErrorKind::InvalidArgument,
            "weighted_average_accuracy: weights must be nonnegative");
    num += w * acc;
    den += w;
  }
  require(any, ErrorKind::AllGroupsEmpty, "weighted_average_accuracy: every group is empty");
  require(den > 0.0, ErrorKind::DegenerateWeights,
          "weighted_average_accuracy: zero weight on every non-empty group");
  return num / den;
}

double worst_group_accuracy(const GroupAccuracies& per_group) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& acc : per_group) {
    if (acc) worst = std::min(worst, *acc);
  }
  require(std::isfinite(worst), ErrorKind::AllGroupsEmpty,
          "worst_group_accuracy: every group is empty");
  return worst;
}

MetricPair metric_pair(const GroupAccuracies& per_group) {
  return {weighted_average_accuracy(per_group), worst_group_accuracy(per_group), per_group};
}

MetricPair evaluate_classifier(const ParameterVector& theta, const GroupedDataset& test) {
  return metric_pair(accuracy_by_group(theta, test));
}

std::string_view status_name(TestStatus s) noexcept {
  switch (s) {
    case TestStatus::Ok: return "ok";
    case TestStatus::ZeroVariance: return "zero_variance";
    case TestStatus::NoOp: return "no_op";
  }
  return "unknown";
}

PairedTestResult paired_one_sided_t_test(const std::vector<double>& baseline,
                                         const std::vector<double>& treatment) {
  require(baseline.size() == treatment.size(), ErrorKind::SizeError,
          "paired t-test: arms differ in length");
  require(baseline.size() >= 2, ErrorKind::SizeError, "paired t-test: need at least 2 pairs");
  const auto k = static_cast<Index>(baseline.size());
  Eigen::VectorXd d(k);
  for (Index i = 0; i < k; ++i) {
    d[i] = treatment[static_cast<std::size_t>(i)] - baseline[static_cast<std::size_t>(i)];
  }
  require(d.allFinite(), ErrorKind::ValueError, "paired t-test: non-finite entries");

  PairedTestResult out;
  out.n_pairs = k;
  out.mean_difference = d.mean();
  const double var = (d.array() - out.mean_difference).square().sum() / static_cast<double>(k - 1);
  out.standard_error = std::sqrt(var / static_cast<double>(k));
  const boost::math::students_t dist(static_cast<double>(k - 1));
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.05));
  out.ci90_low = out.mean_difference - tq * out.standard_error;
  out.ci90_high = out.mean_difference + tq * out.standard_error;

  // Differences identical up to rounding count as zero variance.
  const double spread = d.maxCoeff() - d.minCoeff();
  if (spread <= 1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff())) {
    out.standard_error = 0.0;
    out.ci90_low = out.ci90_high = out.mean_difference;
    if (out.mean_difference > 0.0) {
      out.status = TestStatus::ZeroVariance;
      out.t_statistic = std::numeric_limits<double>::infinity();
      out.p_value = 0.0;
    } else if (out.mean_difference < 0.0) {
      out.status = TestStatus::ZeroVariance;
      out.t_statistic = -std::numeric_limits<double>::infinity();
      out.p_value = 1.0;
    } else {
      out.status = TestStatus::NoOp;
      out.t_statistic = std::numeric_limits<double>::quiet_NaN();
      out.p_value = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
  }
  out.t_statistic = out.mean_difference / out.standard_error;
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t_statistic));
  return out;
}

namespace {

struct RunningMean {
  double mean = 0.0;
  double m2 = 0.0;
  Index count = 0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }
  double standard_error() const {
    return std::sqrt(m2 / static_cast<double>(count - 1) / static_cast<double>(count));
  }
};

RunningMean sample_weighted(const PointLoss& loss, const ConditionalSampler& sampler,
                            const Eigen::VectorXd& probs, const Eigen::VectorXd& multiplier,
                            Index size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(probs.data(), probs.data() + probs.size());
  RunningMean acc;
  for (Index k = 0; k < size; ++k) {
    const int g = pick(rng) + 1;
    const LabeledPoint pt = sampler(g, rng);
    acc.add(multiplier[g - 1] * loss(pt));
  }
  return acc;
}

}  // namespace

IdentityCheck importance_identity_check(const PointLoss& loss, const ShiftSpec& shift,
                                        const ConditionalSampler& sampler, Index sample_size,
                                        std::uint64_t seed,
                                        const std::optional<Eigen::VectorXd>& ratios_override) {
  require(sample_size >= 1000, ErrorKind::SizeError,
          "importance_identity_check: sample_size must be >= 1000");
  Eigen::VectorXd r = likelihood_ratios(shift).values();
  if (ratios_override) {
    require(ratios_override->size() == r.size(), ErrorKind::InvalidArgument,
            "importance_identity_check: ratio override has the wrong length");
    r = *ratios_override;
  }
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(r.size());
  const RunningMean train =
      sample_weighted(loss, sampler, shift.p_train(), r, sample_size, derive_seed(seed, 0));
  const RunningMean test =
      sample_weighted(loss, sampler, shift.p_test(), ones, sample_size, derive_seed(seed, 1));
  IdentityCheck out;
  out.weighted_train_estimate = train.mean;
  out.weighted_train_se = train.standard_error();
  out.test_estimate = test.mean;
  out.test_se = test.standard_error();
  out.pooled_se = std::hypot(out.weighted_train_se, out.test_se);
  out.difference = out.weighted_train_estimate - out.test_estimate;
  return out;
}

}  // namespace optw
