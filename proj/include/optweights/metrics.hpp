#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "optweights/core.hpp"

namespace optw {

using GroupAccuracies = std::vector<std::optional<double>>;

/// sum_g omega_g acc_g over defined groups, omega renormalized over them.
/// Uniform omega when `group_weights` is absent.
double weighted_average_accuracy(const GroupAccuracies& per_group,
                                 const std::optional<Eigen::VectorXd>& group_weights = std::nullopt);

double worst_group_accuracy(const GroupAccuracies& per_group);

struct MetricPair {
  double weighted_average_accuracy = 0.0;
  double worst_group_accuracy = 0.0;
  GroupAccuracies per_group;
};

MetricPair metric_pair(const GroupAccuracies& per_group);

/// Test-set metrics of a logistic model.
MetricPair evaluate_classifier(const ParameterVector& theta, const GroupedDataset& test);

enum class TestStatus { Ok, ZeroVariance, NoOp };

std::string_view status_name(TestStatus s) noexcept;

struct PairedTestResult {
  double mean_difference = 0.0;
  double standard_error = 0.0;
  double t_statistic = 0.0;
  double p_value = 0.0;  // NaN for NoOp
  Index n_pairs = 0;
  TestStatus status = TestStatus::Ok;
  double ci90_low = 0.0;  // two-sided 90% interval of the mean difference
  double ci90_high = 0.0;
};

/// One-sided paired t-test of "treatment > baseline".
PairedTestResult paired_one_sided_t_test(const std::vector<double>& baseline,
                                         const std::vector<double>& treatment);

/// Draws (y, x) for a given 1-based group.
struct LabeledPoint {
  double y = 0.0;
  Eigen::VectorXd x;
};
using ConditionalSampler = std::function<LabeledPoint(int group, std::mt19937_64& rng)>;
using PointLoss = std::function<double(const LabeledPoint&)>;

struct IdentityCheck {
  double weighted_train_estimate = 0.0;
  double weighted_train_se = 0.0;
  double test_estimate = 0.0;
  double test_se = 0.0;
  double pooled_se = 0.0;
  double difference = 0.0;  // weighted_train_estimate - test_estimate
};

/// Monte Carlo estimates of E_tr[r_g L] and E_te[L] from independent draws.
/// `ratios_override` replaces the likelihood ratios (negative controls).
IdentityCheck importance_identity_check(const PointLoss& loss, const ShiftSpec& shift,
                                        const ConditionalSampler& sampler, Index sample_size,
                                        std::uint64_t seed,
                                        const std::optional<Eigen::VectorXd>& ratios_override =
                                            std::nullopt);

}  // namespace optw
