#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "optweights/core.hpp"

namespace optw {

enum class PenaltyKind {
  None,
  Ridge,        // (lambda/2) * sum theta_j^2
  SmoothedL1,   // lambda * sum (sqrt(theta_j^2 + eps^2) - eps)
  L1,           // lambda * sum |theta_j|; not twice differentiable, plain fits only
};

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::None;
  double lambda = 0.0;
  double epsilon = 1e-4;

  static PenaltySpec none() { return {}; }
  static PenaltySpec ridge(double lambda) { return {PenaltyKind::Ridge, lambda, 1e-4}; }
  static PenaltySpec smoothed_l1(double lambda, double epsilon = 1e-4) {
    return {PenaltyKind::SmoothedL1, lambda, epsilon};
  }
  static PenaltySpec l1(double lambda) { return {PenaltyKind::L1, lambda, 1e-4}; }

  void validate() const;
  bool twice_differentiable() const noexcept { return kind != PenaltyKind::L1; }
};

struct SolverConfig {
  int max_iterations = 100;
  double gradient_tolerance = 1e-10;
  double hessian_damping = 1e-8;
  /// Unpenalized fits whose coefficient norm exceeds this are reported as
  /// separable.
  double divergence_guard = 1e4;

  void validate() const;
};

struct FitResult {
  ParameterVector theta;
  double final_loss = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Solves (X'WX + damping*I) beta = X'Wy on the raw design (no implicit
/// intercept; put a constant column in the features if one is wanted).
ParameterVector wls_fit(const GroupedDataset& data, const Eigen::VectorXd& weights,
                        double damping = 0.0);

// Logistic model: theta has d + 1 entries, theta[0] is the intercept.

/// Linear predictor theta_0 + x_i' theta_{1:d} for every row.
Eigen::VectorXd linear_predictor(const ParameterVector& theta, const GroupedDataset& data);

/// Per-observation negative log-likelihoods.
Eigen::VectorXd logistic_losses(const ParameterVector& theta, const GroupedDataset& data);

double penalty_value(const ParameterVector& theta, const PenaltySpec& penalty);

/// (1/n) sum_i w_i l_i + penalty(theta).
double weighted_logistic_loss(const ParameterVector& theta, const GroupedDataset& data,
                              const Eigen::VectorXd& weights, const PenaltySpec& penalty);

Eigen::VectorXd logistic_gradient(const ParameterVector& theta, const GroupedDataset& data,
                                  const Eigen::VectorXd& weights, const PenaltySpec& penalty);

Eigen::MatrixXd logistic_hessian(const ParameterVector& theta, const GroupedDataset& data,
                                 const Eigen::VectorXd& weights, const PenaltySpec& penalty);

/// Row g-1 holds sum over group g of the per-observation loss gradients.
Eigen::MatrixXd group_gradient_sums(const ParameterVector& theta, const GroupedDataset& data);

/// Mean loss per group; nullopt for empty groups.
std::vector<std::optional<double>> group_mean_losses(const ParameterVector& theta,
                                                     const GroupedDataset& data);

/// Damped Newton from zero (or `warm_start`). Exact L1 uses proximal Newton.
FitResult logistic_fit(const GroupedDataset& data, const Eigen::VectorXd& weights,
                       const PenaltySpec& penalty, const SolverConfig& config = {},
                       const std::optional<ParameterVector>& warm_start = std::nullopt);

/// Per-group fraction correct at threshold 0.5; nullopt for empty groups.
std::vector<std::optional<double>> accuracy_by_group(const ParameterVector& theta,
                                                     const GroupedDataset& data);

// SUBG relaxation.

/// m = sum_g ceil(v_g n_g).
Index subg_sample_size(const GroupedDataset& data, const SubsampleFractions& v);

/// (1/m) sum_g v_g sum_{i in g} l_i. `m` overrides the computed sample size.
double subg_expected_loss(const ParameterVector& theta, const GroupedDataset& data,
                          const SubsampleFractions& v, std::optional<double> m = std::nullopt);

/// w_i = v_{g_i} n / m, so that the weighted logistic loss equals the SUBG
/// relaxation.
Eigen::VectorXd subg_training_weights(const GroupedDataset& data, const SubsampleFractions& v);

FitResult subg_fit(const GroupedDataset& data, const SubsampleFractions& v,
                   const PenaltySpec& penalty, const SolverConfig& config = {},
                   const std::optional<ParameterVector>& warm_start = std::nullopt);

// DFR ensemble.

struct DfrMember {
  std::vector<Index> rows;  // ascending row indices of the subsample
  FitResult fit;
};

struct DfrEnsemble {
  ParameterVector theta;  // coefficient average
  std::vector<DfrMember> members;
};

/// Rows of ensemble member `member`: for each group the first ceil(v_g n_g)
/// entries of a per-(seed, member, group) permutation. The permutation does
/// not depend on v, so nearby fractions give nested subsamples.
std::vector<Index> dfr_member_rows(const GroupedDataset& data, const SubsampleFractions& v,
                                   std::uint64_t seed, int member);

DfrEnsemble dfr_ensemble(const GroupedDataset& data, const SubsampleFractions& v,
                         int ensemble_size, const PenaltySpec& penalty,
                         const SolverConfig& config, std::uint64_t seed,
                         const std::vector<ParameterVector>* warm_starts = nullptr);

ParameterVector dfr_ensemble_fit(const GroupedDataset& data, const SubsampleFractions& v,
                                 int ensemble_size, const PenaltySpec& penalty,
                                 const SolverConfig& config, std::uint64_t seed);

}  // namespace optw
