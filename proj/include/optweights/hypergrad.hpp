#pragma once

#include <functional>

#include <Eigen/Dense>

#include "optweights/core.hpp"
#include "optweights/estimators.hpp"

namespace optw {

struct HypergradOptions {
  double damping = 1e-6;
  /// Inner-solution gradient tolerance; more than 10x this is stale.
  double stationarity_tolerance = 1e-10;
  double max_condition = 1e12;
};

struct IftSolve {
  Eigen::MatrixXd jacobian;  // K x dim, row k = d theta / d weight_k
  double condition_estimate = 0.0;
  double solve_residual = 0.0;  // relative to the right-hand side
  bool damping_dominates = false;
};

struct HypergradReport {
  /// For simplex weights: zero-sum tangent of length G. For fractions: one
  /// entry per group.
  Eigen::VectorXd gradient;
  /// For simplex weights: derivatives along the G-1 free coordinates (the
  /// last group absorbs the constraint). Equal to `gradient` for fractions.
  Eigen::VectorXd free_gradient;
  double hessian_condition_estimate = 0.0;
  double solve_residual = 0.0;
  double damping_used = 0.0;
  bool damping_dominates = false;
  double stationarity_residual = 0.0;
};

/// Row g (g < G) is the theta-gradient of
/// (1/n)[(1/p_tr(g)) sum_{i in g} l_i - (1/p_tr(G)) sum_{i in G} l_i].
Eigen::MatrixXd cross_derivative_p(const ParameterVector& theta_hat, const GroupedDataset& train,
                                   const ShiftSpec& shift);

/// Row g is the theta-gradient of (1/m) sum_{i in g} l_i with m held fixed
/// at its value for `v`.
Eigen::MatrixXd cross_derivative_v(const ParameterVector& theta_hat, const GroupedDataset& train,
                                   const SubsampleFractions& v);

/// -cross * (hessian + damping I)^{-1}, via one factorization and K solves.
IftSolve ift_parameter_jacobian(const Eigen::MatrixXd& hessian, const Eigen::MatrixXd& cross,
                                double damping, double max_condition = 1e12);

/// Per-observation validation weights r_{g_i}.
Eigen::VectorXd ratio_validation_weights(const GroupedDataset& val, const ShiftSpec& shift);

/// Outer objective (1/n_val) sum_i omega_i l_i.
double validation_loss(const ParameterVector& theta, const GroupedDataset& val,
                       const Eigen::VectorXd& val_weights);

/// Hypergradient of the outer objective with respect to simplex weights
/// `p`, where theta_hat minimizes the p-weighted training loss.
HypergradReport hypergradient_p(const ParameterVector& theta_hat, const GroupedDataset& train,
                                const GroupedDataset& val, const Eigen::VectorXd& val_weights,
                                const ShiftSpec& shift, const SimplexWeights& p,
                                const PenaltySpec& penalty, const HypergradOptions& options = {});

/// Same with the likelihood-ratio weighted validation loss.
HypergradReport hypergradient_p(const ParameterVector& theta_hat, const GroupedDataset& train,
                                const GroupedDataset& val, const ShiftSpec& shift,
                                const SimplexWeights& p, const PenaltySpec& penalty,
                                const HypergradOptions& options = {});

/// Hypergradient with respect to SUBG fractions, theta_hat minimizing the
/// relaxed SUBG objective at `v`.
HypergradReport hypergradient_v(const ParameterVector& theta_hat, const GroupedDataset& train,
                                const GroupedDataset& val, const Eigen::VectorXd& val_weights,
                                const SubsampleFractions& v, const PenaltySpec& penalty,
                                const HypergradOptions& options = {});

HypergradReport hypergradient_v(const ParameterVector& theta_hat, const GroupedDataset& train,
                                const GroupedDataset& val, const SubsampleFractions& v,
                                const ShiftSpec& shift, const PenaltySpec& penalty,
                                const HypergradOptions& options = {});

/// Central differences of `outer` around `weights`, one coordinate at a time.
Eigen::VectorXd finite_difference_hypergradient(
    const Eigen::VectorXd& weights, double step,
    const std::function<double(const Eigen::VectorXd&)>& outer);

}  // namespace optw
