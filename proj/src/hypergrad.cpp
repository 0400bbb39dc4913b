#include "optweights/hypergrad.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace optw {

namespace {

void require_all_groups(const GroupedDataset& train) {
  for (int g = 1; g <= train.num_groups(); ++g) {
    require(train.group_count(g) > 0, ErrorKind::EmptyGroup,
            "hypergradient: group " + std::to_string(g) + " has no training rows");
  }
}

void check_stationary(double residual, const HypergradOptions& options) {
  require(residual <= 10.0 * options.stationarity_tolerance, ErrorKind::StalenessError,
          "hypergradient: inner solution is not stationary (gradient norm " +
              std::to_string(residual) + ")");
}

HypergradReport finish(const IftSolve& solve, const Eigen::VectorXd& val_grad,
                       double damping, double stationarity) {
  HypergradReport rep;
  rep.free_gradient = solve.jacobian * val_grad;
  require(rep.free_gradient.allFinite(), ErrorKind::IllConditioned,
          "hypergradient: non-finite result");
  rep.hessian_condition_estimate = solve.condition_estimate;
  rep.solve_residual = solve.solve_residual;
  rep.damping_used = damping;
  rep.damping_dominates = solve.damping_dominates;
  rep.stationarity_residual = stationarity;
  return rep;
}

}  // namespace

Eigen::MatrixXd cross_derivative_p(const ParameterVector& theta_hat, const GroupedDataset& train,
                                   const ShiftSpec& shift) {
  const int G = train.num_groups();
  require(shift.num_groups() == G, ErrorKind::InvalidArgument,
          "cross_derivative_p: shift has a different number of groups");
  require(G >= 2, ErrorKind::InvalidArgument, "cross_derivative_p: need at least 2 groups");
  require_all_groups(train);
  const Eigen::MatrixXd sums = group_gradient_sums(theta_hat, train);
  const double n = static_cast<double>(train.size());
  const Eigen::RowVectorXd pivot = sums.row(G - 1) / shift.p_train()[G - 1];
  Eigen::MatrixXd out(G - 1, sums.cols());
  for (int g = 0; g < G - 1; ++g) out.row(g) = (sums.row(g) / shift.p_train()[g] - pivot) / n;
  return out;
}

Eigen::MatrixXd cross_derivative_v(const ParameterVector& theta_hat, const GroupedDataset& train,
                                   const SubsampleFractions& v) {
  require_all_groups(train);
  const Index m = subg_sample_size(train, v);
  require(m >= 1, ErrorKind::SizeError, "cross_derivative_v: subsample size m is zero");
  return group_gradient_sums(theta_hat, train) / static_cast<double>(m);
}

IftSolve ift_parameter_jacobian(const Eigen::MatrixXd& hessian, const Eigen::MatrixXd& cross,
                                double damping, double max_condition) {
  require(hessian.rows() == hessian.cols() && hessian.cols() == cross.cols(),
          ErrorKind::SizeError, "ift_parameter_jacobian: dimension mismatch");
  require(damping >= 0.0 && std::isfinite(damping), ErrorKind::InvalidArgument,
          "ift_parameter_jacobian: damping must be >= 0");
  require((hessian - hessian.transpose()).norm() <= 1e-10 * (1.0 + hessian.norm()),
          ErrorKind::InvalidArgument, "ift_parameter_jacobian: Hessian is not symmetric");

  Eigen::MatrixXd a = hessian;
  a.diagonal().array() += damping;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  IftSolve out;
  out.condition_estimate = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  require(out.condition_estimate <= max_condition, ErrorKind::IllConditioned,
          "ift_parameter_jacobian: damped Hessian condition estimate " +
              std::to_string(out.condition_estimate) + " exceeds limit");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> undamped(hessian, Eigen::EigenvaluesOnly);
  out.damping_dominates = damping > 0.0 && damping >= undamped.eigenvalues().cwiseAbs().maxCoeff();

  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  require(ldlt.info() == Eigen::Success, ErrorKind::IllConditioned,
          "ift_parameter_jacobian: factorization failed");
  const Eigen::MatrixXd rhs = -cross.transpose();
  const Eigen::MatrixXd x = ldlt.solve(rhs);
  const double scale = rhs.norm();
  out.solve_residual = scale > 0.0 ? (a * x - rhs).norm() / scale : (a * x - rhs).norm();
  out.jacobian = x.transpose();
  return out;
}

Eigen::VectorXd ratio_validation_weights(const GroupedDataset& val, const ShiftSpec& shift) {
  require(shift.num_groups() == val.num_groups(), ErrorKind::InvalidArgument,
          "validation weights: shift has a different number of groups");
  const LikelihoodRatios r = likelihood_ratios(shift);
  Eigen::VectorXd w(val.size());
  for (Index i = 0; i < val.size(); ++i) w[i] = r[val.group(i) - 1];
  return w;
}

double validation_loss(const ParameterVector& theta, const GroupedDataset& val,
                       const Eigen::VectorXd& val_weights) {
  return weighted_logistic_loss(theta, val, val_weights, PenaltySpec::none());
}

HypergradReport hypergradient_p(const ParameterVector& theta_hat, const GroupedDataset& train,
                                const GroupedDataset& val, const Eigen::VectorXd& val_weights,
                                const ShiftSpec& shift, const SimplexWeights& p,
                                const PenaltySpec& penalty, const HypergradOptions& options) {
  require(penalty.twice_differentiable(), ErrorKind::InvalidArgument,
          "hypergradient: penalty must be twice differentiable (use ridge or smoothed-l1)");
  require(p.num_groups() == train.num_groups(), ErrorKind::InvalidArgument,
          "hypergradient_p: weight vector length differs from G");
  const Eigen::VectorXd w = per_observation_weights(p, shift, train.groups());
  const double stationarity = logistic_gradient(theta_hat, train, w, penalty).norm();
  check_stationary(stationarity, options);

  const Eigen::MatrixXd cross = cross_derivative_p(theta_hat, train, shift);
  const Eigen::MatrixXd hess = logistic_hessian(theta_hat, train, w, penalty);
  const IftSolve solve = ift_parameter_jacobian(hess, cross, options.damping, options.max_condition);
  const Eigen::VectorXd val_grad =
      logistic_gradient(theta_hat, val, val_weights, PenaltySpec::none());

  HypergradReport rep = finish(solve, val_grad, options.damping, stationarity);
  const int G = train.num_groups();
  Eigen::VectorXd tangent = Eigen::VectorXd::Zero(G);
  tangent.head(G - 1) = rep.free_gradient;
  tangent.array() -= tangent.mean();
  rep.gradient = tangent;
  return rep;
}

HypergradReport hypergradient_p(const ParameterVector& theta_hat, const GroupedDataset& train,
                                const GroupedDataset& val, const ShiftSpec& shift,
                                const SimplexWeights& p, const PenaltySpec& penalty,
                                const HypergradOptions& options) {
  return hypergradient_p(theta_hat, train, val, ratio_validation_weights(val, shift), shift, p,
                         penalty, options);
}

HypergradReport hypergradient_v(const ParameterVector& theta_hat, const GroupedDataset& train,
                                const GroupedDataset& val, const Eigen::VectorXd& val_weights,
                                const SubsampleFractions& v, const PenaltySpec& penalty,
                                const HypergradOptions& options) {
  require(penalty.twice_differentiable(), ErrorKind::InvalidArgument,
          "hypergradient: penalty must be twice differentiable (use ridge or smoothed-l1)");
  const Eigen::VectorXd w = subg_training_weights(train, v);
  const double stationarity = logistic_gradient(theta_hat, train, w, penalty).norm();
  check_stationary(stationarity, options);

  const Eigen::MatrixXd cross = cross_derivative_v(theta_hat, train, v);
  const Eigen::MatrixXd hess = logistic_hessian(theta_hat, train, w, penalty);
  const IftSolve solve = ift_parameter_jacobian(hess, cross, options.damping, options.max_condition);
  const Eigen::VectorXd val_grad =
      logistic_gradient(theta_hat, val, val_weights, PenaltySpec::none());

  HypergradReport rep = finish(solve, val_grad, options.damping, stationarity);
  rep.gradient = rep.free_gradient;
  return rep;
}

HypergradReport hypergradient_v(const ParameterVector& theta_hat, const GroupedDataset& train,
                                const GroupedDataset& val, const SubsampleFractions& v,
                                const ShiftSpec& shift, const PenaltySpec& penalty,
                                const HypergradOptions& options) {
  return hypergradient_v(theta_hat, train, val, ratio_validation_weights(val, shift), v, penalty,
                         options);
}

Eigen::VectorXd finite_difference_hypergradient(
    const Eigen::VectorXd& weights, double step,
    const std::function<double(const Eigen::VectorXd&)>& outer) {
  require(step > 0.0 && std::isfinite(step), ErrorKind::InvalidArgument,
          "finite_difference_hypergradient: step must be > 0");
  Eigen::VectorXd grad(weights.size());
  for (Index j = 0; j < weights.size(); ++j) {
    Eigen::VectorXd up = weights, down = weights;
    up[j] += step;
    down[j] -= step;
    grad[j] = (outer(up) - outer(down)) / (2.0 * step);
  }
  return grad;
}

}  // namespace optw
