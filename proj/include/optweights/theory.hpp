#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "optweights/core.hpp"

namespace optw {

/**
 * Two-group linear regression: y = a_g + x'beta + noise, x ~ N(0, I_d),
 * noise ~ N(0, sigma2). `p_train` is the training probability of the
 * first group (intercept a1).
 *
 * Datasets built from it carry an explicit intercept column, and group
 * label 1 is the a1 group while label 2 is the a0 group.
 */
struct LinRegDGP {
  double a1 = 1.0;
  double a0 = 0.0;
  Eigen::VectorXd beta;  // length d
  double sigma2 = 1.0;
  double p_train = 0.5;

  Index d() const noexcept { return beta.size(); }
  void validate() const;

  /// beta = 0 of length d.
  static LinRegDGP with_zero_slope(double a1, double a0, Index d, double sigma2, double p_train);
};

struct TheoryPoint {
  double p = 0.0;
  double bias_sq = 0.0;
  double variance = 0.0;
  double expected_loss = 0.0;
  double variance_bias_ratio = 0.0;  // infinite when a1 == a0
};

/// [p_te (1-p)^2 + (1-p_te) p^2] (a1 - a0)^2
double bias_squared(double p_test, double p, double a1, double a0);

/// sigma2 [p^2/p_tr + (1-p)^2/(1-p_tr)] (d+1)/n
double variance_term(double sigma2, double p, double p_train, double n, Index d);

/// sigma2 (d+1) / (n (a1-a0)^2 p_tr (1-p_tr)).
double variance_bias_ratio(const LinRegDGP& dgp, double n);

/// Large-n approximation of the expected test loss of the weighted fit.
TheoryPoint expected_loss_approx(const LinRegDGP& dgp, double p_test, double p, double n);

/// Minimizer of expected_loss_approx over p; p_train when a1 == a0.
double optimal_p(const LinRegDGP& dgp, double p_test, double n);

struct CurvePoint {
  double n = 0.0;
  double optimal_p = 0.0;
};

std::vector<CurvePoint> theory_curve(const LinRegDGP& dgp, double p_test,
                                     const std::vector<double>& n_grid);

/// Fixed-count sample: round(n p_tr) rows in group 1, the rest in group 2.
GroupedDataset sample_dgp(const LinRegDGP& dgp, Index n, std::uint64_t seed);

/// Exact test risk of coefficients beta_hat (intercept first) under the DGP.
double conditional_test_risk(const ParameterVector& beta_hat, const LinRegDGP& dgp,
                             double p_test);

/// Test-sample estimate of the same risk, with its standard error.
struct RiskEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};
RiskEstimate empirical_test_risk(const ParameterVector& beta_hat, const LinRegDGP& dgp,
                                 double p_test, Index draws, std::uint64_t seed);

/// WLS observation weights for group-1 weight p: p/p_tr and (1-p)/(1-p_tr).
Eigen::VectorXd linreg_weights(const GroupedDataset& data, double p, double p_train);

struct SimulationPoint {
  double p = 0.0;
  double mean_risk = 0.0;
  double standard_error = 0.0;
  Index replications_used = 0;
  Index singular_fits = 0;
  TheoryPoint approx;
};

/// Monte Carlo risk of the weighted fit for each p. Every replication draws
/// one dataset (seed derived from `seed` and the replication index) shared
/// by all grid points.
std::vector<SimulationPoint> simulate_mse(const LinRegDGP& dgp, double p_test,
                                          const std::vector<double>& p_grid, Index n,
                                          Index replications, std::uint64_t seed);

}  // namespace optw
