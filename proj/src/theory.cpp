#include "optweights/theory.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "optweights/estimators.hpp"

namespace optw {

namespace {

void check_unit(double x, const char* what) {
  require(std::isfinite(x) && x >= 0.0 && x <= 1.0, ErrorKind::InvalidArgument,
          std::string(what) + " must lie in [0, 1]");
}

void check_interior(double p_train) {
  require(std::isfinite(p_train) && p_train > 0.0 && p_train < 1.0, ErrorKind::DomainError,
          "p_train must lie strictly between 0 and 1");
}

}  // namespace

void LinRegDGP::validate() const {
  require(std::isfinite(sigma2) && sigma2 > 0.0, ErrorKind::InvalidArgument,
          "dgp: sigma2 must be > 0");
  require(std::isfinite(a1) && std::isfinite(a0) && beta.allFinite(), ErrorKind::InvalidArgument,
          "dgp: coefficients must be finite");
  check_interior(p_train);
}

LinRegDGP LinRegDGP::with_zero_slope(double a1, double a0, Index d, double sigma2,
                                     double p_train) {
  require(d >= 0, ErrorKind::InvalidArgument, "dgp: d must be >= 0");
  LinRegDGP dgp;
  dgp.a1 = a1;
  dgp.a0 = a0;
  dgp.beta = Eigen::VectorXd::Zero(d);
  dgp.sigma2 = sigma2;
  dgp.p_train = p_train;
  return dgp;
}

double bias_squared(double p_test, double p, double a1, double a0) {
  check_unit(p_test, "p_test");
  check_unit(p, "p");
  const double diff = a1 - a0;
  return (p_test * (1.0 - p) * (1.0 - p) + (1.0 - p_test) * p * p) * diff * diff;
}

double variance_term(double sigma2, double p, double p_train, double n, Index d) {
  require(sigma2 > 0.0, ErrorKind::InvalidArgument, "variance_term: sigma2 must be > 0");
  check_unit(p, "p");
  check_interior(p_train);
  require(n >= 1.0, ErrorKind::InvalidArgument, "variance_term: n must be >= 1");
  require(d >= 0, ErrorKind::InvalidArgument, "variance_term: d must be >= 0");
  return sigma2 * (p * p / p_train + (1.0 - p) * (1.0 - p) / (1.0 - p_train)) *
         static_cast<double>(d + 1) / n;
}

double variance_bias_ratio(const LinRegDGP& dgp, double n) {
  dgp.validate();
  require(n >= 1.0, ErrorKind::InvalidArgument, "n must be >= 1");
  const double diff2 = (dgp.a1 - dgp.a0) * (dgp.a1 - dgp.a0);
  if (diff2 == 0.0) return std::numeric_limits<double>::infinity();
  return dgp.sigma2 * static_cast<double>(dgp.d() + 1) /
         (n * diff2 * dgp.p_train * (1.0 - dgp.p_train));
}

TheoryPoint expected_loss_approx(const LinRegDGP& dgp, double p_test, double p, double n) {
  dgp.validate();
  TheoryPoint pt;
  pt.p = p;
  pt.bias_sq = bias_squared(p_test, p, dgp.a1, dgp.a0);
  pt.variance = variance_term(dgp.sigma2, p, dgp.p_train, n, dgp.d());
  pt.expected_loss = pt.bias_sq + pt.variance + dgp.sigma2;
  pt.variance_bias_ratio = variance_bias_ratio(dgp, n);
  return pt;
}

double optimal_p(const LinRegDGP& dgp, double p_test, double n) {
  check_unit(p_test, "p_test");
  const double eta = variance_bias_ratio(dgp, n);
  if (std::isinf(eta)) return dgp.p_train;
  return (p_test + eta * dgp.p_train) / (1.0 + eta);
}

std::vector<CurvePoint> theory_curve(const LinRegDGP& dgp, double p_test,
                                     const std::vector<double>& n_grid) {
  require(!n_grid.empty(), ErrorKind::InvalidArgument, "theory_curve: empty n grid");
  std::vector<CurvePoint> out;
  out.reserve(n_grid.size());
  for (double n : n_grid) out.push_back({n, optimal_p(dgp, p_test, n)});
  return out;
}

GroupedDataset sample_dgp(const LinRegDGP& dgp, Index n, std::uint64_t seed) {
  dgp.validate();
  require(n >= 2, ErrorKind::SizeError, "sample_dgp: n must be >= 2");
  const auto n1 = static_cast<Index>(std::llround(static_cast<double>(n) * dgp.p_train));
  require(n1 >= 1 && n1 <= n - 1, ErrorKind::SizeError,
          "sample_dgp: round(n * p_train) leaves a group empty");
  const Index d = dgp.d();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  const double sigma = std::sqrt(dgp.sigma2);

  Eigen::MatrixXd x(n, d + 1);
  Eigen::VectorXd y(n);
  std::vector<int> groups(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const bool first = i < n1;
    x(i, 0) = 1.0;
    for (Index j = 0; j < d; ++j) x(i, j + 1) = std_normal(rng);
    const double intercept = first ? dgp.a1 : dgp.a0;
    y[i] = intercept + x.row(i).tail(d).dot(dgp.beta) + sigma * std_normal(rng);
    groups[static_cast<std::size_t>(i)] = first ? 1 : 2;
  }
  return GroupedDataset(std::move(x), std::move(y), std::move(groups), 2);
}

double conditional_test_risk(const ParameterVector& beta_hat, const LinRegDGP& dgp,
                             double p_test) {
  require(beta_hat.size() == dgp.d() + 1, ErrorKind::SizeError,
          "conditional_test_risk: beta_hat must have d + 1 entries");
  check_unit(p_test, "p_test");
  const double e1 = dgp.a1 - beta_hat[0];
  const double e0 = dgp.a0 - beta_hat[0];
  const double slope_err = (dgp.beta - beta_hat.tail(dgp.d())).squaredNorm();
  return p_test * e1 * e1 + (1.0 - p_test) * e0 * e0 + slope_err + dgp.sigma2;
}

RiskEstimate empirical_test_risk(const ParameterVector& beta_hat, const LinRegDGP& dgp,
                                 double p_test, Index draws, std::uint64_t seed) {
  require(beta_hat.size() == dgp.d() + 1, ErrorKind::SizeError,
          "empirical_test_risk: beta_hat must have d + 1 entries");
  require(draws >= 2, ErrorKind::SizeError, "empirical_test_risk: need at least 2 draws");
  check_unit(p_test, "p_test");
  const Index d = dgp.d();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::bernoulli_distribution first_group(p_test);
  const double sigma = std::sqrt(dgp.sigma2);
  Eigen::VectorXd x(d);
  double mean = 0.0, m2 = 0.0;
  for (Index k = 0; k < draws; ++k) {
    const double a = first_group(rng) ? dgp.a1 : dgp.a0;
    for (Index j = 0; j < d; ++j) x[j] = std_normal(rng);
    const double y = a + x.dot(dgp.beta) + sigma * std_normal(rng);
    const double r = y - beta_hat[0] - x.dot(beta_hat.tail(d));
    const double loss = r * r;
    const double delta = loss - mean;
    mean += delta / static_cast<double>(k + 1);
    m2 += delta * (loss - mean);
  }
  const double var = m2 / static_cast<double>(draws - 1);
  return {mean, std::sqrt(var / static_cast<double>(draws))};
}

Eigen::VectorXd linreg_weights(const GroupedDataset& data, double p, double p_train) {
  check_unit(p, "p");
  check_interior(p_train);
  const SimplexWeights weights((Eigen::VectorXd(2) << p, 1.0 - p).finished());
  const ShiftSpec shift((Eigen::VectorXd(2) << p_train, 1.0 - p_train).finished(),
                        (Eigen::VectorXd(2) << p_train, 1.0 - p_train).finished());
  return per_observation_weights(weights, shift, data.groups());
}

std::vector<SimulationPoint> simulate_mse(const LinRegDGP& dgp, double p_test,
                                          const std::vector<double>& p_grid, Index n,
                                          Index replications, std::uint64_t seed) {
  dgp.validate();
  check_unit(p_test, "p_test");
  require(replications >= 2, ErrorKind::SizeError,
          "simulate_mse: need at least 2 replications for a standard error");
  require(!p_grid.empty(), ErrorKind::InvalidArgument, "simulate_mse: empty p grid");
  for (double p : p_grid) check_unit(p, "p");

  const std::size_t k = p_grid.size();
  std::vector<double> mean(k, 0.0), m2(k, 0.0);
  std::vector<Index> used(k, 0), singular(k, 0);
  for (Index rep = 0; rep < replications; ++rep) {
    const GroupedDataset data =
        sample_dgp(dgp, n, derive_seed(seed, static_cast<std::uint64_t>(rep)));
    for (std::size_t j = 0; j < k; ++j) {
      double risk;
      try {
        const ParameterVector beta = wls_fit(data, linreg_weights(data, p_grid[j], dgp.p_train));
        risk = conditional_test_risk(beta, dgp, p_test);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::SingularDesign) throw;
        ++singular[j];
        continue;
      }
      ++used[j];
      const double delta = risk - mean[j];
      mean[j] += delta / static_cast<double>(used[j]);
      m2[j] += delta * (risk - mean[j]);
    }
  }

  std::vector<SimulationPoint> out;
  out.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    // Singular fits are tolerated below 1% of replications.
    require(static_cast<double>(singular[j]) < 0.01 * static_cast<double>(replications) &&
                used[j] >= 2,
            ErrorKind::SingularDesign,
            "simulate_mse: too many singular fits at p = " + std::to_string(p_grid[j]));
    SimulationPoint pt;
    pt.p = p_grid[j];
    pt.mean_risk = mean[j];
    pt.standard_error =
        std::sqrt(m2[j] / static_cast<double>(used[j] - 1) / static_cast<double>(used[j]));
    pt.replications_used = used[j];
    pt.singular_fits = singular[j];
    pt.approx = expected_loss_approx(dgp, p_test, p_grid[j], static_cast<double>(n));
    out.push_back(pt);
  }
  return out;
}

}  // namespace optw
