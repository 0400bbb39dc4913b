#include "optweights/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace optw {

void PenaltySpec::validate() const {
  require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::InvalidArgument,
          "penalty: lambda must be finite and nonnegative");
  if (kind == PenaltyKind::SmoothedL1) {
    require(std::isfinite(epsilon) && epsilon > 0.0, ErrorKind::InvalidArgument,
            "penalty: smoothed-l1 needs epsilon > 0");
  }
}

void SolverConfig::validate() const {
  require(max_iterations >= 1, ErrorKind::InvalidArgument, "solver: max_iterations must be >= 1");
  require(gradient_tolerance > 0.0, ErrorKind::InvalidArgument,
          "solver: gradient_tolerance must be > 0");
  require(hessian_damping >= 0.0, ErrorKind::InvalidArgument,
          "solver: hessian_damping must be >= 0");
  require(divergence_guard > 0.0, ErrorKind::InvalidArgument,
          "solver: divergence_guard must be > 0");
}

namespace {

void check_weights(const Eigen::VectorXd& w, Index n, const char* who) {
  require(w.size() == n, ErrorKind::SizeError,
          std::string(who) + ": weight vector length " + std::to_string(w.size()) +
              " does not match n = " + std::to_string(n));
  for (Index i = 0; i < n; ++i) {
    require(std::isfinite(w[i]) && w[i] >= 0.0, ErrorKind::InvalidArgument,
            std::string(who) + ": weights must be finite and nonnegative");
  }
}

void check_binary_targets(const GroupedDataset& data) {
  const auto& y = data.targets();
  for (Index i = 0; i < y.size(); ++i) {
    require(y[i] == 0.0 || y[i] == 1.0, ErrorKind::ValueError,
            "logistic model: targets must be 0 or 1 (row " + std::to_string(i) + ")");
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z))
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double l1_norm_tail(const ParameterVector& theta) { return theta.tail(theta.size() - 1).lpNorm<1>(); }

void add_penalty_gradient(const ParameterVector& theta, const PenaltySpec& penalty,
                          Eigen::VectorXd& g) {
  for (Index j = 1; j < theta.size(); ++j) {
    switch (penalty.kind) {
      case PenaltyKind::None: break;
      case PenaltyKind::Ridge: g[j] += penalty.lambda * theta[j]; break;
      case PenaltyKind::SmoothedL1:
        g[j] += penalty.lambda * theta[j] /
                std::sqrt(theta[j] * theta[j] + penalty.epsilon * penalty.epsilon);
        break;
      case PenaltyKind::L1:
        fail(ErrorKind::InvalidArgument, "exact L1 penalty has no gradient; use smoothed-l1");
    }
  }
}

void add_penalty_hessian(const ParameterVector& theta, const PenaltySpec& penalty,
                         Eigen::MatrixXd& h) {
  for (Index j = 1; j < theta.size(); ++j) {
    switch (penalty.kind) {
      case PenaltyKind::None: break;
      case PenaltyKind::Ridge: h(j, j) += penalty.lambda; break;
      case PenaltyKind::SmoothedL1: {
        const double e2 = penalty.epsilon * penalty.epsilon;
        const double s = theta[j] * theta[j] + e2;
        h(j, j) += penalty.lambda * e2 / (s * std::sqrt(s));
        break;
      }
      case PenaltyKind::L1:
        fail(ErrorKind::InvalidArgument, "exact L1 penalty has no Hessian; use smoothed-l1");
    }
  }
}

// Smooth part only: (1/n) sum w_i l_i and its derivatives.
struct SmoothParts {
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

SmoothParts data_derivatives(const ParameterVector& theta, const GroupedDataset& data,
                             const Eigen::VectorXd& w, bool with_hessian) {
  const Index n = data.size();
  const Index d = data.dim();
  const auto& x = data.features();
  const Eigen::VectorXd eta = linear_predictor(theta, data);
  Eigen::VectorXd r(n), s(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = sigmoid(eta[i]);
    r[i] = w[i] * (mu - data.targets()[i]) / static_cast<double>(n);
    s[i] = w[i] * mu * (1.0 - mu) / static_cast<double>(n);
  }
  SmoothParts out;
  out.gradient.resize(d + 1);
  out.gradient[0] = r.sum();
  out.gradient.tail(d).noalias() = x.transpose() * r;
  if (with_hessian) {
    out.hessian.resize(d + 1, d + 1);
    out.hessian(0, 0) = s.sum();
    const Eigen::VectorXd xs = x.transpose() * s;
    out.hessian.block(1, 0, d, 1) = xs;
    out.hessian.block(0, 1, 1, d) = xs.transpose();
    out.hessian.bottomRightCorner(d, d).noalias() = x.transpose() * s.asDiagonal() * x;
    out.hessian.triangularView<Eigen::StrictlyUpper>() = out.hessian.transpose();
  }
  return out;
}

void check_fit_inputs(const GroupedDataset& data, const Eigen::VectorXd& weights,
                      const PenaltySpec& penalty, const SolverConfig& config) {
  penalty.validate();
  config.validate();
  check_weights(weights, data.size(), "logistic_fit");
  check_binary_targets(data);
  double pos = 0.0, neg = 0.0;
  for (Index i = 0; i < data.size(); ++i) {
    (data.targets()[i] == 1.0 ? pos : neg) += weights[i];
  }
  require(pos > 0.0 && neg > 0.0, ErrorKind::InvalidArgument,
          "logistic_fit: both classes need positive total weight");
}

void guard_divergence(const ParameterVector& theta, const PenaltySpec& penalty,
                      const SolverConfig& config) {
  if (penalty.kind == PenaltyKind::None || penalty.lambda == 0.0) {
    require(theta.norm() <= config.divergence_guard, ErrorKind::SeparableData,
            "logistic_fit: coefficient norm exceeded " + std::to_string(config.divergence_guard) +
                "; data look separable, add a penalty");
  }
}

// Complete separation: the gradient vanishes at a finite but huge margin long
// before the norm guard trips, with every weighted row fit almost exactly.
void guard_separation(const ParameterVector& theta, const GroupedDataset& data,
                      const Eigen::VectorXd& weights, const PenaltySpec& penalty) {
  if (penalty.kind != PenaltyKind::None && penalty.lambda != 0.0) return;
  const Eigen::VectorXd l = logistic_losses(theta, data);
  double worst = 0.0;
  for (Index i = 0; i < data.size(); ++i) {
    if (weights[i] > 0.0) worst = std::max(worst, l[i]);
  }
  require(worst >= 1e-6, ErrorKind::SeparableData,
          "logistic_fit: every observation is fit with loss below 1e-6; data look separable, "
          "add a penalty");
}

// Minimum-norm subgradient of the L1-penalized objective.
double l1_optimality(const ParameterVector& theta, const Eigen::VectorXd& g, double lambda) {
  Eigen::VectorXd m(g.size());
  m[0] = g[0];
  for (Index j = 1; j < g.size(); ++j) {
    if (theta[j] != 0.0) {
      m[j] = g[j] + lambda * (theta[j] > 0.0 ? 1.0 : -1.0);
    } else {
      m[j] = std::max(std::abs(g[j]) - lambda, 0.0);
    }
  }
  return m.norm();
}

FitResult fit_l1(const GroupedDataset& data, const Eigen::VectorXd& weights,
                 const PenaltySpec& penalty, const SolverConfig& config, ParameterVector theta) {
  const double lambda = penalty.lambda;
  const Index p = theta.size();
  auto objective = [&](const ParameterVector& t) {
    return weighted_logistic_loss(t, data, weights, PenaltySpec::none()) + lambda * l1_norm_tail(t);
  };
  FitResult out;
  double f = objective(theta);
  for (int it = 0; it < config.max_iterations; ++it) {
    auto parts = data_derivatives(theta, data, weights, true);
    out.gradient_norm = l1_optimality(theta, parts.gradient, lambda);
    if (out.gradient_norm <= config.gradient_tolerance) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd h = parts.hessian;
    h.diagonal().array() += config.hessian_damping;

    // Coordinate descent on the local quadratic model.
    ParameterVector z = theta;
    Eigen::VectorXd hd = Eigen::VectorXd::Zero(p);  // h * (z - theta)
    for (int sweep = 0; sweep < 500; ++sweep) {
      double change = 0.0;
      for (Index j = 0; j < p; ++j) {
        const double a = h(j, j);
        const double b = parts.gradient[j] + hd[j] - a * (z[j] - theta[j]);
        double zj = theta[j] - b / a;
        if (j > 0) {
          const double thr = lambda / a;
          zj = zj > thr ? zj - thr : (zj < -thr ? zj + thr : 0.0);
        }
        const double delta = zj - z[j];
        if (delta != 0.0) {
          hd += delta * h.col(j);
          z[j] = zj;
          change = std::max(change, std::abs(delta));
        }
      }
      if (change <= 1e-15 * (1.0 + z.lpNorm<Eigen::Infinity>())) break;
    }
    const Eigen::VectorXd step = z - theta;
    const double decrease =
        parts.gradient.dot(step) + lambda * (l1_norm_tail(z) - l1_norm_tail(theta));
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const ParameterVector cand = theta + t * step;
      const double fc = objective(cand);
      if (fc <= f + 1e-4 * t * decrease || fc <= f) {
        theta = cand;
        f = fc;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) break;
  }
  if (!out.converged) {
    auto parts = data_derivatives(theta, data, weights, false);
    out.gradient_norm = l1_optimality(theta, parts.gradient, lambda);
    out.converged = out.gradient_norm <= config.gradient_tolerance;
  }
  out.theta = std::move(theta);
  out.final_loss = f;
  return out;
}

}  // namespace

ParameterVector wls_fit(const GroupedDataset& data, const Eigen::VectorXd& weights,
                        double damping) {
  check_weights(weights, data.size(), "wls_fit");
  require(weights.sum() > 0.0, ErrorKind::DegenerateWeights, "wls_fit: all weights are zero");
  require(std::isfinite(damping) && damping >= 0.0, ErrorKind::InvalidArgument,
          "wls_fit: damping must be >= 0");
  const auto& x = data.features();
  Eigen::MatrixXd a = x.transpose() * weights.asDiagonal() * x;
  const Eigen::VectorXd b = x.transpose() * weights.cwiseProduct(data.targets());
  if (damping == 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    require(hi > 0.0 && lo > hi * std::numeric_limits<double>::epsilon(),
            ErrorKind::SingularDesign, "wls_fit: weighted design matrix is numerically singular");
  } else {
    a.diagonal().array() += damping;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  require(ldlt.info() == Eigen::Success, ErrorKind::SingularDesign,
          "wls_fit: factorization failed");
  ParameterVector beta = ldlt.solve(b);
  require(beta.allFinite(), ErrorKind::SingularDesign, "wls_fit: non-finite solution");
  return beta;
}

Eigen::VectorXd linear_predictor(const ParameterVector& theta, const GroupedDataset& data) {
  require(theta.size() == data.dim() + 1, ErrorKind::SizeError,
          "logistic model: theta must have d + 1 entries");
  Eigen::VectorXd eta = data.features() * theta.tail(data.dim());
  eta.array() += theta[0];
  return eta;
}

Eigen::VectorXd logistic_losses(const ParameterVector& theta, const GroupedDataset& data) {
  const Eigen::VectorXd eta = linear_predictor(theta, data);
  Eigen::VectorXd l(eta.size());
  for (Index i = 0; i < eta.size(); ++i) l[i] = softplus(eta[i]) - data.targets()[i] * eta[i];
  return l;
}

double penalty_value(const ParameterVector& theta, const PenaltySpec& penalty) {
  double s = 0.0;
  for (Index j = 1; j < theta.size(); ++j) {
    switch (penalty.kind) {
      case PenaltyKind::None: break;
      case PenaltyKind::Ridge: s += 0.5 * theta[j] * theta[j]; break;
      case PenaltyKind::SmoothedL1:
        s += std::sqrt(theta[j] * theta[j] + penalty.epsilon * penalty.epsilon) - penalty.epsilon;
        break;
      case PenaltyKind::L1: s += std::abs(theta[j]); break;
    }
  }
  return penalty.lambda * s;
}

double weighted_logistic_loss(const ParameterVector& theta, const GroupedDataset& data,
                              const Eigen::VectorXd& weights, const PenaltySpec& penalty) {
  check_weights(weights, data.size(), "weighted_logistic_loss");
  const Eigen::VectorXd l = logistic_losses(theta, data);
  return weights.dot(l) / static_cast<double>(data.size()) + penalty_value(theta, penalty);
}

Eigen::VectorXd logistic_gradient(const ParameterVector& theta, const GroupedDataset& data,
                                  const Eigen::VectorXd& weights, const PenaltySpec& penalty) {
  check_weights(weights, data.size(), "logistic_gradient");
  auto parts = data_derivatives(theta, data, weights, false);
  add_penalty_gradient(theta, penalty, parts.gradient);
  return parts.gradient;
}

Eigen::MatrixXd logistic_hessian(const ParameterVector& theta, const GroupedDataset& data,
                                 const Eigen::VectorXd& weights, const PenaltySpec& penalty) {
  check_weights(weights, data.size(), "logistic_hessian");
  auto parts = data_derivatives(theta, data, weights, true);
  add_penalty_hessian(theta, penalty, parts.hessian);
  return parts.hessian;
}

Eigen::MatrixXd group_gradient_sums(const ParameterVector& theta, const GroupedDataset& data) {
  const Eigen::VectorXd eta = linear_predictor(theta, data);
  const Index d = data.dim();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(data.num_groups(), d + 1);
  for (Index i = 0; i < data.size(); ++i) {
    const double r = sigmoid(eta[i]) - data.targets()[i];
    const Index g = data.group(i) - 1;
    out(g, 0) += r;
    out.row(g).tail(d) += r * data.features().row(i);
  }
  return out;
}

std::vector<std::optional<double>> group_mean_losses(const ParameterVector& theta,
                                                     const GroupedDataset& data) {
  const Eigen::VectorXd l = logistic_losses(theta, data);
  std::vector<double> sums(static_cast<std::size_t>(data.num_groups()), 0.0);
  for (Index i = 0; i < data.size(); ++i) sums[static_cast<std::size_t>(data.group(i) - 1)] += l[i];
  std::vector<std::optional<double>> out(sums.size());
  for (int g = 1; g <= data.num_groups(); ++g) {
    const Index ng = data.group_count(g);
    if (ng > 0) out[static_cast<std::size_t>(g - 1)] = sums[static_cast<std::size_t>(g - 1)] / ng;
  }
  return out;
}

FitResult logistic_fit(const GroupedDataset& data, const Eigen::VectorXd& weights,
                       const PenaltySpec& penalty, const SolverConfig& config,
                       const std::optional<ParameterVector>& warm_start) {
  check_fit_inputs(data, weights, penalty, config);
  ParameterVector theta = ParameterVector::Zero(data.dim() + 1);
  if (warm_start) {
    require(warm_start->size() == theta.size() && warm_start->allFinite(),
            ErrorKind::InvalidArgument, "logistic_fit: bad warm start");
    theta = *warm_start;
  }
  if (penalty.kind == PenaltyKind::L1) return fit_l1(data, weights, penalty, config, theta);

  auto objective = [&](const ParameterVector& t) {
    return weighted_logistic_loss(t, data, weights, penalty);
  };
  auto gradient_at = [&](const ParameterVector& t) {
    auto parts = data_derivatives(t, data, weights, false);
    add_penalty_gradient(t, penalty, parts.gradient);
    return parts.gradient;
  };

  FitResult out;
  double f = objective(theta);
  for (int it = 0; it < config.max_iterations; ++it) {
    auto parts = data_derivatives(theta, data, weights, true);
    add_penalty_gradient(theta, penalty, parts.gradient);
    add_penalty_hessian(theta, penalty, parts.hessian);
    const Eigen::VectorXd& g = parts.gradient;
    out.gradient_norm = g.norm();
    if (out.gradient_norm <= config.gradient_tolerance) {
      out.converged = true;
      break;
    }
    parts.hessian.diagonal().array() += config.hessian_damping;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(parts.hessian);
    Eigen::VectorXd step = -ldlt.solve(g);
    if (ldlt.info() != Eigen::Success || !step.allFinite() || g.dot(step) >= 0.0) step = -g;

    // Armijo backtracking. Near the optimum the loss change drops below
    // rounding, so a step that does not raise the loss beyond a few ulps and
    // shrinks the gradient is also accepted.
    const double slope = g.dot(step);
    const double noise = 16.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f));
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const ParameterVector cand = theta + t * step;
      const double fc = objective(cand);
      if (std::isfinite(fc)) {
        if (fc <= f + 1e-4 * t * slope ||
            (fc <= f + noise && gradient_at(cand).norm() < out.gradient_norm)) {
          theta = cand;
          f = fc;
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) break;
    guard_divergence(theta, penalty, config);
  }
  if (!out.converged) {
    out.gradient_norm = gradient_at(theta).norm();
    out.converged = out.gradient_norm <= config.gradient_tolerance;
  }
  guard_separation(theta, data, weights, penalty);
  out.theta = std::move(theta);
  out.final_loss = f;
  return out;
}

std::vector<std::optional<double>> accuracy_by_group(const ParameterVector& theta,
                                                     const GroupedDataset& data) {
  const Eigen::VectorXd eta = linear_predictor(theta, data);
  std::vector<Index> correct(static_cast<std::size_t>(data.num_groups()), 0);
  for (Index i = 0; i < data.size(); ++i) {
    const double pred = eta[i] >= 0.0 ? 1.0 : 0.0;
    if (pred == data.targets()[i]) ++correct[static_cast<std::size_t>(data.group(i) - 1)];
  }
  std::vector<std::optional<double>> out(correct.size());
  for (int g = 1; g <= data.num_groups(); ++g) {
    const Index ng = data.group_count(g);
    if (ng > 0) {
      out[static_cast<std::size_t>(g - 1)] =
          static_cast<double>(correct[static_cast<std::size_t>(g - 1)]) / static_cast<double>(ng);
    }
  }
  return out;
}

namespace {

Index subsample_count(double v, Index ng) {
  return static_cast<Index>(std::ceil(v * static_cast<double>(ng) - 1e-9));
}

void check_fractions(const GroupedDataset& data, const SubsampleFractions& v) {
  require(v.num_groups() == data.num_groups(), ErrorKind::InvalidArgument,
          "SUBG: fraction vector length differs from G");
}

}  // namespace

Index subg_sample_size(const GroupedDataset& data, const SubsampleFractions& v) {
  check_fractions(data, v);
  Index m = 0;
  for (int g = 1; g <= data.num_groups(); ++g) m += subsample_count(v[g - 1], data.group_count(g));
  return m;
}

double subg_expected_loss(const ParameterVector& theta, const GroupedDataset& data,
                          const SubsampleFractions& v, std::optional<double> m) {
  const double mm = m ? *m : static_cast<double>(subg_sample_size(data, v));
  require(mm >= 1.0, ErrorKind::SizeError, "subg_expected_loss: subsample size m is zero");
  const Eigen::VectorXd l = logistic_losses(theta, data);
  double s = 0.0;
  for (Index i = 0; i < data.size(); ++i) s += v[data.group(i) - 1] * l[i];
  return s / mm;
}

Eigen::VectorXd subg_training_weights(const GroupedDataset& data, const SubsampleFractions& v) {
  const Index m = subg_sample_size(data, v);
  require(m >= 1, ErrorKind::SizeError, "SUBG: subsample size m is zero");
  const double scale = static_cast<double>(data.size()) / static_cast<double>(m);
  Eigen::VectorXd w(data.size());
  for (Index i = 0; i < data.size(); ++i) w[i] = v[data.group(i) - 1] * scale;
  return w;
}

FitResult subg_fit(const GroupedDataset& data, const SubsampleFractions& v,
                   const PenaltySpec& penalty, const SolverConfig& config,
                   const std::optional<ParameterVector>& warm_start) {
  return logistic_fit(data, subg_training_weights(data, v), penalty, config, warm_start);
}

std::vector<Index> dfr_member_rows(const GroupedDataset& data, const SubsampleFractions& v,
                                   std::uint64_t seed, int member) {
  check_fractions(data, v);
  const std::uint64_t member_seed = derive_seed(seed, static_cast<std::uint64_t>(member));
  std::vector<Index> rows;
  for (int g = 1; g <= data.num_groups(); ++g) {
    const Index k = subsample_count(v[g - 1], data.group_count(g));
    if (k == 0) continue;
    auto candidates = data.rows_of_group(g);
    std::mt19937_64 rng(derive_seed(member_seed, static_cast<std::uint64_t>(g)));
    std::shuffle(candidates.begin(), candidates.end(), rng);
    rows.insert(rows.end(), candidates.begin(), candidates.begin() + k);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

DfrEnsemble dfr_ensemble(const GroupedDataset& data, const SubsampleFractions& v,
                         int ensemble_size, const PenaltySpec& penalty,
                         const SolverConfig& config, std::uint64_t seed,
                         const std::vector<ParameterVector>* warm_starts) {
  require(ensemble_size >= 1, ErrorKind::InvalidArgument, "DFR: ensemble_size must be >= 1");
  check_fractions(data, v);
  for (int g = 1; g <= data.num_groups(); ++g) {
    require(v[g - 1] == 0.0 || data.group_count(g) > 0, ErrorKind::EmptyGroup,
            "DFR: group " + std::to_string(g) + " has positive fraction but no rows");
  }
  DfrEnsemble out;
  out.theta = ParameterVector::Zero(data.dim() + 1);
  for (int k = 0; k < ensemble_size; ++k) {
    DfrMember member;
    member.rows = dfr_member_rows(data, v, seed, k);
    require(!member.rows.empty(), ErrorKind::SizeError, "DFR: empty subsample");
    const GroupedDataset sub = data.subset(member.rows);
    std::optional<ParameterVector> warm;
    if (warm_starts && static_cast<std::size_t>(k) < warm_starts->size()) {
      warm = (*warm_starts)[static_cast<std::size_t>(k)];
    }
    member.fit = logistic_fit(sub, Eigen::VectorXd::Ones(sub.size()), penalty, config, warm);
    out.theta += member.fit.theta;
    out.members.push_back(std::move(member));
  }
  out.theta /= static_cast<double>(ensemble_size);
  return out;
}

ParameterVector dfr_ensemble_fit(const GroupedDataset& data, const SubsampleFractions& v,
                                 int ensemble_size, const PenaltySpec& penalty,
                                 const SolverConfig& config, std::uint64_t seed) {
  return dfr_ensemble(data, v, ensemble_size, penalty, config, seed).theta;
}

}  // namespace optw
