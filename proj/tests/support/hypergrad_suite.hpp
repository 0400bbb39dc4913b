#pragma once

// Seeded ridge-penalized logistic problems for checking hypergradients
// against end-to-end central differences (refit at every perturbed weight).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "optweights/bilevel.hpp"
#include "optweights/hypergrad.hpp"
#include "oracles.hpp"

namespace suite {

struct HypergradProblem {
  optw::GroupedDataset train;
  optw::GroupedDataset val;
  optw::ShiftSpec shift;
  optw::SimplexWeights p;
  optw::SubsampleFractions v;
  optw::PenaltySpec penalty;
};

inline HypergradProblem hypergrad_problem(std::uint64_t seed, optw::Index n = 200,
                                          optw::Index d = 5, int G = 4) {
  using namespace optw;
  const GroupedDataset all = oracle::random_logistic_problem(seed, n, d, G, 12);
  auto [train, val] = split_train_val(all, (7 * n) / 10, derive_seed(seed, 1), true);
  const Eigen::VectorXd ptr = group_frequencies(train);
  ShiftSpec shift(ptr, Eigen::VectorXd::Constant(G, 1.0 / G));
  std::mt19937_64 rng(derive_seed(seed, 2));
  std::uniform_real_distribution<double> u(0.3, 1.0);
  Eigen::VectorXd raw(G), frac(G);
  for (int g = 0; g < G; ++g) {
    raw[g] = u(rng);
    frac[g] = u(rng);
  }
  // Keep v_g n_g away from integers so the subsample size is locally constant.
  frac /= frac.maxCoeff();
  for (int g = 0; g < G; ++g) {
    const double ng = static_cast<double>(train.group_count(g + 1));
    if (frac[g] < 1.0) frac[g] = (std::floor(frac[g] * ng) + 0.5) / ng;
  }
  return {std::move(train), std::move(val), std::move(shift), normalize_simplex(raw),
          SubsampleFractions(frac), PenaltySpec::ridge(0.05)};
}

struct Comparison {
  Eigen::VectorXd ift;
  Eigen::VectorXd fd;
  double relative_error = 0.0;
};

inline double relative(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Free coordinates p_1..p_{G-1}, with p_G = 1 - sum.
inline Comparison check_p(const HypergradProblem& pb, double step = 1e-5) {
  using namespace optw;
  SolverConfig tight;
  tight.gradient_tolerance = 1e-12;
  const int G = pb.p.num_groups();
  const Eigen::VectorXd vw = ratio_validation_weights(pb.val, pb.shift);
  auto fit_at = [&](const Eigen::VectorXd& full) {
    return logistic_fit(pb.train, per_observation_weights(SimplexWeights(full), pb.shift,
                                                          pb.train.groups()),
                        pb.penalty, tight);
  };
  const auto base = fit_at(pb.p.values());
  const HypergradOptions opts;  // default damping, as used by the optimizers
  const auto rep = hypergradient_p(base.theta, pb.train, pb.val, pb.shift, pb.p, pb.penalty, opts);
  auto outer = [&](const Eigen::VectorXd& free) {
    Eigen::VectorXd full(G);
    full.head(G - 1) = free;
    full[G - 1] = 1.0 - free.sum();
    return validation_loss(fit_at(full).theta, pb.val, vw);
  };
  Comparison c;
  c.ift = rep.free_gradient;
  c.fd = finite_difference_hypergradient(pb.p.values().head(G - 1), step, outer);
  c.relative_error = relative(c.ift, c.fd);
  return c;
}

/// Fractions enter the fit through w_i = v_g n / m with m fixed at its
/// value for the base fractions.
inline Comparison check_v(const HypergradProblem& pb, double step = 1e-5) {
  using namespace optw;
  SolverConfig tight;
  tight.gradient_tolerance = 1e-12;
  const double m = static_cast<double>(subg_sample_size(pb.train, pb.v));
  const double n = static_cast<double>(pb.train.size());
  const Eigen::VectorXd vw = ratio_validation_weights(pb.val, pb.shift);
  auto fit_at = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd w(pb.train.size());
    for (Index i = 0; i < pb.train.size(); ++i) w[i] = v[pb.train.group(i) - 1] * n / m;
    return logistic_fit(pb.train, w, pb.penalty, tight);
  };
  const auto base = fit_at(pb.v.values());
  const HypergradOptions opts;  // default damping, as used by the optimizers
  const auto rep = hypergradient_v(base.theta, pb.train, pb.val, pb.v, pb.shift, pb.penalty, opts);
  auto outer = [&](const Eigen::VectorXd& v) {
    return validation_loss(fit_at(v).theta, pb.val, vw);
  };
  Comparison c;
  c.ift = rep.gradient;
  c.fd = finite_difference_hypergradient(pb.v.values(), step, outer);
  c.relative_error = relative(c.ift, c.fd);
  return c;
}

}  // namespace suite
