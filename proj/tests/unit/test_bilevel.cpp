#include <cmath>
#include <random>

#include "doctest.h"
#include "expect.hpp"
#include "optweights/bilevel.hpp"
#include "optweights/comparison.hpp"
#include "optweights/synthetic.hpp"
#include "oracles.hpp"

using namespace optw;

namespace {

/// Two groups; the minority has shifted features and its own intercept, so
/// a single pooled model is misspecified.
GroupedDataset two_group_shifted(std::uint64_t seed, Index n = 2000, Index d = 10,
                                 double minority = 0.05) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  const auto n_minor = static_cast<Index>(std::llround(minority * static_cast<double>(n)));
  Eigen::VectorXd beta(d);
  for (Index j = 0; j < d; ++j) beta[j] = normal(rng) / std::sqrt(static_cast<double>(d));
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd y(n);
  std::vector<int> g(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const bool minor = i < n_minor;
    g[static_cast<std::size_t>(i)] = minor ? 2 : 1;
    double e = minor ? 1.0 : -0.5;
    for (Index j = 0; j < d; ++j) {
      x(i, j) = normal(rng) + (minor ? 0.75 : 0.0);
      e += (minor && j == 0 ? -2.0 : 1.0) * beta[j] * x(i, j);
    }
    y[i] = unif(rng) < 1.0 / (1.0 + std::exp(-e)) ? 1.0 : 0.0;
  }
  return GroupedDataset(std::move(x), std::move(y), std::move(g), 2);
}

/// One distribution for every group, labels on a random balanced grouping.
GroupedDataset identical_groups(std::uint64_t seed, Index n, Index d, int G,
                                const std::vector<double>& probs) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  std::discrete_distribution<int> pick(probs.begin(), probs.end());
  Eigen::MatrixXd x(n, d);
  Eigen::VectorXd y(n);
  std::vector<int> g(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    g[static_cast<std::size_t>(i)] = i < G ? static_cast<int>(i) + 1 : pick(rng) + 1;
    double e = 0.2;
    for (Index j = 0; j < d; ++j) {
      x(i, j) = normal(rng);
      e += (j % 2 == 0 ? 0.8 : -0.4) * x(i, j);
    }
    y[i] = unif(rng) < 1.0 / (1.0 + std::exp(-e)) ? 1.0 : 0.0;
  }
  return GroupedDataset(std::move(x), std::move(y), std::move(g), G);
}

bool on_simplex(const Eigen::VectorXd& p) {
  return (p.array() > 0.0).all() && std::abs(p.sum() - 1.0) < 1e-9;
}

BilevelConfig short_config(int steps, std::uint64_t seed) {
  BilevelConfig c;
  c.max_steps = steps;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_SUITE("bilevel") {

TEST_CASE("exponentiated gradient step") {
  const SimplexWeights half(Eigen::Vector2d(0.5, 0.5));
  SUBCASE("zero gradient and momentum is a fixed point") {
    const auto [p, u] = exp_grad_step(half, Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), 0.1, 0.5);
    CHECK(p.values().isApprox(half.values()));
    CHECK(u.isZero());
  }
  SUBCASE("multiplicative update then normalize") {
    const auto [p, u] =
        exp_grad_step(half, Eigen::Vector2d(std::log(2.0), 0.0), Eigen::Vector2d::Zero(), 1.0, 0.0);
    CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }
  SUBCASE("momentum mixes the previous buffer") {
    const auto [p, u] =
        exp_grad_step(half, Eigen::Vector2d(1.0, -1.0), Eigen::Vector2d(2.0, 0.0), 0.1, 0.5);
    CHECK(u[0] == doctest::Approx(1.5));
    CHECK(u[1] == doctest::Approx(-0.5));
  }
  SUBCASE("huge gradients stay on the simplex") {
    const SimplexWeights p3(Eigen::Vector3d(0.2, 0.3, 0.5));
    const auto [p, u] =
        exp_grad_step(p3, Eigen::Vector3d(1e6, -1e6, 3.0), Eigen::Vector3d::Zero(), 1.0, 0.0);
    CHECK(std::abs(p.values().sum() - 1.0) < 1e-12);
    CHECK((p.values().array() >= 0.0).all());
  }
  CHECK_KIND(exp_grad_step(half, Eigen::Vector3d::Zero(), Eigen::Vector2d::Zero(), 1.0, 0.0),
             ErrorKind::SizeError);
}

TEST_CASE("loss-weight update") {
  const SimplexWeights q(Eigen::Vector2d(0.5, 0.5));
  const SimplexWeights next = q_update(q, Eigen::Vector2d(1.0, 0.0), std::log(2.0));
  CHECK(next[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(next[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("step selection") {
  std::vector<TraceRecord> trace(4);
  const double obj[] = {0.5, 0.3, 0.3, 0.4};
  // Weighted objectives prefer the last record; selection must ignore them.
  const double weighted[] = {0.2, 0.2, 0.2, 0.1};
  for (int k = 0; k < 4; ++k) {
    trace[static_cast<std::size_t>(k)].step = k;
    trace[static_cast<std::size_t>(k)].objective = obj[k];
    trace[static_cast<std::size_t>(k)].weighted_objective = weighted[k];
  }
  CHECK(select_step(trace) == 1);
  CHECK_KIND(select_step({}), ErrorKind::InvalidArgument);
}

TEST_CASE("configuration checks") {
  BilevelConfig c;
  c.momentum = 1.0;
  CHECK_KIND(c.validate(), ErrorKind::InvalidArgument);
  c = {};
  c.learning_rate = 0.0;
  CHECK_KIND(c.validate(), ErrorKind::InvalidArgument);
  c = {};
  c.penalty = PenaltySpec::l1(0.1);
  CHECK_KIND(c.validate(), ErrorKind::InvalidArgument);
}

TEST_CASE("split coverage") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 2);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(20);
  std::vector<int> g(20, 1);
  g[7] = 2;  // a single row cannot be on both sides
  const GroupedDataset data(x, y, g, 2);
  CHECK_KIND(covering_split(data, 10, 1, 10, false, true), ErrorKind::GroupCoverage);
  int attempts = -1;
  const auto s = covering_split(data, 10, 1, 40, false, false, &attempts);
  CHECK(attempts >= 0);
  bool val_has_minor = false;
  for (Index i : s.val) val_has_minor = val_has_minor || data.group(i) == 2;
  CHECK(val_has_minor);
}

TEST_CASE("GW-ERM loop contract") {
  const GroupedDataset data = two_group_shifted(11, 600, 4, 0.1);
  const ShiftSpec shift(group_frequencies(data), Eigen::Vector2d(0.5, 0.5));

  const auto t0 = optimize_gw_erm(data, shift, 300, short_config(0, 3));
  CHECK(t0.trace.size() == 1);
  CHECK(t0.selected_step == 0);
  CHECK(t0.weights.isApprox(shift.p_test()));
  CHECK(t0.trace[0].hypergradient.size() == 0);

  const auto t1 = optimize_gw_erm(data, shift, 300, short_config(1, 3));
  CHECK(t1.trace.size() == 2);
  CHECK(t1.trace[0].hypergradient.size() == 2);

  const auto a = optimize_gw_erm(data, shift, 300, short_config(15, 3));
  const auto b = optimize_gw_erm(data, shift, 300, short_config(15, 3));
  REQUIRE(a.trace.size() == 16);
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    CHECK(on_simplex(a.trace[k].weights));
    CHECK(a.trace[k].weights == b.trace[k].weights);
    CHECK(a.trace[k].objective == b.trace[k].objective);
    CHECK(a.trace[k].inner_converged);
  }
  CHECK(a.theta == b.theta);
  CHECK(a.split.train == b.split.train);

  double best = INFINITY;
  for (const auto& r : a.trace) best = std::min(best, r.objective);
  CHECK(a.trace[static_cast<std::size_t>(a.selected_step)].objective == best);
  CHECK(best <= a.trace[0].objective);
  CHECK(a.weights == a.trace[static_cast<std::size_t>(a.selected_step)].weights);
  CHECK(validation_loss(a.theta, data.subset(a.split.val),
                        ratio_validation_weights(data.subset(a.split.val), shift)) ==
        doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("GW-ERM never returns worse than its start without shift") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const GroupedDataset data = two_group_shifted(seed, 500, 3, 0.2);
    const Eigen::VectorXd freq = group_frequencies(data);
    const auto res = optimize_gw_erm(data, ShiftSpec(freq, freq), 250, short_config(20, seed));
    CHECK(res.trace[static_cast<std::size_t>(res.selected_step)].objective <=
          res.trace[0].objective);
  }
}

TEST_CASE("GW-ERM improves the validation objective on the shifted benchmark") {
  int strict = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const GroupedDataset data = two_group_shifted(seed);
    const ShiftSpec shift(group_frequencies(data), Eigen::Vector2d(0.5, 0.5));
    const auto res = optimize_gw_erm(data, shift, 1000, short_config(100, seed));
    const double start = res.trace[0].objective;
    const double end = res.trace[static_cast<std::size_t>(res.selected_step)].objective;
    CHECK(end <= start);
    if (end < start) ++strict;
  }
  CHECK(strict >= 19);
}

TEST_CASE("SUBG loop respects the box and the pin") {
  const GroupedDataset data = oracle::random_logistic_problem(5, 600, 3, 3, 40);
  const Eigen::VectorXd freq = group_frequencies(data);
  const ShiftSpec shift(freq, Eigen::VectorXd::Constant(3, 1.0 / 3.0));
  const auto res = optimize_subg(data, shift, 300, short_config(20, 4));
  const GroupedDataset train = data.subset(res.split.train);
  const GroupedDataset val = data.subset(res.split.val);
  const int pin = smallest_group(train);
  Index largest = 0;
  for (int g = 1; g <= 3; ++g) largest = std::max(largest, train.group_count(g));
  for (const auto& r : res.trace) {
    CHECK(r.weights[pin - 1] == 1.0);
    CHECK((r.weights.array() >= 1.0 / static_cast<double>(largest)).all());
    CHECK((r.weights.array() <= 1.0).all());
  }

  SUBCASE("the first objective is the balancing-fraction relaxation fit") {
    const BilevelConfig c;
    const FitResult direct = subg_fit(train, balancing_fractions(train), c.penalty, c.solver);
    CHECK(res.trace[0].weights.isApprox(balancing_fractions(train).values()));
    CHECK(res.trace[0].objective ==
          doctest::Approx(validation_loss(direct.theta, val, ratio_validation_weights(val, shift)))
              .epsilon(1e-12));
  }
  SUBCASE("explicit pin") {
    const auto pinned = optimize_subg(data, shift, 300, short_config(3, 4), 2);
    for (const auto& r : pinned.trace) CHECK(r.weights[1] == 1.0);
    CHECK_KIND(optimize_subg(data, shift, 300, short_config(3, 4), 4), ErrorKind::InvalidArgument);
  }
}

TEST_CASE("SUBG keeps all the data when groups are identical") {
  // Fraction hypergradients scale like 1/n, so the default rate barely moves
  // v in 100 steps; a larger rate lets the loop reach the box.
  int near_ones = 0;
  for (std::uint64_t seed = 1; seed <= 7; ++seed) {
    const GroupedDataset data = identical_groups(seed, 2000, 4, 2, {0.7, 0.3});
    const Eigen::VectorXd freq = group_frequencies(data);
    BilevelConfig config = short_config(100, seed);
    config.learning_rate = 10.0;
    const auto res = optimize_subg(data, ShiftSpec(freq, freq), 1000, config);
    if (res.weights.minCoeff() > 0.9) ++near_ones;
  }
  CHECK(near_ones >= 4);
}

TEST_CASE("DFR hypergradient is the mean of member hypergradients") {
  const GroupedDataset data = oracle::random_logistic_problem(8, 400, 3, 2, 40);
  auto [fit_data, val] = split_train_val(data, 200, 3);
  const SubsampleFractions v(Eigen::Vector2d(1.0, 0.6));
  BilevelConfig c;
  const DfrEnsemble ens = dfr_ensemble(fit_data, v, 4, c.penalty, c.solver, 17);
  const ShiftSpec shift(group_frequencies(data), Eigen::Vector2d(0.5, 0.5));
  const DfrHypergradient h = dfr_hypergradient(ens, fit_data, val,
                                               ratio_validation_weights(val, shift), v,
                                               c.penalty, HypergradOptions{});
  REQUIRE(h.per_member.size() == 4);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
  for (const auto& g : h.per_member) mean += g;
  mean /= 4.0;
  CHECK((h.gradient - mean).lpNorm<Eigen::Infinity>() <= 1e-15 * (1.0 + mean.norm()));
}

TEST_CASE("DFR loop") {
  const GroupedDataset data = oracle::random_logistic_problem(9, 600, 3, 3, 40);
  const ShiftSpec shift(group_frequencies(data), Eigen::VectorXd::Constant(3, 1.0 / 3.0));
  const auto a = optimize_dfr(data, shift, short_config(5, 2), 3);
  const auto b = optimize_dfr(data, shift, short_config(5, 2), 3);
  CHECK(a.trace.size() == 6);
  CHECK(a.split.train.size() == 300);
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    CHECK(a.trace[k].weights == b.trace[k].weights);
    CHECK(a.trace[k].objective == b.trace[k].objective);
    CHECK(a.trace[k].weights.maxCoeff() == 1.0);
  }
  CHECK(a.trace[static_cast<std::size_t>(a.selected_step)].objective <= a.trace[0].objective);
  CHECK_KIND(optimize_dfr(data, shift, short_config(1, 2), 0), ErrorKind::InvalidArgument);
  CHECK_KIND(optimize_dfr(data, shift, short_config(1, 2), 2, 1.0), ErrorKind::InvalidArgument);
}

TEST_CASE("DFR with one member and unit fractions is the plain fit") {
  // Members are real subsamples, so a one-member ensemble equals the SUBG
  // relaxation only where every fraction is 1.
  const GroupedDataset data = oracle::random_logistic_problem(10, 300, 3, 2, 40);
  const BilevelConfig c;
  const SubsampleFractions ones(Eigen::Vector2d(1.0, 1.0));
  const ParameterVector ens = dfr_ensemble_fit(data, ones, 1, c.penalty, c.solver, 4);
  const ParameterVector relax = subg_fit(data, ones, c.penalty, c.solver).theta;
  CHECK((ens - relax).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("GDRO loop") {
  SyntheticShiftSpec spec;
  spec.n = 1200;
  spec.d = 6;
  spec.minority_fraction = 0.05;
  spec.seed = 21;
  const GroupedDataset data = generate_spurious(spec).train;
  const auto res = optimize_gdro(data, 600, short_config(20, 5));
  const GroupedDataset val = data.subset(res.split.val);
  for (const auto& r : res.trace) {
    CHECK(on_simplex(r.weights));
    CHECK(on_simplex(r.q));
  }
  CHECK(res.trace[0].weights.isApprox(Eigen::VectorXd::Constant(4, 0.25)));
  CHECK(res.trace[0].q.isApprox(Eigen::VectorXd::Constant(4, 0.25)));
  // Selection is on the largest group loss.
  CHECK(res.trace[static_cast<std::size_t>(res.selected_step)].objective ==
        doctest::Approx(group_losses(res.theta, val).maxCoeff()).epsilon(1e-12));
  // The first q step follows the first step's group losses.
  const Eigen::VectorXd l0 = group_losses(res.initial_theta, val);
  const SimplexWeights q1 = q_update(SimplexWeights(res.trace[0].q), l0, 0.1);
  CHECK(res.trace[1].q.isApprox(q1.values(), 1e-12));
}

TEST_CASE("GDRO on identical groups stays near the mean loss") {
  const GroupedDataset data = identical_groups(31, 4000, 4, 3, {0.5, 0.3, 0.2});
  const auto res = optimize_gdro(data, 2000, short_config(30, 6));
  const GroupedDataset val = data.subset(res.split.val);
  const Eigen::VectorXd losses = logistic_losses(res.theta, val);
  Eigen::VectorXd means = Eigen::VectorXd::Zero(3), sq = Eigen::VectorXd::Zero(3);
  for (Index i = 0; i < val.size(); ++i) {
    means[val.group(i) - 1] += losses[i];
    sq[val.group(i) - 1] += losses[i] * losses[i];
  }
  double worst_se = 0.0;
  for (int g = 0; g < 3; ++g) {
    const double ng = static_cast<double>(val.group_count(g + 1));
    means[g] /= ng;
    const double var = (sq[g] / ng - means[g] * means[g]) * ng / (ng - 1.0);
    worst_se = std::max(worst_se, std::sqrt(var / ng));
  }
  CHECK(means.maxCoeff() - means.mean() <= 3.0 * worst_se);
  for (const auto& r : res.trace) {
    CHECK((r.q.array() - 1.0 / 3.0).abs().maxCoeff() < 0.05);
  }
}

TEST_CASE("selected iterate does not beat the start by more than noise without structure") {
  // No shift and groups assigned independently of everything: any gain of
  // the selected iterate over the start is noise.
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const GroupedDataset data = identical_groups(100 + seed, 2000, 4, 2, {0.5, 0.5});
    const Eigen::VectorXd freq = group_frequencies(data);
    const ShiftSpec shift(freq, freq);
    const auto res = optimize_gw_erm(data, shift, 1000, short_config(30, seed));
    const GroupedDataset val = data.subset(res.split.val);
    const Eigen::VectorXd w = ratio_validation_weights(val, shift);
    const Eigen::VectorXd l =
        logistic_losses(res.initial_theta, val).cwiseProduct(w);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> pick(0, val.size() - 1);
    std::vector<double> boot;
    for (int b = 0; b < 200; ++b) {
      double s = 0.0;
      for (Index i = 0; i < val.size(); ++i) s += l[pick(rng)];
      boot.push_back(s / static_cast<double>(val.size()));
    }
    double mean = 0.0, var = 0.0;
    for (double x : boot) mean += x;
    mean /= 200.0;
    for (double x : boot) var += (x - mean) * (x - mean);
    const double se = std::sqrt(var / 199.0);
    const double gain =
        res.trace[0].objective - res.trace[static_cast<std::size_t>(res.selected_step)].objective;
    CHECK(gain >= 0.0);
    CHECK(gain <= 3.0 * se);
  }
}

TEST_CASE("JTT group inference") {
  Eigen::MatrixXd x(6, 1);
  x << -2, -1, -3, 1, 2, 3;
  const Eigen::VectorXd y = (Eigen::VectorXd(6) << 0, 0, 0, 1, 1, 1).finished();
  const GroupedDataset data(x, y, std::vector<int>(6, 1), 1);

  SUBCASE("a perfect identification model leaves only class cells") {
    const auto r = infer_jtt_groups(data, Eigen::Vector2d(0.0, 1.0));
    CHECK(r.num_inferred_groups == 2);
    CHECK(r.merges.size() == 2);
    CHECK(r.cell_of_group == std::vector<int>{1, 3});
  }
  SUBCASE("errors get their own cells") {
    const auto r = infer_jtt_groups(data, Eigen::Vector2d(-1.5, 1.0));  // misclassifies x = 1
    CHECK(r.num_inferred_groups == 3);
    CHECK(r.num_inferred_groups <= 4);
    CHECK(r.inferred_groups[3] != r.inferred_groups[4]);
    CHECK(r.inferred_groups[4] == r.inferred_groups[5]);
  }
  SUBCASE("a missing class") {
    const GroupedDataset zeros(x, Eigen::VectorXd::Zero(6), std::vector<int>(6, 1), 1);
    CHECK_KIND(infer_jtt_groups(zeros, Eigen::Vector2d(0.0, 1.0)), ErrorKind::EmptyInferredGroup);
  }
}

TEST_CASE("JTT multi-weight run matches or beats the single-upweight baseline") {
  int dominated = 0;
  const JttConfig jtt;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SyntheticShiftSpec spec;
    spec.n = 1000;
    spec.d = 10;
    spec.seed = seed;
    spec.minority_fraction = 0.05;
    const GroupedDataset data = generate_spurious(spec).train;
    const BilevelConfig config = short_config(30, seed);
    const JttResult res = optimize_jtt(data, 500, config, jtt);
    CHECK(res.num_inferred_groups <= 4);

    // Baseline recomputed from the public pieces on the same split.
    const GroupedDataset val = data.subset(res.run.split.val);
    const GroupedDataset raw = data.subset(res.run.split.train);
    const GroupedDataset unlabeled =
        raw.with_groups(std::vector<int>(static_cast<std::size_t>(raw.size()), 1), 1);
    const FitResult ident = logistic_fit(unlabeled, Eigen::VectorXd::Ones(unlabeled.size()),
                                         config.penalty, config.solver);
    const JttResult inferred = infer_jtt_groups(unlabeled, ident.theta);
    CHECK(inferred.inferred_groups == res.inferred_groups);
    double baseline = INFINITY;
    for (double lambda : jtt.upweight_grid) {
      Eigen::VectorXd w(unlabeled.size());
      for (Index i = 0; i < unlabeled.size(); ++i) {
        const int cell = inferred.cell_of_group[static_cast<std::size_t>(
            inferred.inferred_groups[static_cast<std::size_t>(i)] - 1)];
        w[i] = cell % 2 == 0 ? lambda : 1.0;
      }
      w *= static_cast<double>(w.size()) / w.sum();
      const FitResult f = logistic_fit(unlabeled, w, config.penalty, config.solver);
      baseline = std::min(baseline, group_losses(f.theta, val).maxCoeff());
    }
    const double optimized = res.run.trace[static_cast<std::size_t>(res.run.selected_step)].objective;
    if (optimized <= baseline + 1e-9) ++dominated;
  }
  CHECK(dominated >= 16);
}

TEST_CASE("zero steps make the optimized arm the standard arm") {
  ComparisonSetup setup;
  setup.data.n = 800;
  setup.data.d = 6;
  setup.data.minority_fraction = 0.05;
  setup.test_per_group = 200;
  setup.ensemble_size = 2;
  setup.config.max_steps = 0;
  for (Method m : {Method::GwErm, Method::Subg, Method::Dfr, Method::Gdro, Method::Jtt}) {
    const SeedOutcome o = run_single(setup, m, 3);
    CHECK(o.selected_step == 0);
    CHECK(o.standard.weighted_average_accuracy == o.optimized.weighted_average_accuracy);
    CHECK(o.standard.worst_group_accuracy == o.optimized.worst_group_accuracy);
  }
}

}  // TEST_SUITE
