#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "expect.hpp"
#include "optweights/estimators.hpp"
#include "oracles.hpp"

using namespace optw;

namespace {

Eigen::VectorXd random_weights(std::uint64_t seed, Index n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  Eigen::VectorXd w(n);
  for (Index i = 0; i < n; ++i) w[i] = u(rng);
  return w;
}

Eigen::VectorXd random_theta(std::uint64_t seed, Index p) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::VectorXd t(p);
  for (Index j = 0; j < p; ++j) t[j] = 0.5 * z(rng);
  return t;
}

}  // namespace

TEST_SUITE("estimators") {

TEST_CASE("loss, gradient and Hessian agree with the reference formulas") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data = oracle::random_logistic_problem(seed, 60, 4, 3);
    const Eigen::VectorXd w = random_weights(seed, data.size());
    const Eigen::VectorXd theta = random_theta(seed + 100, 5);
    const auto ridge = PenaltySpec::ridge(0.3);
    const double ref =
        oracle::logistic_objective(data.features(), data.targets(), w, theta, 0.3);
    CHECK(weighted_logistic_loss(theta, data, w, ridge) == doctest::Approx(ref).epsilon(1e-13));

    auto f = [&](const Eigen::VectorXd& t) {
      return oracle::logistic_objective(data.features(), data.targets(), w, t, 0.3);
    };
    const Eigen::VectorXd g_fd = oracle::central_difference(f, theta, 1e-5);
    CHECK((logistic_gradient(theta, data, w, ridge) - g_fd).lpNorm<Eigen::Infinity>() < 1e-8);

    auto gk = [&](Index k) {
      return [&, k](const Eigen::VectorXd& t) {
        return oracle::logistic_smooth_gradient(data.features(), data.targets(), w, t, 0.3)[k];
      };
    };
    const Eigen::MatrixXd h = logistic_hessian(theta, data, w, ridge);
    for (Index k = 0; k < 5; ++k) {
      const Eigen::VectorXd row = oracle::central_difference(gk(k), theta, 1e-5);
      CHECK((h.row(k).transpose() - row).lpNorm<Eigen::Infinity>() < 1e-7);
    }
    CHECK((h - h.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("penalties skip the intercept") {
  Eigen::VectorXd theta(3);
  theta << 5.0, 1.0, -2.0;
  CHECK(penalty_value(theta, PenaltySpec::none()) == 0.0);
  CHECK(penalty_value(theta, PenaltySpec::ridge(0.5)) == doctest::Approx(0.25 * 5.0));
  CHECK(penalty_value(theta, PenaltySpec::l1(0.5)) == doctest::Approx(1.5));
  const double eps = 1e-2;
  const double smooth = 0.5 * (std::sqrt(1.0 + eps * eps) - eps + std::sqrt(4.0 + eps * eps) - eps);
  CHECK(penalty_value(theta, PenaltySpec::smoothed_l1(0.5, eps)) == doctest::Approx(smooth));
  CHECK_KIND(PenaltySpec::ridge(-1.0).validate(), ErrorKind::InvalidArgument);
  CHECK_KIND(PenaltySpec::smoothed_l1(1.0, 0.0).validate(), ErrorKind::InvalidArgument);
}

TEST_CASE("Newton fit matches the gradient-descent reference") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto data = oracle::random_logistic_problem(seed, 80, 3, 2);
    const Eigen::VectorXd w = random_weights(seed + 7, data.size());
    for (double lambda : {0.05, 0.5}) {
      const auto fit = logistic_fit(data, w, PenaltySpec::ridge(lambda));
      CHECK(fit.converged);
      CHECK(fit.gradient_norm <= 1e-10);
      const Eigen::VectorXd ref =
          oracle::logistic_descent(data.features(), data.targets(), w, lambda);
      CHECK((fit.theta - ref).lpNorm<Eigen::Infinity>() < 1e-8);
    }
  }
}

TEST_CASE("exact L1 fit matches the proximal-gradient reference") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto data = oracle::random_logistic_problem(seed, 80, 6, 2);
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(data.size());
    const double lambda = 0.04;
    const auto fit = logistic_fit(data, w, PenaltySpec::l1(lambda));
    CHECK(fit.converged);
    const Eigen::VectorXd ref =
        oracle::logistic_descent(data.features(), data.targets(), w, 0.0, lambda);
    CHECK((fit.theta - ref).lpNorm<Eigen::Infinity>() < 1e-7);
    for (Index j = 1; j < ref.size(); ++j) CHECK((ref[j] == 0.0) == (fit.theta[j] == 0.0));
  }
}

TEST_CASE("smoothed L1 approaches exact L1 as the smoothing vanishes") {
  const auto data = oracle::random_logistic_problem(3, 100, 5, 2);
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(data.size());
  const auto exact = logistic_fit(data, w, PenaltySpec::l1(0.03)).theta;
  double prev = INFINITY;
  for (double eps : {1e-2, 1e-3, 1e-4}) {
    const auto smooth = logistic_fit(data, w, PenaltySpec::smoothed_l1(0.03, eps)).theta;
    const double gap = (smooth - exact).lpNorm<Eigen::Infinity>();
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("symmetric data") {
  // Rows come in pairs (x, y) and (-x, 1 - y).
  const auto base = oracle::random_logistic_problem(5, 40, 3, 2);
  Eigen::MatrixXd x(80, 3);
  Eigen::VectorXd y(80);
  std::vector<int> g(80);
  for (Index i = 0; i < 40; ++i) {
    x.row(2 * i) = base.features().row(i);
    x.row(2 * i + 1) = -base.features().row(i);
    y[2 * i] = base.targets()[i];
    y[2 * i + 1] = 1.0 - base.targets()[i];
    g[static_cast<std::size_t>(2 * i)] = base.group(i);
    g[static_cast<std::size_t>(2 * i + 1)] = base.group(i);
  }
  const GroupedDataset data(x, y, g, 2);
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(80);
  CHECK(std::abs(logistic_gradient(Eigen::VectorXd::Zero(4), data, w, PenaltySpec::none())[0]) <
        1e-15);
  CHECK(std::abs(logistic_fit(data, w, PenaltySpec::ridge(0.1)).theta[0]) < 1e-8);
}

TEST_CASE("separable data without a penalty is reported") {
  Eigen::MatrixXd x(6, 1);
  x << -3, -2, -1, 1, 2, 3;
  Eigen::VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  const GroupedDataset data(x, y, {1, 1, 1, 2, 2, 2}, 2);
  CHECK_KIND(logistic_fit(data, Eigen::VectorXd::Ones(6), PenaltySpec::none()),
             ErrorKind::SeparableData);
  CHECK(logistic_fit(data, Eigen::VectorXd::Ones(6), PenaltySpec::ridge(0.1)).converged);
}

TEST_CASE("fit input validation") {
  const auto data = oracle::random_logistic_problem(1, 30, 2, 2);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(data.size());
  CHECK_KIND(logistic_fit(data, Eigen::VectorXd::Ones(3), PenaltySpec::ridge(0.1)),
             ErrorKind::SizeError);
  Eigen::VectorXd neg = ones;
  neg[0] = -1.0;
  CHECK_KIND(logistic_fit(data, neg, PenaltySpec::ridge(0.1)), ErrorKind::InvalidArgument);
  Eigen::VectorXd one_class = ones;
  for (Index i = 0; i < data.size(); ++i) {
    if (data.targets()[i] == 1.0) one_class[i] = 0.0;
  }
  CHECK_KIND(logistic_fit(data, one_class, PenaltySpec::ridge(0.1)), ErrorKind::InvalidArgument);
}

TEST_CASE("integer weights act like duplicated rows") {
  const auto data = oracle::random_logistic_problem(9, 50, 3, 2);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(data.size());
  std::vector<Index> rows;
  for (Index i = 0; i < data.size(); ++i) {
    rows.push_back(i);
    if (i % 3 == 0) {
      w[i] = 2.0;
      rows.push_back(i);
    }
  }
  const auto dup = data.subset(rows);
  const auto a = logistic_fit(data, w, PenaltySpec::none()).theta;
  const auto b = logistic_fit(dup, Eigen::VectorXd::Ones(dup.size()), PenaltySpec::none()).theta;
  CHECK((a - b).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("warm starts reach the same solution") {
  const auto data = oracle::random_logistic_problem(4, 70, 4, 3);
  const Eigen::VectorXd w = random_weights(4, data.size());
  const auto cold = logistic_fit(data, w, PenaltySpec::ridge(0.01));
  const auto warm = logistic_fit(data, w, PenaltySpec::ridge(0.01), {}, random_theta(8, 5));
  CHECK((cold.theta - warm.theta).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("group gradient sums add up to the unweighted gradient") {
  const auto data = oracle::random_logistic_problem(6, 50, 3, 4);
  const Eigen::VectorXd theta = random_theta(2, 4);
  const Eigen::MatrixXd sums = group_gradient_sums(theta, data);
  CHECK(sums.rows() == 4);
  const Eigen::VectorXd total = sums.colwise().sum().transpose() / static_cast<double>(data.size());
  const Eigen::VectorXd g =
      logistic_gradient(theta, data, Eigen::VectorXd::Ones(data.size()), PenaltySpec::none());
  CHECK((total - g).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("accuracy by group thresholds the linear predictor at zero") {
  Eigen::MatrixXd x(4, 1);
  x << -1, 1, -1, 1;
  Eigen::VectorXd y(4);
  y << 0, 1, 1, 1;
  const GroupedDataset data(x, y, {1, 1, 2, 2}, 3);
  Eigen::VectorXd theta(2);
  theta << 0.0, 1.0;
  const auto acc = accuracy_by_group(theta, data);
  CHECK(*acc[0] == 1.0);
  CHECK(*acc[1] == 0.5);
  CHECK(!acc[2].has_value());
}

TEST_CASE("SUBG relaxation equals exhaustive subsample enumeration") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 30; ++rep) {
    const int G = 2 + rep % 3;
    std::vector<int> groups;
    std::vector<int> ng(static_cast<std::size_t>(G));
    for (int g = 1; g <= G; ++g) {
      ng[static_cast<std::size_t>(g - 1)] = 1 + static_cast<int>(rng() % 6);
      for (int k = 0; k < ng[static_cast<std::size_t>(g - 1)]; ++k) groups.push_back(g);
    }
    const auto n = static_cast<Index>(groups.size());
    std::normal_distribution<double> z;
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd y(n);
    for (Index i = 0; i < n; ++i) {
      x(i, 0) = z(rng);
      x(i, 1) = z(rng);
      y[i] = static_cast<double>(rng() % 2);
    }
    const GroupedDataset data(x, y, groups, G);
    // Integral fractions k_g / n_g with the largest group kept whole.
    Eigen::VectorXd v(G);
    std::vector<int> counts(static_cast<std::size_t>(G));
    const int big = static_cast<int>(std::max_element(ng.begin(), ng.end()) - ng.begin());
    for (int g = 0; g < G; ++g) {
      const int k = g == big ? ng[static_cast<std::size_t>(g)]
                             : static_cast<int>(rng() % (ng[static_cast<std::size_t>(g)] + 1));
      counts[static_cast<std::size_t>(g)] = k;
      v[g] = static_cast<double>(k) / ng[static_cast<std::size_t>(g)];
    }
    const Eigen::VectorXd theta = random_theta(static_cast<std::uint64_t>(rep), 3);
    const double brute = oracle::subg_enumerated_loss(logistic_losses(theta, data), groups, counts);
    const SubsampleFractions frac(v);
    CHECK(std::abs(subg_expected_loss(theta, data, frac) - brute) <= 1e-12);
    // The training weights express the same objective.
    CHECK(std::abs(weighted_logistic_loss(theta, data, subg_training_weights(data, frac),
                                          PenaltySpec::none()) -
                   brute) <= 1e-12);
  }
}

TEST_CASE("SUBG sample size rounds each group up") {
  const GroupedDataset data(Eigen::MatrixXd::Zero(7, 1), Eigen::VectorXd::Zero(7),
                            {1, 1, 1, 2, 2, 2, 2}, 2);
  CHECK(subg_sample_size(data, SubsampleFractions((Eigen::VectorXd(2) << 0.5, 1.0).finished())) ==
        6);
  CHECK(subg_sample_size(data, SubsampleFractions((Eigen::VectorXd(2) << 1.0, 0.0).finished())) ==
        3);
}

TEST_CASE("DFR subsamples") {
  const auto data = oracle::random_logistic_problem(2, 200, 3, 4, 20);
  const SubsampleFractions small((Eigen::VectorXd(4) << 0.2, 0.5, 1.0, 0.3).finished());
  const SubsampleFractions large((Eigen::VectorXd(4) << 0.4, 0.6, 1.0, 0.3).finished());

  SUBCASE("per-group counts and determinism") {
    const auto rows = dfr_member_rows(data, small, 11, 0);
    CHECK(std::is_sorted(rows.begin(), rows.end()));
    const GroupedDataset sub = data.subset(rows);
    for (int g = 1; g <= 4; ++g) {
      CHECK(sub.group_count(g) ==
            static_cast<Index>(std::ceil(small[g - 1] * data.group_count(g) - 1e-9)));
    }
    CHECK(rows == dfr_member_rows(data, small, 11, 0));
    CHECK(rows != dfr_member_rows(data, small, 11, 1));
  }
  SUBCASE("larger fractions give nested subsamples") {
    const auto a = dfr_member_rows(data, small, 3, 2);
    const auto b = dfr_member_rows(data, large, 3, 2);
    CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  }
  SUBCASE("ensemble coefficients are the member average") {
    const auto ens = dfr_ensemble(data, small, 4, PenaltySpec::ridge(0.01), {}, 5);
    REQUIRE(ens.members.size() == 4);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
    for (const auto& m : ens.members) mean += m.fit.theta / 4.0;
    CHECK((ens.theta - mean).lpNorm<Eigen::Infinity>() < 1e-15);
    const auto again = dfr_ensemble_fit(data, small, 4, PenaltySpec::ridge(0.01), {}, 5);
    CHECK((again - ens.theta).lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("unit fractions use every row") {
    const SubsampleFractions all(Eigen::VectorXd::Ones(4));
    CHECK(dfr_member_rows(data, all, 1, 0).size() == static_cast<std::size_t>(data.size()));
  }
}

}  // TEST_SUITE
