#include "optweights/synthetic.hpp"

#include <cmath>
#include <string>

namespace optw {

void SyntheticShiftSpec::validate() const {
  require(n >= 4, ErrorKind::InvalidArgument, "synthetic: n must be >= 4");
  require(d >= 2, ErrorKind::InvalidArgument, "synthetic: d must be >= 2");
  require(core_dims >= 0 && core_columns() >= 1 && core_columns() < d,
          ErrorKind::InvalidArgument, "synthetic: need at least one core and one spurious column");
  require(minority_fraction > 0.0 && minority_fraction < 0.5, ErrorKind::InvalidArgument,
          "synthetic: minority_fraction must lie in (0, 0.5)");
  require(class_balance > minority_fraction && class_balance < 1.0 - minority_fraction,
          ErrorKind::InvalidArgument,
          "synthetic: class_balance must leave room for the minority cells");
  require(std::isfinite(spurious_strength) && std::isfinite(core_strength),
          ErrorKind::InvalidArgument, "synthetic: strengths must be finite");
  require(std::isfinite(noise_sd) && noise_sd > 0.0, ErrorKind::InvalidArgument,
          "synthetic: noise_sd must be > 0");
}

Eigen::VectorXd SyntheticShiftSpec::cell_probabilities() const {
  Eigen::VectorXd p(4);
  p << 1.0 - class_balance - minority_fraction,  // y = 0, a = 0
      minority_fraction,                          // y = 0, a = 1
      minority_fraction,                          // y = 1, a = 0
      class_balance - minority_fraction;          // y = 1, a = 1
  return p;
}

LabeledPoint sample_group(const SyntheticShiftSpec& spec, int g, std::mt19937_64& rng) {
  require(g >= 1 && g <= 4, ErrorKind::InvalidArgument, "synthetic: group must be 1..4");
  const int y = (g - 1) / 2;
  const int a = (g - 1) % 2;
  const Index kc = spec.core_columns();
  const Index ks = spec.d - kc;
  const double core_mean = (2.0 * y - 1.0) * spec.core_strength / std::sqrt(static_cast<double>(kc));
  const double spur_mean =
      (2.0 * a - 1.0) * spec.spurious_strength / std::sqrt(static_cast<double>(ks));
  std::normal_distribution<double> noise(0.0, spec.noise_sd);
  LabeledPoint pt;
  pt.y = y;
  pt.x.resize(spec.d);
  for (Index j = 0; j < spec.d; ++j) pt.x[j] = (j < kc ? core_mean : spur_mean) + noise(rng);
  return pt;
}

SyntheticData generate_spurious(const SyntheticShiftSpec& spec) {
  spec.validate();
  const Eigen::VectorXd probs = spec.cell_probabilities();
  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<int> pick(probs.data(), probs.data() + probs.size());
  Eigen::MatrixXd x(spec.n, spec.d);
  Eigen::VectorXd y(spec.n);
  std::vector<int> groups(static_cast<std::size_t>(spec.n));
  for (Index i = 0; i < spec.n; ++i) {
    const int g = pick(rng) + 1;
    const LabeledPoint pt = sample_group(spec, g, rng);
    x.row(i) = pt.x.transpose();
    y[i] = pt.y;
    groups[static_cast<std::size_t>(i)] = g;
  }
  GroupedDataset train(std::move(x), std::move(y), std::move(groups), 4);
  for (int g = 1; g <= 4; ++g) {
    require(train.group_count(g) > 0, ErrorKind::SizeError,
            "synthetic: cell " + std::to_string(g) + " drew no observations; increase n");
  }
  return {std::move(train), ShiftSpec(probs, Eigen::VectorXd::Constant(4, 0.25))};
}

GroupedDataset generate_test_set(const SyntheticShiftSpec& spec, Index per_group,
                                 std::uint64_t seed) {
  spec.validate();
  require(per_group >= 1, ErrorKind::InvalidArgument, "synthetic: per_group must be >= 1");
  std::mt19937_64 rng(seed);
  const Index n = 4 * per_group;
  Eigen::MatrixXd x(n, spec.d);
  Eigen::VectorXd y(n);
  std::vector<int> groups(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int g = static_cast<int>(i / per_group) + 1;
    const LabeledPoint pt = sample_group(spec, g, rng);
    x.row(i) = pt.x.transpose();
    y[i] = pt.y;
    groups[static_cast<std::size_t>(i)] = g;
  }
  return GroupedDataset(std::move(x), std::move(y), std::move(groups), 4);
}

}  // namespace optw
