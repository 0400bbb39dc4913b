#include "optweights/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace optw {

std::string_view kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::SupportViolation: return "SupportViolation";
    case ErrorKind::DegenerateWeights: return "DegenerateWeights";
    case ErrorKind::SizeError: return "SizeError";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::SingularDesign: return "SingularDesign";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::SeparableData: return "SeparableData";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::IllConditioned: return "IllConditioned";
    case ErrorKind::StalenessError: return "StalenessError";
    case ErrorKind::GroupCoverage: return "GroupCoverage";
    case ErrorKind::EmptyInferredGroup: return "EmptyInferredGroup";
    case ErrorKind::AllGroupsEmpty: return "AllGroupsEmpty";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::ValueError: return "ValueError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

bool is_numerical(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::SingularDesign:
    case ErrorKind::NotConverged:
    case ErrorKind::SeparableData:
    case ErrorKind::IllConditioned:
    case ErrorKind::StalenessError:
      return true;
    default:
      return false;
  }
}

namespace {

void check_probability_vector(const Eigen::VectorXd& p, double tolerance, const char* what,
                              ErrorKind kind) {
  require(p.size() >= 1, kind, std::string(what) + ": empty vector");
  for (Index g = 0; g < p.size(); ++g) {
    require(std::isfinite(p[g]) && p[g] >= 0.0, kind,
            std::string(what) + ": entries must be finite and nonnegative");
  }
  require(std::abs(p.sum() - 1.0) <= tolerance, kind,
          std::string(what) + ": entries must sum to 1 (got " + std::to_string(p.sum()) + ")");
}

std::vector<Index> count_groups(const std::vector<int>& groups, int num_groups) {
  std::vector<Index> counts(static_cast<std::size_t>(num_groups), 0);
  for (int g : groups) ++counts[static_cast<std::size_t>(g - 1)];
  return counts;
}

int max_label(const std::vector<int>& groups) {
  return groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end());
}

}  // namespace

GroupedDataset::GroupedDataset(Eigen::MatrixXd features, Eigen::VectorXd targets,
                               std::vector<int> groups, int num_groups)
    : features_(std::move(features)),
      targets_(std::move(targets)),
      groups_(std::move(groups)),
      num_groups_(num_groups) {
  const Index n = targets_.size();
  require(n >= 1, ErrorKind::SizeError, "GroupedDataset: need at least one observation");
  require(features_.rows() == n && static_cast<Index>(groups_.size()) == n,
          ErrorKind::SizeError, "GroupedDataset: features, targets and groups differ in length");
  require(features_.cols() >= 1, ErrorKind::SizeError, "GroupedDataset: need d >= 1");
  require(num_groups_ >= 1, ErrorKind::InvalidArgument, "GroupedDataset: need G >= 1");
  for (int g : groups_) {
    require(g >= 1 && g <= num_groups_, ErrorKind::ValueError,
            "GroupedDataset: group label " + std::to_string(g) + " outside 1.." +
                std::to_string(num_groups_));
  }
  require(features_.allFinite() && targets_.allFinite(), ErrorKind::ValueError,
          "GroupedDataset: non-finite entries");
  counts_ = count_groups(groups_, num_groups_);
}

GroupedDataset::GroupedDataset(Eigen::MatrixXd features, Eigen::VectorXd targets,
                               std::vector<int> groups)
    : GroupedDataset(std::move(features), std::move(targets), groups,
                     std::max(1, max_label(groups))) {}

std::vector<Index> GroupedDataset::rows_of_group(int g) const {
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(group_count(g)));
  for (Index i = 0; i < size(); ++i) {
    if (groups_[static_cast<std::size_t>(i)] == g) rows.push_back(i);
  }
  return rows;
}

GroupedDataset GroupedDataset::subset(std::span<const Index> rows) const {
  const auto m = static_cast<Index>(rows.size());
  Eigen::MatrixXd x(m, dim());
  Eigen::VectorXd y(m);
  std::vector<int> g(rows.size());
  for (Index k = 0; k < m; ++k) {
    const Index i = rows[static_cast<std::size_t>(k)];
    require(i >= 0 && i < size(), ErrorKind::InvalidArgument, "subset: row index out of range");
    x.row(k) = features_.row(i);
    y[k] = targets_[i];
    g[static_cast<std::size_t>(k)] = groups_[static_cast<std::size_t>(i)];
  }
  return GroupedDataset(std::move(x), std::move(y), std::move(g), num_groups_);
}

GroupedDataset GroupedDataset::with_groups(std::vector<int> groups, int num_groups) const {
  return GroupedDataset(features_, targets_, std::move(groups), num_groups);
}

ShiftSpec::ShiftSpec(Eigen::VectorXd p_train, Eigen::VectorXd p_test)
    : p_train_(std::move(p_train)), p_test_(std::move(p_test)) {
  require(p_train_.size() == p_test_.size(), ErrorKind::InvalidArgument,
          "ShiftSpec: p_train and p_test differ in length");
  check_probability_vector(p_train_, kConstructionSumTolerance, "ShiftSpec.p_train",
                           ErrorKind::InvalidArgument);
  check_probability_vector(p_test_, kConstructionSumTolerance, "ShiftSpec.p_test",
                           ErrorKind::InvalidArgument);
  for (Index g = 0; g < p_train_.size(); ++g) {
    require(!(p_train_[g] == 0.0 && p_test_[g] > 0.0), ErrorKind::SupportViolation,
            "ShiftSpec: group " + std::to_string(g + 1) +
                " has zero training probability but positive test probability");
  }
}

LikelihoodRatios::LikelihoodRatios(Eigen::VectorXd r) : r_(std::move(r)) {
  for (Index g = 0; g < r_.size(); ++g) {
    require(std::isfinite(r_[g]) && r_[g] >= 0.0, ErrorKind::InvalidArgument,
            "LikelihoodRatios: entries must be finite and nonnegative");
  }
}

SimplexWeights::SimplexWeights(Eigen::VectorXd p) : p_(std::move(p)) {
  check_probability_vector(p_, kArithmeticSumTolerance, "SimplexWeights",
                           ErrorKind::DegenerateWeights);
}

SimplexWeights SimplexWeights::uniform(int num_groups) {
  require(num_groups >= 1, ErrorKind::InvalidArgument, "uniform: need G >= 1");
  return SimplexWeights(Eigen::VectorXd::Constant(num_groups, 1.0 / num_groups));
}

SubsampleFractions::SubsampleFractions(Eigen::VectorXd v) : v_(std::move(v)) {
  require(v_.size() >= 1, ErrorKind::InvalidArgument, "SubsampleFractions: empty vector");
  for (Index g = 0; g < v_.size(); ++g) {
    require(std::isfinite(v_[g]) && v_[g] >= 0.0 && v_[g] <= 1.0, ErrorKind::InvalidArgument,
            "SubsampleFractions: entries must lie in [0, 1]");
  }
  require(v_.maxCoeff() == 1.0, ErrorKind::InvalidArgument,
          "SubsampleFractions: at least one fraction must equal 1");
}

LikelihoodRatios likelihood_ratios(const ShiftSpec& shift) {
  const Index G = shift.num_groups();
  Eigen::VectorXd r(G);
  for (Index g = 0; g < G; ++g) {
    const double tr = shift.p_train()[g];
    const double te = shift.p_test()[g];
    if (tr == 0.0) {
      require(te == 0.0, ErrorKind::SupportViolation,
              "likelihood_ratios: zero training support for group " + std::to_string(g + 1));
      r[g] = 0.0;
    } else {
      r[g] = te / tr;
    }
  }
  return LikelihoodRatios(std::move(r));
}

SimplexWeights normalize_simplex(const Eigen::VectorXd& raw) {
  require(raw.size() >= 1, ErrorKind::DegenerateWeights, "normalize_simplex: empty vector");
  for (Index g = 0; g < raw.size(); ++g) {
    require(std::isfinite(raw[g]) && raw[g] >= 0.0, ErrorKind::DegenerateWeights,
            "normalize_simplex: entries must be finite and nonnegative");
  }
  const double total = raw.sum();
  require(total > 0.0, ErrorKind::DegenerateWeights, "normalize_simplex: all entries are zero");
  return SimplexWeights(raw / total);
}

Eigen::VectorXd per_observation_weights(const SimplexWeights& p, const ShiftSpec& shift,
                                        std::span<const int> groups) {
  require(p.num_groups() == shift.num_groups(), ErrorKind::InvalidArgument,
          "per_observation_weights: p and shift have different G");
  Eigen::VectorXd w(static_cast<Index>(groups.size()));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const int g = groups[i];
    require(g >= 1 && g <= p.num_groups(), ErrorKind::ValueError,
            "per_observation_weights: group label out of range");
    const double tr = shift.p_train()[g - 1];
    require(tr > 0.0, ErrorKind::SupportViolation,
            "per_observation_weights: group " + std::to_string(g) + " has zero training mass");
    w[static_cast<Index>(i)] = p[g - 1] / tr;
  }
  return w;
}

Eigen::VectorXd group_frequencies(const GroupedDataset& data) {
  Eigen::VectorXd f(data.num_groups());
  for (int g = 1; g <= data.num_groups(); ++g) {
    f[g - 1] = static_cast<double>(data.group_count(g)) / static_cast<double>(data.size());
  }
  return f;
}

SplitIndices split_indices(const GroupedDataset& data, Index n_train, std::uint64_t seed,
                           bool stratified) {
  const Index n = data.size();
  require(n_train >= 1 && n_train < n, ErrorKind::SizeError,
          "split_train_val: need 1 <= n_train < n (n_train = " + std::to_string(n_train) +
              ", n = " + std::to_string(n) + ")");
  std::mt19937_64 rng(seed);
  SplitIndices out;

  if (!stratified) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    out.train.assign(order.begin(), order.begin() + n_train);
    out.val.assign(order.begin() + n_train, order.end());
  } else {
    // Largest-remainder allocation of n_train across groups.
    const int G = data.num_groups();
    std::vector<Index> quota(static_cast<std::size_t>(G));
    std::vector<std::pair<double, int>> remainders;
    Index assigned = 0;
    for (int g = 1; g <= G; ++g) {
      const double exact = static_cast<double>(n_train) * static_cast<double>(data.group_count(g)) /
                           static_cast<double>(n);
      quota[static_cast<std::size_t>(g - 1)] = static_cast<Index>(std::floor(exact));
      assigned += quota[static_cast<std::size_t>(g - 1)];
      remainders.emplace_back(exact - std::floor(exact), g);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n_train && k < remainders.size(); ++k, ++assigned) {
      ++quota[static_cast<std::size_t>(remainders[k].second - 1)];
    }
    for (int g = 1; g <= G; ++g) {
      auto rows = data.rows_of_group(g);
      std::shuffle(rows.begin(), rows.end(), rng);
      const auto q = static_cast<std::size_t>(quota[static_cast<std::size_t>(g - 1)]);
      out.train.insert(out.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(q));
      out.val.insert(out.val.end(), rows.begin() + static_cast<std::ptrdiff_t>(q), rows.end());
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

std::pair<GroupedDataset, GroupedDataset> split_train_val(const GroupedDataset& data,
                                                          Index n_train, std::uint64_t seed,
                                                          bool stratified) {
  const auto idx = split_indices(data, n_train, seed, stratified);
  return {data.subset(idx.train), data.subset(idx.val)};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over the pair
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace optw
