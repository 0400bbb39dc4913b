#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "optweights/error.hpp"

namespace optw {

using Index = Eigen::Index;

/// Estimated model coefficients. For logistic models entry 0 is the
/// intercept and entries 1..d multiply the feature columns; for WLS the
/// vector matches the design columns (which carry their own intercept).
using ParameterVector = Eigen::VectorXd;

inline constexpr double kConstructionSumTolerance = 1e-12;
inline constexpr double kArithmeticSumTolerance = 1e-9;

/**
 * Feature matrix, targets and 1-based group labels of n observations.
 *
 * Groups are dense integers 1..G. A group may be absent (n_g = 0) as long
 * as G covers it; this happens routinely when a small dataset is split.
 * The type is immutable after construction.
 */
class GroupedDataset {
 public:
  GroupedDataset(Eigen::MatrixXd features, Eigen::VectorXd targets,
                 std::vector<int> groups, int num_groups);

  /// Infers G as the largest label present.
  GroupedDataset(Eigen::MatrixXd features, Eigen::VectorXd targets,
                 std::vector<int> groups);

  Index size() const noexcept { return targets_.size(); }
  Index dim() const noexcept { return features_.cols(); }
  int num_groups() const noexcept { return num_groups_; }

  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const Eigen::VectorXd& targets() const noexcept { return targets_; }
  const std::vector<int>& groups() const noexcept { return groups_; }
  int group(Index i) const { return groups_[static_cast<std::size_t>(i)]; }

  /// n_g for g = 1..G, stored at position g - 1.
  const std::vector<Index>& group_counts() const noexcept { return counts_; }
  Index group_count(int g) const { return counts_[static_cast<std::size_t>(g - 1)]; }

  /// Row indices of group g in ascending order.
  std::vector<Index> rows_of_group(int g) const;

  /// New dataset made of the given rows (in the given order), same G.
  GroupedDataset subset(std::span<const Index> rows) const;

  /// Same observations with replaced group labels.
  GroupedDataset with_groups(std::vector<int> groups, int num_groups) const;

 private:
  Eigen::MatrixXd features_;
  Eigen::VectorXd targets_;
  std::vector<int> groups_;
  int num_groups_;
  std::vector<Index> counts_;
};

/// Marginal group probabilities under the training and test distributions.
class ShiftSpec {
 public:
  ShiftSpec(Eigen::VectorXd p_train, Eigen::VectorXd p_test);

  int num_groups() const noexcept { return static_cast<int>(p_train_.size()); }
  const Eigen::VectorXd& p_train() const noexcept { return p_train_; }
  const Eigen::VectorXd& p_test() const noexcept { return p_test_; }

 private:
  Eigen::VectorXd p_train_;
  Eigen::VectorXd p_test_;
};

/// r_g = p_te(g) / p_tr(g).
class LikelihoodRatios {
 public:
  explicit LikelihoodRatios(Eigen::VectorXd r);
  const Eigen::VectorXd& values() const noexcept { return r_; }
  double operator[](int g_zero_based) const { return r_[g_zero_based]; }
  int num_groups() const noexcept { return static_cast<int>(r_.size()); }

 private:
  Eigen::VectorXd r_;
};

/// Group weights on the probability simplex.
class SimplexWeights {
 public:
  explicit SimplexWeights(Eigen::VectorXd p);
  static SimplexWeights uniform(int num_groups);

  const Eigen::VectorXd& values() const noexcept { return p_; }
  double operator[](int g_zero_based) const { return p_[g_zero_based]; }
  int num_groups() const noexcept { return static_cast<int>(p_.size()); }

 private:
  Eigen::VectorXd p_;
};

/// SUBG subsample fractions: 0 <= v_g <= 1 with max_g v_g = 1.
class SubsampleFractions {
 public:
  explicit SubsampleFractions(Eigen::VectorXd v);

  const Eigen::VectorXd& values() const noexcept { return v_; }
  double operator[](int g_zero_based) const { return v_[g_zero_based]; }
  int num_groups() const noexcept { return static_cast<int>(v_.size()); }

 private:
  Eigen::VectorXd v_;
};

LikelihoodRatios likelihood_ratios(const ShiftSpec& shift);

SimplexWeights normalize_simplex(const Eigen::VectorXd& raw);

/// w_i = p_{g_i} / p_tr(g_i).
Eigen::VectorXd per_observation_weights(const SimplexWeights& p, const ShiftSpec& shift,
                                        std::span<const int> groups);

/// Empirical group frequencies n_g / n.
Eigen::VectorXd group_frequencies(const GroupedDataset& data);

struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> val;
};

/// Uniform random partition into n_train training rows and n - n_train
/// validation rows. With `stratified`, each group is split in proportion
/// to its size (largest-remainder rounding).
SplitIndices split_indices(const GroupedDataset& data, Index n_train, std::uint64_t seed,
                           bool stratified = false);

std::pair<GroupedDataset, GroupedDataset> split_train_val(const GroupedDataset& data,
                                                          Index n_train, std::uint64_t seed,
                                                          bool stratified = false);

/// Deterministic child seed for stream `index` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace optw
