#pragma once

#include <cstdint>
#include <random>

#include "optweights/core.hpp"
#include "optweights/metrics.hpp"

namespace optw {

/**
 * Binary classification with a spurious attribute a. Groups are the four
 * (y, a) cells, label 2y + a + 1. Features are a core block whose mean
 * moves with y, a spurious block whose mean moves with a, and isotropic
 * noise. The two cells with y != a are the minority cells.
 */
struct SyntheticShiftSpec {
  Index n = 2000;
  Index d = 20;
  double class_balance = 0.5;      // P(y = 1) in training
  double spurious_strength = 0.5;  // mean offset of the spurious block
  double core_strength = 1.0;      // mean offset of the core block
  double minority_fraction = 0.02; // training probability of each minority cell
  double noise_sd = 1.0;
  Index core_dims = 0;             // 0 means d / 2
  std::uint64_t seed = 0;

  void validate() const;
  Index core_columns() const noexcept { return core_dims > 0 ? core_dims : d / 2; }
  /// Training cell probabilities indexed by group - 1.
  Eigen::VectorXd cell_probabilities() const;
};

struct SyntheticData {
  GroupedDataset train;
  ShiftSpec shift;  // p_test uniform over the four cells
};

/// Features and target of one observation from group g.
LabeledPoint sample_group(const SyntheticShiftSpec& spec, int g, std::mt19937_64& rng);

SyntheticData generate_spurious(const SyntheticShiftSpec& spec);

/// Group-balanced test set with `per_group` rows per cell.
GroupedDataset generate_test_set(const SyntheticShiftSpec& spec, Index per_group,
                                 std::uint64_t seed);

}  // namespace optw
