#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "optweights/core.hpp"
#include "optweights/estimators.hpp"
#include "optweights/hypergrad.hpp"

namespace optw {

struct BilevelConfig {
  double learning_rate = 0.1;
  double momentum = 0.5;
  /// Number of weight updates. Zero evaluates the initial weights only.
  int max_steps = 100;
  double q_learning_rate = 0.1;
  double damping = 1e-6;
  PenaltySpec penalty = PenaltySpec::ridge(1e-3);
  SolverConfig solver;
  std::uint64_t seed = 0;
  /// Lets SUBG fractions reach zero instead of flooring at 1 / max_g n_g.
  bool allow_zero_fractions = false;
  int max_resplits = 10;
  bool stratified_split = false;

  void validate() const;
};

struct TraceRecord {
  int step = 0;
  Eigen::VectorXd weights;  // p or v after `step` updates
  Eigen::VectorXd q;        // GDRO/JTT loss weights in force at this step; empty otherwise
  double objective = 0.0;   // selection objective
  double weighted_objective = 0.0;  // weighted validation loss used for the hypergradient
  Eigen::VectorXd hypergradient;    // at these weights; empty on the last step
  Eigen::VectorXd momentum;         // buffer that produced these weights
  int inner_iterations = 0;
  bool inner_converged = false;
  double damping_used = 0.0;
  double condition = 0.0;
};

struct BilevelResult {
  Eigen::VectorXd weights;  // selected p or v
  int selected_step = 0;
  ParameterVector theta;    // inner solution at the selected weights
  ParameterVector initial_theta;  // inner solution at the starting weights
  std::vector<TraceRecord> trace;
  SplitIndices split;
  int resplits = 0;
};

/// u' = gamma u + (1 - gamma) zeta; p' proportional to p exp(eta u').
std::pair<SimplexWeights, Eigen::VectorXd> exp_grad_step(const SimplexWeights& p,
                                                         const Eigen::VectorXd& zeta,
                                                         const Eigen::VectorXd& u_prev,
                                                         double eta, double gamma);

/// q' proportional to q exp(eta_q L_g).
SimplexWeights q_update(const SimplexWeights& q, const Eigen::VectorXd& group_losses,
                        double eta_q);

/// Index of the smallest objective; ties go to the earliest record.
std::size_t select_step(const std::vector<TraceRecord>& trace);

/// Random split with every group present in the validation half (and in the
/// training half when `need_train_groups`), retrying with fresh seeds.
SplitIndices covering_split(const GroupedDataset& data, Index n_train, std::uint64_t seed,
                            int max_resplits, bool stratified, bool need_train_groups,
                            int* attempts_used = nullptr);

/// Starting weights p_0 = p_test, which gives likelihood-ratio observation
/// weights.
SimplexWeights gw_erm_initial_weights(const ShiftSpec& shift);

BilevelResult optimize_gw_erm(const GroupedDataset& data, const ShiftSpec& shift, Index n_train,
                              const BilevelConfig& config);

/// Group-balancing fractions min_g n_g / n_g.
SubsampleFractions balancing_fractions(const GroupedDataset& train);

/// Smallest group, ties to the lowest label.
int smallest_group(const GroupedDataset& train);

BilevelResult optimize_subg(const GroupedDataset& data, const ShiftSpec& shift, Index n_train,
                            const BilevelConfig& config,
                            std::optional<int> pinned_group = std::nullopt);

struct DfrHypergradient {
  Eigen::VectorXd gradient;                 // mean of member gradients
  std::vector<Eigen::VectorXd> per_member;  // each divided by v
  double max_condition = 0.0;
};

/// Member hypergradients: the SUBG hypergradient of member k on its own
/// subsample at unit fractions, divided by v, with the outer gradient taken
/// at the ensemble average.
DfrHypergradient dfr_hypergradient(const DfrEnsemble& ensemble, const GroupedDataset& fit_data,
                                   const GroupedDataset& val, const Eigen::VectorXd& val_weights,
                                   const SubsampleFractions& v, const PenaltySpec& penalty,
                                   const HypergradOptions& options);

/// DFR fits on `fit_fraction` of the data and evaluates on the rest.
BilevelResult optimize_dfr(const GroupedDataset& data, const ShiftSpec& shift,
                           const BilevelConfig& config, int ensemble_size = 10,
                           double fit_fraction = 0.5,
                           std::optional<int> pinned_group = std::nullopt);

/// Per-observation weights omega_i = q_g n_val / n_g so that the weighted
/// validation loss equals sum_g q_g L_g.
Eigen::VectorXd group_loss_weights(const GroupedDataset& val, const Eigen::VectorXd& q);

/// Per-group mean validation losses; every group must be present.
Eigen::VectorXd group_losses(const ParameterVector& theta, const GroupedDataset& val);

BilevelResult optimize_gdro(const GroupedDataset& data, Index n_train,
                            const BilevelConfig& config);

struct JttConfig {
  std::vector<double> upweight_grid{1.0, 2.0, 5.0, 10.0, 25.0};
};

struct JttResult {
  BilevelResult run;
  std::vector<int> inferred_groups;  // per training row, 1..K
  int num_inferred_groups = 0;
  /// Cell (class, correct) per inferred group, 1-based: label 2 y + err + 1.
  std::vector<int> cell_of_group;
  std::vector<std::string> merges;
  double best_upweight = 1.0;
};

/// Inferred groups of the training half from the identification model's
/// errors: cells (class, correct/incorrect), empty cells merged away.
JttResult infer_jtt_groups(const GroupedDataset& train, const ParameterVector& identification);

JttResult optimize_jtt(const GroupedDataset& data, Index n_train, const BilevelConfig& config,
                       const JttConfig& jtt = {});

}  // namespace optw
