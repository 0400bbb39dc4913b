#include "optweights/bilevel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace optw {

void BilevelConfig::validate() const {
  require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorKind::InvalidArgument,
          "bilevel: learning rate must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::InvalidArgument,
          "bilevel: momentum must lie in [0, 1)");
  require(max_steps >= 0, ErrorKind::InvalidArgument, "bilevel: max_steps must be >= 0");
  require(std::isfinite(q_learning_rate) && q_learning_rate > 0.0, ErrorKind::InvalidArgument,
          "bilevel: q learning rate must be > 0");
  require(std::isfinite(damping) && damping >= 0.0, ErrorKind::InvalidArgument,
          "bilevel: damping must be >= 0");
  require(max_resplits >= 0, ErrorKind::InvalidArgument, "bilevel: max_resplits must be >= 0");
  penalty.validate();
  require(penalty.twice_differentiable(), ErrorKind::InvalidArgument,
          "bilevel: weight optimization needs a twice-differentiable penalty "
          "(ridge or smoothed-l1)");
  solver.validate();
}

std::pair<SimplexWeights, Eigen::VectorXd> exp_grad_step(const SimplexWeights& p,
                                                         const Eigen::VectorXd& zeta,
                                                         const Eigen::VectorXd& u_prev,
                                                         double eta, double gamma) {
  const Index G = p.num_groups();
  require(zeta.size() == G && u_prev.size() == G, ErrorKind::SizeError,
          "exp_grad_step: vector lengths differ");
  require(zeta.allFinite() && u_prev.allFinite(), ErrorKind::InvalidArgument,
          "exp_grad_step: non-finite gradient or momentum");
  require((p.values().array() > 0.0).all(), ErrorKind::DegenerateWeights,
          "exp_grad_step: weights must be strictly positive");
  const Eigen::VectorXd u = gamma * u_prev + (1.0 - gamma) * zeta;
  Eigen::ArrayXd logp = p.values().array().log() + eta * u.array();
  logp -= logp.maxCoeff();
  const Eigen::ArrayXd e = logp.exp();
  return {SimplexWeights(e.matrix() / e.sum()), u};
}

SimplexWeights q_update(const SimplexWeights& q, const Eigen::VectorXd& group_losses,
                        double eta_q) {
  require(group_losses.size() == q.num_groups(), ErrorKind::SizeError,
          "q_update: loss vector length differs from G");
  require(group_losses.allFinite(), ErrorKind::InvalidArgument, "q_update: non-finite losses");
  Eigen::ArrayXd logq = q.values().array().log() + eta_q * group_losses.array();
  logq -= logq.maxCoeff();
  const Eigen::ArrayXd e = logq.exp();
  return SimplexWeights(e.matrix() / e.sum());
}

std::size_t select_step(const std::vector<TraceRecord>& trace) {
  require(!trace.empty(), ErrorKind::InvalidArgument, "select_step: empty trace");
  std::size_t best = 0;
  for (std::size_t k = 1; k < trace.size(); ++k) {
    if (trace[k].objective < trace[best].objective) best = k;
  }
  return best;
}

SplitIndices covering_split(const GroupedDataset& data, Index n_train, std::uint64_t seed,
                            int max_resplits, bool stratified, bool need_train_groups,
                            int* attempts_used) {
  const int G = data.num_groups();
  for (int attempt = 0; attempt <= max_resplits; ++attempt) {
    SplitIndices s =
        split_indices(data, n_train, derive_seed(seed, static_cast<std::uint64_t>(attempt)),
                      stratified);
    std::vector<char> in_train(static_cast<std::size_t>(G), 0), in_val(in_train);
    for (Index i : s.train) in_train[static_cast<std::size_t>(data.group(i) - 1)] = 1;
    for (Index i : s.val) in_val[static_cast<std::size_t>(data.group(i) - 1)] = 1;
    bool ok = true;
    for (int g = 0; g < G; ++g) {
      if (!in_val[static_cast<std::size_t>(g)] ||
          (need_train_groups && !in_train[static_cast<std::size_t>(g)])) {
        ok = false;
      }
    }
    if (ok) {
      if (attempts_used) *attempts_used = attempt;
      return s;
    }
  }
  fail(ErrorKind::GroupCoverage, "split: some group is missing from a split half after " +
                                     std::to_string(max_resplits + 1) + " attempts");
}

namespace {

HypergradOptions hypergrad_options(const BilevelConfig& config) {
  HypergradOptions o;
  o.damping = config.damping;
  o.stationarity_tolerance = config.solver.gradient_tolerance;
  return o;
}

struct Evaluation {
  double objective = 0.0;
  double weighted_objective = 0.0;
  Eigen::VectorXd group_losses;  // for the q update; empty if unused
  std::optional<HypergradReport> report;
};

using SimplexFit =
    std::function<FitResult(const SimplexWeights&, const std::optional<ParameterVector>&)>;
using SimplexEval = std::function<Evaluation(const ParameterVector&, const SimplexWeights&,
                                             const Eigen::VectorXd& q, bool need_gradient)>;

BilevelResult run_simplex_loop(const SimplexWeights& p0, const Eigen::VectorXd& q0,
                               const BilevelConfig& config, const SimplexFit& fit,
                               const SimplexEval& evaluate) {
  BilevelResult out;
  SimplexWeights p = p0;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(p0.num_groups());
  const bool use_q = q0.size() > 0;
  std::optional<SimplexWeights> q;
  if (use_q) q = SimplexWeights(q0);
  std::optional<ParameterVector> warm;
  std::vector<ParameterVector> thetas;

  for (int t = 0; t <= config.max_steps; ++t) {
    const FitResult f = fit(p, warm);
    const bool last = t == config.max_steps;
    const Evaluation ev =
        evaluate(f.theta, p, use_q ? q->values() : Eigen::VectorXd(), !last);
    TraceRecord rec;
    rec.step = t;
    rec.weights = p.values();
    if (use_q) rec.q = q->values();
    rec.objective = ev.objective;
    rec.weighted_objective = ev.weighted_objective;
    rec.momentum = u;
    rec.inner_iterations = f.iterations;
    rec.inner_converged = f.converged;
    if (ev.report) {
      rec.hypergradient = ev.report->gradient;
      rec.damping_used = ev.report->damping_used;
      rec.condition = ev.report->hessian_condition_estimate;
    }
    out.trace.push_back(rec);
    thetas.push_back(f.theta);
    if (last) break;

    auto [p_next, u_next] =
        exp_grad_step(p, -ev.report->gradient, u, config.learning_rate, config.momentum);
    p = std::move(p_next);
    u = std::move(u_next);
    if (use_q) q = q_update(*q, ev.group_losses, config.q_learning_rate);
    warm = f.theta;
  }
  const std::size_t best = select_step(out.trace);
  out.selected_step = static_cast<int>(best);
  out.weights = out.trace[best].weights;
  out.theta = thetas[best];
  out.initial_theta = thetas.front();
  return out;
}

struct FractionFitState {
  ParameterVector theta;
  int iterations = 0;
  bool converged = false;
};

using FractionFit = std::function<FractionFitState(const SubsampleFractions&)>;
using FractionEval = std::function<Evaluation(const ParameterVector&, const SubsampleFractions&,
                                              bool need_gradient)>;

BilevelResult run_fraction_loop(const SubsampleFractions& v0, int pinned, double v_min,
                                const BilevelConfig& config, const FractionFit& fit,
                                const FractionEval& evaluate) {
  BilevelResult out;
  Eigen::VectorXd v = v0.values();
  const Index G = v.size();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(G);
  std::vector<ParameterVector> thetas;

  for (int t = 0; t <= config.max_steps; ++t) {
    const SubsampleFractions fractions(v);
    const FractionFitState f = fit(fractions);
    const bool last = t == config.max_steps;
    const Evaluation ev = evaluate(f.theta, fractions, !last);
    TraceRecord rec;
    rec.step = t;
    rec.weights = v;
    rec.objective = ev.objective;
    rec.weighted_objective = ev.weighted_objective;
    rec.momentum = u;
    rec.inner_iterations = f.iterations;
    rec.inner_converged = f.converged;
    if (ev.report) {
      rec.hypergradient = ev.report->gradient;
      rec.damping_used = ev.report->damping_used;
      rec.condition = ev.report->hessian_condition_estimate;
    }
    out.trace.push_back(rec);
    thetas.push_back(f.theta);
    if (last) break;

    Eigen::VectorXd zeta = -ev.report->gradient;
    zeta[pinned - 1] = 0.0;
    require(zeta.allFinite(), ErrorKind::IllConditioned, "fraction update: non-finite gradient");
    u = config.momentum * u + (1.0 - config.momentum) * zeta;
    for (Index g = 0; g < G; ++g) {
      if (g == pinned - 1) {
        v[g] = 1.0;
      } else if (v[g] > 0.0) {
        v[g] = std::clamp(v[g] * std::exp(config.learning_rate * u[g]), v_min, 1.0);
      }
    }
  }
  const std::size_t best = select_step(out.trace);
  out.selected_step = static_cast<int>(best);
  out.weights = out.trace[best].weights;
  out.theta = thetas[best];
  out.initial_theta = thetas.front();
  return out;
}

}  // namespace

SimplexWeights gw_erm_initial_weights(const ShiftSpec& shift) {
  return normalize_simplex(shift.p_test());
}

BilevelResult optimize_gw_erm(const GroupedDataset& data, const ShiftSpec& shift, Index n_train,
                              const BilevelConfig& config) {
  config.validate();
  require(shift.num_groups() == data.num_groups(), ErrorKind::InvalidArgument,
          "optimize_gw_erm: shift and data have different G");
  require((shift.p_test().array() > 0.0).all(), ErrorKind::InvalidArgument,
          "optimize_gw_erm: every group needs positive test probability");
  int attempts = 0;
  const SplitIndices split = covering_split(data, n_train, config.seed, config.max_resplits,
                                            config.stratified_split, true, &attempts);
  const GroupedDataset train = data.subset(split.train);
  const GroupedDataset val = data.subset(split.val);
  const Eigen::VectorXd val_weights = ratio_validation_weights(val, shift);
  const HypergradOptions hopts = hypergrad_options(config);

  auto fit = [&](const SimplexWeights& p, const std::optional<ParameterVector>& warm) {
    return logistic_fit(train, per_observation_weights(p, shift, train.groups()), config.penalty,
                        config.solver, warm);
  };
  auto evaluate = [&](const ParameterVector& theta, const SimplexWeights& p,
                      const Eigen::VectorXd&, bool need_gradient) {
    Evaluation ev;
    ev.objective = ev.weighted_objective = validation_loss(theta, val, val_weights);
    if (need_gradient) {
      ev.report = hypergradient_p(theta, train, val, val_weights, shift, p, config.penalty, hopts);
    }
    return ev;
  };
  BilevelResult out =
      run_simplex_loop(gw_erm_initial_weights(shift), Eigen::VectorXd(), config, fit, evaluate);
  out.split = split;
  out.resplits = attempts;
  return out;
}

SubsampleFractions balancing_fractions(const GroupedDataset& train) {
  Index smallest = train.size();
  for (int g = 1; g <= train.num_groups(); ++g) {
    require(train.group_count(g) > 0, ErrorKind::EmptyGroup,
            "balancing fractions: group " + std::to_string(g) + " is empty");
    smallest = std::min(smallest, train.group_count(g));
  }
  Eigen::VectorXd v(train.num_groups());
  for (int g = 1; g <= train.num_groups(); ++g) {
    v[g - 1] = static_cast<double>(smallest) / static_cast<double>(train.group_count(g));
  }
  // The smallest group gets exactly 1 even after rounding.
  v[smallest_group(train) - 1] = 1.0;
  return SubsampleFractions(v);
}

int smallest_group(const GroupedDataset& train) {
  int best = 1;
  for (int g = 2; g <= train.num_groups(); ++g) {
    if (train.group_count(g) < train.group_count(best)) best = g;
  }
  return best;
}

namespace {

double fraction_floor(const GroupedDataset& train, const BilevelConfig& config) {
  if (config.allow_zero_fractions) return 0.0;
  Index largest = 1;
  for (int g = 1; g <= train.num_groups(); ++g) largest = std::max(largest, train.group_count(g));
  return 1.0 / static_cast<double>(largest);
}

SubsampleFractions initial_fractions(const GroupedDataset& train, int pinned) {
  Eigen::VectorXd v = balancing_fractions(train).values();
  if (v[pinned - 1] != 1.0) {
    // Rescale so the pinned group sits at 1 and the rest stay in [0, 1].
    v /= v[pinned - 1];
    v = v.cwiseMin(1.0);
    v[pinned - 1] = 1.0;
  }
  return SubsampleFractions(v);
}

int resolve_pin(const GroupedDataset& train, std::optional<int> pinned_group) {
  const int pin = pinned_group.value_or(smallest_group(train));
  require(pin >= 1 && pin <= train.num_groups(), ErrorKind::InvalidArgument,
          "pinned group outside 1..G");
  return pin;
}

}  // namespace

BilevelResult optimize_subg(const GroupedDataset& data, const ShiftSpec& shift, Index n_train,
                            const BilevelConfig& config, std::optional<int> pinned_group) {
  config.validate();
  require(shift.num_groups() == data.num_groups(), ErrorKind::InvalidArgument,
          "optimize_subg: shift and data have different G");
  int attempts = 0;
  const SplitIndices split = covering_split(data, n_train, config.seed, config.max_resplits,
                                            config.stratified_split, true, &attempts);
  const GroupedDataset train = data.subset(split.train);
  const GroupedDataset val = data.subset(split.val);
  const Eigen::VectorXd val_weights = ratio_validation_weights(val, shift);
  const HypergradOptions hopts = hypergrad_options(config);
  const int pin = resolve_pin(train, pinned_group);

  std::optional<ParameterVector> warm;
  auto fit = [&](const SubsampleFractions& v) {
    const FitResult f = subg_fit(train, v, config.penalty, config.solver, warm);
    warm = f.theta;
    return FractionFitState{f.theta, f.iterations, f.converged};
  };
  auto evaluate = [&](const ParameterVector& theta, const SubsampleFractions& v,
                      bool need_gradient) {
    Evaluation ev;
    ev.objective = ev.weighted_objective = validation_loss(theta, val, val_weights);
    if (need_gradient) {
      ev.report = hypergradient_v(theta, train, val, val_weights, v, config.penalty, hopts);
    }
    return ev;
  };
  BilevelResult out = run_fraction_loop(initial_fractions(train, pin), pin,
                                        fraction_floor(train, config), config, fit, evaluate);
  out.split = split;
  out.resplits = attempts;
  return out;
}

DfrHypergradient dfr_hypergradient(const DfrEnsemble& ensemble, const GroupedDataset& fit_data,
                                   const GroupedDataset& val, const Eigen::VectorXd& val_weights,
                                   const SubsampleFractions& v, const PenaltySpec& penalty,
                                   const HypergradOptions& options) {
  require(!ensemble.members.empty(), ErrorKind::InvalidArgument, "DFR: empty ensemble");
  const Eigen::VectorXd val_grad =
      logistic_gradient(ensemble.theta, val, val_weights, PenaltySpec::none());
  const Index G = fit_data.num_groups();
  DfrHypergradient out;
  out.gradient = Eigen::VectorXd::Zero(G);
  for (const DfrMember& member : ensemble.members) {
    const GroupedDataset sub = fit_data.subset(member.rows);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(sub.size());
    const double stationarity = logistic_gradient(member.fit.theta, sub, ones, penalty).norm();
    require(stationarity <= 10.0 * options.stationarity_tolerance, ErrorKind::StalenessError,
            "DFR hypergradient: ensemble member is not stationary (gradient norm " +
                std::to_string(stationarity) + ")");
    // Unit fractions on the member's own subsample: m equals its size.
    const Eigen::MatrixXd cross =
        group_gradient_sums(member.fit.theta, sub) / static_cast<double>(sub.size());
    const Eigen::MatrixXd hess = logistic_hessian(member.fit.theta, sub, ones, penalty);
    const IftSolve solve =
        ift_parameter_jacobian(hess, cross, options.damping, options.max_condition);
    out.max_condition = std::max(out.max_condition, solve.condition_estimate);
    Eigen::VectorXd g = solve.jacobian * val_grad;
    for (Index k = 0; k < G; ++k) g[k] = v.values()[k] > 0.0 ? g[k] / v.values()[k] : 0.0;
    out.gradient += g;
    out.per_member.push_back(std::move(g));
  }
  out.gradient /= static_cast<double>(ensemble.members.size());
  return out;
}

BilevelResult optimize_dfr(const GroupedDataset& data, const ShiftSpec& shift,
                           const BilevelConfig& config, int ensemble_size, double fit_fraction,
                           std::optional<int> pinned_group) {
  config.validate();
  require(shift.num_groups() == data.num_groups(), ErrorKind::InvalidArgument,
          "optimize_dfr: shift and data have different G");
  require(ensemble_size >= 1, ErrorKind::InvalidArgument, "optimize_dfr: ensemble_size >= 1");
  require(fit_fraction > 0.0 && fit_fraction < 1.0, ErrorKind::InvalidArgument,
          "optimize_dfr: fit_fraction must lie in (0, 1)");
  const auto n_fit = static_cast<Index>(std::llround(fit_fraction * static_cast<double>(data.size())));
  int attempts = 0;
  const SplitIndices split = covering_split(data, n_fit, config.seed, config.max_resplits,
                                            config.stratified_split, true, &attempts);
  const GroupedDataset fit_data = data.subset(split.train);
  const GroupedDataset val = data.subset(split.val);
  const Eigen::VectorXd val_weights = ratio_validation_weights(val, shift);
  const HypergradOptions hopts = hypergrad_options(config);
  const int pin = resolve_pin(fit_data, pinned_group);
  const std::uint64_t ensemble_seed = derive_seed(config.seed, 1000);

  std::vector<ParameterVector> warm;
  std::optional<DfrEnsemble> current;
  auto fit = [&](const SubsampleFractions& v) {
    current = dfr_ensemble(fit_data, v, ensemble_size, config.penalty, config.solver,
                           ensemble_seed, warm.empty() ? nullptr : &warm);
    warm.clear();
    FractionFitState s{current->theta, 0, true};
    for (const auto& m : current->members) {
      warm.push_back(m.fit.theta);
      s.iterations = std::max(s.iterations, m.fit.iterations);
      s.converged = s.converged && m.fit.converged;
    }
    return s;
  };
  auto evaluate = [&](const ParameterVector& theta, const SubsampleFractions& v,
                      bool need_gradient) {
    Evaluation ev;
    ev.objective = ev.weighted_objective = validation_loss(theta, val, val_weights);
    if (need_gradient) {
      const DfrHypergradient h =
          dfr_hypergradient(*current, fit_data, val, val_weights, v, config.penalty, hopts);
      HypergradReport rep;
      rep.gradient = rep.free_gradient = h.gradient;
      rep.damping_used = hopts.damping;
      rep.hessian_condition_estimate = h.max_condition;
      ev.report = rep;
    }
    return ev;
  };
  BilevelResult out = run_fraction_loop(initial_fractions(fit_data, pin), pin,
                                        fraction_floor(fit_data, config), config, fit, evaluate);
  out.split = split;
  out.resplits = attempts;
  return out;
}

Eigen::VectorXd group_loss_weights(const GroupedDataset& val, const Eigen::VectorXd& q) {
  require(q.size() == val.num_groups(), ErrorKind::SizeError,
          "group loss weights: q length differs from G");
  Eigen::VectorXd w(val.size());
  for (Index i = 0; i < val.size(); ++i) {
    const int g = val.group(i);
    w[i] = q[g - 1] * static_cast<double>(val.size()) / static_cast<double>(val.group_count(g));
  }
  return w;
}

Eigen::VectorXd group_losses(const ParameterVector& theta, const GroupedDataset& val) {
  const auto means = group_mean_losses(theta, val);
  Eigen::VectorXd out(static_cast<Index>(means.size()));
  for (std::size_t g = 0; g < means.size(); ++g) {
    require(means[g].has_value(), ErrorKind::EmptyGroup,
            "group losses: validation group " + std::to_string(g + 1) + " is empty");
    out[static_cast<Index>(g)] = *means[g];
  }
  return out;
}

namespace {

// GDRO-style outer loop on `train` (whose labels index p) against the
// true validation groups.
BilevelResult run_worst_group_loop(const GroupedDataset& train, const GroupedDataset& val,
                                   const SimplexWeights& p0, const BilevelConfig& config) {
  const Eigen::VectorXd freq = group_frequencies(train);
  const ShiftSpec train_shift(freq, freq);
  const HypergradOptions hopts = hypergrad_options(config);
  auto fit = [&](const SimplexWeights& p, const std::optional<ParameterVector>& warm) {
    return logistic_fit(train, per_observation_weights(p, train_shift, train.groups()),
                        config.penalty, config.solver, warm);
  };
  auto evaluate = [&](const ParameterVector& theta, const SimplexWeights& p,
                      const Eigen::VectorXd& q, bool need_gradient) {
    Evaluation ev;
    ev.group_losses = group_losses(theta, val);
    ev.objective = ev.group_losses.maxCoeff();
    ev.weighted_objective = q.dot(ev.group_losses);
    if (need_gradient) {
      ev.report = hypergradient_p(theta, train, val, group_loss_weights(val, q), train_shift, p,
                                  config.penalty, hopts);
    }
    return ev;
  };
  const Eigen::VectorXd q0 =
      Eigen::VectorXd::Constant(val.num_groups(), 1.0 / val.num_groups());
  return run_simplex_loop(p0, q0, config, fit, evaluate);
}

}  // namespace

BilevelResult optimize_gdro(const GroupedDataset& data, Index n_train,
                            const BilevelConfig& config) {
  config.validate();
  int attempts = 0;
  const SplitIndices split = covering_split(data, n_train, config.seed, config.max_resplits,
                                            config.stratified_split, true, &attempts);
  const GroupedDataset train = data.subset(split.train);
  const GroupedDataset val = data.subset(split.val);
  BilevelResult out =
      run_worst_group_loop(train, val, SimplexWeights::uniform(data.num_groups()), config);
  out.split = split;
  out.resplits = attempts;
  return out;
}

JttResult infer_jtt_groups(const GroupedDataset& train, const ParameterVector& identification) {
  const Eigen::VectorXd eta = linear_predictor(identification, train);
  std::vector<int> cell(static_cast<std::size_t>(train.size()));
  std::array<Index, 4> counts{0, 0, 0, 0};
  for (Index i = 0; i < train.size(); ++i) {
    const double y = train.targets()[i];
    require(y == 0.0 || y == 1.0, ErrorKind::ValueError, "JTT: targets must be 0 or 1");
    const double pred = eta[i] >= 0.0 ? 1.0 : 0.0;
    const int c = 2 * static_cast<int>(y) + (pred == y ? 0 : 1) + 1;
    cell[static_cast<std::size_t>(i)] = c;
    ++counts[static_cast<std::size_t>(c - 1)];
  }
  JttResult out;
  std::array<int, 4> label{0, 0, 0, 0};
  for (int y = 0; y < 2; ++y) {
    const int correct = 2 * y + 1, wrong = 2 * y + 2;
    require(counts[static_cast<std::size_t>(correct - 1)] + counts[static_cast<std::size_t>(wrong - 1)] > 0,
            ErrorKind::EmptyInferredGroup,
            "JTT: class " + std::to_string(y) + " has no training rows");
    for (int c : {correct, wrong}) {
      if (counts[static_cast<std::size_t>(c - 1)] > 0) {
        out.cell_of_group.push_back(c);
        label[static_cast<std::size_t>(c - 1)] = static_cast<int>(out.cell_of_group.size());
      } else {
        out.merges.push_back("class " + std::to_string(y) + " " +
                             (c == correct ? "correct" : "incorrect") +
                             " cell is empty; merged into the other cell of the class");
      }
    }
  }
  out.num_inferred_groups = static_cast<int>(out.cell_of_group.size());
  out.inferred_groups.resize(cell.size());
  for (std::size_t i = 0; i < cell.size(); ++i) {
    out.inferred_groups[i] = label[static_cast<std::size_t>(cell[i] - 1)];
  }
  return out;
}

JttResult optimize_jtt(const GroupedDataset& data, Index n_train, const BilevelConfig& config,
                       const JttConfig& jtt) {
  config.validate();
  require(!jtt.upweight_grid.empty(), ErrorKind::InvalidArgument, "JTT: empty upweight grid");
  int attempts = 0;
  // Only the validation half needs every true group; training labels are
  // never read.
  const SplitIndices split = covering_split(data, n_train, config.seed, config.max_resplits,
                                            config.stratified_split, false, &attempts);
  const GroupedDataset val = data.subset(split.val);
  const GroupedDataset train_raw = data.subset(split.train);
  const GroupedDataset unlabeled = train_raw.with_groups(
      std::vector<int>(static_cast<std::size_t>(train_raw.size()), 1), 1);

  const FitResult ident = logistic_fit(unlabeled, Eigen::VectorXd::Ones(unlabeled.size()),
                                       config.penalty, config.solver);
  JttResult out = infer_jtt_groups(unlabeled, ident.theta);
  const GroupedDataset train = unlabeled.with_groups(out.inferred_groups, out.num_inferred_groups);
  const Eigen::VectorXd freq = group_frequencies(train);

  // Standard JTT: one upweight for misclassified rows, picked on validation
  // worst-group loss.
  std::optional<SimplexWeights> best_p;
  double best_obj = std::numeric_limits<double>::infinity();
  const ShiftSpec train_shift(freq, freq);
  for (double lambda : jtt.upweight_grid) {
    require(lambda > 0.0, ErrorKind::InvalidArgument, "JTT: upweights must be > 0");
    Eigen::VectorXd raw = freq;
    for (int k = 0; k < out.num_inferred_groups; ++k) {
      if (out.cell_of_group[static_cast<std::size_t>(k)] % 2 == 0) raw[k] *= lambda;
    }
    const SimplexWeights p = normalize_simplex(raw);
    const FitResult f = logistic_fit(train, per_observation_weights(p, train_shift, train.groups()),
                                     config.penalty, config.solver);
    const double obj = group_losses(f.theta, val).maxCoeff();
    if (obj < best_obj) {
      best_obj = obj;
      best_p = p;
      out.best_upweight = lambda;
    }
  }
  out.run = run_worst_group_loop(train, val, *best_p, config);
  out.run.split = split;
  out.run.resplits = attempts;
  return out;
}

}  // namespace optw
