#include "optweights/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "optweights/bilevel.hpp"
#include "optweights/comparison.hpp"
#include "optweights/csv_io.hpp"
#include "optweights/error.hpp"
#include "optweights/manifest.hpp"
#include "optweights/synthetic.hpp"
#include "optweights/theory.hpp"

namespace optw {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_on(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

double grid_number(const std::string& field, const std::string& text) {
  const auto v = parse_double(field);
  require(v && std::isfinite(*v), ErrorKind::InvalidArgument,
          "grid '" + text + "': cannot parse '" + field + "'");
  return *v;
}

int grid_count(const std::string& field, const std::string& text) {
  const double k = grid_number(field, text);
  require(k >= 2.0 && k == std::floor(k) && k <= 1e6, ErrorKind::InvalidArgument,
          "grid '" + text + "': point count must be an integer >= 2");
  return static_cast<int>(k);
}

std::vector<double> number_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& f : split_on(text, ',')) out.push_back(grid_number(f, text));
  require(!out.empty(), ErrorKind::InvalidArgument, "empty grid");
  return out;
}

}  // namespace

std::vector<double> parse_log_grid(const std::string& text) {
  if (text.find(':') == std::string::npos) return number_list(text);
  const auto parts = split_on(text, ':');
  require(parts.size() == 2 || parts.size() == 3, ErrorKind::InvalidArgument,
          "grid '" + text + "': expected lo:hi or lo:hi:k");
  const double lo = grid_number(parts[0], text);
  const double hi = grid_number(parts[1], text);
  require(lo > 0.0 && hi >= lo, ErrorKind::InvalidArgument,
          "grid '" + text + "': need 0 < lo <= hi");
  std::vector<double> out;
  if (parts.size() == 2) {
    for (int k = 0;; ++k) {
      const double x = lo * std::pow(10.0, k);
      if (x > hi * (1.0 + 1e-12)) break;
      out.push_back(x);
    }
    return out;
  }
  const int k = grid_count(parts[2], text);
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < k; ++i) {
    out.push_back(i == k - 1 ? hi : std::exp(a + (b - a) * i / (k - 1)));
  }
  out.front() = lo;
  return out;
}

std::vector<double> parse_linear_grid(const std::string& text) {
  if (text.find(':') == std::string::npos) return number_list(text);
  const auto parts = split_on(text, ':');
  require(parts.size() == 3, ErrorKind::InvalidArgument,
          "grid '" + text + "': expected lo:hi:k");
  const double lo = grid_number(parts[0], text);
  const double hi = grid_number(parts[1], text);
  require(hi >= lo, ErrorKind::InvalidArgument, "grid '" + text + "': need lo <= hi");
  const int k = grid_count(parts[2], text);
  std::vector<double> out;
  for (int i = 0; i < k; ++i) out.push_back(i == k - 1 ? hi : lo + (hi - lo) * i / (k - 1));
  return out;
}

namespace {

json to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

PenaltySpec parse_penalty(const std::string& kind, double lambda, double epsilon) {
  if (kind == "none") return PenaltySpec::none();
  if (kind == "ridge") return PenaltySpec::ridge(lambda);
  if (kind == "smoothed-l1") return PenaltySpec::smoothed_l1(lambda, epsilon);
  if (kind == "l1") return PenaltySpec::l1(lambda);
  fail(ErrorKind::InvalidArgument, "unknown penalty '" + kind + "'");
}

Method method_from(const std::string& name) {
  const auto m = parse_method(name);
  require(m.has_value(), ErrorKind::InvalidArgument,
          "unknown method '" + name + "' (gw-erm, subg, dfr, gdro, jtt)");
  return *m;
}

struct SyntheticFlags {
  SyntheticShiftSpec spec;

  void add(CLI::App* app) {
    app->add_option("--n", spec.n, "number of training rows")->capture_default_str();
    app->add_option("--d", spec.d, "feature dimension")->capture_default_str();
    app->add_option("--class-balance", spec.class_balance, "P(y = 1) in training")
        ->capture_default_str();
    app->add_option("--spurious", spec.spurious_strength, "spurious block mean offset")
        ->capture_default_str();
    app->add_option("--core", spec.core_strength, "core block mean offset")->capture_default_str();
    app->add_option("--minority", spec.minority_fraction,
                    "training probability of each minority cell")
        ->capture_default_str();
    app->add_option("--noise-sd", spec.noise_sd)->capture_default_str();
    app->add_option("--core-dims", spec.core_dims, "core columns, 0 for d/2")->capture_default_str();
  }
};

struct BilevelFlags {
  BilevelConfig config;
  std::string penalty = "ridge";
  double lambda = 1e-3;
  double epsilon = 1e-4;

  void add(CLI::App* app) {
    app->add_option("--lr", config.learning_rate, "outer learning rate")->capture_default_str();
    app->add_option("--momentum", config.momentum)->capture_default_str();
    app->add_option("--steps", config.max_steps, "outer steps T")->capture_default_str();
    app->add_option("--q-lr", config.q_learning_rate, "loss-weight learning rate (gdro, jtt)")
        ->capture_default_str();
    app->add_option("--damping", config.damping, "Hessian damping in the hypergradient solve")
        ->capture_default_str();
    app->add_option("--penalty", penalty, "none, ridge, smoothed-l1 or l1")->capture_default_str();
    app->add_option("--lambda", lambda, "penalty strength")->capture_default_str();
    app->add_option("--epsilon", epsilon, "smoothed-l1 smoothing")->capture_default_str();
    app->add_option("--max-iter", config.solver.max_iterations, "inner Newton iterations")
        ->capture_default_str();
    app->add_option("--tol", config.solver.gradient_tolerance, "inner gradient tolerance")
        ->capture_default_str();
    app->add_option("--max-resplits", config.max_resplits)->capture_default_str();
    app->add_flag("--stratified", config.stratified_split, "stratify the train/val split by group");
    app->add_flag("--allow-zero-fractions", config.allow_zero_fractions,
                  "let subsampling fractions reach zero");
  }

  BilevelConfig resolve(std::uint64_t seed) const {
    BilevelConfig c = config;
    c.penalty = parse_penalty(penalty, lambda, epsilon);
    c.seed = seed;
    return c;
  }
};

/// Effective option values of a subcommand, for the manifest.
json snapshot(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name.empty()) continue;
    if (opt->get_expected_min() == 0) {
      j[name] = opt->count() > 0;
      continue;
    }
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

std::string json_token(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  require(v.is_number(), ErrorKind::SchemaError,
          "config: '" + key + "' must be a string, number, boolean or array");
  return v.dump();
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

/// Appends `--key value` for every key of the JSON config that is not given
/// on the command line, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args,
                                       std::optional<fs::path>* config_path) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  *config_path = fs::path(*path);
  json j;
  try {
    j = json::parse(read_text_file(*path));
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, "config " + *path + ": " + e.what());
  }
  require(j.is_object(), ErrorKind::SchemaError, "config " + *path + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    for (char& c : name) {
      if (c == '_') c = '-';
    }
    require(name != "config", ErrorKind::SchemaError, "config: nested config is not supported");
    const std::string flag = "--" + name;
    if (has_flag(args, flag) || value.is_null()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
      continue;
    }
    args.push_back(flag);
    if (value.is_array()) {
      for (const auto& item : value) args.push_back(json_token(item, key));
    } else {
      args.push_back(json_token(value, key));
    }
  }
  return args;
}

fs::path manifest_path_for(const std::string& flag_value, const fs::path& primary) {
  if (!flag_value.empty()) return flag_value;
  fs::path p = primary;
  p += ".manifest.json";
  return p;
}

struct Context {
  std::vector<fs::path> inputs;
  std::optional<fs::path> config_path;
  std::string manifest;
  std::vector<std::string> argv;

  void finish(const CLI::App* app, const fs::path& primary, const std::vector<fs::path>& outputs,
              const std::vector<std::uint64_t>& seeds, std::ostream& out) const {
    std::vector<fs::path> in = inputs;
    if (config_path) in.push_back(*config_path);
    std::string command = "optweights";
    for (const auto& a : argv) command += " " + a;
    const fs::path mp = manifest_path_for(manifest, primary);
    write_manifest(mp, command, snapshot(app), seeds, in, outputs);
    for (const auto& o : outputs) out << "wrote " << o.string() << "\n";
    out << "wrote " << mp.string() << "\n";
  }
};

// ---- theory -------------------------------------------------------------

struct TheoryCmd {
  std::vector<double> p_train{0.9};
  double p_test = 0.5;
  std::vector<int> dims{10};
  double sigma2 = 1.0;
  double a_diff = 1.0;
  std::string n_grid = "1e2:1e7";
  std::string out = "theory.csv";

  void add(CLI::App* app) {
    app->add_option("--p-tr", p_train, "training share of group 1 (one or more)")
        ->capture_default_str();
    app->add_option("--p-te", p_test, "test share of group 1")->capture_default_str();
    app->add_option("--d", dims, "feature dimension (one or more)")->capture_default_str();
    app->add_option("--sigma2", sigma2, "noise variance")->capture_default_str();
    app->add_option("--a-diff", a_diff, "difference of the group intercepts")
        ->capture_default_str();
    app->add_option("--n-grid", n_grid, "training sizes: lo:hi (decades), lo:hi:k or a,b,c")
        ->capture_default_str();
    app->add_option("--out", out, "output CSV")->capture_default_str();
  }

  void run(const CLI::App* app, const Context& ctx, std::ostream& os) const {
    const auto ns = parse_log_grid(n_grid);
    std::string csv =
        "n,d,p_train,p_test,variance_bias_ratio,optimal_p,bias_sq,variance,expected_loss\n";
    for (int d : dims) {
      require(d >= 0, ErrorKind::InvalidArgument, "theory: d must be >= 0");
      for (double ptr : p_train) {
        const LinRegDGP dgp = LinRegDGP::with_zero_slope(a_diff, 0.0, d, sigma2, ptr);
        for (double n : ns) {
          const double p = optimal_p(dgp, p_test, n);
          const TheoryPoint tp = expected_loss_approx(dgp, p_test, p, n);
          csv += format_double(n) + "," + std::to_string(d) + "," + format_double(ptr) + "," +
                 format_double(p_test) + "," + format_double(tp.variance_bias_ratio) + "," +
                 format_double(p) + "," + format_double(tp.bias_sq) + "," +
                 format_double(tp.variance) + "," + format_double(tp.expected_loss) + "\n";
        }
      }
    }
    write_file_atomic(out, csv);
    ctx.finish(app, out, {out}, {}, os);
  }
};

// ---- simulate -----------------------------------------------------------

struct SimulateCmd {
  Index n = 5000;
  Index d = 10;
  Index reps = 1000;
  double p_train = 0.9;
  double p_test = 0.5;
  double sigma2 = 1.0;
  double a_diff = 1.0;
  std::string p_grid = "0:1:11";
  std::uint64_t seed = 0;
  std::string out = "simulate.csv";

  void add(CLI::App* app) {
    app->add_option("--n", n, "training size")->capture_default_str();
    app->add_option("--d", d, "feature dimension")->capture_default_str();
    app->add_option("--reps", reps, "replications")->capture_default_str();
    app->add_option("--p-tr", p_train)->capture_default_str();
    app->add_option("--p-te", p_test)->capture_default_str();
    app->add_option("--sigma2", sigma2)->capture_default_str();
    app->add_option("--a-diff", a_diff)->capture_default_str();
    app->add_option("--p-grid", p_grid, "weights p: lo:hi:k or a,b,c")->capture_default_str();
    app->add_option("--seed", seed)->required();
    app->add_option("--out", out, "output CSV")->capture_default_str();
  }

  void run(const CLI::App* app, const Context& ctx, std::ostream& os) const {
    const LinRegDGP dgp = LinRegDGP::with_zero_slope(a_diff, 0.0, d, sigma2, p_train);
    const auto points = simulate_mse(dgp, p_test, parse_linear_grid(p_grid), n, reps, seed);
    std::string csv =
        "p,bias_sq,variance,expected_loss,simulated_mean,simulated_se,replications,singular_fits\n";
    for (const auto& pt : points) {
      csv += format_double(pt.p) + "," + format_double(pt.approx.bias_sq) + "," +
             format_double(pt.approx.variance) + "," + format_double(pt.approx.expected_loss) +
             "," + format_double(pt.mean_risk) + "," + format_double(pt.standard_error) + "," +
             std::to_string(pt.replications_used) + "," + std::to_string(pt.singular_fits) + "\n";
    }
    write_file_atomic(out, csv);
    ctx.finish(app, out, {out}, {seed}, os);
  }
};

// ---- gen-data -----------------------------------------------------------

struct GenDataCmd {
  SyntheticFlags synth;
  std::uint64_t seed = 0;
  Index test_per_group = 0;
  std::string out = "data.csv";
  std::string shift_out = "shift.json";
  std::string test_out = "test.csv";

  void add(CLI::App* app) {
    synth.add(app);
    app->add_option("--seed", seed)->required();
    app->add_option("--test-per-group", test_per_group,
                    "also write a balanced test set with this many rows per group")
        ->capture_default_str();
    app->add_option("--out", out, "dataset CSV")->capture_default_str();
    app->add_option("--shift-out", shift_out, "shift JSON")->capture_default_str();
    app->add_option("--test-out", test_out, "test CSV")->capture_default_str();
  }

  void run(const CLI::App* app, const Context& ctx, std::ostream& os) const {
    SyntheticShiftSpec spec = synth.spec;
    spec.seed = seed;
    const SyntheticData data = generate_spurious(spec);
    write_dataset_csv(out, data.train);
    write_file_atomic(shift_out, shift_to_json(data.shift));
    std::vector<fs::path> outputs{out, shift_out};
    if (test_per_group > 0) {
      write_dataset_csv(test_out, generate_test_set(spec, test_per_group, derive_seed(seed, 1)));
      outputs.emplace_back(test_out);
    }
    ctx.finish(app, out, outputs, {seed}, os);
  }
};

// ---- optimize -----------------------------------------------------------

json trace_line(const TraceRecord& r) {
  json j;
  j["step"] = r.step;
  j["weights"] = to_json(r.weights);
  if (r.q.size() > 0) j["q"] = to_json(r.q);
  j["objective"] = r.objective;
  j["weighted_objective"] = r.weighted_objective;
  j["hypergradient"] = r.hypergradient.size() > 0 ? to_json(r.hypergradient) : json(nullptr);
  j["momentum"] = to_json(r.momentum);
  j["inner_iterations"] = r.inner_iterations;
  j["inner_converged"] = r.inner_converged;
  j["damping"] = r.damping_used;
  j["condition"] = r.condition;
  return j;
}

struct OptimizeCmd {
  std::string method = "gw-erm";
  std::string data;
  std::string shift;
  int groups = 0;
  double train_share = 0.5;
  int ensemble_size = 10;
  int pin_group = 0;
  BilevelFlags bilevel;
  std::uint64_t seed = 0;
  std::string trace = "trace.jsonl";
  std::string weights_out = "weights.json";

  void add(CLI::App* app) {
    app->add_option("--method", method, "gw-erm, subg, dfr, gdro or jtt")->capture_default_str();
    app->add_option("--data", data, "dataset CSV")->required();
    app->add_option("--shift", shift, "shift JSON (gw-erm, subg, dfr)");
    app->add_option("--groups", groups, "number of groups when no shift is given");
    app->add_option("--train-share", train_share,
                    "training share of the split (dfr: fitting share)")
        ->capture_default_str();
    app->add_option("--ensemble-size", ensemble_size, "dfr ensemble size")->capture_default_str();
    app->add_option("--pin-group", pin_group,
                    "subg/dfr group held at fraction 1, 0 for the smallest")
        ->capture_default_str();
    bilevel.add(app);
    app->add_option("--seed", seed)->required();
    app->add_option("--trace", trace, "trace JSONL")->capture_default_str();
    app->add_option("--weights-out", weights_out, "final weights JSON")->capture_default_str();
  }

  void run(const CLI::App* app, Context ctx, std::ostream& os) const {
    const Method m = method_from(method);
    const bool needs_shift = m == Method::GwErm || m == Method::Subg || m == Method::Dfr;
    require(!needs_shift || !shift.empty(), ErrorKind::InvalidArgument,
            "optimize: --shift is required for " + method);
    std::optional<ShiftSpec> sh;
    if (!shift.empty()) {
      sh = load_shift(shift);
      ctx.inputs.emplace_back(shift);
    }
    std::optional<int> g;
    if (sh) g = sh->num_groups();
    if (groups > 0) {
      require(!g || *g == groups, ErrorKind::InvalidArgument,
              "optimize: --groups disagrees with the shift");
      g = groups;
    }
    const GroupedDataset ds = load_csv(data, g);
    ctx.inputs.emplace(ctx.inputs.begin(), data);
    require(train_share > 0.0 && train_share < 1.0, ErrorKind::InvalidArgument,
            "optimize: --train-share must lie in (0, 1)");
    const auto n_train = static_cast<Index>(std::llround(train_share * static_cast<double>(ds.size())));
    const BilevelConfig config = bilevel.resolve(seed);
    std::optional<int> pin;
    if (pin_group > 0) pin = pin_group;

    json summary;
    summary["method"] = method;
    BilevelResult r;
    switch (m) {
      case Method::GwErm: r = optimize_gw_erm(ds, *sh, n_train, config); break;
      case Method::Subg: r = optimize_subg(ds, *sh, n_train, config, pin); break;
      case Method::Dfr: r = optimize_dfr(ds, *sh, config, ensemble_size, train_share, pin); break;
      case Method::Gdro: r = optimize_gdro(ds, n_train, config); break;
      case Method::Jtt: {
        JttResult j = optimize_jtt(ds, n_train, config);
        summary["inferred_groups"] = j.num_inferred_groups;
        summary["cell_of_group"] = j.cell_of_group;
        summary["merges"] = j.merges;
        summary["best_upweight"] = j.best_upweight;
        r = std::move(j.run);
        break;
      }
    }
    summary["weights"] = to_json(r.weights);
    summary["initial_weights"] = to_json(r.trace.front().weights);
    summary["selected_step"] = r.selected_step;
    summary["objective"] = r.trace[static_cast<std::size_t>(r.selected_step)].objective;
    summary["initial_objective"] = r.trace.front().objective;
    summary["theta"] = to_json(r.theta);
    summary["initial_theta"] = to_json(r.initial_theta);
    summary["resplits"] = r.resplits;
    summary["n_train"] = r.split.train.size();
    summary["n_val"] = r.split.val.size();

    std::string lines;
    for (const auto& rec : r.trace) lines += trace_line(rec).dump() + "\n";
    write_file_atomic(trace, lines);
    write_file_atomic(weights_out, summary.dump(2) + "\n");
    ctx.finish(app, weights_out, {trace, weights_out}, {seed}, os);
  }
};

// ---- compare ------------------------------------------------------------

struct CompareCmd {
  std::vector<std::string> methods{"gw-erm"};
  int seeds = 20;
  std::uint64_t seed = 0;
  std::string sweep = "none";
  std::string fractions = "0.05,0.1,0.5,1";
  std::string lambdas = "1e-4,1e-3,1e-2,1e-1";
  SyntheticFlags synth;
  std::string data, shift, test;
  double train_share = 0.5;
  Index test_per_group = 1000;
  int ensemble_size = 10;
  BilevelFlags bilevel;
  std::string out = "compare.csv";
  std::string runs_out;

  void add(CLI::App* app) {
    app->add_option("--method", methods, "one or more of gw-erm, subg, dfr, gdro, jtt")
        ->capture_default_str();
    app->add_option("--seeds", seeds, "number of seeds, run as seed, seed+1, ...")
        ->capture_default_str();
    app->add_option("--seed", seed, "first seed")->required();
    app->add_option("--sweep", sweep, "none, fraction or penalty")->capture_default_str();
    app->add_option("--fractions", fractions, "data fractions for --sweep fraction")
        ->capture_default_str();
    app->add_option("--lambdas", lambdas, "penalty strengths for --sweep penalty")
        ->capture_default_str();
    synth.add(app);
    app->add_option("--data", data, "dataset CSV instead of synthetic data");
    app->add_option("--shift", shift, "shift JSON for --data");
    app->add_option("--test", test, "test CSV for --data");
    app->add_option("--train-share", train_share, "training share of the split")
        ->capture_default_str();
    app->add_option("--test-per-group", test_per_group, "synthetic test rows per group")
        ->capture_default_str();
    app->add_option("--ensemble-size", ensemble_size, "dfr ensemble size")->capture_default_str();
    bilevel.add(app);
    app->add_option("--out", out, "summary CSV")->capture_default_str();
    app->add_option("--runs-out", runs_out, "per-seed CSV");
  }

  void run(const CLI::App* app, Context ctx, std::ostream& os) const {
    require(seeds >= 2, ErrorKind::SizeError, "compare: --seeds must be >= 2");
    ComparisonSetup setup;
    setup.data = synth.spec;
    setup.train_share = train_share;
    setup.test_per_group = test_per_group;
    setup.ensemble_size = ensemble_size;
    setup.config = bilevel.resolve(seed);
    if (!data.empty()) {
      require(!shift.empty() && !test.empty(), ErrorKind::InvalidArgument,
              "compare: --data needs --shift and --test");
      const ShiftSpec sh = load_shift(shift);
      setup.external = ExternalData{load_csv(data, sh.num_groups()), sh,
                                    load_csv(test, sh.num_groups())};
      ctx.inputs = {data, shift, test};
    } else {
      require(shift.empty() && test.empty(), ErrorKind::InvalidArgument,
              "compare: --shift and --test only apply with --data");
    }

    std::vector<Method> ms;
    for (const auto& name : methods) ms.push_back(method_from(name));
    std::vector<std::uint64_t> seed_list;
    for (int k = 0; k < seeds; ++k) seed_list.push_back(seed + static_cast<std::uint64_t>(k));

    std::vector<SweepEntry> entries;
    auto run_all = [&](const std::string& label, double value, const ComparisonSetup& s) {
      for (Method m : ms) entries.push_back({label, value, run_comparison(s, m, seed_list)});
    };
    if (sweep == "none") {
      run_all("none", 0.0, setup);
    } else if (sweep == "fraction") {
      for (double f : parse_linear_grid(fractions)) {
        ComparisonSetup s = setup;
        s.data_fraction = f;
        run_all("fraction", f, s);
      }
    } else if (sweep == "penalty") {
      for (double lam : parse_linear_grid(lambdas)) {
        ComparisonSetup s = setup;
        s.config.penalty = parse_penalty(bilevel.penalty, lam, bilevel.epsilon);
        run_all("penalty", lam, s);
      }
    } else {
      fail(ErrorKind::InvalidArgument, "compare: unknown sweep '" + sweep + "'");
    }

    write_file_atomic(out, comparison_summary_csv(entries));
    std::vector<fs::path> outputs{out};
    if (!runs_out.empty()) {
      write_file_atomic(runs_out, comparison_runs_csv(entries));
      outputs.emplace_back(runs_out);
    }
    ctx.finish(app, out, outputs, seed_list, os);
  }
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optimized group weights for sub-population shift", "optweights"};
  app.require_subcommand(1);

  Context ctx;
  ctx.argv = raw_args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", "JSON file of option values; flags override it");
    sub->add_option("--manifest", ctx.manifest, "manifest path (default: <output>.manifest.json)");
  };

  TheoryCmd theory;
  SimulateCmd simulate;
  GenDataCmd gen;
  OptimizeCmd optimize;
  CompareCmd compare;
  CLI::App* theory_app = app.add_subcommand("theory", "optimal weights of the two-group linear model");
  CLI::App* simulate_app =
      app.add_subcommand("simulate", "Monte Carlo risk of weighted least squares");
  CLI::App* gen_app = app.add_subcommand("gen-data", "synthetic spurious-correlation data");
  CLI::App* optimize_app = app.add_subcommand("optimize", "optimize group weights on a dataset");
  CLI::App* compare_app =
      app.add_subcommand("compare", "standard vs optimized weights over seeds");
  theory.add(theory_app);
  simulate.add(simulate_app);
  gen.add(gen_app);
  optimize.add(optimize_app);
  compare.add(compare_app);
  for (CLI::App* sub : {theory_app, simulate_app, gen_app, optimize_app, compare_app}) {
    add_common(sub);
  }

  try {
    std::vector<std::string> args = expand_config(raw_args, &ctx.config_path);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return app.exit(e, out, err);
      err << "error[InvalidArgument]: " << one_line(e.what()) << "\n";
      return 1;
    }
    if (*theory_app) theory.run(theory_app, ctx, out);
    if (*simulate_app) simulate.run(simulate_app, ctx, out);
    if (*gen_app) gen.run(gen_app, ctx, out);
    if (*optimize_app) optimize.run(optimize_app, ctx, out);
    if (*compare_app) compare.run(compare_app, ctx, out);
  } catch (const Error& e) {
    err << "error[" << kind_name(e.kind()) << "]: " << one_line(e.what()) << "\n";
    return is_numerical(e.kind()) ? 2 : 1;
  } catch (const json::exception& e) {
    err << "error[ParseError]: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error[IoError]: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace optw
