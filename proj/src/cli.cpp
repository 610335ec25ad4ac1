#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "mbproj/error.hpp"
#include "mbproj/harness.hpp"

namespace mbproj {

namespace {

namespace fs = std::filesystem;

constexpr const char* kDefaultOutput = "mbproj_out";

/// Flags applied on top of the config file, in command line order.
struct Overrides {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> values;

  RunConfig resolve() const {
    RunConfig config = config_file.empty() ? RunConfig{} : load_config(config_file);
    for (const auto& [key, value] : values) {
      try {
        apply_config_value(config, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("command line: {}", e.what()));
      }
    }
    return config;
  }
};

void add_run_options(CLI::App* cmd, Overrides& o) {
  auto bind = [&](const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&o, key](const std::string& v) { o.values.emplace_back(key, v); }, help);
  };
  cmd->add_option("--config", o.config_file, "key = value config file")->check(CLI::ExistingFile);
  bind("--builtin", "problem", "built-in benchmark: random, orthonormal, duplicated, orthant2");
  bind("--instance", "instance", "instance file (overrides --builtin)");
  bind("--n", "n", "dimension of the built-in benchmark");
  bind("--m", "m", "number of constraints of the built-in benchmark");
  bind("--problem-seed", "problem_seed", "seed of the benchmark generator");
  bind("--variant", "variant", "parallel or sequential");
  bind("--N", "N", "minibatch size");
  bind("--beta", "beta", "a number, optimal, extrapolated or adaptive");
  bind("--delta", "delta", "safety margin of extrapolated and adaptive beta");
  bind("--LN", "LN", "known L_N (computed from the instance when omitted)");
  bind("--sampler", "sampler", "iid, without_replacement, partition, blocks, stratified");
  bind("--iters", "iterations", "outer iterations per run");
  bind("--seeds", "seeds", "seed list: 1..20, 1,2,5 or 7");
  bind("--init", "init", "project_origin or gaussian");
  bind("--init-scale", "init_scale", "standard deviation of the gaussian initial point");
  bind("--cadence", "log_cadence", "geometric or every");
  bind("--log-stride", "log_stride", "logging stride for --cadence every");
  bind("--assertions", "assertions", "off or lemma-checks");
  bind("--workers", "workers", "worker threads (never changes results)");
  bind("--output", "output", "output directory");
  cmd->add_flag_callback(
      "--timing", [&o] { o.values.emplace_back("timing", "true"); },
      "record wall time in elapsed_ns (breaks byte-identical output)");
  cmd->add_option_function<std::vector<std::string>>(
      "--set",
      [&o](const std::vector<std::string>& items) {
        for (const auto& item : items) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) {
            throw ConfigError(fmt::format("--set expects key=value, got '{}'", item));
          }
          o.values.emplace_back(item.substr(0, eq), item.substr(eq + 1));
        }
      },
      "extra key=value assignments");
}

std::vector<std::size_t> parse_N_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (std::uint64_t v : parse_seed_list(text)) {
    if (v == 0) throw ConfigError("N list entries must be ≥ 1");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string opt_text(const std::optional<double>& v) {
  return v ? fmt::format("{:.6g}", *v) : std::string("-");
}

std::string write_snapshot(const SolverAbort& abort, const std::string& dir) {
  const IterationSnapshot& s = abort.snapshot();
  auto as_list = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json j = {{"message", abort.what()}, {"k", s.k},        {"stage", s.stage},
                      {"beta", s.beta},          {"detail", s.detail}, {"x", as_list(s.x)},
                      {"v", as_list(s.v)}};
  const fs::path target_dir = dir.empty() ? fs::path(".") : fs::path(dir);
  std::error_code ec;
  fs::create_directories(target_dir, ec);
  const fs::path path = target_dir / "abort_snapshot.json";
  std::ofstream(path) << j.dump(2) << '\n';
  return path.string();
}

int cmd_solve(const Overrides& o, std::ostream& out) {
  RunConfig config = o.resolve();
  if (config.output.empty()) config.output = kDefaultOutput;
  const Experiment exp = run_experiment(config);
  write_experiment(config.output, config, exp);
  const auto rows = aggregate(exp.runs);
  const AggregateRow& last = rows.back();
  out << fmt::format("final k = {} over {} seed(s): f_gap {}  dist_X {}  max_violation {}\n",
                     last.k, last.n_seeds, opt_text(last.f_gap), opt_text(last.dist_X),
                     opt_text(last.max_violation));
  if (config.assertions == AssertionMode::lemma_checks) {
    std::size_t checks = 0;
    double worst = 0.0;
    for (const auto& r : exp.results) {
      checks += r.lemma_checks;
      worst = std::min(worst, r.worst_lemma_slack);
    }
    out << fmt::format("lemma checks: {} passed, worst slack {:.3g}\n", checks, worst);
  }
  out << fmt::format("wrote {} run file(s) and aggregate.csv to {}\n", exp.seeds.size(),
                     config.output);
  return kExitOk;
}

int cmd_rate_check(const std::string& dir, std::size_t k_min, std::size_t k_max,
                   std::uint64_t boot_seed, std::ostream& out) {
  const RateReport report = rate_check(read_experiment_runs(dir), k_min, k_max, boot_seed);
  for (const auto& s : report.slopes) {
    out << fmt::format("{:<9} slope {:+.4f} ± {:.4f}  (95% CI [{:+.4f}, {:+.4f}], k in [{}, {}], "
                       "{} points)\n",
                       to_string(s.metric), s.fit.slope, s.half_width, s.interval.lo,
                       s.interval.hi, s.fit.k_lo, s.fit.k_hi, s.fit.points);
    if (s.fit.truncated) out << "          note: " << s.fit.note << '\n';
  }
  return kExitOk;
}

int cmd_sweep(const Overrides& o, const std::string& N_list, std::ostream& out) {
  const RunConfig config = o.resolve();
  const SweepReport report = minibatch_sweep(config, parse_N_list(N_list));
  std::ostringstream table;
  table << "N,beta,mean_final_dist,ci_lo,ci_hi,measured_ratio,LN,q,b,predicted_ratio\n";
  for (const auto& r : report.rows) {
    std::optional<double> LN, q, b;
    if (r.prediction) {
      LN = r.prediction->LN;
      const auto& k = config.variant == Variant::parallel ? r.prediction->parallel
                                                          : r.prediction->sequential;
      if (k) {
        q = k->q;
        b = k->b;
      }
    }
    auto field = [](const std::optional<double>& v) {
      return v ? fmt::format("{:.17g}", *v) : std::string();
    };
    table << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{},{}\n", r.N, r.beta,
                         r.mean_final_dist, r.ci.lo, r.ci.hi, r.measured_ratio, field(LN),
                         field(q), field(b), field(r.predicted_ratio));
  }
  out << (report.c_hat ? fmt::format("c_hat = {:.6g}\n", *report.c_hat)
                       : std::string("c_hat unavailable; no predictions\n"));
  out << table.str();
  if (!config.output.empty()) {
    fs::create_directories(config.output);
    std::ofstream file(fs::path(config.output) / "sweep.csv");
    for (const auto& line : config.echo()) file << "# " << line << '\n';
    file << table.str();
  }
  return kExitOk;
}

int cmd_analyze(const Overrides& o, const std::string& N_list, std::ostream& out) {
  const RunConfig config = o.resolve();
  config.validate();
  const BenchmarkInstance inst = build_instance(config);
  const auto Ns = parse_N_list(N_list);
  const std::size_t m = inst.poly.rows();
  SamplerSpec sampler;
  sampler.kind = config.sampler;
  if (config.sampler == Sampler::Kind::partition) sampler.blocks = contiguous_blocks(m, Ns.front());

  out << fmt::format("instance: n = {}, m = {}, f* = {:.10g}\n", inst.poly.dimension(), m,
                     inst.spec.known_optimum->f_star);
  const Sampler probe_sampler = Sampler::iid_uniform(m, config.seeds.front());
  const double c_hat = estimate_regularity_c(inst.poly, inst.spec.simple_set, probe_sampler, 1,
                                             64, config.seeds.front());
  out << fmt::format("c_hat = {:.6g}  (c_hat M_g^2 = {:.6g})\n", c_hat,
                     c_hat * inst.spec.M_g * inst.spec.M_g);
  BetaRule rule{BetaRule::Kind::fixed, 1.0, config.delta};
  if (config.beta == "optimal") {
    rule.kind = BetaRule::Kind::optimal;
  } else if (config.beta == "extrapolated" || config.beta == "adaptive") {
    rule.kind = BetaRule::Kind::extrapolated;
  } else {
    rule.value = std::stod(config.beta);
  }
  out << "N,LN,rank_deficient,beta_p,q_p,b_p,beta_s,q_s,b_s,note\n";
  for (std::size_t N : Ns) {
    const LNAnalysis ln = exact_LN_linear(inst.poly, scheme_for(sampler, N, m));
    const QbRow row = qb_curves(inst.poly, sampler, c_hat, inst.spec.M_g, rule, {N}).front();
    auto q = [](const std::optional<AnalysisConstants>& k) { return k ? fmt::format("{:.6g}", k->q) : ""; };
    auto b = [](const std::optional<AnalysisConstants>& k) { return k ? fmt::format("{:.6g}", k->b) : ""; };
    out << fmt::format("{},{:.10g},{},{:.6g},{},{},{:.6g},{},{},{}\n", N, ln.value,
                       ln.rank_deficient ? "yes" : "no", row.beta_parallel, q(row.parallel),
                       b(row.parallel), row.beta_sequential, q(row.sequential),
                       b(row.sequential), row.note);
  }
  return kExitOk;
}

int cmd_validate(const Overrides& o, std::size_t samples, std::ostream& out) {
  const RunConfig config = o.resolve();
  config.validate();
  const BenchmarkInstance inst = build_instance(config);
  const ValidationReport report = validate_assumptions(inst.spec, samples, config.seeds.front());
  out << report.summary();
  return report.all_passed() ? kExitOk : kExitConfig;
}

int cmd_export(const Overrides& o, const std::string& path, std::ostream& out) {
  const RunConfig config = o.resolve();
  config.validate();
  const BenchmarkInstance inst = build_instance(config);
  std::ofstream file(path);
  if (!file) throw ConfigError(fmt::format("cannot write '{}'", path));
  write_instance(file, inst);
  out << "wrote " << path << '\n';
  return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Minibatch random projection subgradient methods: solver and experiment harness",
               "mbproj"};
  app.require_subcommand(1);

  Overrides solve_o, sweep_o, analyze_o, validate_o, export_o;
  auto* solve = app.add_subcommand("solve", "run every seed and write per-run and aggregate CSVs");
  add_run_options(solve, solve_o);

  std::string rate_dir;
  std::size_t k_min = 100, k_max = 10000;
  std::uint64_t boot_seed = 0;
  auto* rate = app.add_subcommand("rate-check", "fit log-log slopes of a solve output directory");
  rate->add_option("--dir", rate_dir, "directory written by solve")->required();
  rate->add_option("--k-min", k_min, "window start")->capture_default_str();
  rate->add_option("--k-max", k_max, "window end")->capture_default_str();
  rate->add_option("--bootstrap-seed", boot_seed, "seed of the over-seeds bootstrap");

  std::string N_list = "1,2,4,8";
  auto* sweep = app.add_subcommand("sweep", "measured vs predicted final dist_X across N");
  add_run_options(sweep, sweep_o);
  sweep->add_option("--N-list", N_list, "minibatch sizes, e.g. 1,2,4,8")->capture_default_str();

  std::string analyze_N = "1,2,4,8";
  auto* analyze = app.add_subcommand("analyze", "exact L_N, c_hat and rate constants per N");
  add_run_options(analyze, analyze_o);
  analyze->add_option("--N-list", analyze_N, "minibatch sizes")->capture_default_str();

  std::size_t samples = 1000;
  auto* validate = app.add_subcommand("validate", "sampling-based check of the assumptions");
  add_run_options(validate, validate_o);
  validate->add_option("--samples", samples, "sampled points")->capture_default_str();

  std::string export_path;
  auto* exporter = app.add_subcommand("export-instance", "write the instance in text format");
  add_run_options(exporter, export_o);
  exporter->add_option("--to", export_path, "target file")->required();

  std::string abort_dir;
  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      app.exit(e, out, err);
      return kExitConfig;
    }

    if (*solve) {
      const RunConfig resolved = solve_o.resolve();
      abort_dir = resolved.output.empty() ? kDefaultOutput : resolved.output;
      return cmd_solve(solve_o, out);
    }
    if (*rate) return cmd_rate_check(rate_dir, k_min, k_max, boot_seed, out);
    if (*sweep) {
      abort_dir = sweep_o.resolve().output;
      return cmd_sweep(sweep_o, N_list, out);
    }
    if (*analyze) return cmd_analyze(analyze_o, analyze_N, out);
    if (*validate) return cmd_validate(validate_o, samples, out);
    if (*exporter) return cmd_export(export_o, export_path, out);
  } catch (const WindowError& e) {
    err << "window error: " << e.what() << '\n';
    return kExitWindow;
  } catch (const SolverAbort& e) {
    err << "solver abort: " << e.what() << '\n';
    err << "snapshot: " << write_snapshot(e, abort_dir) << '\n';
    return kExitSolverAbort;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConvergenceError& e) {
    err << "convergence error: " << e.what() << '\n';
    return kExitSolverAbort;
  } catch (const OracleError& e) {
    err << "oracle error: " << e.what() << '\n';
    return kExitSolverAbort;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace mbproj
