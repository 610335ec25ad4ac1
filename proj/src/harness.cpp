#include "mbproj/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "mbproj/error.hpp"

namespace mbproj {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    throw ConfigError(fmt::format("{}: '{}' is not a finite number", key, value));
  }
  return out;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", key, value));
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = lower(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, value));
}

Sampler::Kind parse_sampler(const std::string& value) {
  const std::string v = lower(value);
  if (v == "iid" || v == "iid_uniform" || v == "uniform") return Sampler::Kind::iid_uniform;
  if (v == "without_replacement" || v == "without-replacement") {
    return Sampler::Kind::without_replacement;
  }
  if (v == "partition") return Sampler::Kind::partition;
  if (v == "blocks") return Sampler::Kind::blocks;
  if (v == "stratified") return Sampler::Kind::stratified;
  throw ConfigError(fmt::format(
      "sampler: unknown '{}' (iid, without_replacement, partition, blocks, stratified)", value));
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() > 2) {
    bool consecutive = true;
    for (std::size_t i = 1; i < seeds.size(); ++i) consecutive &= seeds[i] == seeds[i - 1] + 1;
    if (consecutive) return fmt::format("{}..{}", seeds.front(), seeds.back());
  }
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  const std::string t = trim(text);
  std::vector<std::uint64_t> seeds;
  if (t.empty()) throw ConfigError("seeds: empty list");
  if (const auto dots = t.find(".."); dots != std::string::npos) {
    const auto lo = parse_unsigned("seeds", trim(t.substr(0, dots)));
    const auto hi = parse_unsigned("seeds", trim(t.substr(dots + 2)));
    if (hi < lo) throw ConfigError(fmt::format("seeds: empty range '{}'", t));
    if (hi - lo >= 1'000'000) throw ConfigError("seeds: range too long");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(t);
  for (std::string item; std::getline(ss, item, ',');) {
    seeds.push_back(parse_unsigned("seeds", trim(item)));
  }
  return seeds;
}

void apply_config_value(RunConfig& c, const std::string& raw_key, const std::string& raw_value) {
  const std::string exact_key = trim(raw_key);
  const std::string key = lower(exact_key);
  const std::string value = trim(raw_value);
  if (value.empty()) throw ConfigError(fmt::format("{}: missing value", exact_key));

  // "N" is the minibatch size and "n" the dimension.
  if (exact_key == "N" || key == "batch_size" || key == "minibatch") {
    c.N = parse_unsigned("N", value);
    return;
  }

  if (key == "problem" || key == "builtin" || key == "family") {
    c.problem.family = lower(value);
    c.instance_file.clear();
  } else if (key == "n") {
    c.problem.n = parse_unsigned(key, value);
  } else if (key == "m") {
    c.problem.m = parse_unsigned(key, value);
  } else if (key == "problem_seed") {
    c.problem.seed = parse_unsigned(key, value);
  } else if (key == "n_partition") {
    c.problem.N_partition = parse_unsigned(key, value);
  } else if (key == "margin_low") {
    c.problem.margin_low = parse_double(key, value);
  } else if (key == "margin_high") {
    c.problem.margin_high = parse_double(key, value);
  } else if (key == "overshoot") {
    c.problem.overshoot = parse_double(key, value);
  } else if (key == "instance") {
    c.instance_file = value;
  } else if (key == "variant") {
    const std::string v = lower(value);
    if (v == "parallel") {
      c.variant = Variant::parallel;
    } else if (v == "sequential") {
      c.variant = Variant::sequential;
    } else {
      throw ConfigError(fmt::format("variant: unknown '{}' (parallel, sequential)", value));
    }
  } else if (key == "beta") {
    const std::string v = lower(value);
    if (v != "optimal" && v != "extrapolated" && v != "adaptive") parse_double(key, value);
    c.beta = v;
  } else if (key == "delta") {
    c.delta = parse_double(key, value);
  } else if (key == "ln") {
    c.LN = parse_double(key, value);
  } else if (key == "sampler") {
    c.sampler = parse_sampler(value);
  } else if (key == "iterations" || key == "iters") {
    c.iterations = parse_unsigned(key, value);
  } else if (key == "init") {
    const std::string v = lower(value);
    if (v == "project_origin" || v == "origin") {
      c.init = InitRule::project_origin;
    } else if (v == "gaussian") {
      c.init = InitRule::gaussian;
    } else {
      throw ConfigError(fmt::format("init: unknown '{}' (project_origin, gaussian)", value));
    }
  } else if (key == "init_scale") {
    c.init_scale = parse_double(key, value);
  } else if (key == "seeds") {
    c.seeds = parse_seed_list(value);
  } else if (key == "log_cadence" || key == "cadence") {
    const std::string v = lower(value);
    if (v == "geometric") {
      c.cadence.kind = LogCadence::Kind::geometric;
    } else if (v == "every") {
      c.cadence.kind = LogCadence::Kind::every;
    } else {
      throw ConfigError(fmt::format("log_cadence: unknown '{}' (geometric, every)", value));
    }
  } else if (key == "log_stride") {
    c.cadence.stride = parse_unsigned(key, value);
  } else if (key == "assertions") {
    const std::string v = lower(value);
    if (v == "off") {
      c.assertions = AssertionMode::off;
    } else if (v == "lemma-checks" || v == "lemma_checks") {
      c.assertions = AssertionMode::lemma_checks;
    } else {
      throw ConfigError(fmt::format("assertions: unknown '{}' (off, lemma-checks)", value));
    }
  } else if (key == "workers") {
    c.workers = parse_unsigned(key, value);
  } else if (key == "timing") {
    c.timing = parse_bool(key, value);
  } else if (key == "output") {
    c.output = value;
  } else {
    throw ConfigError(fmt::format("unknown key '{}'", raw_key));
  }
}

RunConfig parse_config(std::istream& is, const std::string& source_name) {
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    const std::string body = trim(std::string_view(line).substr(0, comment));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') {
        throw ConfigError(fmt::format("{}:{}: unterminated section header", source_name, line_no));
      }
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(
          fmt::format("{}:{}: expected 'key = value', got '{}'", source_name, line_no, body));
    }
    try {
      apply_config_value(config, trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", source_name, line_no, e.what()));
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
  return parse_config(in, path);
}

void RunConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be ≥ 1");
  if (N < 1) throw ConfigError("N must be ≥ 1");
  if (workers < 1) throw ConfigError("workers must be ≥ 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  if (cadence.kind == LogCadence::Kind::every && cadence.stride < 1) {
    throw ConfigError("log_stride must be ≥ 1");
  }
  if (LN && !(*LN > 0.0 && *LN <= 1.0)) throw ConfigError("LN must lie in (0, 1]");
  if (instance_file.empty()) {
    if (problem.family != "orthant2" && (problem.n < 1 || problem.m < 1)) {
      throw ConfigError("n and m must be ≥ 1");
    }
    if (!(problem.margin_low > 0.0 && problem.margin_high >= problem.margin_low)) {
      throw ConfigError("margins must satisfy 0 < margin_low <= margin_high");
    }
    if (!(problem.overshoot > 0.0)) throw ConfigError("overshoot must be positive");
  }
  if (beta != "optimal" && beta != "extrapolated" && beta != "adaptive") {
    const double b = parse_double("beta", beta);
    if (!(b > 0.0)) throw ConfigError("beta must be positive");
  }
}

std::vector<std::string> RunConfig::echo() const {
  std::vector<std::string> lines;
  auto add = [&](const std::string& k, const std::string& v) {
    lines.push_back(fmt::format("{} = {}", k, v));
  };
  if (!instance_file.empty()) {
    add("instance", instance_file);
  } else if (problem.family == "orthant2") {
    add("problem", problem.family);
  } else {
    add("problem", problem.family);
    add("n", std::to_string(problem.n));
    add("m", std::to_string(problem.m));
    add("problem_seed", std::to_string(problem.seed));
    add("n_partition", std::to_string(problem.N_partition));
    add("margin_low", fmt_double(problem.margin_low));
    add("margin_high", fmt_double(problem.margin_high));
    add("overshoot", fmt_double(problem.overshoot));
  }
  add("variant", to_string(variant));
  add("N", std::to_string(N));
  add("beta", beta);
  add("delta", fmt_double(delta));
  if (LN) add("LN", fmt_double(*LN));
  add("sampler", to_string(sampler));
  add("iterations", std::to_string(iterations));
  add("init", init == InitRule::project_origin ? "project_origin" : "gaussian");
  add("init_scale", fmt_double(init_scale));
  add("seeds", seeds_text(seeds));
  add("log_cadence", cadence.kind == LogCadence::Kind::geometric ? "geometric" : "every");
  if (cadence.kind == LogCadence::Kind::every) add("log_stride", std::to_string(cadence.stride));
  add("assertions", assertions == AssertionMode::off ? "off" : "lemma-checks");
  add("workers", std::to_string(workers));
  add("timing", timing ? "true" : "false");
  if (!output.empty()) add("output", output);
  return lines;
}

// ---------------------------------------------------------------------------
// Experiments

BenchmarkInstance build_instance(const RunConfig& config) {
  if (!config.instance_file.empty()) return load_instance(config.instance_file);
  return make_builtin(config.problem);
}

namespace {

SamplerSpec sampler_spec_for(Sampler::Kind kind, std::size_t N, std::size_t m) {
  SamplerSpec spec;
  spec.kind = kind;
  switch (kind) {
    case Sampler::Kind::partition:
      if (N > m) throw ConfigError(fmt::format("partition sampling needs N = {} <= m = {}", N, m));
      spec.blocks = contiguous_blocks(m, N);
      break;
    case Sampler::Kind::blocks:
      if (m % N != 0) {
        throw ConfigError(fmt::format("blocks sampling needs N = {} to divide m = {}", N, m));
      }
      spec.blocks = contiguous_blocks(m, m / N);
      break;
    case Sampler::Kind::stratified: {
      if (N < 2 || m < 2) throw ConfigError("stratified sampling needs N >= 2 and m >= 2");
      spec.blocks = contiguous_blocks(m, 2);
      spec.draws_per_block = {N / 2, N - N / 2};
      break;
    }
    default:
      break;
  }
  return spec;
}

double resolve_LN(const RunConfig& config, const BenchmarkInstance& instance,
                  const SamplerSpec& sampler) {
  if (config.LN) return *config.LN;
  return exact_LN_linear(instance.poly, scheme_for(sampler, config.N, instance.poly.rows())).value;
}

}  // namespace

SolverConfig solver_config_for(const RunConfig& config, const BenchmarkInstance& instance,
                               std::uint64_t seed) {
  SolverConfig sc;
  sc.variant = config.variant;
  sc.batch_size = config.N;
  sc.iterations = config.iterations;
  sc.sampler = sampler_spec_for(config.sampler, config.N, instance.poly.rows());
  sc.seed = seed;
  sc.init = config.init;
  sc.init_scale = config.init_scale;
  sc.cadence = config.cadence;
  sc.assertions = config.assertions;
  sc.workers = config.workers;
  sc.record_time = config.timing;

  const bool parallel = config.variant == Variant::parallel;
  if (config.beta == "adaptive") {
    sc.beta = BetaPolicy::adaptive(config.delta);
  } else if (config.beta == "optimal") {
    sc.beta = parallel ? BetaPolicy::optimal(resolve_LN(config, instance, sc.sampler))
                       : BetaPolicy::fixed(1.0);
  } else if (config.beta == "extrapolated") {
    sc.beta = parallel
                  ? BetaPolicy::extrapolated(config.delta, resolve_LN(config, instance, sc.sampler))
                  : BetaPolicy::fixed(2.0 - config.delta);
  } else {
    sc.beta = BetaPolicy::fixed(parse_double("beta", config.beta),
                                parallel ? config.LN : std::nullopt);
  }
  return sc;
}

Experiment run_experiment(const RunConfig& config) {
  config.validate();
  Experiment exp;
  exp.instance = build_instance(config);
  exp.seeds = config.seeds;
  const std::size_t count = exp.seeds.size();

  std::vector<SolverConfig> configs;
  configs.reserve(count);
  for (std::uint64_t seed : exp.seeds) configs.push_back(solver_config_for(config, exp.instance, seed));

  exp.results.resize(count);
  std::vector<std::exception_ptr> failures(count);
  auto run_one = [&](std::size_t i) {
    try {
      exp.results[i] = run(exp.instance.spec, configs[i], &exp.instance.poly);
    } catch (...) {
      failures[i] = std::current_exception();
    }
  };
  if (config.workers > 1 && count > 1) {
    tbb::task_arena arena(static_cast<int>(config.workers));
    arena.execute([&] { tbb::parallel_for(std::size_t{0}, count, run_one); });
  } else {
    for (std::size_t i = 0; i < count; ++i) run_one(i);
  }
  // Report the failure of the first seed in list order, independent of scheduling.
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }
  exp.runs.reserve(count);
  for (const auto& result : exp.results) exp.runs.push_back(result.records);
  return exp;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string csv_field(const std::optional<double>& v) {
  if (!v || std::isnan(*v)) return {};
  return fmt_double(*v);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> opt_field(const std::string& s, std::size_t line_no) {
  if (s.empty()) return std::nullopt;
  try {
    return parse_double("csv", s);
  } catch (const ConfigError&) {
    // from_chars rejects "inf"/"nan"; the writer never emits them.
    throw ConfigError(fmt::format("csv:{}: bad number '{}'", line_no, s));
  }
}

void write_comments(std::ostream& os, const std::vector<std::string>& comments) {
  for (const auto& c : comments) os << "# " << c << '\n';
}

}  // namespace

void write_run_csv(std::ostream& os, const std::vector<std::string>& comments,
                   const std::vector<RunRecord>& records) {
  write_comments(os, comments);
  os << kCsvHeader << '\n';
  for (const auto& r : records) {
    os << r.seed << ',' << r.k << ',' << csv_field(r.f_gap) << ',' << csv_field(r.max_violation)
       << ',' << csv_field(r.dist_X) << ',' << csv_field(r.LN_k) << ',' << fmt_double(r.beta_k)
       << ',' << r.elapsed_ns << '\n';
  }
}

std::vector<RunRecord> read_run_csv(std::istream& is) {
  std::vector<RunRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kCsvHeader) {
        throw ConfigError(fmt::format("csv:{}: unexpected header '{}'", line_no, line));
      }
      header_seen = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 8) {
      throw ConfigError(fmt::format("csv:{}: expected 8 fields, found {}", line_no, f.size()));
    }
    RunRecord r;
    try {
      r.seed = parse_unsigned("seed", f[0]);
      r.k = parse_unsigned("k", f[1]);
      r.beta_k = parse_double("beta_k", f[6]);
      r.elapsed_ns = static_cast<std::int64_t>(parse_unsigned("elapsed_ns", f[7]));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("csv:{}: {}", line_no, e.what()));
    }
    r.f_gap = opt_field(f[2], line_no);
    r.max_violation = opt_field(f[3], line_no);
    r.dist_X = opt_field(f[4], line_no);
    r.LN_k = opt_field(f[5], line_no);
    records.push_back(r);
  }
  if (!header_seen) throw ConfigError("csv: missing header");
  return records;
}

std::vector<AggregateRow> aggregate(const std::vector<std::vector<RunRecord>>& runs) {
  struct Acc {
    std::size_t seeds = 0;
    double f = 0, abs_f = 0, viol = 0, dist = 0, ln = 0, beta = 0;
    std::size_t nf = 0, nviol = 0, ndist = 0, nln = 0;
  };
  std::map<std::size_t, Acc> by_k;
  for (const auto& run : runs) {
    for (const auto& r : run) {
      Acc& a = by_k[r.k];
      ++a.seeds;
      a.beta += r.beta_k;
      if (r.f_gap) {
        a.f += *r.f_gap;
        a.abs_f += std::abs(*r.f_gap);
        ++a.nf;
      }
      if (r.max_violation) {
        a.viol += *r.max_violation;
        ++a.nviol;
      }
      if (r.dist_X) {
        a.dist += *r.dist_X;
        ++a.ndist;
      }
      if (r.LN_k && !std::isnan(*r.LN_k)) {
        a.ln += *r.LN_k;
        ++a.nln;
      }
    }
  }
  auto mean = [](double sum, std::size_t n) -> std::optional<double> {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  std::vector<AggregateRow> rows;
  for (const auto& [k, a] : by_k) {
    rows.push_back({k, a.seeds, mean(a.f, a.nf), mean(a.abs_f, a.nf), mean(a.viol, a.nviol),
                    mean(a.dist, a.ndist), mean(a.ln, a.nln),
                    a.beta / static_cast<double>(a.seeds)});
  }
  return rows;
}

void write_aggregate_csv(std::ostream& os, const std::vector<std::string>& comments,
                         const std::vector<AggregateRow>& rows) {
  write_comments(os, comments);
  os << kAggregateHeader << '\n';
  for (const auto& r : rows) {
    os << r.k << ',' << r.n_seeds << ',' << csv_field(r.f_gap) << ',' << csv_field(r.abs_f_gap)
       << ',' << csv_field(r.max_violation) << ',' << csv_field(r.dist_X) << ','
       << csv_field(r.LN_k) << ',' << fmt_double(r.beta_k) << '\n';
  }
}

void write_experiment(const std::string& dir, const RunConfig& config, const Experiment& exp) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError(fmt::format("cannot create output directory '{}': {}", dir, ec.message()));
  std::vector<std::string> comments = config.echo();
  if (const auto& opt = exp.instance.spec.known_optimum) {
    comments.push_back(fmt::format("f_star = {}", fmt_double(opt->f_star)));
  }
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw ConfigError(fmt::format("cannot write '{}/{}'", dir, name));
    return out;
  };
  for (std::size_t i = 0; i < exp.seeds.size(); ++i) {
    auto out = open(fmt::format("run_seed{}.csv", exp.seeds[i]));
    auto c = comments;
    c.push_back(fmt::format("seed = {}", exp.seeds[i]));
    write_run_csv(out, c, exp.runs[i]);
  }
  auto out = open("aggregate.csv");
  write_aggregate_csv(out, comments, aggregate(exp.runs));
}

std::vector<std::vector<RunRecord>> read_experiment_runs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError(fmt::format("'{}' is not a directory", dir));
  static const std::regex pattern(R"(run_seed(\d+)\.csv)");
  std::vector<std::pair<std::uint64_t, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch match;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, match, pattern)) {
      files.emplace_back(std::stoull(match[1].str()), entry.path());
    }
  }
  if (files.empty()) throw ConfigError(fmt::format("no run_seed*.csv files in '{}'", dir));
  std::sort(files.begin(), files.end());
  std::vector<std::vector<RunRecord>> runs;
  for (const auto& [seed, path] : files) {
    std::ifstream in(path);
    try {
      runs.push_back(read_run_csv(in));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Statistics

SlopeFit fit_loglog_slope(const std::vector<std::size_t>& ks, const std::vector<double>& values,
                          std::size_t k_min, std::size_t k_max, double floor) {
  if (ks.size() != values.size()) throw ConfigError("slope fit: ks and values differ in length");
  SlopeFit fit;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < k_min || ks[i] > k_max || ks[i] == 0) continue;
    if (!(values[i] > floor) || !std::isfinite(values[i])) {
      fit.truncated = true;
      fit.note = fmt::format("window truncated at k = {}: value {:.3g} at or below {:.3g}", ks[i],
                             values[i], floor);
      break;
    }
    if (lx.empty()) fit.k_lo = ks[i];
    fit.k_hi = ks[i];
    lx.push_back(std::log(static_cast<double>(ks[i])));
    ly.push_back(std::log(values[i]));
  }
  fit.points = lx.size();
  if (fit.points < 2) {
    throw ConfigError(fmt::format("slope fit: only {} usable point(s) in [{}, {}]{}", fit.points,
                                  k_min, k_max, fit.truncated ? " (" + fit.note + ")" : ""));
  }
  const double n = static_cast<double>(fit.points);
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

namespace {

Interval percentile_interval(std::vector<double> stats) {
  std::sort(stats.begin(), stats.end());
  const double last = static_cast<double>(stats.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(0.025 * last));
  const auto hi = static_cast<std::size_t>(std::ceil(0.975 * last));
  return {stats[lo], stats[hi]};
}

}  // namespace

Interval bootstrap_mean_ci(const std::vector<double>& samples, std::uint64_t seed,
                           std::size_t resamples) {
  if (samples.empty()) throw ConfigError("bootstrap: no samples");
  if (resamples < 1) throw ConfigError("bootstrap: need at least one resample");
  Rng rng(seed, kBootstrapStream);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) sum += samples[rng.uniform_index(samples.size())];
    m = sum / static_cast<double>(samples.size());
  }
  return percentile_interval(std::move(means));
}

std::string to_string(Metric m) { return m == Metric::abs_f_gap ? "abs_f_gap" : "dist_X"; }

namespace {

std::optional<double> metric_of(const RunRecord& r, Metric m) {
  if (m == Metric::dist_X) return r.dist_X;
  if (!r.f_gap) return std::nullopt;
  return std::abs(*r.f_gap);
}

/// Seed-mean of the metric at each k common to the selected runs.
void mean_curve(const std::vector<std::vector<RunRecord>>& runs,
                const std::vector<std::size_t>& pick, Metric metric, std::vector<std::size_t>& ks,
                std::vector<double>& means) {
  ks.clear();
  means.clear();
  const auto& first = runs[pick.front()];
  for (std::size_t row = 0; row < first.size(); ++row) {
    double sum = 0.0;
    bool complete = true;
    for (std::size_t s : pick) {
      const auto& run = runs[s];
      if (row >= run.size() || run[row].k != first[row].k) {
        throw ConfigError("rate check: runs log different iterations");
      }
      const auto v = metric_of(run[row], metric);
      if (!v) {
        complete = false;
        break;
      }
      sum += *v;
    }
    if (!complete) continue;
    ks.push_back(first[row].k);
    means.push_back(sum / static_cast<double>(pick.size()));
  }
}

}  // namespace

RateReport rate_check(const std::vector<std::vector<RunRecord>>& runs, std::size_t k_min,
                      std::size_t k_max, std::uint64_t bootstrap_seed) {
  if (runs.empty() || runs.front().empty()) throw WindowError("rate check: no data");
  if (k_min == 0 || k_max < 100 * k_min) {
    throw WindowError(fmt::format("rate check: window [{}, {}] spans less than a factor 100",
                                  k_min, k_max));
  }
  std::size_t lowest = runs.front().front().k;
  std::size_t highest = runs.front().back().k;
  if (lowest > k_min || highest < k_max) {
    throw WindowError(fmt::format("rate check: data cover k in [{}, {}], window is [{}, {}]",
                                  lowest, highest, k_min, k_max));
  }

  RateReport report{{}, k_min, k_max};
  std::vector<std::size_t> all(runs.size());
  std::iota(all.begin(), all.end(), 0);
  for (Metric metric : {Metric::abs_f_gap, Metric::dist_X}) {
    std::vector<std::size_t> ks;
    std::vector<double> means;
    mean_curve(runs, all, metric, ks, means);
    if (ks.empty()) continue;  // metric not recorded
    SlopeReport sr{metric, {}, 0.0, {0.0, 0.0}};
    try {
      sr.fit = fit_loglog_slope(ks, means, k_min, k_max);
    } catch (const ConfigError& e) {
      throw WindowError(fmt::format("rate check ({}): {}", to_string(metric), e.what()));
    }
    Rng rng(bootstrap_seed, kBootstrapStream);
    std::vector<double> slopes;
    std::vector<std::size_t> pick(runs.size());
    for (std::size_t b = 0; b < kBootstrapResamples; ++b) {
      for (auto& p : pick) p = rng.uniform_index(runs.size());
      mean_curve(runs, pick, metric, ks, means);
      try {
        slopes.push_back(fit_loglog_slope(ks, means, k_min, k_max).slope);
      } catch (const ConfigError&) {
        // A resample whose window collapses carries no slope.
      }
    }
    if (!slopes.empty()) {
      sr.interval = percentile_interval(std::move(slopes));
      sr.half_width = sr.interval.half_width();
    } else {
      sr.interval = {sr.fit.slope, sr.fit.slope};
    }
    report.slopes.push_back(std::move(sr));
  }
  if (report.slopes.empty()) throw WindowError("rate check: neither metric was recorded");
  return report;
}

// ---------------------------------------------------------------------------
// Minibatch sweep

SweepReport minibatch_sweep(const RunConfig& config, const std::vector<std::size_t>& N_list) {
  if (N_list.size() < 2) throw ConfigError("sweep needs at least two values of N");
  config.validate();
  SweepReport report;
  const BenchmarkInstance instance = build_instance(config);
  const std::uint64_t boot_seed = config.seeds.front();

  // The regularity constant concerns single draws, whose marginal does not
  // depend on N for the uniform samplers.
  try {
    const SamplerSpec sspec = sampler_spec_for(config.sampler, N_list.front(), instance.poly.rows());
    report.c_hat = estimate_regularity_c(instance.poly, instance.spec.simple_set,
                                         sspec.make(instance.poly.rows(), boot_seed),
                                         N_list.front(), 64, boot_seed);
  } catch (const ConfigError&) {
    report.c_hat = std::nullopt;
  }

  std::optional<BetaRule> rule;
  if (config.beta == "optimal") {
    rule = BetaRule{BetaRule::Kind::optimal, 1.0, config.delta};
  } else if (config.beta == "extrapolated") {
    rule = BetaRule{BetaRule::Kind::extrapolated, 1.0, config.delta};
  } else if (config.beta != "adaptive") {
    rule = BetaRule{BetaRule::Kind::fixed, parse_double("beta", config.beta), config.delta};
  }

  for (std::size_t N : N_list) {
    RunConfig c = config;
    c.N = N;
    c.output.clear();
    const Experiment exp = run_experiment(c);
    SweepRow row{};
    row.N = N;
    row.beta = solver_config_for(c, exp.instance, c.seeds.front()).beta.initial();
    for (const auto& run : exp.runs) {
      if (run.empty() || !run.back().dist_X) throw ConfigError("sweep: run did not record dist_X");
      row.final_dist.push_back(*run.back().dist_X);
    }
    row.mean_final_dist = std::accumulate(row.final_dist.begin(), row.final_dist.end(), 0.0) /
                          static_cast<double>(row.final_dist.size());
    row.ci = bootstrap_mean_ci(row.final_dist, boot_seed);
    if (rule && report.c_hat) {
      try {
        const SamplerSpec sspec = sampler_spec_for(config.sampler, N, instance.poly.rows());
        row.prediction =
            qb_curves(instance.poly, sspec, *report.c_hat, instance.spec.M_g, *rule, {N}).front();
      } catch (const ConfigError&) {
        row.prediction = std::nullopt;
      }
    }
    report.rows.push_back(std::move(row));
  }

  auto b_of = [&](const SweepRow& r) -> std::optional<double> {
    if (!r.prediction) return std::nullopt;
    const auto& k = config.variant == Variant::parallel ? r.prediction->parallel
                                                        : r.prediction->sequential;
    if (!k) return std::nullopt;
    return k->b;
  };
  const SweepRow& base = report.rows.front();
  for (auto& r : report.rows) {
    r.measured_ratio = r.mean_final_dist / base.mean_final_dist;
    const auto b0 = b_of(base);
    const auto b = b_of(r);
    if (b0 && b) r.predicted_ratio = std::sqrt(*b0 / *b);
  }
  return report;
}

}  // namespace mbproj
