#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mbproj/problems.hpp"
#include "mbproj/solver.hpp"

namespace mbproj {

/// Exit codes of the command line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitSolverAbort = 3,
  kExitWindow = 4,
};

/// Everything needed to reproduce an experiment.
///
/// The file format is flat `key = value` text with optional `[section]`
/// headers (sections are informational; keys are unique across sections).
/// `#` and `;` start comments. See README.md for the key list.
struct RunConfig {
  GeneratorParams problem{"random", 10, 20, 4, 1};
  std::string instance_file;  // overrides `problem` when set

  Variant variant = Variant::parallel;
  std::size_t N = 4;
  /// "1.0" (any number), "optimal", "extrapolated" or "adaptive".
  std::string beta = "1.0";
  double delta = 0.1;
  /// Known L_N; computed from the instance when empty and needed.
  std::optional<double> LN;
  Sampler::Kind sampler = Sampler::Kind::iid_uniform;
  std::size_t iterations = 10000;
  InitRule init = InitRule::project_origin;
  double init_scale = 1.0;
  std::vector<std::uint64_t> seeds{1};
  LogCadence cadence;
  AssertionMode assertions = AssertionMode::off;
  std::size_t workers = 1;
  bool timing = false;
  std::string output;  // directory; empty disables file output

  /// Throws ConfigError on non-positive counts or empty seed lists.
  void validate() const;
  /// Effective configuration as `key = value` lines.
  std::vector<std::string> echo() const;
};

/// Parses a config file. Errors are ConfigError with `source:line:` prefix.
RunConfig parse_config(std::istream& is, const std::string& source_name = "<config>");
RunConfig load_config(const std::string& path);
/// Applies one `key = value` assignment (also used for CLI overrides).
void apply_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// "1..20", "1,2,5" or "7".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

BenchmarkInstance build_instance(const RunConfig& config);
/// Solver configuration for one seed, resolving L_N-dependent beta policies
/// against the instance.
SolverConfig solver_config_for(const RunConfig& config, const BenchmarkInstance& instance,
                               std::uint64_t seed);

struct Experiment {
  BenchmarkInstance instance;
  std::vector<std::uint64_t> seeds;
  /// Records of each seed, in seed order.
  std::vector<std::vector<RunRecord>> runs;
  std::vector<RunResult> results;
};

/// Runs every seed (seeds run concurrently up to `workers`; results do not
/// depend on it).
Experiment run_experiment(const RunConfig& config);

inline constexpr const char* kCsvHeader =
    "seed,k,f_gap,max_violation,dist_X,LN_k,beta_k,elapsed_ns";

void write_run_csv(std::ostream& os, const std::vector<std::string>& comments,
                   const std::vector<RunRecord>& records);
std::vector<RunRecord> read_run_csv(std::istream& is);

struct AggregateRow {
  std::size_t k;
  std::size_t n_seeds;
  std::optional<double> f_gap;
  std::optional<double> abs_f_gap;
  std::optional<double> max_violation;
  std::optional<double> dist_X;
  std::optional<double> LN_k;
  double beta_k;
};

inline constexpr const char* kAggregateHeader =
    "k,n_seeds,f_gap,abs_f_gap,max_violation,dist_X,LN_k,beta_k";

/// Mean over seeds at every logged k (empty fields are skipped).
std::vector<AggregateRow> aggregate(const std::vector<std::vector<RunRecord>>& runs);
void write_aggregate_csv(std::ostream& os, const std::vector<std::string>& comments,
                         const std::vector<AggregateRow>& rows);

/// Writes run_seed<seed>.csv per seed and aggregate.csv into `dir`.
void write_experiment(const std::string& dir, const RunConfig& config, const Experiment& exp);
/// Reads every run_seed*.csv in `dir`, ordered by seed.
std::vector<std::vector<RunRecord>> read_experiment_runs(const std::string& dir);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
  std::size_t k_lo = 0;
  std::size_t k_hi = 0;
  bool truncated = false;
  std::string note;
};

/// Least squares fit of log(value) against log(k) over k in [k_min, k_max].
/// The window stops at the first value <= floor (noted as truncated).
/// Throws ConfigError when fewer than two points remain.
SlopeFit fit_loglog_slope(const std::vector<std::size_t>& ks, const std::vector<double>& values,
                          std::size_t k_min, std::size_t k_max, double floor = kTolMetric);

struct Interval {
  double lo;
  double hi;
  double half_width() const { return 0.5 * (hi - lo); }
};

inline constexpr std::size_t kBootstrapResamples = 200;

/// Percentile bootstrap (95%) of the mean of `samples`.
Interval bootstrap_mean_ci(const std::vector<double>& samples, std::uint64_t seed,
                           std::size_t resamples = kBootstrapResamples);

enum class Metric { abs_f_gap, dist_X };
std::string to_string(Metric m);

struct SlopeReport {
  Metric metric;
  SlopeFit fit;
  /// Half-width of the 95% over-seeds bootstrap interval of the slope.
  double half_width = 0.0;
  Interval interval{0.0, 0.0};
};

struct RateReport {
  std::vector<SlopeReport> slopes;
  std::size_t k_min;
  std::size_t k_max;
};

/// Slopes of the seed-mean |f_gap| and dist_X over [k_min, k_max].
/// Throws WindowError when k_max / k_min < 100 or the data do not cover the
/// window.
RateReport rate_check(const std::vector<std::vector<RunRecord>>& runs, std::size_t k_min,
                      std::size_t k_max, std::uint64_t bootstrap_seed = 0);

class WindowError : public Error {
 public:
  using Error::Error;
};

struct SweepRow {
  std::size_t N;
  double beta;
  std::vector<double> final_dist;  // per seed
  double mean_final_dist;
  Interval ci;
  std::optional<QbRow> prediction;
  /// Predicted dist ratio 1/sqrt(b_N) relative to the first N (when both are
  /// inside the theory).
  std::optional<double> predicted_ratio;
  double measured_ratio;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::optional<double> c_hat;
};

/// Runs the configuration for every N with the same seeds and budget and
/// juxtaposes measured final dist_X with the qb_curves prediction.
SweepReport minibatch_sweep(const RunConfig& config, const std::vector<std::size_t>& N_list);

/// Entry point of the `mbproj` tool; returns the process exit code.
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace mbproj
