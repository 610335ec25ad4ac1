#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbproj/error.hpp"
#include "mbproj/geometry.hpp"
#include "mbproj/oracle.hpp"
#include "mbproj/sampling.hpp"

namespace mbproj {

enum class Variant { parallel, sequential };
std::string to_string(Variant v);

/// Feasibility stepsize rule.
///  - fixed: constant beta (optionally with the known L_N, which widens the
///    admissible interval of the parallel method to (0, 2/L_N)).
///  - extrapolated: beta = (2 - delta) / L_N with L_N known.
///  - adaptive: beta_k = (2 - delta) / L_N^k from the current minibatch.
struct BetaPolicy {
  enum class Kind { fixed, extrapolated, adaptive };

  Kind kind = Kind::fixed;
  double value = 1.0;
  double delta = 0.1;
  std::optional<double> known_LN;

  static BetaPolicy fixed(double beta, std::optional<double> known_LN = std::nullopt);
  /// Fixed beta = 1/L_N, the maximizer of beta (2 - beta L_N).
  static BetaPolicy optimal(double known_LN);
  static BetaPolicy extrapolated(double delta, double known_LN);
  static BetaPolicy adaptive(double delta = 0.1);

  /// beta used before any minibatch has been observed.
  double initial() const;
  std::string describe() const;
};

/// alpha_k = 4 / (mu (k + 1)) = (2/mu) gamma_k with gamma_k = 2 / (k + 1).
struct StepsizePolicy {
  double mu = 1.0;
  BetaPolicy beta;

  static double gamma(std::size_t k) { return 2.0 / static_cast<double>(k + 1); }
  double alpha(std::size_t k) const { return 4.0 / (mu * static_cast<double>(k + 1)); }

  /// Throws ConfigError when beta or delta lies outside the admissible range
  /// for the variant.
  void validate(Variant variant) const;
};

/// beta (2 - beta L_N): per-iteration decrease coefficient of the parallel
/// method (L_N = 1 gives the sequential coefficient).
inline double decrease_coefficient(double beta, double LN) { return beta * (2.0 - beta * LN); }

struct SamplerSpec {
  Sampler::Kind kind = Sampler::Kind::iid_uniform;
  IndexBlocks blocks;
  std::vector<std::size_t> draws_per_block;
  Sampler::Generator generator;

  Sampler make(std::optional<std::size_t> family_size, std::uint64_t seed) const;
};

struct LogCadence {
  enum class Kind { geometric, every };
  Kind kind = Kind::geometric;
  std::size_t stride = 1;

  /// geometric: k in {1, 2, 4, 8, ...} plus the final iteration.
  bool should_log(std::size_t k, std::size_t final_k) const;
};

enum class InitRule { project_origin, gaussian };
enum class AssertionMode { off, lemma_checks };

struct SolverConfig {
  Variant variant = Variant::parallel;
  std::size_t batch_size = 1;
  BetaPolicy beta;
  std::size_t iterations = 1000;
  SamplerSpec sampler;
  std::uint64_t seed = 1;
  InitRule init = InitRule::project_origin;
  double init_scale = 1.0;
  LogCadence cadence;
  AssertionMode assertions = AssertionMode::off;
  /// Workers for the parallel inner fan-out. Never changes results.
  std::size_t workers = 1;
  bool keep_history = false;
  bool record_time = false;
};

/// Per-minibatch quantities of the parallel update.
struct BatchStepDiagnostics {
  /// ||mean w_i||^2 / mean ||w_i||^2 with w_i = g_i^+ d_i / ||d_i||^2; NaN
  /// when every g_i^+ is zero.
  double LN_k = 0.0;
  /// (1/N) sum ||w_i - mean w||^2.
  double V_N = 0.0;
  /// (1/N) sum (g_i^+)^2.
  double mean_sq_violation = 0.0;
  /// (1/N) sum (g_i^+)^2 / ||d_i||^2 = (1/N) sum ||w_i||^2.
  double mean_weighted_sq = 0.0;
  std::vector<double> per_index_gplus;
  std::vector<double> per_index_d_norm_sq;

  bool any_violation() const { return mean_weighted_sq > 0.0; }
};

/// Iterate bookkeeping including the streaming weighted average
/// x_hat_t = sum_{j=1..t} (j+1)^2 x_j / S_t.
struct IterateState {
  std::size_t k = 0;
  Vector x;
  Vector v;
  Vector weighted_sum_x;
  std::uint64_t S = 0;
  double last_LN_k = 0.0;

  void accumulate(const Vector& x_k);
  Vector average() const;
};

/// S_t = sum_{j=1}^{t} (j+1)^2.
std::uint64_t weight_sum(std::size_t t);

Vector polyak_step(double g_plus, const Vector& d, const Vector& v, double beta);

/// g^+ and direction for each index at the same point; evaluated
/// independently, so safe to fan out.
std::vector<PositivePart> evaluate_batch(const ProblemSpec& spec,
                                         std::span<const ConstraintIndex> indices,
                                         const Vector& v, std::size_t workers = 1);

BatchStepDiagnostics batch_diagnostics(std::span<const PositivePart> batch);

struct ParallelUpdate {
  Vector x_next;
  Vector z_bar;
  std::vector<Vector> z;
  BatchStepDiagnostics diag;
};

/// z^i = polyak_step at v for every index, averaged in index order and
/// projected onto Y.
ParallelUpdate parallel_feasibility_update(const ProblemSpec& spec,
                                           std::span<const ConstraintIndex> indices,
                                           const Vector& v, double beta, std::size_t workers = 1);
ParallelUpdate parallel_feasibility_update(const ProblemSpec& spec,
                                           std::span<const PositivePart> batch, const Vector& v,
                                           double beta);

struct SequentialUpdate {
  Vector x_next;
  std::vector<double> per_step_gplus;
  std::vector<double> per_step_d_norm_sq;
  /// z^0 = v, ..., z^N = x_next.
  std::vector<Vector> z;
};

SequentialUpdate sequential_feasibility_update(const ProblemSpec& spec,
                                               std::span<const ConstraintIndex> indices,
                                               const Vector& v, double beta);

Vector objective_step(const ProblemSpec& spec, const Vector& x_prev, double alpha);

struct RunRecord {
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::optional<double> f_gap;
  std::optional<double> max_violation;
  std::optional<double> dist_X;
  std::optional<double> LN_k;
  double beta_k = 0.0;
  std::int64_t elapsed_ns = 0;
};

struct RunResult {
  std::vector<RunRecord> records;
  IterateState final_state;
  /// Running max of L_N^k over iterations with a violated minibatch.
  std::optional<double> max_LN_k;
  /// x_1..x_t and v_1..v_t when keep_history is set.
  std::vector<Vector> x_history;
  std::vector<Vector> v_history;
  std::size_t lemma_checks = 0;
  /// Smallest slack over all lemma checks (+inf when none ran).
  double worst_lemma_slack = 0.0;
};

/// Executes the configured variant for config.iterations outer iterations.
/// `polyhedron` enables dist_X metrics and is required for lemma checks.
/// Throws SolverAbort on non-finite iterates and AssertionViolation when a
/// lemma check fails.
RunResult run(const ProblemSpec& spec, const SolverConfig& config,
              const PolyhedronSpec* polyhedron = nullptr);

/// Per-iteration inequality verification against a fixed feasible point.
/// Each check throws AssertionViolation when its slack drops below -tol.
class LemmaChecker {
 public:
  LemmaChecker(const PolyhedronSpec& poly, const SimpleSet& set, Vector feasible_point,
               double M_g, double tol = kTolAssert);

  /// ||y - zbar||^2 <= ||v - zbar||^2 - beta (2 - beta) g^2 / ||d||^2 where
  /// y is the (projected) Polyak step from v.
  void polyak(const Vector& v, const Vector& y, double beta, double g_plus, double d_norm_sq,
              const IterationSnapshot& at);
  /// ||P(v) - y||^2 <= ||v - y||^2 - ||P(v) - v||^2 against the feasible point.
  void projection(const Vector& before, const Vector& after, const IterationSnapshot& at);
  /// dist^2 decrease of the averaged parallel update, both the variance form
  /// and the L_N form with the given surrogate.
  void parallel(const Vector& v, const Vector& x_next, double beta,
                const BatchStepDiagnostics& diag, double LN_surrogate,
                const IterationSnapshot& at);
  /// Per-step and summed relations of the sequential update.
  void sequential(const SequentialUpdate& update, double beta, const IterationSnapshot& at);

  std::size_t checks() const { return checks_; }
  double worst_slack() const { return worst_slack_; }

 private:
  void record(double slack, const char* name, const IterationSnapshot& at);
  double dist_sq(const Vector& v) const;

  const PolyhedronSpec* poly_;
  const SimpleSet* set_;
  Vector feasible_;
  double M_g_;
  double tol_;
  std::size_t checks_ = 0;
  double worst_slack_;
};

/// Residual of ||u_bar - w||^2 = (1/N) sum ||u_i - w||^2 - (1/N) sum ||u_j - u_bar||^2.
double averages_identity_residual(std::span<const Vector> u, const Vector& w);

struct AnalysisConstants {
  double q;
  double b;
};

/// Parallel: q_N = beta (2 - beta L_N) / (c M_g^2), b_N^p = 1/(1 - q_N) - 1.
/// Sequential: q = beta (2 - beta) / (c M_g^2), b_N^s = (1 - q)^{-N} - 1.
/// Throws ConfigError outside the regime covered by the rate theory.
AnalysisConstants analysis_constants(double LN, double c, double M_g, double beta,
                                     std::size_t N, Variant variant);

}  // namespace mbproj
