#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mbproj/geometry.hpp"
#include "mbproj/oracle.hpp"
#include "mbproj/sampling.hpp"
#include "mbproj/solver.hpp"

namespace mbproj {

struct GeneratorParams {
  std::string family;  // "random", "orthonormal", "duplicated", "orthant2", "file"
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t N_partition = 1;
  std::uint64_t seed = 0;
  /// Interior margins of the anchor are drawn uniformly from this range.
  double margin_low = 0.5;
  double margin_high = 1.5;
  /// Distance by which the objective center overshoots the first face hit
  /// along the generated ray.
  double overshoot = 1.0;
};

/// Polyhedral benchmark: f(x) = 1/2 ||x - center||^2 over
/// Y ∩ {a_w^T x + b_w <= 0}, with mu = 1, M_g = 1 and M_f = sup_Y ||x - center||.
struct BenchmarkInstance {
  ProblemSpec spec;
  PolyhedronSpec poly;
  Vector center;
  Vector anchor;
  GeneratorParams params;
};

/// Builds the problem from its data; x* is the projection of the center onto
/// X (certified by the distance oracle). Throws ConfigError if Y is
/// unbounded (M_f would be infinite) or X is empty.
BenchmarkInstance make_quadratic_instance(PolyhedronSpec poly, Vector center, SimpleSet set,
                                          Vector anchor, GeneratorParams params);

/// Random unit rows with a strictly feasible anchor; the objective center is
/// placed beyond the polyhedron so that x* lies on at least one face.
/// Y = ball(anchor, R) with R = 1.5 ||center - anchor|| + 1. Retries up to 100
/// rays before throwing ConfigError.
BenchmarkInstance make_polyhedral_benchmark(std::size_t n, std::size_t m,
                                            std::size_t N_partition, std::uint64_t seed);

/// Same construction with orthonormal rows (m <= n); L_N = 1/N for subsets
/// of distinct rows.
BenchmarkInstance make_orthonormal_benchmark(std::size_t n, std::size_t m, std::uint64_t seed);

/// Every row is the same unit direction with distinct offsets; L_N = 1 for
/// every N.
BenchmarkInstance make_duplicated_benchmark(std::size_t n, std::size_t m, std::uint64_t seed);

/// Constraints x1 <= 0, x2 <= 0, center (1, 1), so x* = 0 and f* = 1.
BenchmarkInstance make_orthant2_benchmark();

/// Generic entry point on the generator family name.
BenchmarkInstance make_builtin(const GeneratorParams& params);

/// Plain-text instance format:
///
///     n m
///     a_11 ... a_1n b_1          (m rows)
///     ...
///     objective quadratic
///     c_1 ... c_n                (center of 1/2 ||x - c||^2)
///     simple_set ball            (then: center_1 ... center_n radius)
///     simple_set box             (then: lower line, upper line)
///
/// Blank lines and lines starting with '#' are ignored. Rows are normalized
/// to unit norm on load.
void write_instance(std::ostream& os, const BenchmarkInstance& instance);
BenchmarkInstance read_instance(std::istream& is, const std::string& source_name = "<stream>");
BenchmarkInstance load_instance(const std::string& path);

/// Admissible index sets for the L_N supremum.
struct LNScheme {
  enum class Kind {
    exhaustive,        ///< every subset of N distinct rows
    blocks,            ///< each block of an equal-size partition
    transversal,       ///< one row from each block
    with_replacement,  ///< iid draws; repeated rows are admissible
  };
  Kind kind = Kind::exhaustive;
  std::size_t N = 1;
  IndexBlocks blocks;

  static LNScheme exhaustive(std::size_t N) { return {Kind::exhaustive, N, {}}; }
  static LNScheme partition(IndexBlocks blocks);
  static LNScheme transversal(IndexBlocks blocks);
  static LNScheme with_replacement(std::size_t N) { return {Kind::with_replacement, N, {}}; }
};

/// Scheme matching a sampler spec for minibatch size N over m rows.
LNScheme scheme_for(const SamplerSpec& sampler, std::size_t N, std::size_t m);

inline constexpr std::size_t kMaxEnumeratedSubsets = 1'000'000;
inline constexpr std::size_t kPowerIterationCap = 100'000;

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a fixed pseudo-random start, to relative tolerance
/// `rel_tol` on the Rayleigh quotient. Throws ConvergenceError at the cap.
double largest_eigenvalue_psd(const Matrix& G, double rel_tol = 1e-10,
                              std::size_t max_iter = kPowerIterationCap);

struct LNAnalysis {
  double value;
  std::vector<ConstraintIndex> argmax;
  /// A is not of full row rank.
  bool rank_deficient;
};

/// max over admissible J of lambda_max(A_J A_J^T) / N.
LNAnalysis exact_LN_linear(const PolyhedronSpec& poly, const LNScheme& scheme);

/// How beta is chosen per minibatch size when tabulating rate constants.
///  - fixed: the same beta for both variants.
///  - optimal: 1/L_N for the parallel method, 1 for the sequential one.
///  - extrapolated: (2 - delta)/L_N parallel, 2 - delta sequential.
struct BetaRule {
  enum class Kind { fixed, optimal, extrapolated };
  Kind kind = Kind::fixed;
  double value = 1.0;
  double delta = 0.1;

  double parallel(double LN) const;
  double sequential() const;
};

struct QbRow {
  std::size_t N;
  double LN;
  double beta_parallel;
  std::optional<AnalysisConstants> parallel;
  double beta_sequential;
  std::optional<AnalysisConstants> sequential;
  /// Empty when both variants are inside the theory.
  std::string note;
};

/// Rate constants for each N. Rows outside the theory's regime carry no
/// constants for the offending variant and a note instead of throwing.
/// Throws ConfigError when c_hat M_g^2 <= 1 or N_range is empty.
std::vector<QbRow> qb_curves(const PolyhedronSpec& poly, const SamplerSpec& sampler,
                             double c_hat, double M_g, const BetaRule& beta_rule,
                             const std::vector<std::size_t>& N_range);

}  // namespace mbproj
