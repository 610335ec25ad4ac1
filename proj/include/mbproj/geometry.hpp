#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mbproj/oracle.hpp"
#include "mbproj/sampling.hpp"

namespace mbproj {

/// Shared tolerance ladder for metrics and inequality checks.
inline constexpr double kTolMetric = 1e-8;
inline constexpr double kTolAssert = 1e-7;

/// Linear constraints a_w^T x + b_w <= 0 with unit-norm rows a_w.
struct PolyhedronSpec {
  Matrix A;
  Vector b;

  std::size_t rows() const { return static_cast<std::size_t>(A.rows()); }
  std::size_t dimension() const { return static_cast<std::size_t>(A.cols()); }
  double value(std::size_t row, const Vector& v) const { return A.row(row).dot(v) + b(row); }

  /// Throws ConfigError unless every row has norm 1 within `tol`.
  void check_normalized(double tol = 1e-12) const;
  /// Returns a copy with rows (and offsets) rescaled to unit norm.
  static PolyhedronSpec normalized(Matrix A, Vector b);
};

Vector project_simple(const SimpleSet& set, const Vector& v);

/// max_w (a_w^T v + b_w)^+.
double max_violation(const PolyhedronSpec& poly, const Vector& v);

struct ProjectionResult {
  Vector point;
  double distance;
  std::size_t sweeps;
  /// True when the active-set polish certified the KKT conditions.
  bool certified;
};

inline constexpr std::size_t kDykstraSweepCap = 1'000'000;

/// Euclidean projection of v onto X = Y ∩ {a_w^T x + b_w <= 0}.
///
/// Dykstra's alternating projection over the halfspaces and Y, stopped once
/// successive distance estimates differ by less than tol/10 with the current
/// point within tol of every set. The active set read off the Dykstra
/// increments is then solved exactly and accepted when it satisfies the KKT
/// conditions. Throws ConvergenceError after kDykstraSweepCap sweeps.
ProjectionResult project_polyhedron(const PolyhedronSpec& poly, const SimpleSet& set,
                                    const Vector& v, double tol = kTolMetric);

/// dist(v, X) within tol; see project_polyhedron.
double distance_oracle(const PolyhedronSpec& poly, const SimpleSet& set, const Vector& v,
                       double tol = kTolMetric);

/// Empirical regularity constant: max over infeasible probes y of
/// dist^2(y, X) / E[(g_w^+(y))^2], the expectation taken under each draw
/// position's marginal (worst position), exact for finite marginals.
///
/// Throws ConfigError if a probe at positive distance has zero expected
/// squared violation, or if no probe is infeasible.
double estimate_regularity_c(const PolyhedronSpec& poly, const SimpleSet& set,
                             const std::vector<Marginal>& marginals,
                             const std::vector<Vector>& probes);

/// Probes are Y-projected Gaussian points at radii {0.1, 1, 10} around a
/// feasible anchor (the projection of Y's center onto X). When the sampler
/// has no closed-form marginal the expectation is estimated by Monte Carlo
/// over 10^4 minibatch draws of a copy of the sampler.
double estimate_regularity_c(const PolyhedronSpec& poly, const SimpleSet& set,
                             const Sampler& sampler, std::size_t batch_size,
                             std::size_t n_probe, std::uint64_t seed);

/// Center of Y used as the default anchor (origin for whole-space).
Vector simple_set_anchor(const SimpleSet& set, std::size_t dimension);

}  // namespace mbproj
