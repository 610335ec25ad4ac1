#include "mbproj/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "mbproj/error.hpp"

namespace mbproj {

void PolyhedronSpec::check_normalized(double tol) const {
  if (A.rows() != b.size()) throw ConfigError("polyhedron: A and b disagree in row count");
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    if (std::abs(A.row(r).norm() - 1.0) > tol) {
      throw ConfigError(fmt::format("polyhedron row {} has norm {:.17g}, expected 1", r,
                                    A.row(r).norm()));
    }
  }
}

PolyhedronSpec PolyhedronSpec::normalized(Matrix A, Vector b) {
  if (A.rows() != b.size()) throw ConfigError("polyhedron: A and b disagree in row count");
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double norm = A.row(r).norm();
    if (!(norm > 0.0)) throw ConfigError(fmt::format("polyhedron row {} is zero", r));
    A.row(r) /= norm;
    b(r) /= norm;
  }
  return {std::move(A), std::move(b)};
}

Vector project_simple(const SimpleSet& set, const Vector& v) { return set.project(v); }

double max_violation(const PolyhedronSpec& poly, const Vector& v) {
  double worst = 0.0;
  for (std::size_t r = 0; r < poly.rows(); ++r) worst = std::max(worst, poly.value(r, v));
  return worst;
}

namespace {

/// Exact projection of v onto {A_S z + b_S = 0} for the rows in `active`,
/// growing/shrinking the set until KKT holds or the round budget runs out.
std::optional<Vector> polish_active_set(const PolyhedronSpec& poly, const SimpleSet& set,
                                        const Vector& v, std::vector<std::size_t> active,
                                        double tol) {
  const std::size_t rounds = poly.rows() + poly.dimension() + 4;
  for (std::size_t round = 0; round < rounds; ++round) {
    Vector z = v;
    Vector multipliers;
    if (!active.empty()) {
      Matrix As(static_cast<Eigen::Index>(active.size()), poly.A.cols());
      Vector rhs(static_cast<Eigen::Index>(active.size()));
      for (std::size_t i = 0; i < active.size(); ++i) {
        As.row(static_cast<Eigen::Index>(i)) = poly.A.row(static_cast<Eigen::Index>(active[i]));
        rhs(static_cast<Eigen::Index>(i)) = poly.value(active[i], v);
      }
      const Matrix gram = As * As.transpose();
      multipliers = gram.completeOrthogonalDecomposition().solve(rhs);
      z = v - As.transpose() * multipliers;
    }

    // Most negative multiplier leaves; otherwise the most violated row enters.
    Eigen::Index drop = -1;
    double most_negative = -1e-12;
    for (Eigen::Index i = 0; i < multipliers.size(); ++i) {
      if (multipliers(i) < most_negative) {
        most_negative = multipliers(i);
        drop = i;
      }
    }
    if (drop >= 0) {
      active.erase(active.begin() + drop);
      continue;
    }
    std::size_t enter = poly.rows();
    double worst = tol * 1e-2;
    for (std::size_t r = 0; r < poly.rows(); ++r) {
      const double g = poly.value(r, z);
      if (g > worst && std::find(active.begin(), active.end(), r) == active.end()) {
        worst = g;
        enter = r;
      }
    }
    if (enter < poly.rows()) {
      active.push_back(enter);
      continue;
    }
    if (max_violation(poly, z) > tol * 1e-2) return std::nullopt;
    // The projection onto the polyhedron is also the projection onto the
    // intersection with Y whenever it already lies in Y.
    if (set.distance(z) > 0.0) return std::nullopt;
    return z;
  }
  return std::nullopt;
}

}  // namespace

ProjectionResult project_polyhedron(const PolyhedronSpec& poly, const SimpleSet& set,
                                    const Vector& v, double tol) {
  if (!(tol > 0.0)) throw ConfigError("distance oracle tolerance must be positive");
  if (!all_finite(v)) throw OracleError("distance oracle called at a non-finite point");
  const std::size_t m = poly.rows();
  std::vector<double> row_norm_sq(m);
  for (std::size_t r = 0; r < m; ++r) {
    row_norm_sq[r] = poly.A.row(static_cast<Eigen::Index>(r)).squaredNorm();
  }

  Vector x = v;
  std::vector<double> lambda(m, 0.0);
  Vector set_increment = Vector::Zero(v.size());
  double previous = std::numeric_limits<double>::infinity();
  double estimate = 0.0;
  std::size_t sweep = 0;
  bool converged = false;
  for (sweep = 1; sweep <= kDykstraSweepCap; ++sweep) {
    for (std::size_t r = 0; r < m; ++r) {
      const auto row = poly.A.row(static_cast<Eigen::Index>(r));
      const double excess = row.dot(x) + lambda[r] * row_norm_sq[r] + poly.b(static_cast<Eigen::Index>(r));
      const double updated = excess > 0.0 ? excess / row_norm_sq[r] : 0.0;
      if (updated != lambda[r]) x += (lambda[r] - updated) * row.transpose();
      lambda[r] = updated;
    }
    const Vector shifted = x + set_increment;
    x = set.project(shifted);
    set_increment = shifted - x;

    estimate = (x - v).norm();
    if (std::abs(estimate - previous) < tol / 10.0 && max_violation(poly, x) < tol) {
      converged = true;
      break;
    }
    previous = estimate;
  }
  if (!converged) {
    throw ConvergenceError(
        fmt::format("distance oracle: no convergence after {} sweeps (estimate {:.17g})",
                    kDykstraSweepCap, estimate),
        estimate);
  }

  std::vector<std::size_t> active;
  for (std::size_t r = 0; r < m; ++r) {
    if (lambda[r] > 0.0) active.push_back(r);
  }
  if (auto exact = polish_active_set(poly, set, v, std::move(active), tol)) {
    const double d = (*exact - v).norm();
    return {std::move(*exact), d, sweep, true};
  }
  return {std::move(x), estimate, sweep, false};
}

double distance_oracle(const PolyhedronSpec& poly, const SimpleSet& set, const Vector& v,
                       double tol) {
  return project_polyhedron(poly, set, v, tol).distance;
}

Vector simple_set_anchor(const SimpleSet& set, std::size_t dimension) {
  switch (set.kind()) {
    case SimpleSet::Kind::ball:
      return std::get<SimpleSet::Ball>(set.shape()).center;
    case SimpleSet::Kind::box: {
      const auto& b = std::get<SimpleSet::Box>(set.shape());
      Vector mid(static_cast<Eigen::Index>(dimension));
      for (Eigen::Index i = 0; i < mid.size(); ++i) {
        const bool bounded = std::isfinite(b.lower(i)) && std::isfinite(b.upper(i));
        mid(i) = bounded ? 0.5 * (b.lower(i) + b.upper(i)) : std::clamp(0.0, b.lower(i), b.upper(i));
      }
      return mid;
    }
    default:
      return set.project(Vector::Zero(static_cast<Eigen::Index>(dimension)));
  }
}

double estimate_regularity_c(const PolyhedronSpec& poly, const SimpleSet& set,
                             const std::vector<Marginal>& marginals,
                             const std::vector<Vector>& probes) {
  if (marginals.empty()) throw ConfigError("regularity estimate needs at least one marginal");
  double c_hat = 0.0;
  bool any_infeasible = false;
  for (const Vector& y : probes) {
    const double dist = distance_oracle(poly, set, y);
    if (dist <= kTolMetric) continue;
    any_infeasible = true;
    for (const Marginal& marginal : marginals) {
      double expected = 0.0;
      for (const auto& [w, p] : marginal) {
        const double g = std::max(poly.value(static_cast<std::size_t>(w), y), 0.0);
        expected += p * g * g;
      }
      if (expected <= 0.0) {
        throw ConfigError(fmt::format(
            "probe at distance {:.6g} from X has zero expected squared violation: the sampler "
            "cannot see the violated constraints",
            dist));
      }
      c_hat = std::max(c_hat, dist * dist / expected);
    }
  }
  if (!any_infeasible) throw ConfigError("regularity estimate: every probe was feasible");
  return c_hat;
}

double estimate_regularity_c(const PolyhedronSpec& poly, const SimpleSet& set,
                             const Sampler& sampler, std::size_t batch_size,
                             std::size_t n_probe, std::uint64_t seed) {
  if (n_probe == 0) throw ConfigError("regularity estimate needs n_probe >= 1");
  std::vector<Marginal> marginals;
  if (auto exact = sampler.draw_marginals(batch_size)) {
    marginals = std::move(*exact);
  } else {
    constexpr std::size_t kDraws = 10'000;
    Sampler copy = sampler;
    std::vector<std::map<ConstraintIndex, double>> counts(batch_size);
    for (std::size_t d = 0; d < kDraws; ++d) {
      const auto batch = copy.draw_minibatch(batch_size);
      for (std::size_t i = 0; i < batch_size; ++i) counts[i][batch[i]] += 1.0 / kDraws;
    }
    for (auto& c : counts) marginals.emplace_back(c.begin(), c.end());
  }

  const Vector anchor =
      project_polyhedron(poly, set, simple_set_anchor(set, poly.dimension())).point;
  Rng rng(seed, kProbeStream);
  constexpr double kRadii[] = {0.1, 1.0, 10.0};
  std::vector<Vector> probes;
  probes.reserve(n_probe);
  for (std::size_t i = 0; i < n_probe; ++i) {
    probes.push_back(set.project(anchor + kRadii[i % 3] * rng.normal_vector(poly.dimension())));
  }
  return estimate_regularity_c(poly, set, marginals, probes);
}

}  // namespace mbproj
