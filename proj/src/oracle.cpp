#include "mbproj/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "mbproj/error.hpp"
#include "mbproj/sampling.hpp"

namespace mbproj {

bool all_finite(const Vector& v) { return v.allFinite(); }

SimpleSet SimpleSet::whole_space() { return SimpleSet(WholeSpace{}); }

SimpleSet SimpleSet::box(Vector lower, Vector upper) {
  if (lower.size() != upper.size()) throw ConfigError("box bounds differ in dimension");
  if ((lower.array() > upper.array()).any()) throw ConfigError("box lower bound exceeds upper");
  return SimpleSet(Box{std::move(lower), std::move(upper)});
}

SimpleSet SimpleSet::ball(Vector center, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw ConfigError("ball radius must be positive");
  return SimpleSet(Ball{std::move(center), radius});
}

SimpleSet SimpleSet::halfspace(Vector normal, double offset) {
  if (!(normal.norm() > 0.0)) throw ConfigError("halfspace normal must be nonzero");
  return SimpleSet(Halfspace{std::move(normal), offset});
}

SimpleSet::Kind SimpleSet::kind() const {
  return static_cast<Kind>(shape_.index());
}

std::string SimpleSet::describe() const {
  switch (kind()) {
    case Kind::whole_space:
      return "whole-space";
    case Kind::box:
      return fmt::format("box(dim={})", std::get<Box>(shape_).lower.size());
    case Kind::ball: {
      const auto& b = std::get<Ball>(shape_);
      return fmt::format("ball(dim={}, radius={:.17g})", b.center.size(), b.radius);
    }
    case Kind::halfspace:
      return fmt::format("halfspace(offset={:.17g})", std::get<Halfspace>(shape_).offset);
  }
  return "?";
}

Vector SimpleSet::project(const Vector& v) const {
  switch (kind()) {
    case Kind::whole_space:
      return v;
    case Kind::box: {
      const auto& b = std::get<Box>(shape_);
      return v.cwiseMax(b.lower).cwiseMin(b.upper);
    }
    case Kind::ball: {
      const auto& b = std::get<Ball>(shape_);
      const Vector diff = v - b.center;
      const double r = diff.norm();
      if (r <= b.radius) return v;
      return b.center + (b.radius / r) * diff;
    }
    case Kind::halfspace: {
      const auto& h = std::get<Halfspace>(shape_);
      const double excess = h.normal.dot(v) - h.offset;
      if (excess <= 0.0) return v;
      return v - (excess / h.normal.squaredNorm()) * h.normal;
    }
  }
  return v;
}

ConstraintFamily ConstraintFamily::finite(std::size_t size, ValueFn value,
                                          SubgradientFn subgradient) {
  ConstraintFamily f;
  f.size_ = size;
  f.value_ = std::move(value);
  f.subgradient_ = std::move(subgradient);
  return f;
}

ConstraintFamily ConstraintFamily::unbounded(ValueFn value, SubgradientFn subgradient) {
  ConstraintFamily f;
  f.size_ = std::nullopt;
  f.value_ = std::move(value);
  f.subgradient_ = std::move(subgradient);
  return f;
}

ConstraintFamily ConstraintFamily::empty() {
  return finite(
      0, [](ConstraintIndex, const Vector&) -> double { return 0.0; },
      [](ConstraintIndex, const Vector& v) -> Vector { return Vector::Zero(v.size()); });
}

Vector fallback_direction(std::size_t dimension) { return Vector::Unit(dimension, 0); }

PositivePart positive_part_value_and_dir(const ConstraintFamily& family, ConstraintIndex omega,
                                         const Vector& v) {
  const double g = family.evaluate(omega, v);
  if (!std::isfinite(g)) {
    throw OracleError(fmt::format("constraint {} returned a non-finite value", omega));
  }
  if (g <= 0.0) return {0.0, fallback_direction(static_cast<std::size_t>(v.size()))};
  Vector d = family.subgradient(omega, v);
  if (d.size() != v.size() || !all_finite(d)) {
    throw OracleError(fmt::format("constraint {} returned an invalid subgradient", omega));
  }
  if (d.squaredNorm() == 0.0) {
    throw OracleError(
        fmt::format("constraint {} has g+ = {:.6g} > 0 but a zero subgradient", omega, g));
  }
  return {g, std::move(d)};
}

ConstraintFamily distance_constraints(std::vector<SimpleSet> sets) {
  auto shared = std::make_shared<const std::vector<SimpleSet>>(std::move(sets));
  const std::size_t m = shared->size();
  return ConstraintFamily::finite(
      m,
      [shared](ConstraintIndex w, const Vector& x) { return (*shared)[w].distance(x); },
      [shared](ConstraintIndex w, const Vector& x) -> Vector {
        const Vector diff = x - (*shared)[w].project(x);
        const double dist = diff.norm();
        if (dist == 0.0) return fallback_direction(static_cast<std::size_t>(x.size()));
        return diff / dist;
      });
}

ConstraintFamily affine_constraints(Matrix A, Vector b) {
  if (A.rows() != b.size()) throw ConfigError("affine constraints: A and b disagree");
  auto rows = std::make_shared<const Matrix>(std::move(A));
  auto offsets = std::make_shared<const Vector>(std::move(b));
  return ConstraintFamily::finite(
      static_cast<std::size_t>(rows->rows()),
      [rows, offsets](ConstraintIndex w, const Vector& x) {
        const auto r = static_cast<Eigen::Index>(w);
        return rows->row(r).dot(x) + (*offsets)(r);
      },
      [rows](ConstraintIndex w, const Vector&) -> Vector {
        return rows->row(static_cast<Eigen::Index>(w)).transpose();
      });
}

ObjectiveOracle squared_distance_objective(Vector center) {
  auto c = std::make_shared<const Vector>(std::move(center));
  return {[c](const Vector& x) { return 0.5 * (x - *c).squaredNorm(); },
          [c](const Vector& x) -> Vector { return x - *c; }};
}

bool ValidationReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

const CheckResult* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.passed ? "PASS " : "FAIL ") << c.name << " worst_margin=" << c.worst_margin;
    if (!c.detail.empty()) os << " (" << c.detail << ")";
    os << '\n';
  }
  return os.str();
}

namespace {

/// Tracks the worst slack of one named check.
class Check {
 public:
  explicit Check(std::string name) { result_.name = std::move(name); }

  void observe(double margin, const Vector& witness) {
    ++count_;
    if (!std::isfinite(margin)) {
      fail_non_finite(witness, "non-finite margin");
      return;
    }
    if (count_ == 1 || margin < result_.worst_margin) {
      result_.worst_margin = margin;
      if (margin < -kValidationTolerance) result_.witness = witness;
    }
    if (margin < -kValidationTolerance) result_.passed = false;
  }

  void fail_non_finite(const Vector& witness, std::string detail) {
    result_.passed = false;
    result_.worst_margin = -std::numeric_limits<double>::infinity();
    result_.witness = witness;
    result_.detail = std::move(detail);
  }

  void note(std::string detail) {
    if (result_.detail.empty()) result_.detail = std::move(detail);
  }

  CheckResult finish() && {
    if (count_ == 0 && result_.detail.empty()) result_.detail = "no applicable samples";
    return std::move(result_);
  }

 private:
  CheckResult result_;
  std::size_t count_ = 0;
};

double set_scale(const SimpleSet& set) {
  switch (set.kind()) {
    case SimpleSet::Kind::ball:
      return std::get<SimpleSet::Ball>(set.shape()).radius;
    case SimpleSet::Kind::box: {
      const auto& b = std::get<SimpleSet::Box>(set.shape());
      const double w = (b.upper - b.lower).cwiseAbs().maxCoeff();
      return std::isfinite(w) && w > 0.0 ? 0.5 * w : 1.0;
    }
    default:
      return 1.0;
  }
}

Vector sample_in_set(const SimpleSet& set, const Vector& fallback_center, Rng& rng) {
  const auto n = static_cast<std::size_t>(fallback_center.size());
  switch (set.kind()) {
    case SimpleSet::Kind::ball: {
      const auto& b = std::get<SimpleSet::Ball>(set.shape());
      Vector dir = rng.normal_vector(n);
      const double norm = dir.norm();
      if (norm == 0.0) return b.center;
      const double r = b.radius * std::pow(rng.uniform01(), 1.0 / static_cast<double>(n));
      return b.center + (r / norm) * dir;
    }
    case SimpleSet::Kind::box: {
      const auto& b = std::get<SimpleSet::Box>(set.shape());
      Vector x(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double lo = b.lower(static_cast<Eigen::Index>(i));
        const double hi = b.upper(static_cast<Eigen::Index>(i));
        if (std::isfinite(lo) && std::isfinite(hi)) {
          x(static_cast<Eigen::Index>(i)) = lo + (hi - lo) * rng.uniform01();
        } else {
          x(static_cast<Eigen::Index>(i)) = fallback_center(static_cast<Eigen::Index>(i)) +
                                            3.0 * rng.normal();
        }
      }
      return set.project(x);
    }
    default:
      return set.project(fallback_center + 3.0 * rng.normal_vector(n));
  }
}

/// Drives x into X by cyclic Polyak projections followed by projection onto
/// Y. Returns nullopt if the sweeps run out first.
std::optional<Vector> restore_feasibility(const ProblemSpec& spec, Vector x) {
  const auto& family = spec.constraints;
  if (!family.size()) return std::nullopt;
  constexpr std::size_t kSweeps = 5000;
  constexpr double kFeasibleTol = 1e-12;
  for (std::size_t sweep = 0; sweep < kSweeps; ++sweep) {
    double worst = 0.0;
    for (ConstraintIndex w = 0; w < *family.size(); ++w) {
      const double g = family.evaluate(w, x);
      if (!std::isfinite(g)) return std::nullopt;
      worst = std::max(worst, g);
      if (g > kFeasibleTol) {
        const Vector d = family.subgradient(w, x);
        const double dd = d.squaredNorm();
        if (!(dd > 0.0) || !std::isfinite(dd)) return std::nullopt;
        x = spec.simple_set.project(x - (g / dd) * d);
      }
    }
    if (worst <= kFeasibleTol) return x;
  }
  return std::nullopt;
}

}  // namespace

ValidationReport validate_assumptions(const ProblemSpec& spec, std::size_t n_samples,
                                      std::uint64_t seed) {
  if (n_samples == 0) throw ConfigError("validate_assumptions needs at least one sample");
  const std::size_t n = spec.dimension;
  Rng rng(seed, kProbeStream);
  const Vector center = spec.known_optimum ? spec.known_optimum->x_star : Vector::Zero(n);
  const double scale = set_scale(spec.simple_set);
  const auto& family = spec.constraints;
  const bool has_constraints = family.size().has_value() && *family.size() > 0;

  Check finite("finite_outputs");
  Check f_bound("objective_subgradient_bound");
  Check f_convex("objective_convexity");
  Check rsc("restricted_strong_convexity");
  Check optimum("optimum_feasible");
  Check g_bound("constraint_subgradient_bound");
  Check g_convex("constraint_convexity");
  Check idempotent("projection_idempotence");
  Check nonexpansive("projection_nonexpansive");
  Check firm("projection_inequality");

  bool finite_ok = true;
  auto require_finite = [&](bool ok, std::size_t sample, const Vector& x, const char* what) {
    if (!ok && finite_ok) {
      finite.fail_non_finite(x, fmt::format("sample {}: {} is not finite", sample, what));
      finite_ok = false;
    }
    return ok;
  };

  for (std::size_t s = 0; s < n_samples && finite_ok; ++s) {
    const Vector x = sample_in_set(spec.simple_set, center, rng);
    const Vector y = sample_in_set(spec.simple_set, center, rng);

    const double fx = spec.objective.value(x);
    const double fy = spec.objective.value(y);
    const Vector sx = spec.objective.subgradient(x);
    if (!require_finite(std::isfinite(fx) && std::isfinite(fy), s, x, "f(x)")) break;
    if (!require_finite(all_finite(sx), s, x, "s_f(x)")) break;

    f_bound.observe(spec.M_f - sx.norm(), x);
    f_convex.observe(fy - fx - sx.dot(y - x), x);

    if (spec.known_optimum) {
      // The inequality is required on X: points of Y outside X may lie
      // below f* whenever a constraint is active at x*.
      const auto& opt = *spec.known_optimum;
      if (const auto feasible = restore_feasibility(spec, x)) {
        const double t = rng.uniform01();
        for (const Vector& p : {*feasible, Vector(opt.x_star + t * (*feasible - opt.x_star))}) {
          const double fp = spec.objective.value(p);
          if (!require_finite(std::isfinite(fp), s, p, "f on X")) break;
          rsc.observe(fp - opt.f_star - 0.5 * spec.mu * (p - opt.x_star).squaredNorm(), p);
        }
      }
    }

    if (has_constraints) {
      const ConstraintIndex w = rng.uniform_index(*family.size());
      const double gx = family.evaluate(w, x);
      const double gy = family.evaluate(w, y);
      if (!require_finite(std::isfinite(gx) && std::isfinite(gy), s, x, "g_w(x)")) break;
      if (gx > 0.0) {
        const Vector d = family.subgradient(w, x);
        if (!require_finite(all_finite(d), s, x, "subgradient of g_w")) break;
        g_bound.observe(spec.M_g - d.norm(), x);
        g_convex.observe(std::max(gy, 0.0) - gx - d.dot(y - x), x);
      }
    }

    // Projection properties on points that are mostly outside Y.
    const Vector u = x + 2.0 * scale * rng.normal_vector(n);
    const Vector v = y + 2.0 * scale * rng.normal_vector(n);
    const Vector pu = spec.simple_set.project(u);
    const Vector pv = spec.simple_set.project(v);
    if (!require_finite(all_finite(pu) && all_finite(pv), s, u, "projection")) break;
    idempotent.observe(-(spec.simple_set.project(pu) - pu).norm(), u);
    nonexpansive.observe((u - v).norm() - (pu - pv).norm(), u);
    firm.observe((u - y).squaredNorm() - (pu - u).squaredNorm() - (pu - y).squaredNorm(), u);
    finite.observe(0.0, x);
  }

  if (spec.known_optimum) {
    const Vector& xs = spec.known_optimum->x_star;
    optimum.observe(-spec.simple_set.distance(xs), xs);
    if (has_constraints) {
      for (std::size_t w = 0; w < *family.size(); ++w) optimum.observe(-family.evaluate(w, xs), xs);
    } else if (!family.size()) {
      optimum.note("unbounded constraint family: only membership in Y checked");
    }
  } else {
    rsc.note("no known optimum");
    optimum.note("no known optimum");
  }
  if (!has_constraints) {
    g_bound.note(family.size() ? "no constraints" : "unbounded family not sampled");
    g_convex.note(family.size() ? "no constraints" : "unbounded family not sampled");
  }

  ValidationReport report;
  for (Check* c : {&finite, &f_bound, &f_convex, &rsc, &optimum, &g_bound, &g_convex,
                   &idempotent, &nonexpansive, &firm}) {
    report.checks.push_back(std::move(*c).finish());
  }
  return report;
}

}  // namespace mbproj
