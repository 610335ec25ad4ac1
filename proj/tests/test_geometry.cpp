// Distance oracle, regularity constant estimates and polyhedron helpers.

#include <doctest.h>

#include <cmath>
#include <limits>

#include "mbproj/error.hpp"
#include "mbproj/geometry.hpp"
#include "mbproj/problems.hpp"

using namespace mbproj;

namespace {

Vector vec2(double a, double b) { return (Vector(2) << a, b).finished(); }

/// Rows of the polyhedron together with the box faces, as (a, b) with a.x + b <= 0.
std::vector<std::pair<Vector, double>> all_halfspaces(const PolyhedronSpec& poly,
                                                      const Vector& lo, const Vector& hi) {
  std::vector<std::pair<Vector, double>> h;
  for (std::size_t r = 0; r < poly.rows(); ++r) {
    h.emplace_back(poly.A.row(static_cast<Eigen::Index>(r)).transpose(),
                   poly.b(static_cast<Eigen::Index>(r)));
  }
  for (int i = 0; i < 2; ++i) {
    Vector e = Vector::Zero(2);
    e(i) = 1.0;
    h.emplace_back(e, -hi(i));
    h.emplace_back(-e, lo(i));
  }
  return h;
}

/// Exact 2-D projection by enumerating KKT candidates: the point, its
/// projection on each boundary line and every vertex.
double candidate_distance(const std::vector<std::pair<Vector, double>>& h, const Vector& v) {
  auto feasible = [&](const Vector& x) {
    for (const auto& [a, b] : h) {
      if (a.dot(x) + b > 1e-10) return false;
    }
    return true;
  };
  double best = std::numeric_limits<double>::infinity();
  auto consider = [&](const Vector& x) {
    if (feasible(x)) best = std::min(best, (x - v).norm());
  };
  consider(v);
  for (const auto& [a, b] : h) consider(v - (a.dot(v) + b) / a.squaredNorm() * a);
  for (std::size_t i = 0; i < h.size(); ++i) {
    for (std::size_t j = i + 1; j < h.size(); ++j) {
      Eigen::Matrix2d M;
      M.row(0) = h[i].first.transpose();
      M.row(1) = h[j].first.transpose();
      if (std::abs(M.determinant()) < 1e-12) continue;
      consider(M.inverse() * Eigen::Vector2d(-h[i].second, -h[j].second));
    }
  }
  return best;
}

double grid_distance(const std::vector<std::pair<Vector, double>>& h, const Vector& v,
                     const Vector& lo, const Vector& hi, int steps) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= steps; ++i) {
    for (int j = 0; j <= steps; ++j) {
      const Vector x = vec2(lo(0) + (hi(0) - lo(0)) * i / steps, lo(1) + (hi(1) - lo(1)) * j / steps);
      bool ok = true;
      for (const auto& [a, b] : h) ok = ok && a.dot(x) + b <= 0.0;
      if (ok) best = std::min(best, (x - v).norm());
    }
  }
  return best;
}

PolyhedronSpec triangle() {
  Matrix A(3, 2);
  A << 1.0, 1.0, -1.0, 0.3, 0.2, -1.0;
  return PolyhedronSpec::normalized(A, (Vector(3) << -1.0, -0.5, -0.4).finished());
}

}  // namespace

TEST_CASE("normalization rescales rows and offsets together") {
  Matrix A(2, 2);
  A << 3.0, 4.0, 0.0, 2.0;
  const auto poly = PolyhedronSpec::normalized(A, vec2(5.0, -2.0));
  CHECK(poly.A.row(0).norm() == doctest::Approx(1.0));
  CHECK(poly.b(0) == doctest::Approx(1.0));
  CHECK(poly.b(1) == doctest::Approx(-1.0));
  CHECK_NOTHROW(poly.check_normalized());
  CHECK_THROWS_AS((PolyhedronSpec{A, vec2(0.0, 0.0)}.check_normalized()), ConfigError);
  Matrix zero = Matrix::Zero(1, 2);
  CHECK_THROWS_AS(PolyhedronSpec::normalized(zero, Vector::Zero(1)), ConfigError);
}

TEST_CASE("max violation is the largest positive residual") {
  const PolyhedronSpec poly{Matrix::Identity(2, 2), Vector::Zero(2)};
  CHECK(max_violation(poly, vec2(0.5, 2.0)) == doctest::Approx(2.0));
  CHECK(max_violation(poly, vec2(-1.0, -3.0)) == 0.0);
}

TEST_CASE("distance oracle matches exact enumeration and a grid search in 2-D") {
  const auto poly = triangle();
  const Vector lo = vec2(-4.0, -4.0), hi = vec2(4.0, 4.0);
  const auto set = SimpleSet::box(lo, hi);
  const auto h = all_halfspaces(poly, lo, hi);
  Rng rng(21, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector v = 5.0 * rng.normal_vector(2);
    const auto result = project_polyhedron(poly, set, v, 1e-10);
    const double exact = candidate_distance(h, v);
    CHECK(result.distance == doctest::Approx(exact).epsilon(1e-9).scale(1.0));
    CHECK(max_violation(poly, result.point) <= 1e-9);
    CHECK(set.distance(result.point) <= 1e-9);
  }
  for (const Vector& v : {vec2(3.0, 3.0), vec2(-3.0, 1.0), vec2(0.5, -3.5)}) {
    const double d = distance_oracle(poly, set, v);
    const double grid = grid_distance(h, v, lo, hi, 800);
    CHECK(d <= grid + 1e-12);
    CHECK(grid - d <= 8.0 / 800.0 * std::sqrt(2.0));
  }
}

TEST_CASE("distance oracle with a ball simple set agrees with a fine grid") {
  const PolyhedronSpec poly{Matrix::Identity(2, 2), Vector::Zero(2)};
  const auto set = SimpleSet::ball(vec2(0.0, 0.0), 1.0);
  // The closest point of the quarter disc to (1, -2) is (0, -1).
  CHECK(distance_oracle(poly, set, vec2(1.0, -2.0)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(distance_oracle(poly, set, vec2(-0.3, -0.4)) == 0.0);
  CHECK(distance_oracle(poly, set, vec2(2.0, 2.0)) == doctest::Approx(2.0 * std::sqrt(2.0)));
}

TEST_CASE("projection satisfies the projection inequality against members of X") {
  const auto inst = make_polyhedral_benchmark(6, 12, 1, 4);
  Rng rng(5, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector v = inst.anchor + 3.0 * rng.normal_vector(6);
    const auto p = project_polyhedron(inst.poly, inst.spec.simple_set, v, 1e-10);
    const Vector y = project_polyhedron(inst.poly, inst.spec.simple_set,
                                        inst.anchor + rng.normal_vector(6), 1e-10)
                         .point;
    const double slack = (v - y).squaredNorm() - (p.point - v).squaredNorm() -
                         (p.point - y).squaredNorm();
    CHECK(slack >= -1e-9);
  }
}

TEST_CASE("projection is certified exactly when Y is inactive") {
  const PolyhedronSpec poly{Matrix::Identity(2, 2), Vector::Zero(2)};
  const auto set = SimpleSet::ball(vec2(0.0, 0.0), 10.0);
  const auto inside = project_polyhedron(poly, set, vec2(1.0, 2.0));
  CHECK(inside.certified);
  CHECK(inside.point.norm() == 0.0);
  const auto outside = project_polyhedron(poly, set, vec2(-20.0, 1.0), 1e-10);
  CHECK_FALSE(outside.certified);
  // Nearest point of the quarter disc is the end of the arc, (-10, 0).
  CHECK(outside.distance == doctest::Approx(std::sqrt(101.0)).epsilon(1e-9));
}

TEST_CASE("points of X are at distance zero") {
  const auto inst = make_polyhedral_benchmark(10, 20, 4, 1);
  CHECK(distance_oracle(inst.poly, inst.spec.simple_set, inst.anchor) == 0.0);
  CHECK(distance_oracle(inst.poly, inst.spec.simple_set, inst.spec.known_optimum->x_star) <=
        kTolMetric);
}

TEST_CASE("regularity constant of the orthant is 2 on every infeasible probe") {
  const PolyhedronSpec poly{Matrix::Identity(2, 2), Vector::Zero(2)};
  const auto set = SimpleSet::ball(vec2(0.0, 0.0), 10.0);
  const Marginal uniform{{0, 0.5}, {1, 0.5}};
  // Brute force: dist^2 / mean (g^+)^2 for (s, t) with s, t > 0 is
  // (s^2 + t^2) / ((s^2 + t^2) / 2) and for (s, -t) it is s^2 / (s^2 / 2).
  std::vector<Vector> probes;
  for (double s : {0.1, 1.0, 3.0}) {
    for (double t : {-2.0, 0.0, 0.5, 4.0}) probes.push_back(vec2(s, t));
  }
  probes.push_back(vec2(-1.0, -1.0));
  CHECK(estimate_regularity_c(poly, set, {uniform}, probes) == doctest::Approx(2.0));
  CHECK(estimate_regularity_c(poly, set, {uniform, uniform}, {vec2(1.0, 1.0)}) ==
        doctest::Approx(2.0));
}

TEST_CASE("regularity estimate rejects degenerate probe sets") {
  const PolyhedronSpec poly{Matrix::Identity(2, 2), Vector::Zero(2)};
  const auto set = SimpleSet::ball(vec2(0.0, 0.0), 10.0);
  CHECK_THROWS_AS(estimate_regularity_c(poly, set, {{{0, 0.5}, {1, 0.5}}}, {vec2(-1.0, -1.0)}),
                  ConfigError);
  // A marginal that never draws row 1 cannot see violations of x2 <= 0.
  CHECK_THROWS_AS(estimate_regularity_c(poly, set, {{{0, 1.0}}}, {vec2(-1.0, 2.0)}), ConfigError);
}

TEST_CASE("regularity estimates satisfy c M_g^2 >= 1 on generated instances") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto inst = make_polyhedral_benchmark(10, 20, 4, seed);
    for (auto sampler : {Sampler::iid_uniform(20, seed), Sampler::without_replacement(20, seed)}) {
      const double c = estimate_regularity_c(inst.poly, inst.spec.simple_set, sampler, 4, 32, seed);
      CHECK(c * inst.spec.M_g * inst.spec.M_g >= 1.0 - 1e-9);
    }
  }
}

TEST_CASE("simple set anchor is the center of Y") {
  CHECK(simple_set_anchor(SimpleSet::ball(vec2(1.0, 2.0), 3.0), 2) == vec2(1.0, 2.0));
  CHECK(simple_set_anchor(SimpleSet::box(vec2(0.0, 0.0), vec2(2.0, 4.0)), 2) == vec2(1.0, 2.0));
  CHECK(simple_set_anchor(SimpleSet::whole_space(), 2) == vec2(0.0, 0.0));
}
