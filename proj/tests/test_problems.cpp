// Benchmark generators, instance files and the L_N analysis.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mbproj/error.hpp"
#include "mbproj/problems.hpp"

using namespace mbproj;

namespace {

// Largest root of the characteristic polynomial of a symmetric 2x2 matrix.
double lambda_max_2x2(const Matrix& G) {
  const double tr = G(0, 0) + G(1, 1);
  const double det = G(0, 0) * G(1, 1) - G(0, 1) * G(1, 0);
  return 0.5 * (tr + std::sqrt(tr * tr - 4.0 * det));
}

// Largest root of the characteristic polynomial of a symmetric 3x3 matrix,
// by the trigonometric formula.
double lambda_max_3x3(const Matrix& A) {
  const double p1 = A(0, 1) * A(0, 1) + A(0, 2) * A(0, 2) + A(1, 2) * A(1, 2);
  const double q = A.trace() / 3.0;
  const double p2 = std::pow(A(0, 0) - q, 2) + std::pow(A(1, 1) - q, 2) + std::pow(A(2, 2) - q, 2) + 2 * p1;
  const double p = std::sqrt(p2 / 6.0);
  const Matrix B = (A - q * Matrix::Identity(3, 3)) / p;
  const double r = std::clamp(B.determinant() / 2.0, -1.0, 1.0);
  return q + 2.0 * p * std::cos(std::acos(r) / 3.0);
}

PolyhedronSpec unit_rows(Matrix A) {
  for (Eigen::Index i = 0; i < A.rows(); ++i) A.row(i).normalize();
  return {A, Vector::Zero(A.rows())};
}

}  // namespace

TEST_CASE("power iteration against characteristic polynomials") {
  Rng rng(5, 0);
  for (int t = 0; t < 20; ++t) {
    Matrix M2(2, 2), M3(3, 3);
    for (Eigen::Index i = 0; i < 4; ++i) M2(i) = rng.normal();
    for (Eigen::Index i = 0; i < 9; ++i) M3(i) = rng.normal();
    const Matrix G2 = M2 * M2.transpose(), G3 = M3 * M3.transpose();
    CHECK(largest_eigenvalue_psd(G2) == doctest::Approx(lambda_max_2x2(G2)).epsilon(1e-9));
    CHECK(largest_eigenvalue_psd(G3) == doctest::Approx(lambda_max_3x3(G3)).epsilon(1e-9));
  }
  CHECK(largest_eigenvalue_psd(Matrix::Zero(3, 3)) == 0.0);
  CHECK_THROWS_AS(largest_eigenvalue_psd(Matrix::Zero(2, 3)), ConfigError);
}

TEST_CASE("exact L_N on small systems") {
  const PolyhedronSpec identity{Matrix::Identity(2, 2), Vector::Zero(2)};
  const auto both = exact_LN_linear(identity, LNScheme::exhaustive(2));
  CHECK(both.value == doctest::Approx(0.5));
  CHECK_FALSE(both.rank_deficient);
  CHECK(exact_LN_linear(identity, LNScheme::exhaustive(1)).value == doctest::Approx(1.0));
  // Drawing the same row twice is admissible with replacement.
  CHECK(exact_LN_linear(identity, LNScheme::with_replacement(2)).value == doctest::Approx(1.0));

  // Two rows at angle theta: lambda_max([[1, c], [c, 1]]) / 2 = (1 + |c|) / 2.
  const double theta = 0.7;
  Matrix A(2, 2);
  A << 1.0, 0.0, std::cos(theta), std::sin(theta);
  CHECK(exact_LN_linear(unit_rows(A), LNScheme::exhaustive(2)).value ==
        doctest::Approx(0.5 * (1.0 + std::cos(theta))));
}

TEST_CASE("exact L_N on the structured families") {
  const auto dup = make_duplicated_benchmark(10, 20, 1);
  const auto ortho = make_orthonormal_benchmark(10, 8, 1);
  for (std::size_t N : {1, 2, 4}) {
    const auto d = exact_LN_linear(dup.poly, LNScheme::exhaustive(N));
    CHECK(d.value == doctest::Approx(1.0));
    CHECK(d.rank_deficient);
    const auto o = exact_LN_linear(ortho.poly, LNScheme::exhaustive(N));
    CHECK(o.value == doctest::Approx(1.0 / static_cast<double>(N)).epsilon(1e-9));
    CHECK_FALSE(o.rank_deficient);
    CHECK(o.argmax.size() == N);
  }
}

TEST_CASE("L_N over partitions and transversals") {
  const auto inst = make_polyhedral_benchmark(6, 8, 1, 4);
  const auto blocks = contiguous_blocks(8, 2);
  const auto per_block = exact_LN_linear(inst.poly, LNScheme::partition(blocks));
  double expected = 0.0;
  for (const auto& block : blocks) {
    Matrix AJ(block.size(), 6);
    for (std::size_t i = 0; i < block.size(); ++i) AJ.row(i) = inst.poly.A.row(block[i]);
    const Matrix G = AJ * AJ.transpose();
    expected = std::max(expected, Eigen::SelfAdjointEigenSolver<Matrix>(G).eigenvalues().maxCoeff() / 4.0);
  }
  CHECK(per_block.value == doctest::Approx(expected).epsilon(1e-9));

  const auto trans = exact_LN_linear(inst.poly, LNScheme::transversal(blocks));
  CHECK(trans.value <= exact_LN_linear(inst.poly, LNScheme::exhaustive(2)).value + 1e-12);
  CHECK(trans.value >= 0.5 - 1e-12);
  CHECK_THROWS_AS(LNScheme::partition({{0, 1}, {2}}), ConfigError);
}

TEST_CASE("online L_N^k never exceeds the exact value") {
  const auto inst = make_polyhedral_benchmark(10, 20, 4, 1);
  for (auto kind : {Sampler::Kind::iid_uniform, Sampler::Kind::without_replacement}) {
    SolverConfig config;
    config.variant = Variant::parallel;
    config.batch_size = 4;
    config.iterations = 3000;
    config.sampler.kind = kind;
    config.init = InitRule::gaussian;
    config.init_scale = 20.0;
    const auto result = run(inst.spec, config, &inst.poly);
    const auto exact = exact_LN_linear(inst.poly, scheme_for(config.sampler, 4, 20));
    REQUIRE(result.max_LN_k.has_value());
    CHECK(*result.max_LN_k <= exact.value + 1e-8);
    CHECK(*result.max_LN_k > 0.25);
  }
}

TEST_CASE("scheme selection follows the sampler") {
  SamplerSpec s;
  CHECK(scheme_for(s, 4, 20).kind == LNScheme::Kind::with_replacement);
  CHECK(scheme_for(s, 1, 20).kind == LNScheme::Kind::exhaustive);
  s.kind = Sampler::Kind::without_replacement;
  CHECK(scheme_for(s, 4, 20).kind == LNScheme::Kind::exhaustive);
  s.kind = Sampler::Kind::blocks;
  const auto blocks = scheme_for(s, 4, 20);
  CHECK(blocks.kind == LNScheme::Kind::blocks);
  CHECK(blocks.blocks.size() == 5);
  CHECK_THROWS_AS(scheme_for(s, 3, 20), ConfigError);
}

TEST_CASE("generated instances satisfy the assumptions") {
  for (const std::string family : {"random", "orthonormal", "duplicated", "orthant2"}) {
    GeneratorParams params{family, 10, family == "orthonormal" ? 8u : 20u, 1, 3};
    const auto inst = make_builtin(params);
    const auto report = validate_assumptions(inst.spec, 200, 11);
    INFO(family << ": " << report.summary());
    CHECK(report.all_passed());
    const auto& opt = *inst.spec.known_optimum;
    CHECK(distance_oracle(inst.poly, inst.spec.simple_set, opt.x_star, 1e-10) <= 1e-9);
    // x* sits on a face, so the center lies strictly outside X.
    CHECK(max_violation(inst.poly, inst.center) > 0.0);
    CHECK(max_violation(inst.poly, opt.x_star) >= -1e-9);
    CHECK(inst.spec.M_g == 1.0);
    CHECK(inst.spec.mu == 1.0);
  }
}

TEST_CASE("generator parameters are honoured") {
  GeneratorParams a{"random", 8, 12, 1, 9};
  GeneratorParams b = a;
  b.overshoot = 3.0;
  const auto ia = make_builtin(a), ib = make_builtin(b);
  CHECK(ia.poly.A == ib.poly.A);
  CHECK((ia.center - ib.center).norm() > 1.0);
  CHECK(make_builtin(a).center == ia.center);
  GeneratorParams c = a;
  c.seed = 10;
  CHECK(make_builtin(c).poly.A != ia.poly.A);
  CHECK_THROWS_AS(make_builtin(GeneratorParams{"hexagonal", 4, 4}), ConfigError);
  CHECK_THROWS_AS(make_orthonormal_benchmark(4, 6, 1), ConfigError);
}

TEST_CASE("instance files round trip") {
  const auto inst = make_polyhedral_benchmark(5, 7, 1, 2);
  std::stringstream ss;
  write_instance(ss, inst);
  const auto back = read_instance(ss, "mem");
  // Rows are renormalized on load, which may move the last bit.
  CHECK((back.poly.A - inst.poly.A).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK((back.poly.b - inst.poly.b).lpNorm<Eigen::Infinity>() <= 1e-14);
  CHECK(back.center == inst.center);
  CHECK((back.spec.known_optimum->x_star - inst.spec.known_optimum->x_star).norm() <= 1e-9);

  std::istringstream box(
      "# a box\n"
      "2 1\n"
      "3 4 -5\n"
      "objective quadratic\n"
      "2 2\n"
      "simple_set box\n"
      "-1 -1\n"
      "3 3\n");
  const auto b = read_instance(box, "box.txt");
  CHECK(b.poly.A.row(0).norm() == doctest::Approx(1.0));
  CHECK(b.poly.b(0) == doctest::Approx(-1.0));
  // (2, 2) violates 0.6 x + 0.8 y <= 1 by 1.8; its projection stays inside the box.
  CHECK((b.spec.known_optimum->x_star - Vector((Vector(2) << 0.92, 0.56).finished())).norm() <= 1e-9);
  CHECK(b.anchor == Vector((Vector(2) << 1.0, 1.0).finished()));
}

TEST_CASE("instance parse errors name the line") {
  auto message = [](const std::string& text) {
    std::istringstream is(text);
    try {
      read_instance(is, "bad.txt");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("2 1\n1 0 x\n").find("bad.txt:2") != std::string::npos);
  CHECK(message("2 1\n1 0 0\nobjective cubic\n").find("bad.txt:3") != std::string::npos);
  CHECK(message("2 1\n1 0 0\nobjective quadratic\n1 1\nsimple_set ball\n0 0 -1\n").find("bad.txt:6") !=
        std::string::npos);
  CHECK(message("0 1\n").find("bad.txt:1") != std::string::npos);
  CHECK_FALSE(message("2 1\n1 0 0\nobjective quadratic\n1 1\n").empty());
}

TEST_CASE("rate constant tables") {
  const auto dup = make_duplicated_benchmark(10, 20, 1);
  SamplerSpec iid;
  const auto rows = qb_curves(dup.poly, iid, 4.0, 1.0, BetaRule{}, {1, 2, 4, 8});
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.LN == doctest::Approx(1.0));
    REQUIRE(r.parallel.has_value());
    CHECK(r.parallel->b == doctest::Approx(rows.front().parallel->b));
    CHECK(r.note.empty());
  }

  const auto ortho = make_orthonormal_benchmark(10, 8, 1);
  SamplerSpec wor;
  wor.kind = Sampler::Kind::without_replacement;
  const auto o = qb_curves(ortho.poly, wor, 16.0, 1.0, BetaRule{BetaRule::Kind::optimal}, {1, 2, 4, 8});
  for (std::size_t i = 0; i < o.size(); ++i) {
    REQUIRE(o[i].parallel.has_value());
    CHECK(o[i].parallel->q == doctest::Approx(static_cast<double>(o[i].N) / 16.0));
    if (i > 0) CHECK(o[i].parallel->b > o[i - 1].parallel->b);
    REQUIRE(o[i].sequential.has_value());
    if (i > 0) CHECK(o[i].sequential->b > o[i - 1].sequential->b);
  }
  CHECK_THROWS_AS(qb_curves(ortho.poly, wor, 1.0, 1.0, BetaRule{}, {1}), ConfigError);
  CHECK_THROWS_AS(qb_curves(ortho.poly, wor, 4.0, 1.0, BetaRule{}, {}), ConfigError);

  // q = 1/(c L_N) >= 1 is outside the regime and is reported, not thrown.
  const auto edge = qb_curves(ortho.poly, wor, 1.5, 1.0, BetaRule{BetaRule::Kind::optimal}, {1, 2});
  CHECK_FALSE(edge[1].parallel.has_value());
  CHECK_FALSE(edge[1].note.empty());
}

TEST_CASE("beta rules") {
  CHECK(BetaRule{BetaRule::Kind::fixed, 1.3}.parallel(0.2) == 1.3);
  CHECK(BetaRule{BetaRule::Kind::optimal}.parallel(0.25) == doctest::Approx(4.0));
  CHECK(BetaRule{BetaRule::Kind::optimal}.sequential() == 1.0);
  CHECK(BetaRule{BetaRule::Kind::extrapolated, 1.0, 0.2}.parallel(0.5) == doctest::Approx(3.6));
  CHECK(BetaRule{BetaRule::Kind::extrapolated, 1.0, 0.2}.sequential() == doctest::Approx(1.8));
}
