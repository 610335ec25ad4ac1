#include "mbproj/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "mbproj/error.hpp"

namespace mbproj {

namespace {

double sup_distance_over_set(const SimpleSet& set, const Vector& center) {
  switch (set.kind()) {
    case SimpleSet::Kind::ball: {
      const auto& b = std::get<SimpleSet::Ball>(set.shape());
      return (b.center - center).norm() + b.radius;
    }
    case SimpleSet::Kind::box: {
      const auto& b = std::get<SimpleSet::Box>(set.shape());
      if (!b.lower.allFinite() || !b.upper.allFinite()) break;
      return (b.lower - center).cwiseAbs().cwiseMax((b.upper - center).cwiseAbs()).norm();
    }
    default:
      break;
  }
  throw ConfigError("quadratic benchmark needs a bounded simple set (ball or finite box)");
}

Vector random_unit(Rng& rng, std::size_t n) {
  for (;;) {
    Vector u = rng.normal_vector(n);
    const double norm = u.norm();
    if (norm > 0.0) return u / norm;
  }
}

/// Places the objective center beyond the polyhedron along random rays until
/// x* lands on a face.
BenchmarkInstance place_center(PolyhedronSpec poly, Vector anchor, const Vector& margins,
                               GeneratorParams params, Rng& rng,
                               const std::optional<Vector>& first_ray) {
  const std::size_t n = poly.dimension();
  constexpr std::size_t kAttempts = 100;
  for (std::size_t attempt = 0; attempt < kAttempts; ++attempt) {
    const Vector u = (attempt == 0 && first_ray) ? *first_ray : random_unit(rng, n);
    double exit = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < poly.rows(); ++r) {
      const double slope = poly.A.row(static_cast<Eigen::Index>(r)).dot(u);
      if (slope > 1e-12) exit = std::min(exit, margins(static_cast<Eigen::Index>(r)) / slope);
    }
    if (!std::isfinite(exit)) continue;
    const double shift = params.overshoot * static_cast<double>(1 + attempt);
    const Vector center = anchor + (exit + shift) * u;
    const double radius = 1.5 * (center - anchor).norm() + 1.0;
    BenchmarkInstance inst = make_quadratic_instance(
        poly, center, SimpleSet::ball(anchor, radius), anchor, params);
    double closest = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < poly.rows(); ++r) {
      closest = std::max(closest, poly.value(r, inst.spec.known_optimum->x_star));
    }
    if (closest >= -1e-9) return inst;
  }
  throw ConfigError(fmt::format("{} benchmark: x* stayed interior after {} attempts",
                                params.family, kAttempts));
}

BenchmarkInstance from_rows(Matrix A, GeneratorParams params,
                            const std::optional<Vector>& first_ray = std::nullopt) {
  Rng rng(params.seed, kGeneratorStream);
  const std::size_t n = static_cast<std::size_t>(A.cols());
  const std::size_t m = static_cast<std::size_t>(A.rows());
  Vector anchor = rng.normal_vector(n);
  Vector margins(static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < m; ++r) {
    margins(static_cast<Eigen::Index>(r)) =
        params.margin_low + (params.margin_high - params.margin_low) * rng.uniform01();
  }
  Vector b = -(A * anchor) - margins;
  PolyhedronSpec poly{std::move(A), std::move(b)};
  poly.check_normalized(1e-12);
  return place_center(std::move(poly), std::move(anchor), margins, std::move(params), rng,
                      first_ray);
}

void check_sizes(std::size_t n, std::size_t m, const char* family) {
  if (n < 2) throw ConfigError(fmt::format("{} benchmark needs n >= 2", family));
  if (m < 1) throw ConfigError(fmt::format("{} benchmark needs m >= 1", family));
}

}  // namespace

BenchmarkInstance make_quadratic_instance(PolyhedronSpec poly, Vector center, SimpleSet set,
                                          Vector anchor, GeneratorParams params) {
  poly.check_normalized(1e-9);
  if (static_cast<std::size_t>(center.size()) != poly.dimension()) {
    throw ConfigError("objective center has the wrong dimension");
  }
  const double M_f = sup_distance_over_set(set, center);
  const ProjectionResult proj = project_polyhedron(poly, set, center, 1e-11);

  BenchmarkInstance inst;
  inst.spec.objective = squared_distance_objective(center);
  inst.spec.constraints = affine_constraints(poly.A, poly.b);
  inst.spec.simple_set = set;
  inst.spec.mu = 1.0;
  inst.spec.M_f = M_f;
  inst.spec.M_g = 1.0;
  inst.spec.known_optimum = KnownOptimum{0.5 * (proj.point - center).squaredNorm(), proj.point};
  inst.spec.dimension = poly.dimension();
  inst.poly = std::move(poly);
  inst.center = std::move(center);
  inst.anchor = std::move(anchor);
  inst.params = std::move(params);
  return inst;
}

namespace {

BenchmarkInstance random_family(GeneratorParams params) {
  check_sizes(params.n, params.m, "random");
  Rng rows_rng(params.seed, kGeneratorStream + 100);
  Matrix A(static_cast<Eigen::Index>(params.m), static_cast<Eigen::Index>(params.n));
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    A.row(r) = random_unit(rows_rng, params.n).transpose();
  }
  return from_rows(std::move(A), std::move(params));
}

BenchmarkInstance orthonormal_family(GeneratorParams params) {
  const std::size_t n = params.n, m = params.m;
  check_sizes(n, m, "orthonormal");
  if (m > n) throw ConfigError("orthonormal benchmark needs m <= n");
  Rng rows_rng(params.seed, kGeneratorStream + 100);
  Matrix gaussian(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (Eigen::Index c = 0; c < gaussian.cols(); ++c) gaussian.col(c) = rows_rng.normal_vector(n);
  const Matrix Q = gaussian.householderQr().householderQ() *
                   Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  Matrix A = Q.transpose();
  for (Eigen::Index r = 0; r < A.rows(); ++r) A.row(r).normalize();
  return from_rows(std::move(A), std::move(params));
}

BenchmarkInstance duplicated_family(GeneratorParams params) {
  check_sizes(params.n, params.m, "duplicated");
  Rng rows_rng(params.seed, kGeneratorStream + 100);
  const Vector a = random_unit(rows_rng, params.n);
  Matrix A = a.transpose().replicate(static_cast<Eigen::Index>(params.m), 1);
  return from_rows(std::move(A), std::move(params), a);
}

}  // namespace

BenchmarkInstance make_polyhedral_benchmark(std::size_t n, std::size_t m, std::size_t N_partition,
                                            std::uint64_t seed) {
  return random_family({"random", n, m, N_partition, seed});
}

BenchmarkInstance make_orthonormal_benchmark(std::size_t n, std::size_t m, std::uint64_t seed) {
  return orthonormal_family({"orthonormal", n, m, 1, seed});
}

BenchmarkInstance make_duplicated_benchmark(std::size_t n, std::size_t m, std::uint64_t seed) {
  return duplicated_family({"duplicated", n, m, 1, seed});
}

BenchmarkInstance make_orthant2_benchmark() {
  GeneratorParams params{"orthant2", 2, 2, 2, 0};
  const Vector anchor = Vector::Constant(2, -1.0);
  const Vector center = Vector::Constant(2, 1.0);
  const double radius = 1.5 * (center - anchor).norm() + 1.0;
  return make_quadratic_instance({Matrix::Identity(2, 2), Vector::Zero(2)}, center,
                                 SimpleSet::ball(anchor, radius), anchor, params);
}

BenchmarkInstance make_builtin(const GeneratorParams& params) {
  if (params.family == "random") return random_family(params);
  if (params.family == "orthonormal") return orthonormal_family(params);
  if (params.family == "duplicated") return duplicated_family(params);
  if (params.family == "orthant2") return make_orthant2_benchmark();
  throw ConfigError(fmt::format(
      "unknown builtin '{}' (expected random, orthonormal, duplicated or orthant2)",
      params.family));
}

// ---------------------------------------------------------------------------
// Instance files

namespace {

void write_row(std::ostream& os, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << fmt::format("{:.17g}", v(i));
}

class LineReader {
 public:
  LineReader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {}

  /// Next non-blank, non-comment line split into tokens.
  std::vector<std::string> next(const char* expecting) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      std::istringstream ss(line);
      std::vector<std::string> tokens;
      for (std::string t; ss >> t;) tokens.push_back(t);
      return tokens;
    }
    throw error(fmt::format("unexpected end of file, expecting {}", expecting));
  }

  Vector numbers(const std::vector<std::string>& tokens, std::size_t count, const char* what) {
    if (tokens.size() != count) {
      throw error(fmt::format("{}: expected {} numbers, found {}", what, count, tokens.size()));
    }
    Vector v(static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) {
      try {
        std::size_t used = 0;
        v(static_cast<Eigen::Index>(i)) = std::stod(tokens[i], &used);
        if (used != tokens[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw error(fmt::format("{}: '{}' is not a number", what, tokens[i]));
      }
    }
    if (!v.allFinite()) throw error(fmt::format("{}: non-finite value", what));
    return v;
  }

  ConfigError error(const std::string& message) const {
    return ConfigError(fmt::format("{}:{}: {}", source_, line_no_, message));
  }

 private:
  std::istream& is_;
  std::string source_;
  std::size_t line_no_ = 0;
};

}  // namespace

void write_instance(std::ostream& os, const BenchmarkInstance& instance) {
  const auto& poly = instance.poly;
  os << poly.dimension() << ' ' << poly.rows() << '\n';
  for (std::size_t r = 0; r < poly.rows(); ++r) {
    write_row(os, poly.A.row(static_cast<Eigen::Index>(r)).transpose());
    os << ' ' << fmt::format("{:.17g}", poly.b(static_cast<Eigen::Index>(r))) << '\n';
  }
  os << "objective quadratic\n";
  write_row(os, instance.center);
  os << '\n';
  const auto& set = instance.spec.simple_set;
  switch (set.kind()) {
    case SimpleSet::Kind::ball: {
      const auto& b = std::get<SimpleSet::Ball>(set.shape());
      os << "simple_set ball\n";
      write_row(os, b.center);
      os << ' ' << fmt::format("{:.17g}", b.radius) << '\n';
      break;
    }
    case SimpleSet::Kind::box: {
      const auto& b = std::get<SimpleSet::Box>(set.shape());
      os << "simple_set box\n";
      write_row(os, b.lower);
      os << '\n';
      write_row(os, b.upper);
      os << '\n';
      break;
    }
    default:
      throw ConfigError("instance files support ball and box simple sets only");
  }
}

BenchmarkInstance read_instance(std::istream& is, const std::string& source_name) {
  LineReader reader(is, source_name);
  const auto header = reader.next("header 'n m'");
  const Vector dims = reader.numbers(header, 2, "header");
  if (dims(0) < 1 || dims(1) < 1 || dims(0) != std::floor(dims(0)) ||
      dims(1) != std::floor(dims(1))) {
    throw reader.error("header: n and m must be positive integers");
  }
  const auto n = static_cast<std::size_t>(dims(0));
  const auto m = static_cast<std::size_t>(dims(1));
  Matrix A(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  Vector b(static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < m; ++r) {
    const Vector row = reader.numbers(reader.next("constraint row"), n + 1, "constraint row");
    A.row(static_cast<Eigen::Index>(r)) = row.head(static_cast<Eigen::Index>(n)).transpose();
    b(static_cast<Eigen::Index>(r)) = row(static_cast<Eigen::Index>(n));
  }
  const auto objective = reader.next("'objective quadratic'");
  if (objective.size() != 2 || objective[0] != "objective" || objective[1] != "quadratic") {
    throw reader.error("expected 'objective quadratic'");
  }
  Vector center = reader.numbers(reader.next("objective center"), n, "objective center");
  const auto set_line = reader.next("'simple_set ball|box'");
  if (set_line.size() != 2 || set_line[0] != "simple_set") {
    throw reader.error("expected 'simple_set ball' or 'simple_set box'");
  }
  SimpleSet set;
  if (set_line[1] == "ball") {
    const Vector data = reader.numbers(reader.next("ball center and radius"), n + 1, "ball");
    const double radius = data(static_cast<Eigen::Index>(n));
    if (!(radius > 0.0)) throw reader.error("ball radius must be positive");
    set = SimpleSet::ball(data.head(static_cast<Eigen::Index>(n)), radius);
  } else if (set_line[1] == "box") {
    Vector lower = reader.numbers(reader.next("box lower bounds"), n, "box lower bounds");
    Vector upper = reader.numbers(reader.next("box upper bounds"), n, "box upper bounds");
    if ((lower.array() > upper.array()).any()) throw reader.error("box lower exceeds upper");
    set = SimpleSet::box(std::move(lower), std::move(upper));
  } else {
    throw reader.error(fmt::format("unknown simple set '{}'", set_line[1]));
  }

  PolyhedronSpec poly;
  try {
    poly = PolyhedronSpec::normalized(std::move(A), std::move(b));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", source_name, e.what()));
  }
  GeneratorParams params;
  params.family = "file";
  params.n = n;
  params.m = m;
  Vector anchor = simple_set_anchor(set, n);
  return make_quadratic_instance(std::move(poly), std::move(center), std::move(set),
                                 std::move(anchor), std::move(params));
}

BenchmarkInstance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open instance file '{}'", path));
  return read_instance(in, path);
}

// ---------------------------------------------------------------------------
// L_N analysis

LNScheme LNScheme::partition(IndexBlocks blocks) {
  if (blocks.empty()) throw ConfigError("partition scheme needs blocks");
  for (const auto& block : blocks) {
    if (block.size() != blocks.front().size() || block.empty()) {
      throw ConfigError("partition scheme needs nonempty blocks of equal size");
    }
  }
  const std::size_t N = blocks.front().size();
  return {Kind::blocks, N, std::move(blocks)};
}

LNScheme LNScheme::transversal(IndexBlocks blocks) {
  if (blocks.empty()) throw ConfigError("transversal scheme needs blocks");
  const std::size_t N = blocks.size();
  return {Kind::transversal, N, std::move(blocks)};
}

LNScheme scheme_for(const SamplerSpec& sampler, std::size_t N, std::size_t m) {
  switch (sampler.kind) {
    case Sampler::Kind::iid_uniform:
      return N == 1 ? LNScheme::exhaustive(1) : LNScheme::with_replacement(N);
    case Sampler::Kind::without_replacement:
      return LNScheme::exhaustive(N);
    case Sampler::Kind::blocks:
      if (!sampler.blocks.empty()) return LNScheme::partition(sampler.blocks);
      if (N == 0 || m % N != 0) {
        throw ConfigError(fmt::format("blocks sampling needs N = {} to divide m = {}", N, m));
      }
      return LNScheme::partition(contiguous_blocks(m, m / N));
    case Sampler::Kind::partition:
      return LNScheme::transversal(sampler.blocks.empty() ? contiguous_blocks(m, N)
                                                          : sampler.blocks);
    default:
      throw ConfigError("no closed-form L_N scheme for " + to_string(sampler.kind) + " sampling");
  }
}

double largest_eigenvalue_psd(const Matrix& G, double rel_tol, std::size_t max_iter) {
  if (G.rows() != G.cols() || G.rows() == 0) throw ConfigError("eigenvalue of a non-square matrix");
  Rng start(0x9E3779B97F4A7C15ULL, 0);
  Vector x = start.normal_vector(static_cast<std::size_t>(G.rows()));
  x.normalize();
  double lambda = x.dot(G * x);
  for (std::size_t it = 0; it < max_iter; ++it) {
    const Vector w = G * x;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    x = w / norm;
    const Vector gx = G * x;
    const double next = x.dot(gx);
    const double residual = (gx - next * x).norm();
    const bool settled = std::abs(next - lambda) <= rel_tol * std::abs(next);
    lambda = next;
    if (settled && residual <= 1e-6 * std::abs(next)) return lambda;
  }
  throw ConvergenceError(
      fmt::format("power iteration did not converge in {} steps", max_iter), lambda);
}

namespace {

std::size_t binomial_capped(std::size_t m, std::size_t k, std::size_t cap) {
  if (k > m) return 0;
  k = std::min(k, m - k);
  long double c = 1.0L;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * static_cast<long double>(m - k + i) / static_cast<long double>(i);
    if (c > static_cast<long double>(cap)) return cap + 1;
  }
  return static_cast<std::size_t>(std::llround(c));
}

double subset_value(const PolyhedronSpec& poly, const std::vector<ConstraintIndex>& J) {
  Matrix AJ(static_cast<Eigen::Index>(J.size()), poly.A.cols());
  for (std::size_t i = 0; i < J.size(); ++i) {
    AJ.row(static_cast<Eigen::Index>(i)) = poly.A.row(static_cast<Eigen::Index>(J[i]));
  }
  return largest_eigenvalue_psd(AJ * AJ.transpose()) / static_cast<double>(J.size());
}

}  // namespace

LNAnalysis exact_LN_linear(const PolyhedronSpec& poly, const LNScheme& scheme) {
  poly.check_normalized(1e-9);
  const std::size_t m = poly.rows();
  if (scheme.N == 0) throw ConfigError("L_N needs N >= 1");
  for (const auto& block : scheme.blocks) {
    for (ConstraintIndex w : block) {
      if (w >= m) throw ConfigError(fmt::format("L_N scheme references row {} >= m = {}", w, m));
    }
  }

  LNAnalysis out{0.0, {}, false};
  out.rank_deficient =
      Eigen::ColPivHouseholderQR<Matrix>(poly.A).rank() < static_cast<Eigen::Index>(m);
  auto consider = [&](const std::vector<ConstraintIndex>& J) {
    const double value = subset_value(poly, J);
    if (out.argmax.empty() || value > out.value) {
      out.value = value;
      out.argmax = J;
    }
  };

  switch (scheme.kind) {
    case LNScheme::Kind::with_replacement:
      // N copies of one row: a rank-one Gram matrix with trace N.
      out.argmax.assign(scheme.N, 0);
      out.value = subset_value(poly, out.argmax);
      break;
    case LNScheme::Kind::blocks:
      for (const auto& block : scheme.blocks) consider(block);
      break;
    case LNScheme::Kind::exhaustive: {
      const std::size_t N = scheme.N;
      if (N > m) throw ConfigError(fmt::format("exhaustive L_N: N = {} exceeds m = {}", N, m));
      if (binomial_capped(m, N, kMaxEnumeratedSubsets) > kMaxEnumeratedSubsets) {
        throw ConfigError(fmt::format(
            "exhaustive L_N: C({}, {}) exceeds {} subsets; use a partition scheme", m, N,
            kMaxEnumeratedSubsets));
      }
      std::vector<ConstraintIndex> J(N);
      for (std::size_t i = 0; i < N; ++i) J[i] = i;
      for (;;) {
        consider(J);
        std::size_t i = N;
        while (i > 0 && J[i - 1] == m - N + (i - 1)) --i;
        if (i == 0) break;
        ++J[i - 1];
        for (std::size_t j = i; j < N; ++j) J[j] = J[j - 1] + 1;
      }
      break;
    }
    case LNScheme::Kind::transversal: {
      long double total = 1.0L;
      for (const auto& block : scheme.blocks) total *= static_cast<long double>(block.size());
      if (total > static_cast<long double>(kMaxEnumeratedSubsets)) {
        throw ConfigError("transversal L_N: too many index sets to enumerate");
      }
      std::vector<std::size_t> pos(scheme.blocks.size(), 0);
      std::vector<ConstraintIndex> J(scheme.blocks.size());
      for (;;) {
        for (std::size_t b = 0; b < pos.size(); ++b) J[b] = scheme.blocks[b][pos[b]];
        consider(J);
        std::size_t b = 0;
        while (b < pos.size() && ++pos[b] == scheme.blocks[b].size()) pos[b++] = 0;
        if (b == pos.size()) break;
      }
      break;
    }
  }
  // lambda_max(A_J A_J^T) <= trace = N for unit rows; remove rounding above 1.
  out.value = std::min(out.value, 1.0);
  return out;
}

double BetaRule::parallel(double LN) const {
  switch (kind) {
    case Kind::fixed:
      return value;
    case Kind::optimal:
      return 1.0 / LN;
    case Kind::extrapolated:
      return (2.0 - delta) / LN;
  }
  return value;
}

double BetaRule::sequential() const {
  switch (kind) {
    case Kind::fixed:
      return value;
    case Kind::optimal:
      return 1.0;
    case Kind::extrapolated:
      return 2.0 - delta;
  }
  return value;
}

std::vector<QbRow> qb_curves(const PolyhedronSpec& poly, const SamplerSpec& sampler,
                             double c_hat, double M_g, const BetaRule& beta_rule,
                             const std::vector<std::size_t>& N_range) {
  if (N_range.empty()) throw ConfigError("qb_curves needs at least one N");
  if (!(c_hat * M_g * M_g > 1.0)) {
    throw ConfigError(fmt::format("c M_g^2 = {:.6g} must exceed 1", c_hat * M_g * M_g));
  }
  std::vector<QbRow> rows;
  for (std::size_t N : N_range) {
    QbRow row{};
    row.N = N;
    row.LN = exact_LN_linear(poly, scheme_for(sampler, N, poly.rows())).value;
    row.beta_parallel = beta_rule.parallel(row.LN);
    row.beta_sequential = beta_rule.sequential();
    std::vector<std::string> notes;
    try {
      row.parallel =
          analysis_constants(row.LN, c_hat, M_g, row.beta_parallel, N, Variant::parallel);
    } catch (const ConfigError& e) {
      notes.push_back(std::string("parallel outside theory: ") + e.what());
    }
    try {
      row.sequential =
          analysis_constants(row.LN, c_hat, M_g, row.beta_sequential, N, Variant::sequential);
    } catch (const ConfigError& e) {
      notes.push_back(std::string("sequential outside theory: ") + e.what());
    }
    for (std::size_t i = 0; i < notes.size(); ++i) row.note += (i ? "; " : "") + notes[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mbproj
