#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace mbproj {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Index of a constraint in the family. Finite families use 0..m-1; infinite
/// families interpret the value as a key for their generator.
using ConstraintIndex = std::uint64_t;

bool all_finite(const Vector& v);

/// A closed convex set with a cheap exact Euclidean projection.
class SimpleSet {
 public:
  enum class Kind { whole_space, box, ball, halfspace };

  struct WholeSpace {};
  struct Box {
    Vector lower;
    Vector upper;
  };
  struct Ball {
    Vector center;
    double radius;
  };
  /// {x : <normal, x> <= offset}
  struct Halfspace {
    Vector normal;
    double offset;
  };

  SimpleSet() = default;

  static SimpleSet whole_space();
  static SimpleSet box(Vector lower, Vector upper);
  static SimpleSet ball(Vector center, double radius);
  static SimpleSet halfspace(Vector normal, double offset);

  Kind kind() const;
  std::string describe() const;

  Vector project(const Vector& v) const;
  double distance(const Vector& v) const { return (project(v) - v).norm(); }
  bool contains(const Vector& v, double tol) const { return distance(v) <= tol; }

  const std::variant<WholeSpace, Box, Ball, Halfspace>& shape() const { return shape_; }

 private:
  explicit SimpleSet(std::variant<WholeSpace, Box, Ball, Halfspace> shape)
      : shape_(std::move(shape)) {}

  std::variant<WholeSpace, Box, Ball, Halfspace> shape_ = WholeSpace{};
};

struct ObjectiveOracle {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> subgradient;
};

/// Functional constraints g_w(x) <= 0, accessed only through value and
/// subgradient queries. Stateless; safe for concurrent reads.
class ConstraintFamily {
 public:
  using ValueFn = std::function<double(ConstraintIndex, const Vector&)>;
  /// Must return an element of the subdifferential of g_w at x when
  /// g_w(x) > 0. The return value is ignored otherwise.
  using SubgradientFn = std::function<Vector(ConstraintIndex, const Vector&)>;

  ConstraintFamily() = default;
  static ConstraintFamily finite(std::size_t size, ValueFn value, SubgradientFn subgradient);
  static ConstraintFamily unbounded(ValueFn value, SubgradientFn subgradient);
  static ConstraintFamily empty();

  /// Number of constraints, or nullopt when the index space is a generator.
  std::optional<std::size_t> size() const { return size_; }
  bool is_empty() const { return size_ && *size_ == 0; }

  double evaluate(ConstraintIndex omega, const Vector& v) const { return value_(omega, v); }
  Vector subgradient(ConstraintIndex omega, const Vector& v) const {
    return subgradient_(omega, v);
  }

 private:
  std::optional<std::size_t> size_ = 0;
  ValueFn value_;
  SubgradientFn subgradient_;
};

struct KnownOptimum {
  double f_star;
  Vector x_star;
};

struct ProblemSpec {
  ObjectiveOracle objective;
  ConstraintFamily constraints;
  SimpleSet simple_set;
  double mu = 1.0;
  double M_f = 1.0;
  double M_g = 1.0;
  std::optional<KnownOptimum> known_optimum;
  std::size_t dimension = 0;
};

/// g_w^+(v) together with the direction used by the Polyak step.
struct PositivePart {
  double g_plus;
  Vector d;
};

/// Fallback direction returned when g^+ = 0: the first unit vector.
Vector fallback_direction(std::size_t dimension);

/// Throws OracleError on non-finite output or on a zero subgradient while
/// g^+ > 0.
PositivePart positive_part_value_and_dir(const ConstraintFamily& family, ConstraintIndex omega,
                                         const Vector& v);

/// Constraint family g_w(x) = dist(x, S_w) over sets with exact projections,
/// with unit subgradient (x - P(x)) / dist. M_g = 1.
ConstraintFamily distance_constraints(std::vector<SimpleSet> sets);

/// Affine family g_w(x) = <a_w, x> + b_w for the rows of A.
ConstraintFamily affine_constraints(Matrix A, Vector b);

/// f(x) = 1/2 ||x - center||^2.
ObjectiveOracle squared_distance_objective(Vector center);

struct CheckResult {
  std::string name;
  bool passed = true;
  /// Smallest slack observed; negative means violated.
  double worst_margin = 0.0;
  std::optional<Vector> witness;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool all_passed() const;
  const CheckResult* find(const std::string& name) const;
  std::string summary() const;
};

inline constexpr double kValidationTolerance = 1e-9;

/// Sampling-based spot check of the standing assumptions: subgradient bounds,
/// convexity witnesses, restricted strong convexity (at points of X reached by
/// cyclic Polyak projections from samples of Y) and projection properties.
ValidationReport validate_assumptions(const ProblemSpec& spec, std::size_t n_samples,
                                      std::uint64_t seed);

}  // namespace mbproj
