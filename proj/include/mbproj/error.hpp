#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace mbproj {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user configuration or a regime the theory does not cover.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An oracle produced something unusable (non-finite value, zero subgradient
/// at a violated point, ...).
class OracleError : public Error {
 public:
  using Error::Error;
};

/// An iterative numerical routine hit its iteration cap.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double best_estimate)
      : Error(what), best_estimate_(best_estimate) {}
  double best_estimate() const noexcept { return best_estimate_; }

 private:
  double best_estimate_;
};

/// Snapshot of the solver state at the moment a run was aborted.
struct IterationSnapshot {
  std::size_t k = 0;
  std::string stage;
  Eigen::VectorXd x;
  Eigen::VectorXd v;
  double beta = 0.0;
  std::string detail;
};

/// The solver stopped: non-finite iterate or a violated lemma check.
class SolverAbort : public Error {
 public:
  SolverAbort(const std::string& what, IterationSnapshot snapshot)
      : Error(what), snapshot_(std::move(snapshot)) {}
  const IterationSnapshot& snapshot() const noexcept { return snapshot_; }

 private:
  IterationSnapshot snapshot_;
};

class AssertionViolation : public SolverAbort {
 public:
  using SolverAbort::SolverAbort;
};

}  // namespace mbproj
