#include "mbproj/solver.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

namespace mbproj {

std::string to_string(Variant v) { return v == Variant::parallel ? "parallel" : "sequential"; }

BetaPolicy BetaPolicy::fixed(double beta, std::optional<double> known_LN) {
  BetaPolicy p;
  p.kind = Kind::fixed;
  p.value = beta;
  p.known_LN = known_LN;
  return p;
}

BetaPolicy BetaPolicy::optimal(double known_LN) {
  if (!(known_LN > 0.0)) throw ConfigError("optimal beta needs L_N > 0");
  return fixed(1.0 / known_LN, known_LN);
}

BetaPolicy BetaPolicy::extrapolated(double delta, double known_LN) {
  BetaPolicy p;
  p.kind = Kind::extrapolated;
  p.delta = delta;
  p.known_LN = known_LN;
  return p;
}

BetaPolicy BetaPolicy::adaptive(double delta) {
  BetaPolicy p;
  p.kind = Kind::adaptive;
  p.delta = delta;
  return p;
}

double BetaPolicy::initial() const {
  switch (kind) {
    case Kind::fixed:
      return value;
    case Kind::extrapolated:
      return (2.0 - delta) / known_LN.value_or(1.0);
    case Kind::adaptive:
      return 2.0 - delta;
  }
  return value;
}

std::string BetaPolicy::describe() const {
  switch (kind) {
    case Kind::fixed:
      return fmt::format("fixed({:.17g})", value);
    case Kind::extrapolated:
      return fmt::format("extrapolated(delta={:.17g}, L_N={:.17g})", delta,
                         known_LN.value_or(std::nan("")));
    case Kind::adaptive:
      return fmt::format("adaptive(delta={:.17g})", delta);
  }
  return "?";
}

void StepsizePolicy::validate(Variant variant) const {
  if (!(mu > 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be positive");
  const auto& b = beta;
  if (b.kind != BetaPolicy::Kind::fixed && !(b.delta > 0.0 && b.delta < 1.0)) {
    throw ConfigError(fmt::format("delta = {} must lie in (0, 1)", b.delta));
  }
  if (b.known_LN && !(*b.known_LN > 0.0 && *b.known_LN <= 1.0)) {
    throw ConfigError(fmt::format("L_N = {} must lie in (0, 1]", *b.known_LN));
  }
  switch (b.kind) {
    case BetaPolicy::Kind::fixed: {
      const double upper = (variant == Variant::parallel && b.known_LN) ? 2.0 / *b.known_LN : 2.0;
      if (!(b.value > 0.0 && b.value < upper)) {
        throw ConfigError(fmt::format("beta = {} must lie in (0, {}) for the {} method", b.value,
                                      upper, to_string(variant)));
      }
      break;
    }
    case BetaPolicy::Kind::extrapolated:
      if (!b.known_LN) throw ConfigError("extrapolated beta needs a known L_N");
      if (variant == Variant::sequential && b.initial() >= 2.0) {
        throw ConfigError("extrapolated beta exceeds 2, outside the sequential method's range");
      }
      break;
    case BetaPolicy::Kind::adaptive:
      if (variant == Variant::sequential) {
        throw ConfigError("adaptive beta is defined for the parallel method only");
      }
      break;
  }
}

Sampler SamplerSpec::make(std::optional<std::size_t> family_size, std::uint64_t seed) const {
  switch (kind) {
    case Sampler::Kind::iid_uniform:
    case Sampler::Kind::without_replacement:
      if (!family_size) {
        throw ConfigError("uniform samplers need a finite constraint family; use a generator");
      }
      return kind == Sampler::Kind::iid_uniform ? Sampler::iid_uniform(*family_size, seed)
                                                : Sampler::without_replacement(*family_size, seed);
    case Sampler::Kind::partition:
      return Sampler::partition(blocks, seed);
    case Sampler::Kind::blocks:
      return Sampler::blocks(blocks, seed);
    case Sampler::Kind::stratified:
      return Sampler::stratified(blocks, draws_per_block, seed);
    case Sampler::Kind::generator:
      return Sampler::generator(generator, seed);
  }
  throw ConfigError("unknown sampler");
}

bool LogCadence::should_log(std::size_t k, std::size_t final_k) const {
  if (k == final_k) return true;
  if (kind == Kind::every) return stride > 0 && k % stride == 0;
  return k > 0 && (k & (k - 1)) == 0;
}

void IterateState::accumulate(const Vector& x_k) {
  ++k;
  const std::uint64_t w = static_cast<std::uint64_t>(k + 1) * static_cast<std::uint64_t>(k + 1);
  if (weighted_sum_x.size() != x_k.size()) weighted_sum_x = Vector::Zero(x_k.size());
  weighted_sum_x += static_cast<double>(w) * x_k;
  S += w;
}

Vector IterateState::average() const { return weighted_sum_x / static_cast<double>(S); }

std::uint64_t weight_sum(std::size_t t) {
  const std::uint64_t u = t;
  return (u + 1) * (u + 2) * (2 * u + 3) / 6 - 1;
}

Vector polyak_step(double g_plus, const Vector& d, const Vector& v, double beta) {
  if (g_plus == 0.0) return v;
  const double dd = d.squaredNorm();
  if (dd == 0.0) throw OracleError("Polyak step with a zero direction and g+ > 0");
  return v - (beta * g_plus / dd) * d;
}

namespace {

std::vector<PositivePart> evaluate_batch_in(const ProblemSpec& spec,
                                            std::span<const ConstraintIndex> indices,
                                            const Vector& v, tbb::task_arena* arena) {
  std::vector<PositivePart> out(indices.size());
  auto body = [&](std::size_t i) {
    out[i] = positive_part_value_and_dir(spec.constraints, indices[i], v);
  };
  if (arena == nullptr || indices.size() < 2) {
    for (std::size_t i = 0; i < indices.size(); ++i) body(i);
    return out;
  }
  arena->execute([&] {
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, indices.size()),
                      [&](const tbb::blocked_range<std::size_t>& r) {
                        for (std::size_t i = r.begin(); i != r.end(); ++i) body(i);
                      });
  });
  return out;
}

}  // namespace

std::vector<PositivePart> evaluate_batch(const ProblemSpec& spec,
                                         std::span<const ConstraintIndex> indices,
                                         const Vector& v, std::size_t workers) {
  if (workers <= 1) return evaluate_batch_in(spec, indices, v, nullptr);
  tbb::task_arena arena(static_cast<int>(workers));
  return evaluate_batch_in(spec, indices, v, &arena);
}

BatchStepDiagnostics batch_diagnostics(std::span<const PositivePart> batch) {
  BatchStepDiagnostics diag;
  const std::size_t N = batch.size();
  if (N == 0) return diag;
  const double inv_N = 1.0 / static_cast<double>(N);
  const auto n = batch.front().d.size();

  std::vector<Vector> w(N);
  Vector mean = Vector::Zero(n);
  double weighted_sq = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double g = batch[i].g_plus;
    const double dd = batch[i].d.squaredNorm();
    diag.per_index_gplus.push_back(g);
    diag.per_index_d_norm_sq.push_back(dd);
    w[i] = g == 0.0 ? Vector::Zero(n) : Vector((g / dd) * batch[i].d);
    mean += w[i];
    weighted_sq += g == 0.0 ? 0.0 : g * g / dd;
    sq += g * g;
  }
  mean *= inv_N;
  double variation = 0.0;
  for (const Vector& wi : w) variation += (wi - mean).squaredNorm();
  diag.V_N = variation * inv_N;
  diag.mean_weighted_sq = weighted_sq * inv_N;
  diag.mean_sq_violation = sq * inv_N;
  // ||mean||^2 / avg = 1 - V_N / avg; this form keeps the ratio <= 1 in
  // floating point.
  diag.LN_k = diag.any_violation()
                  ? std::max(0.0, 1.0 - diag.V_N / diag.mean_weighted_sq)
                  : std::numeric_limits<double>::quiet_NaN();
  return diag;
}

ParallelUpdate parallel_feasibility_update(const ProblemSpec& spec,
                                           std::span<const PositivePart> batch, const Vector& v,
                                           double beta) {
  if (batch.empty()) throw ConfigError("parallel update with an empty minibatch");
  ParallelUpdate out;
  out.diag = batch_diagnostics(batch);
  out.z.reserve(batch.size());
  for (const auto& pp : batch) out.z.push_back(polyak_step(pp.g_plus, pp.d, v, beta));
  if (!out.diag.any_violation()) {
    out.z_bar = v;
  } else if (out.z.size() == 1) {
    out.z_bar = out.z.front();
  } else {
    out.z_bar = out.z.front();
    for (std::size_t i = 1; i < out.z.size(); ++i) out.z_bar += out.z[i];
    out.z_bar /= static_cast<double>(out.z.size());
  }
  out.x_next = spec.simple_set.project(out.z_bar);
  return out;
}

ParallelUpdate parallel_feasibility_update(const ProblemSpec& spec,
                                           std::span<const ConstraintIndex> indices,
                                           const Vector& v, double beta, std::size_t workers) {
  const auto batch = evaluate_batch(spec, indices, v, workers);
  return parallel_feasibility_update(spec, std::span<const PositivePart>(batch), v, beta);
}

SequentialUpdate sequential_feasibility_update(const ProblemSpec& spec,
                                               std::span<const ConstraintIndex> indices,
                                               const Vector& v, double beta) {
  if (indices.empty()) throw ConfigError("sequential update with an empty minibatch");
  SequentialUpdate out;
  out.z.reserve(indices.size() + 1);
  out.z.push_back(v);
  for (ConstraintIndex w : indices) {
    const Vector& prev = out.z.back();
    const PositivePart pp = positive_part_value_and_dir(spec.constraints, w, prev);
    out.per_step_gplus.push_back(pp.g_plus);
    out.per_step_d_norm_sq.push_back(pp.d.squaredNorm());
    out.z.push_back(spec.simple_set.project(polyak_step(pp.g_plus, pp.d, prev, beta)));
  }
  out.x_next = out.z.back();
  return out;
}

Vector objective_step(const ProblemSpec& spec, const Vector& x_prev, double alpha) {
  const Vector s = spec.objective.subgradient(x_prev);
  if (s.size() != x_prev.size() || !all_finite(s)) {
    throw OracleError("objective subgradient is not a finite vector of the right dimension");
  }
  return spec.simple_set.project(x_prev - alpha * s);
}

LemmaChecker::LemmaChecker(const PolyhedronSpec& poly, const SimpleSet& set,
                           Vector feasible_point, double M_g, double tol)
    : poly_(&poly),
      set_(&set),
      feasible_(std::move(feasible_point)),
      M_g_(M_g),
      tol_(tol),
      worst_slack_(std::numeric_limits<double>::infinity()) {}

void LemmaChecker::record(double slack, const char* name, const IterationSnapshot& at) {
  ++checks_;
  worst_slack_ = std::min(worst_slack_, slack);
  if (!(slack >= -tol_)) {
    IterationSnapshot snap = at;
    snap.detail = fmt::format("{} violated: slack {:.6e} < -{:.1e}", name, slack, tol_);
    throw AssertionViolation(fmt::format("lemma check failed at k = {} ({}): {}", at.k,
                                         at.stage, snap.detail),
                             std::move(snap));
  }
}

double LemmaChecker::dist_sq(const Vector& v) const {
  // Tighter than the metric tolerance so distance noise stays below tol_.
  const double d = distance_oracle(*poly_, *set_, v, 1e-10);
  return d * d;
}

void LemmaChecker::polyak(const Vector& v, const Vector& y, double beta, double g_plus,
                          double d_norm_sq, const IterationSnapshot& at) {
  const double decrease = g_plus == 0.0 ? 0.0 : beta * (2.0 - beta) * g_plus * g_plus / d_norm_sq;
  const double slack =
      (v - feasible_).squaredNorm() - decrease - (y - feasible_).squaredNorm();
  record(slack, "Polyak step inequality", at);
}

void LemmaChecker::projection(const Vector& before, const Vector& after,
                              const IterationSnapshot& at) {
  const double slack = (before - feasible_).squaredNorm() - (after - before).squaredNorm() -
                       (after - feasible_).squaredNorm();
  record(slack, "projection inequality", at);
}

void LemmaChecker::parallel(const Vector& v, const Vector& x_next, double beta,
                            const BatchStepDiagnostics& diag, double LN_surrogate,
                            const IterationSnapshot& at) {
  if (!diag.any_violation()) return;
  const double dv = dist_sq(v);
  const double dx = dist_sq(x_next);
  const double variance_form =
      dv - beta * (2.0 - beta) * diag.mean_weighted_sq - beta * beta * diag.V_N - dx;
  record(variance_form, "parallel distance decrease (variation form)", at);
  if (2.0 - beta * LN_surrogate > 0.0) {
    const double N = static_cast<double>(diag.per_index_gplus.size());
    const double sum_sq = diag.mean_sq_violation * N;
    const double LN_form = dv - beta * (2.0 - beta * LN_surrogate) / (N * M_g_ * M_g_) * sum_sq - dx;
    record(LN_form, "parallel distance decrease (L_N form)", at);
  }
}

void LemmaChecker::sequential(const SequentialUpdate& update, double beta,
                              const IterationSnapshot& at) {
  const double coeff = beta * (2.0 - beta) / (M_g_ * M_g_);
  double total = 0.0;
  double previous = dist_sq(update.z.front());
  const double first = previous;
  for (std::size_t i = 0; i < update.per_step_gplus.size(); ++i) {
    const double g = update.per_step_gplus[i];
    const double current = dist_sq(update.z[i + 1]);
    record(previous - coeff * g * g - current, "sequential per-step distance decrease", at);
    previous = current;
    total += g * g;
  }
  const Vector& v = update.z.front();
  const Vector& x = update.x_next;
  record((v - feasible_).squaredNorm() - coeff * total - (x - feasible_).squaredNorm(),
         "sequential summed decrease", at);
  record(first - coeff * total - previous, "sequential distance decrease", at);
}

double averages_identity_residual(std::span<const Vector> u, const Vector& w) {
  if (u.empty()) throw ConfigError("averages identity needs at least one vector");
  const double inv_N = 1.0 / static_cast<double>(u.size());
  Vector mean = Vector::Zero(w.size());
  for (const Vector& ui : u) mean += ui;
  mean *= inv_N;
  double to_w = 0.0;
  double spread = 0.0;
  for (const Vector& ui : u) {
    to_w += (ui - w).squaredNorm();
    spread += (ui - mean).squaredNorm();
  }
  return (mean - w).squaredNorm() - (to_w * inv_N - spread * inv_N);
}

namespace {
constexpr double kRegimeMargin = 1e-12;
}  // namespace

AnalysisConstants analysis_constants(double LN, double c, double M_g, double beta,
                                     std::size_t N, Variant variant) {
  if (!(c > 0.0) || !(M_g > 0.0)) throw ConfigError("c and M_g must be positive");
  if (N == 0) throw ConfigError("minibatch size must be >= 1");
  const double cM = c * M_g * M_g;
  if (variant == Variant::parallel) {
    if (!(LN > 0.0 && LN <= 1.0)) throw ConfigError(fmt::format("L_N = {} outside (0, 1]", LN));
    // Within rounding of the boundary q_N = 1 and b_N^p blows up.
    if (!(cM * LN > 1.0 + kRegimeMargin)) {
      throw ConfigError(fmt::format(
          "c M_g^2 L_N = {:.6g} <= 1: the parallel rate theory does not cover this regime",
          cM * LN));
    }
    if (!(beta > 0.0 && beta < 2.0 / LN)) {
      throw ConfigError(fmt::format("beta = {} outside (0, 2/L_N) = (0, {:.6g})", beta, 2.0 / LN));
    }
    const double q = decrease_coefficient(beta, LN) / cM;
    return {q, 1.0 / (1.0 - q) - 1.0};
  }
  if (!(cM > 1.0 + kRegimeMargin)) {
    throw ConfigError(fmt::format(
        "c M_g^2 = {:.6g} <= 1: the sequential rate theory does not cover this regime", cM));
  }
  if (!(beta > 0.0 && beta < 2.0)) {
    throw ConfigError(fmt::format("beta = {} outside (0, 2)", beta));
  }
  const double q = decrease_coefficient(beta, 1.0) / cM;
  return {q, std::pow(1.0 - q, -static_cast<double>(N)) - 1.0};
}

namespace {

std::optional<double> constraint_max_violation(const ProblemSpec& spec, const Vector& x) {
  const auto size = spec.constraints.size();
  if (!size) return std::nullopt;
  double worst = 0.0;
  for (std::size_t w = 0; w < *size; ++w) {
    worst = std::max(worst, spec.constraints.evaluate(w, x));
  }
  return worst;
}

Vector initial_point(const ProblemSpec& spec, const SolverConfig& config) {
  const auto n = static_cast<Eigen::Index>(spec.dimension);
  if (config.init == InitRule::project_origin) return spec.simple_set.project(Vector::Zero(n));
  Rng rng(config.seed, kInitStream);
  return spec.simple_set.project(config.init_scale * rng.normal_vector(spec.dimension));
}

}  // namespace

RunResult run(const ProblemSpec& spec, const SolverConfig& config,
              const PolyhedronSpec* polyhedron) {
  if (config.iterations == 0) throw ConfigError("iterations must be >= 1");
  if (config.batch_size == 0) throw ConfigError("minibatch size N must be >= 1");
  if (spec.dimension == 0) throw ConfigError("problem dimension must be >= 1");
  const StepsizePolicy steps{spec.mu, config.beta};
  steps.validate(config.variant);

  const bool unconstrained = spec.constraints.is_empty();
  std::optional<Sampler> sampler;
  if (!unconstrained) {
    sampler = config.sampler.make(spec.constraints.size(), config.seed);
    sampler->check_batch_size(config.batch_size);
  }

  std::optional<LemmaChecker> checker;
  if (config.assertions == AssertionMode::lemma_checks) {
    if (polyhedron == nullptr || !spec.known_optimum) {
      throw ConfigError("lemma checks need a polyhedral problem with a known optimum");
    }
    checker.emplace(*polyhedron, spec.simple_set, spec.known_optimum->x_star, spec.M_g);
  }

  std::optional<tbb::task_arena> arena;
  if (config.workers > 1 && config.variant == Variant::parallel) {
    arena.emplace(static_cast<int>(config.workers));
  }

  RunResult result;
  IterateState& state = result.final_state;
  state.x = initial_point(spec, config);
  state.v = state.x;
  state.weighted_sum_x = Vector::Zero(state.x.size());
  if (!all_finite(state.x)) throw SolverAbort("initial point is not finite", {0, "init", state.x, state.v, 0.0, ""});

  double beta_k = config.beta.initial();
  const auto started = std::chrono::steady_clock::now();

  auto abort_if_non_finite = [&](const Vector& value, std::size_t k, const char* stage,
                                 const Vector& x, const Vector& v) {
    if (all_finite(value)) return;
    throw SolverAbort(fmt::format("non-finite iterate produced by the {} at k = {}", stage, k),
                      {k, stage, x, v, beta_k, ""});
  };

  for (std::size_t k = 1; k <= config.iterations; ++k) {
    const double alpha = steps.alpha(k - 1);
    const Vector x_prev = state.x;
    Vector v;
    if (checker) {
      const Vector s = spec.objective.subgradient(x_prev);
      const Vector raw = x_prev - alpha * s;
      v = spec.simple_set.project(raw);
      abort_if_non_finite(v, k, "objective step", x_prev, v);
      checker->projection(raw, v, {k, "objective step", x_prev, v, beta_k, ""});
    } else {
      v = objective_step(spec, x_prev, alpha);
      abort_if_non_finite(v, k, "objective step", x_prev, v);
    }

    std::optional<double> LN_k;
    Vector x_next;
    if (unconstrained) {
      x_next = v;
    } else {
      const auto indices = sampler->draw_minibatch(config.batch_size);
      if (config.variant == Variant::parallel) {
        const auto batch = evaluate_batch_in(spec, indices, v, arena ? &*arena : nullptr);
        BatchStepDiagnostics diag = batch_diagnostics(batch);
        if (diag.any_violation()) {
          LN_k = diag.LN_k;
          result.max_LN_k = std::max(result.max_LN_k.value_or(0.0), diag.LN_k);
          if (config.beta.kind == BetaPolicy::Kind::adaptive && diag.LN_k > 0.0) {
            beta_k = (2.0 - config.beta.delta) / diag.LN_k;
          }
        }
        ParallelUpdate update = parallel_feasibility_update(spec, batch, v, beta_k);
        x_next = std::move(update.x_next);
        abort_if_non_finite(x_next, k, "parallel feasibility update", x_prev, v);
        if (checker) {
          const IterationSnapshot at{k, "parallel feasibility update", x_next, v, beta_k, ""};
          for (std::size_t i = 0; i < batch.size(); ++i) {
            checker->polyak(v, update.z[i], beta_k, batch[i].g_plus,
                            diag.per_index_d_norm_sq[i], at);
          }
          checker->projection(update.z_bar, x_next, at);
          checker->parallel(v, x_next, beta_k, diag, result.max_LN_k.value_or(1.0), at);
        }
        state.last_LN_k = diag.LN_k;
      } else {
        SequentialUpdate update = sequential_feasibility_update(spec, indices, v, beta_k);
        x_next = update.x_next;
        abort_if_non_finite(x_next, k, "sequential feasibility update", x_prev, v);
        if (checker) {
          const IterationSnapshot at{k, "sequential feasibility update", x_next, v, beta_k, ""};
          for (std::size_t i = 0; i < indices.size(); ++i) {
            checker->polyak(update.z[i], update.z[i + 1], beta_k, update.per_step_gplus[i],
                            update.per_step_d_norm_sq[i], at);
          }
          checker->sequential(update, beta_k, at);
        }
      }
    }

    state.v = v;
    state.x = std::move(x_next);
    state.accumulate(state.x);
    if (config.keep_history) {
      result.x_history.push_back(state.x);
      result.v_history.push_back(state.v);
    }

    if (config.cadence.should_log(k, config.iterations)) {
      const Vector x_hat = state.average();
      RunRecord rec;
      rec.seed = config.seed;
      rec.k = k;
      if (spec.known_optimum) rec.f_gap = spec.objective.value(x_hat) - spec.known_optimum->f_star;
      if (polyhedron != nullptr) {
        rec.max_violation = max_violation(*polyhedron, x_hat);
        rec.dist_X = distance_oracle(*polyhedron, spec.simple_set, x_hat);
      } else if (auto mv = constraint_max_violation(spec, x_hat)) {
        rec.max_violation = std::max(*mv, 0.0);
      }
      rec.LN_k = LN_k;
      rec.beta_k = beta_k;
      if (config.record_time) {
        rec.elapsed_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
      }
      result.records.push_back(rec);
    }
  }

  if (checker) {
    result.lemma_checks = checker->checks();
    result.worst_lemma_slack = checker->worst_slack();
  } else {
    result.worst_lemma_slack = std::numeric_limits<double>::infinity();
  }
  return result;
}

}  // namespace mbproj
