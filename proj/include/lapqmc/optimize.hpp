#pragma once

// MAP computation: damped Newton with Armijo backtracking and a Levenberg
// shift for indefinite Hessians, plus a deterministic multistart driver.

#include "lapqmc/finite_difference.hpp"
#include "lapqmc/model.hpp"

#include <optional>

namespace lapqmc {

struct Objective {
  ScalarField value;
  VectorField gradient;
  MatrixField hessian;
};

struct MinResult {
  Vector x;
  double value = kInf;
  double grad_norm = kInf;
  int iterations = 0;
  bool converged = false;
  std::optional<Matrix> hessian;
  /// Some coordinate ended on the box boundary (box-constrained runs only).
  bool boundary_active = false;
};

struct Box {
  Vector lower;
  Vector upper;
};

class OptimizationFailure : public NumericalError {
 public:
  OptimizationFailure(const std::string& what, MinResult best)
      : NumericalError(what), best_(std::move(best)) {}
  const MinResult& best_attempt() const { return best_; }

 private:
  MinResult best_;
};

namespace detail {

inline Vector project(const Vector& x, const std::optional<Box>& box) {
  if (!box) return x;
  return x.cwiseMax(box->lower).cwiseMin(box->upper);
}

// Gradient with components that push against an active bound removed.
inline Vector projected_gradient(const Vector& x, const Vector& g, const std::optional<Box>& box) {
  if (!box) return g;
  Vector pg = g;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x[j] <= box->lower[j] && g[j] > 0) pg[j] = 0;
    if (x[j] >= box->upper[j] && g[j] < 0) pg[j] = 0;
  }
  return pg;
}

inline bool on_boundary(const Vector& x, const std::optional<Box>& box) {
  if (!box) return false;
  return ((x.array() <= box->lower.array()) || (x.array() >= box->upper.array())).any();
}

}  // namespace detail

/// Damped Newton iteration. Armijo constant 1e-4 with step halving; an
/// indefinite Hessian is shifted by lambda*I, lambda doubling from 1e-6 until
/// the Cholesky factorization succeeds. Exhausting max_iter is reported
/// through `converged == false`, not an exception.
inline MinResult minimize_newton(const Objective& obj, const Vector& x0, double tol, int max_iter,
                                 const std::optional<Box>& box = std::nullopt) {
  if (!(tol > 0)) throw ConfigError("minimize_newton: tol must be positive");
  constexpr double kArmijo = 1e-4;
  constexpr int kMaxHalvings = 60;
  const double eps = std::numeric_limits<double>::epsilon();

  MinResult res;
  Vector x = detail::project(x0, box);
  double fx = obj.value(x);
  if (!std::isfinite(fx)) throw EvaluationError("minimize_newton: objective not finite at start " + format_vector(x));

  const Eigen::Index d = x.size();
  int it = 0;
  for (;; ++it) {
    const Vector g = obj.gradient(x);
    if (!g.allFinite()) throw EvaluationError("minimize_newton: gradient not finite at " + format_vector(x));
    const Vector pg = detail::projected_gradient(x, g, box);
    res.grad_norm = pg.norm();
    if (res.grad_norm < tol) {
      res.converged = true;
      break;
    }
    if (it >= max_iter) break;

    Matrix h = obj.hessian(x);
    if (!h.allFinite()) throw EvaluationError("minimize_newton: Hessian not finite at " + format_vector(x));
    h = 0.5 * (h + h.transpose());
    double lambda = 0.0;
    Eigen::LLT<Matrix> llt;
    for (int k = 0; k < 200; ++k) {
      llt.compute(h + lambda * Matrix::Identity(d, d));
      if (llt.info() == Eigen::Success) break;
      lambda = lambda == 0.0 ? 1e-6 : 2.0 * lambda;
    }
    if (llt.info() != Eigen::Success) throw FactorizationError("minimize_newton: could not regularize Hessian");
    Vector p = -llt.solve(pg);

    double alpha = 1.0;
    bool accepted = false;
    Vector trial;
    double ft = kInf;
    for (int k = 0; k < kMaxHalvings; ++k, alpha *= 0.5) {
      trial = detail::project(x + alpha * p, box);
      ft = obj.value(trial);
      const double slope = g.dot(trial - x);
      if (std::isfinite(ft) && ft <= fx + kArmijo * slope + 10.0 * eps * std::abs(fx)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    if (trial == x) break;
    x = trial;
    fx = ft;
  }

  res.x = x;
  res.value = fx;
  res.iterations = it;
  res.boundary_active = detail::on_boundary(x, box);
  res.hessian = obj.hessian(x);
  return res;
}

struct MapOptions {
  double tol = 1e-9;
  int max_iter = 200;
};

/// Objective I_n (uncalibrated) of a posterior, with its derivatives.
inline Objective posterior_objective(const ScaledPosterior& post) {
  return Objective{
      [&post](const Vector& x) { return post.raw_objective(x); },
      [&post](const Vector& x) { return post.grad_neg_log_post(x); },
      [&post](const Vector& x) { return post.hess_neg_log_post(x); },
  };
}

/// Multistart MAP solve. Start 0 is the prior center, starts 1.. are prior
/// draws from streams keyed by (seed, start). The lowest converged objective
/// wins (ties: lowest start index) and calibrates iota_n on the posterior.
inline MinResult find_map(ScaledPosterior& post, int starts = 1, std::uint64_t seed = 0,
                          const MapOptions& opts = {}) {
  if (starts < 1) throw ConfigError("find_map: starts must be at least 1");
  std::optional<Box> box;
  if (post.prior().kind() == PriorKind::UniformBox) box = Box{post.prior().lower(), post.prior().upper()};
  const Objective obj = posterior_objective(post);

  std::vector<MinResult> results(static_cast<std::size_t>(starts));
  for (int s = 0; s < starts; ++s) {
    Vector x0;
    if (s == 0) {
      x0 = post.prior().center();
    } else {
      Rng rng = make_stream(seed, 0x5eed, static_cast<std::uint64_t>(s));
      x0 = post.prior().sample(rng);
    }
    try {
      results[static_cast<std::size_t>(s)] = minimize_newton(obj, x0, opts.tol, opts.max_iter, box);
    } catch (const NumericalError&) {
      results[static_cast<std::size_t>(s)] = MinResult{};
    }
  }

  int best = -1;
  int best_any = -1;
  for (int s = 0; s < starts; ++s) {
    const auto& r = results[static_cast<std::size_t>(s)];
    if (best_any < 0 || r.value < results[static_cast<std::size_t>(best_any)].value) best_any = s;
    if (!r.converged) continue;
    if (best < 0 || r.value < results[static_cast<std::size_t>(best)].value) best = s;
  }
  if (best < 0) {
    throw OptimizationFailure("find_map: no start converged",
                              best_any >= 0 ? results[static_cast<std::size_t>(best_any)] : MinResult{});
  }
  MinResult out = results[static_cast<std::size_t>(best)];
  post.calibrate(out.x, out.value);
  return out;
}

}  // namespace lapqmc
