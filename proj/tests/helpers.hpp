#pragma once

#include <lapqmc/laplace.hpp>
#include <lapqmc/model.hpp>
#include <lapqmc/optimize.hpp>

namespace lapqmc::testing {

/// Phi(x) = 1/2 (x - m)^T H (x - m) with analytic derivatives.
inline LogLikelihood quadratic_likelihood(const Vector& m, const Matrix& h) {
  LogLikelihood lik;
  lik.dim = static_cast<int>(m.size());
  lik.phi = [m, h](const Vector& x) { return 0.5 * (x - m).dot(h * (x - m)); };
  lik.gradient = [m, h](const Vector& x) { return Vector(h * (x - m)); };
  lik.hessian = [h](const Vector&) { return h; };
  return lik;
}

/// Prior N(0, 1) with Phi(x) = 1/2 (x - 1)^2: posterior N(n/(n+1), 1/(n+1)).
inline ScaledPosterior conjugate_1d(double n) {
  return ScaledPosterior(Prior::standard_gaussian(1), quadratic_likelihood(Vector::Ones(1), Matrix::Identity(1, 1)), n);
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace lapqmc::testing
