#pragma once

#include "lapqmc/common.hpp"

namespace lapqmc {

inline double default_gradient_scale() { return std::cbrt(std::numeric_limits<double>::epsilon()); }
inline double default_hessian_scale() { return std::pow(std::numeric_limits<double>::epsilon(), 0.25); }

namespace detail {

// Evaluates f at x + delta, retrying once with a tenfold smaller step when the
// probe is non-finite. Returns the step actually used.
template <class F>
double probe_pair(const F& f, Vector& x, Eigen::Index j, double h, double& fp, double& fm) {
  const double xj = x[j];
  for (int attempt = 0; attempt < 2; ++attempt) {
    const double up = xj + h;
    const double dn = xj - h;
    x[j] = up;
    fp = f(x);
    x[j] = dn;
    fm = f(x);
    x[j] = xj;
    if (std::isfinite(fp) && std::isfinite(fm)) return 0.5 * (up - dn);
    h /= 10.0;
  }
  throw EvaluationError("finite difference: non-finite function value near coordinate " +
                        std::to_string(j));
}

}  // namespace detail

/// Central-difference gradient with steps h_j = scale * (1 + |x_j|).
template <class F>
Vector fd_gradient(const F& f, const Vector& x, double scale = default_gradient_scale()) {
  Vector probe = x;
  Vector g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double fp = 0.0, fm = 0.0;
    const double h = detail::probe_pair(f, probe, j, scale * (1.0 + std::abs(x[j])), fp, fm);
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Central-difference Jacobian of a vector-valued map (rows = outputs).
template <class F>
Matrix fd_jacobian(const F& f, const Vector& x, double scale = default_gradient_scale()) {
  Vector probe = x;
  Matrix jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h0 = scale * (1.0 + std::abs(x[j]));
    const double up = x[j] + h0;
    const double dn = x[j] - h0;
    probe[j] = up;
    const Vector fp = f(probe);
    probe[j] = dn;
    const Vector fm = f(probe);
    probe[j] = x[j];
    if (!fp.allFinite() || !fm.allFinite())
      throw EvaluationError("finite difference Jacobian: non-finite value");
    if (j == 0) jac.resize(fp.size(), x.size());
    jac.col(j) = (fp - fm) / (up - dn);
  }
  return jac;
}

/// Second-order central stencil Hessian, symmetrized.
template <class F>
Matrix fd_hessian(const F& f, const Vector& x, double scale = default_hessian_scale()) {
  const Eigen::Index d = x.size();
  Vector h(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double hj = scale * (1.0 + std::abs(x[j]));
    h[j] = (x[j] + hj) - x[j];
  }
  Vector probe = x;
  auto eval = [&](const Vector& p) {
    const double v = f(p);
    if (!std::isfinite(v)) throw EvaluationError("finite difference Hessian: non-finite value");
    return v;
  };
  const double f0 = eval(x);
  Matrix hess(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    probe[j] = x[j] + h[j];
    const double fp = eval(probe);
    probe[j] = x[j] - h[j];
    const double fm = eval(probe);
    probe[j] = x[j];
    hess(j, j) = (fp - 2.0 * f0 + fm) / (h[j] * h[j]);
    for (Eigen::Index k = 0; k < j; ++k) {
      auto corner = [&](double sj, double sk) {
        probe[j] = x[j] + sj * h[j];
        probe[k] = x[k] + sk * h[k];
        const double v = eval(probe);
        probe[j] = x[j];
        probe[k] = x[k];
        return v;
      };
      const double v = (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) /
                       (4.0 * h[j] * h[k]);
      hess(j, k) = v;
      hess(k, j) = v;
    }
  }
  return 0.5 * (hess + hess.transpose());
}

}  // namespace lapqmc
