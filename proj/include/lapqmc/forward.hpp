#pragma once

// Test forward models: an algebraic map in up to four dimensions and a 1D
// elliptic boundary value problem with a log-affine diffusion coefficient.

#include "lapqmc/model.hpp"

namespace lapqmc {

// ---------------------------------------------------------------------------
// Algebraic model

/// F(x) = (exp(x1/5), x2 - x1^2, x3, 2 x4 + x1^2), truncated to the first d
/// components; noise covariance gamma_scale * I.
struct AlgebraicModel {
  int d = 1;
  double gamma_scale = 0.1;

  explicit AlgebraicModel(int dim = 1, double gamma = 0.1) : d(dim), gamma_scale(gamma) {
    if (d < 1 || d > 4) throw ConfigError("algebraic model: d must be in {1, 2, 3, 4}");
    if (!(gamma_scale > 0)) throw ConfigError("algebraic model: noise scale must be positive");
  }

  void check(const Vector& x) const {
    if (x.size() != d) throw ConfigError("algebraic model: expected a point of dimension " + std::to_string(d));
  }

  Vector forward(const Vector& x) const {
    check(x);
    Vector f(d);
    f[0] = std::exp(x[0] / 5.0);
    if (d > 1) f[1] = x[1] - x[0] * x[0];
    if (d > 2) f[2] = x[2];
    if (d > 3) f[3] = 2.0 * x[3] + x[0] * x[0];
    return f;
  }

  Matrix jacobian(const Vector& x) const {
    check(x);
    Matrix j = Matrix::Zero(d, d);
    j(0, 0) = std::exp(x[0] / 5.0) / 5.0;
    if (d > 1) {
      j(1, 0) = -2.0 * x[0];
      j(1, 1) = 1.0;
    }
    if (d > 2) j(2, 2) = 1.0;
    if (d > 3) {
      j(3, 0) = 2.0 * x[0];
      j(3, 3) = 2.0;
    }
    return j;
  }

  std::vector<Matrix> component_hessians(const Vector& x) const {
    check(x);
    std::vector<Matrix> h(static_cast<std::size_t>(d), Matrix::Zero(d, d));
    h[0](0, 0) = std::exp(x[0] / 5.0) / 25.0;
    if (d > 1) h[1](0, 0) = -2.0;
    if (d > 3) h[3](0, 0) = 2.0;
    return h;
  }

  ForwardMap forward_map() const {
    const AlgebraicModel self = *this;
    ForwardMap fm;
    fm.input_dim = d;
    fm.output_dim = d;
    fm.eval = [self](const Vector& x) { return self.forward(x); };
    fm.jacobian = [self](const Vector& x) { return self.jacobian(x); };
    fm.component_hessians = [self](const Vector& x) { return self.component_hessians(x); };
    return fm;
  }

  Vector truth() const { return Vector::Constant(d, 0.25); }
  Vector data() const { return forward(truth()); }
  Matrix noise_covariance() const { return gamma_scale * Matrix::Identity(d, d); }

  LogLikelihood likelihood() const { return gaussian_misfit(forward_map(), data(), noise_covariance()); }

  Prior prior() const { return Prior::unit_cube(d); }

  /// f(x) = x_1 + ... + x_d.
  static double qoi(const Vector& x) { return x.sum(); }
};

// ---------------------------------------------------------------------------
// Elliptic model

/// -(u q')' = 100 t on (0, 1), q(0) = q(1) = 0, with
/// u(t) = exp(sum_k x_k (0.1/k) sin(k pi t)), discretized by linear finite
/// elements on a uniform mesh of M cells.
struct EllipticModel {
  int d = 1;
  int mesh_cells = 1024;
  std::vector<double> obs_points;
  double qoi_point = 0.5;

  explicit EllipticModel(int dim = 1, int cells = 1024, std::vector<double> points = {})
      : d(dim), mesh_cells(cells), obs_points(std::move(points)) {
    if (d < 1 || d > 3) throw ConfigError("elliptic model: d must be in {1, 2, 3}");
    if (mesh_cells < 64) throw ConfigError("elliptic model: at least 64 mesh cells required");
    if (obs_points.empty()) obs_points = default_observation_points(d);
    for (std::size_t i = 0; i < obs_points.size(); ++i) {
      if (!(obs_points[i] > 0.0 && obs_points[i] < 1.0))
        throw ConfigError("elliptic model: observation points must lie in (0, 1)");
      if (i > 0 && !(obs_points[i] > obs_points[i - 1]))
        throw ConfigError("elliptic model: observation points must be strictly increasing");
    }
  }

  static std::vector<double> default_observation_points(int d) {
    if (d <= 2) return {0.25, 0.75};
    return {0.125, 0.25, 0.375, 0.6125, 0.75, 0.875};
  }

  static double psi(int k, double t) { return 0.1 / k * std::sin(k * std::numbers::pi * t); }

  double coefficient(const Vector& x, double t) const {
    double s = 0.0;
    for (int k = 1; k <= d; ++k) s += x[k - 1] * psi(k, t);
    return std::exp(s);
  }

  /// Nodal values q(t_i), t_i = i / M, i = 0..M (boundary zeros included).
  Vector solve(const Vector& x) const {
    if (x.size() != d) throw ConfigError("elliptic model: expected a coefficient vector of dimension " +
                                         std::to_string(d));
    const int m = mesh_cells;
    const double h = 1.0 / m;
    std::vector<double> a(static_cast<std::size_t>(m));
    for (int e = 0; e < m; ++e) a[static_cast<std::size_t>(e)] = coefficient(x, (e + 0.5) * h) / h;

    // Interior unknowns 1..M-1; Thomas algorithm on the SPD tridiagonal system.
    const int k = m - 1;
    std::vector<double> diag(static_cast<std::size_t>(k)), off(static_cast<std::size_t>(k)),
        rhs(static_cast<std::size_t>(k));
    for (int i = 1; i <= k; ++i) {
      const auto r = static_cast<std::size_t>(i - 1);
      diag[r] = a[static_cast<std::size_t>(i - 1)] + a[static_cast<std::size_t>(i)];
      off[r] = -a[static_cast<std::size_t>(i)];
      rhs[r] = 100.0 * h * (i * h);  // exact for the linear load against hat functions
    }
    for (int i = 1; i < k; ++i) {
      const auto r = static_cast<std::size_t>(i);
      const double w = off[r - 1] / diag[r - 1];
      diag[r] -= w * off[r - 1];
      rhs[r] -= w * rhs[r - 1];
    }
    Vector q = Vector::Zero(m + 1);
    q[k] = rhs[static_cast<std::size_t>(k - 1)] / diag[static_cast<std::size_t>(k - 1)];
    for (int i = k - 1; i >= 1; --i) {
      const auto r = static_cast<std::size_t>(i - 1);
      q[i] = (rhs[r] - off[r] * q[i + 1]) / diag[r];
    }
    return q;
  }

  /// Piecewise-linear interpolation of nodal values at t.
  double interpolate(const Vector& q, double t) const {
    const double s = t * mesh_cells;
    int e = static_cast<int>(std::floor(s));
    e = std::clamp(e, 0, mesh_cells - 1);
    const double theta = s - e;
    return (1.0 - theta) * q[e] + theta * q[e + 1];
  }

  Vector observe(const Vector& x) const {
    const Vector q = solve(x);
    Vector out(static_cast<Eigen::Index>(obs_points.size()));
    for (std::size_t i = 0; i < obs_points.size(); ++i) out[static_cast<Eigen::Index>(i)] = interpolate(q, obs_points[i]);
    return out;
  }

  double qoi(const Vector& x) const { return interpolate(solve(x), qoi_point); }

  ForwardMap forward_map() const {
    const EllipticModel self = *this;
    ForwardMap fm;
    fm.input_dim = d;
    fm.output_dim = static_cast<int>(obs_points.size());
    fm.eval = [self](const Vector& x) { return self.observe(x); };
    return fm;
  }

  Vector truth() const { return Vector::Constant(d, 0.25); }
  Vector data() const { return observe(truth()); }

  /// Gaussian misfit with noise covariance gamma * I (noise-free data at truth()).
  LogLikelihood likelihood(double gamma) const {
    const auto k = static_cast<Eigen::Index>(obs_points.size());
    return gaussian_misfit(forward_map(), data(), gamma * Matrix::Identity(k, k));
  }
};

}  // namespace lapqmc
