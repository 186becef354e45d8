#pragma once

// Gaussian Laplace approximation L_n = N(x_n, n^{-1} C_n) with
// C_n^{-1} = Hess I_n(x_n), stored through the Cholesky factor of the
// precision C_n^{-1}.

#include "lapqmc/model.hpp"
#include "lapqmc/optimize.hpp"

#include <Eigen/Eigenvalues>

namespace lapqmc {

class SingularHessian : public NumericalError {
 public:
  SingularHessian(const std::string& what, double smallest_eigenvalue)
      : NumericalError(what), smallest_(smallest_eigenvalue) {}
  double smallest_eigenvalue() const { return smallest_; }

 private:
  double smallest_;
};

class LaplaceApprox {
 public:
  /// Factors `precision` (= C_n^{-1}); throws SingularHessian when it is not
  /// positive definite. `token` links the object to its calibrated posterior.
  LaplaceApprox(Vector mean, const Matrix& precision, double n, std::uint64_t token = 0)
      : mean_(std::move(mean)), n_(n), token_(token) {
    const Eigen::Index d = mean_.size();
    if (precision.rows() != d || precision.cols() != d)
      throw ConfigError("laplace: precision must be d x d");
    if (!(n > 0)) throw ConfigError("laplace: n must be positive");
    precision_ = 0.5 * (precision + precision.transpose());
    Eigen::LLT<Matrix> llt(precision_);
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
      const Vector piv = Matrix(llt.matrixL()).diagonal();
      const double scale = precision_.diagonal().cwiseAbs().maxCoeff();
      ok = (piv.array() > 0).all() && piv.array().square().minCoeff() > 1e-13 * scale;
    }
    if (!ok) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(precision_, Eigen::EigenvaluesOnly);
      throw SingularHessian("laplace: Hessian of I_n at the MAP point is not positive definite "
                            "(smallest eigenvalue " + std::to_string(es.eigenvalues()[0]) + ")",
                            es.eigenvalues()[0]);
    }
    factor_ = llt.matrixL();
    log_det_cn_ = -2.0 * factor_.diagonal().array().log().sum();
    const double dd = static_cast<double>(d);
    log_tilde_z_ = -0.5 * dd * std::log(n_) + 0.5 * (dd * std::log(2.0 * std::numbers::pi) + log_det_cn_);
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  double n() const { return n_; }
  /// C_n^{-1} = Hess I_n(x_n).
  const Matrix& precision() const { return precision_; }
  /// Lower Cholesky factor L of C_n^{-1}.
  const Matrix& precision_factor() const { return factor_; }
  double log_det_cn() const { return log_det_cn_; }
  double log_tilde_z() const { return log_tilde_z_; }
  double tilde_z() const { return std::exp(log_tilde_z_); }
  std::uint64_t token() const { return token_; }

  /// Covariance n^{-1} C_n of the Gaussian.
  Matrix covariance() const {
    const Eigen::Index d = mean_.size();
    return Eigen::LLT<Matrix>(precision_).solve(Matrix::Identity(d, d)) / n_;
  }

  /// x_n + n^{-1/2} L^{-T} xi.
  Vector transform(const Vector& xi) const {
    return mean_ + factor_.transpose().triangularView<Eigen::Upper>().solve(xi) / std::sqrt(n_);
  }

  void sample(Rng& rng, Vector& out) const {
    Vector xi(dim());
    fill_standard_normal(rng, xi);
    out = transform(xi);
  }

  std::vector<Vector> sample(std::size_t count, Rng& rng) const {
    if (count < 1) throw ConfigError("laplace sample: count must be at least 1");
    std::vector<Vector> out(count);
    for (auto& x : out) sample(rng, x);
    return out;
  }

  /// T_n(x) = 1/2 |x - x_n|^2_{C_n^{-1}}, the quadratic model of I_n.
  double quadratic_model(const Vector& x) const {
    const Vector r = factor_.transpose() * (x - mean_);
    return 0.5 * r.squaredNorm();
  }

  /// -n T_n(x): log-density without normalization.
  double log_density_unnormalized(const Vector& x) const { return -n_ * quadratic_model(x); }

  double log_density(const Vector& x) const { return log_density_unnormalized(x) - log_tilde_z_; }

  /// Discrepancy recorded when a Gaussian-prior cross-check was performed.
  std::optional<double> prior_identity_discrepancy;

 private:
  Vector mean_;
  double n_;
  std::uint64_t token_;
  Matrix precision_;
  Matrix factor_;
  double log_det_cn_ = 0.0;
  double log_tilde_z_ = 0.0;
};

/// Builds L_n from a calibrated posterior and its converged MAP result. For
/// Gaussian priors the Hessian is checked against Hess Phi + (1/n) Sigma_0^{-1}
/// and the relative discrepancy recorded.
inline LaplaceApprox build_laplace(const ScaledPosterior& post, const MinResult& map) {
  if (!map.converged) throw StateError("build_laplace: MAP solve did not converge");
  if (!post.calibrated() || post.map_point() != map.x)
    throw UsageError("build_laplace: posterior was not calibrated with this MAP result");
  const Matrix hess = map.hessian ? *map.hessian : post.hess_neg_log_post(map.x);
  LaplaceApprox approx(map.x, hess, post.n(), post.token());
  if (post.prior().kind() == PriorKind::Gaussian) {
    const Matrix identity =
        post.likelihood().hess(map.x) + post.prior().precision() / post.n();
    approx.prior_identity_discrepancy = (hess - identity).norm() / hess.norm();
  }
  return approx;
}

/// log w~_n(x) = -n (I_n(x) - T_n(x)); -inf outside the prior support.
inline double log_ratio_unnormalized(const ScaledPosterior& post, const LaplaceApprox& approx,
                                     const Vector& x) {
  if (!post.calibrated() || post.token() != approx.token())
    throw UsageError("log_ratio_unnormalized: Laplace approximation was not built from this posterior");
  const double in = post.neg_log_post(x);
  if (!std::isfinite(in)) return -kInf;
  return -post.n() * (in - approx.quadratic_model(x));
}

/// Monte Carlo estimate of L_n(|X - x_n| > radius).
inline double concentration_probe(const LaplaceApprox& approx, double radius, std::size_t count, Rng& rng) {
  if (!(radius > 0)) throw ConfigError("concentration_probe: radius must be positive");
  if (count < 1) throw ConfigError("concentration_probe: count must be at least 1");
  Vector x;
  std::size_t outside = 0;
  for (std::size_t i = 0; i < count; ++i) {
    approx.sample(rng, x);
    if ((x - approx.mean()).norm() > radius) ++outside;
  }
  return static_cast<double>(outside) / static_cast<double>(count);
}

}  // namespace lapqmc
