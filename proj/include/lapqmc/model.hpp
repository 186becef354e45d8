#pragma once

// Priors, negative log-likelihoods and the scaled posterior family
//   mu_n(dx) ∝ exp(-n Phi(x)) mu_0(dx),
// written through the calibrated objective
//   I_n(x) = Phi(x) - (1/n) log pi_0(x) - iota_n,   min I_n = 0.

#include "lapqmc/common.hpp"
#include "lapqmc/finite_difference.hpp"

#include <optional>

namespace lapqmc {

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

inline std::uint64_t hash_double(double v) {
  std::uint64_t bits = 0;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(v));
  return bits;
}

inline std::uint64_t hash_vector(std::uint64_t seed, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) seed = hash_combine(seed, hash_double(v[i]));
  return seed;
}

// ---------------------------------------------------------------------------

enum class PriorKind { UniformBox, Gaussian };

/// Reference measure mu_0: a uniform distribution on a box or a Gaussian.
class Prior {
 public:
  static Prior uniform_box(Vector lower, Vector upper) {
    if (lower.size() != upper.size() || lower.size() == 0)
      throw ConfigError("uniform prior: bound vectors must be non-empty and of equal length");
    for (Eigen::Index j = 0; j < lower.size(); ++j) {
      if (!(lower[j] < upper[j]))
        throw ConfigError("uniform prior: lower bound must be below upper bound in coordinate " +
                          std::to_string(j));
    }
    Prior p;
    p.kind_ = PriorKind::UniformBox;
    p.lower_ = std::move(lower);
    p.upper_ = std::move(upper);
    p.log_norm_ = -(p.upper_ - p.lower_).array().log().sum();
    return p;
  }

  /// The unit-volume cube [-1/2, 1/2]^d.
  static Prior unit_cube(int d) {
    return uniform_box(Vector::Constant(d, -0.5), Vector::Constant(d, 0.5));
  }

  static Prior gaussian(Vector mean, Matrix covariance) {
    const Eigen::Index d = mean.size();
    if (d == 0 || covariance.rows() != d || covariance.cols() != d)
      throw ConfigError("gaussian prior: covariance must be a d x d matrix matching the mean");
    const double asym = (covariance - covariance.transpose()).norm();
    if (asym > 1e-12 * covariance.norm())
      throw ConfigError("gaussian prior: covariance is not symmetric");
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().array() > 0).all())
      throw FactorizationError("gaussian prior: covariance is not positive definite");
    Prior p;
    p.kind_ = PriorKind::Gaussian;
    p.mean_ = std::move(mean);
    p.cov_ = std::move(covariance);
    p.chol_ = llt.matrixL();
    p.precision_ = llt.solve(Matrix::Identity(d, d));
    p.precision_ = 0.5 * (p.precision_ + p.precision_.transpose());
    const double log_det = 2.0 * p.chol_.diagonal().array().log().sum();
    p.log_norm_ = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
    return p;
  }

  static Prior standard_gaussian(int d) {
    return gaussian(Vector::Zero(d), Matrix::Identity(d, d));
  }

  PriorKind kind() const { return kind_; }
  int dim() const { return static_cast<int>(kind_ == PriorKind::UniformBox ? lower_.size() : mean_.size()); }

  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return cov_; }
  const Matrix& precision() const { return precision_; }

  /// Support membership; the closed box for uniform priors.
  bool contains(const Vector& x) const {
    if (kind_ == PriorKind::Gaussian) return x.allFinite();
    return ((x.array() >= lower_.array()) && (x.array() <= upper_.array())).all();
  }

  /// Normalized log-density; -inf outside the support.
  double log_density(const Vector& x) const {
    if (kind_ == PriorKind::UniformBox) return contains(x) ? log_norm_ : -kInf;
    const Vector r = x - mean_;
    return log_norm_ - 0.5 * r.dot(precision_ * r);
  }

  Vector grad_log_density(const Vector& x) const {
    if (kind_ == PriorKind::UniformBox) return Vector::Zero(x.size());
    return -precision_ * (x - mean_);
  }

  Matrix hess_log_density(const Vector& x) const {
    if (kind_ == PriorKind::UniformBox) return Matrix::Zero(x.size(), x.size());
    return -precision_;
  }

  /// Prior mean for Gaussian priors, box center for uniform ones.
  Vector center() const {
    return kind_ == PriorKind::Gaussian ? mean_ : Vector(0.5 * (lower_ + upper_));
  }

  /// Per-coordinate spread (box half-width or marginal standard deviation).
  Vector scale() const {
    if (kind_ == PriorKind::UniformBox) return 0.5 * (upper_ - lower_);
    return cov_.diagonal().array().sqrt();
  }

  Vector project(const Vector& x) const {
    if (kind_ == PriorKind::Gaussian) return x;
    return x.cwiseMax(lower_).cwiseMin(upper_);
  }

  void sample(Rng& rng, Vector& out) const {
    out.resize(dim());
    if (kind_ == PriorKind::UniformBox) {
      for (int j = 0; j < dim(); ++j) out[j] = lower_[j] + (upper_[j] - lower_[j]) * uniform01(rng);
    } else {
      Vector xi(dim());
      fill_standard_normal(rng, xi);
      out = mean_ + chol_ * xi;
    }
  }

  Vector sample(Rng& rng) const {
    Vector out;
    sample(rng, out);
    return out;
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = static_cast<std::uint64_t>(kind_) + 1;
    if (kind_ == PriorKind::UniformBox) return hash_vector(hash_vector(h, lower_), upper_);
    h = hash_vector(h, mean_);
    for (Eigen::Index j = 0; j < cov_.cols(); ++j) h = hash_vector(h, cov_.col(j));
    return h;
  }

 private:
  Prior() = default;
  PriorKind kind_ = PriorKind::UniformBox;
  Vector lower_, upper_;
  Vector mean_;
  Matrix cov_, chol_, precision_;
  double log_norm_ = 0.0;
};

// ---------------------------------------------------------------------------

namespace detail {
inline std::uint64_t next_likelihood_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}
}  // namespace detail

/// Non-negative potential Phi with optional analytic derivatives. Missing
/// derivatives fall back to central finite differences of phi.
struct LogLikelihood {
  int dim = 0;
  ScalarField phi;
  VectorField gradient;  // optional
  MatrixField hessian;   // optional
  std::uint64_t id = detail::next_likelihood_id();

  double value(const Vector& x) const { return phi(x); }

  Vector grad(const Vector& x) const {
    return gradient ? gradient(x) : fd_gradient(phi, x);
  }

  Matrix hess(const Vector& x) const {
    if (hessian) return hessian(x);
    if (gradient) {
      const Matrix j = fd_jacobian(gradient, x);
      return 0.5 * (j + j.transpose());
    }
    return fd_hessian(phi, x);
  }

  bool has_analytic_gradient() const { return static_cast<bool>(gradient); }
  bool has_analytic_hessian() const { return static_cast<bool>(hessian); }

  /// Phi + c; a fresh identity since it is a different potential.
  LogLikelihood shifted(double c) const {
    LogLikelihood out;
    out.dim = dim;
    auto base = phi;
    out.phi = [base, c](const Vector& x) { return base(x) + c; };
    out.gradient = gradient;
    out.hessian = hessian;
    return out;
  }
};

/// Forward map F: R^d -> R^k with optional Jacobian and component Hessians.
struct ForwardMap {
  int input_dim = 0;
  int output_dim = 0;
  VectorField eval;
  MatrixField jacobian;  // optional, k x d
  std::function<std::vector<Matrix>(const Vector&)> component_hessians;  // optional, k of d x d
};

/// Phi(x) = 1/2 (y - F(x))^T Gamma^{-1} (y - F(x)).
inline LogLikelihood gaussian_misfit(const ForwardMap& forward, const Vector& data,
                                     const Matrix& noise_cov) {
  const int k = forward.output_dim;
  if (data.size() != k)
    throw ConfigError("gaussian misfit: data length " + std::to_string(data.size()) +
                      " does not match forward output dimension " + std::to_string(k));
  if (noise_cov.rows() != k || noise_cov.cols() != k)
    throw ConfigError("gaussian misfit: noise covariance must be " + std::to_string(k) + " x " +
                      std::to_string(k));
  Eigen::LLT<Matrix> llt(noise_cov);
  if (llt.info() != Eigen::Success || (noise_cov - noise_cov.transpose()).norm() > 1e-12 * noise_cov.norm())
    throw FactorizationError("gaussian misfit: noise covariance is not symmetric positive definite");
  Matrix noise_prec = llt.solve(Matrix::Identity(k, k));
  noise_prec = 0.5 * (noise_prec + noise_prec.transpose());

  LogLikelihood out;
  out.dim = forward.input_dim;
  auto fwd = forward.eval;
  out.phi = [fwd, data, noise_prec](const Vector& x) {
    const Vector r = data - fwd(x);
    return 0.5 * r.dot(noise_prec * r);
  };
  if (forward.jacobian) {
    auto jac = forward.jacobian;
    out.gradient = [fwd, jac, data, noise_prec](const Vector& x) {
      const Vector r = data - fwd(x);
      return Vector(-jac(x).transpose() * (noise_prec * r));
    };
    if (forward.component_hessians) {
      auto comp = forward.component_hessians;
      out.hessian = [fwd, jac, comp, data, noise_prec](const Vector& x) {
        const Vector wr = noise_prec * (data - fwd(x));
        const Matrix j = jac(x);
        Matrix h = j.transpose() * noise_prec * j;
        const auto second = comp(x);
        for (std::size_t i = 0; i < second.size(); ++i) h -= wr[static_cast<Eigen::Index>(i)] * second[i];
        return Matrix(0.5 * (h + h.transpose()));
      };
    }
  } else {
    // differencing the forward map keeps the gradient accurate near the minimum,
    // where differences of phi itself lose most of their digits
    out.gradient = [fwd, data, noise_prec](const Vector& x) {
      const Vector r = data - fwd(x);
      return Vector(-fd_jacobian(fwd, x).transpose() * (noise_prec * r));
    };
  }
  return out;
}

// ---------------------------------------------------------------------------

/// The pair (Phi, mu_0) at concentration level n. Becomes usable for density
/// queries once calibrated with its MAP point (see find_map).
class ScaledPosterior {
 public:
  ScaledPosterior(Prior prior, LogLikelihood likelihood, double n)
      : prior_(std::move(prior)), likelihood_(std::move(likelihood)), n_(n) {
    if (!(n_ > 0.0) || !std::isfinite(n_)) throw ConfigError("posterior: n must be positive and finite");
    if (likelihood_.dim != prior_.dim())
      throw ConfigError("posterior: likelihood dimension " + std::to_string(likelihood_.dim) +
                        " differs from prior dimension " + std::to_string(prior_.dim()));
    if (!likelihood_.phi) throw ConfigError("posterior: likelihood has no potential");
  }

  const Prior& prior() const { return prior_; }
  const LogLikelihood& likelihood() const { return likelihood_; }
  double n() const { return n_; }
  int dim() const { return prior_.dim(); }

  /// Phi(x) - (1/n) log pi_0(x) without the iota_n offset; +inf off support.
  double raw_objective(const Vector& x) const {
    const double lp = prior_.log_density(x);
    if (!std::isfinite(lp)) return kInf;
    return likelihood_.value(x) - lp / n_;
  }

  Vector grad_neg_log_post(const Vector& x) const {
    return likelihood_.grad(x) - prior_.grad_log_density(x) / n_;
  }

  Matrix hess_neg_log_post(const Vector& x) const {
    return likelihood_.hess(x) - prior_.hess_log_density(x) / n_;
  }

  bool has_analytic_hessian() const { return likelihood_.has_analytic_hessian(); }

  bool calibrated() const { return iota_.has_value(); }

  /// Fixes iota_n = min(Phi - (1/n) log pi_0) from the MAP solve. Any
  /// previously issued calibration token becomes stale.
  void calibrate(const Vector& map_point, double objective_at_map) {
    if (map_point.size() != dim()) throw ConfigError("calibrate: MAP point has wrong dimension");
    if (!std::isfinite(objective_at_map)) throw NumericalError("calibrate: non-finite objective at MAP");
    iota_ = objective_at_map;
    map_ = map_point;
    std::uint64_t t = hash_combine(prior_.fingerprint(), likelihood_.id);
    t = hash_combine(t, hash_double(n_));
    token_ = hash_vector(t, map_point);
  }

  double iota() const {
    require_calibrated();
    return *iota_;
  }
  const Vector& map_point() const {
    require_calibrated();
    return map_;
  }
  std::uint64_t token() const {
    require_calibrated();
    return token_;
  }

  /// I_n(x); +inf outside the prior support.
  double neg_log_post(const Vector& x) const {
    require_calibrated();
    const double v = raw_objective(x);
    return std::isfinite(v) ? v - *iota_ : kInf;
  }

  /// log pi_n(x) = -n I_n(x); -inf outside the support.
  double log_unnormalized_density(const Vector& x) const { return -n_ * neg_log_post(x); }

  double unnormalized_density(const Vector& x) const {
    const double v = neg_log_post(x);
    return std::isfinite(v) ? std::exp(-n_ * v) : 0.0;
  }

 private:
  void require_calibrated() const {
    if (!iota_) throw StateError("posterior is not calibrated: run the MAP solve (find_map) first");
  }

  Prior prior_;
  LogLikelihood likelihood_;
  double n_;
  std::optional<double> iota_;
  Vector map_;
  std::uint64_t token_ = 0;
};

}  // namespace lapqmc
