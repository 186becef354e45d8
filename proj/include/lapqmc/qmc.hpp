#pragma once

// Randomly shifted rank-1 lattice rules and the plain, Laplace-preconditioned
// and Gaussian (inverse-CDF) estimators of Z_n = ∫ exp(-n Phi) dmu_0 and
// Z'_n = ∫ f exp(-n Phi) dmu_0.

#include "lapqmc/laplace.hpp"
#include "lapqmc/metrics.hpp"
#include "lapqmc/model.hpp"

#include <fstream>
#include <optional>
#include <sstream>

namespace lapqmc {

// ---------------------------------------------------------------------------
// Normal distribution helpers

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace detail {

// Lower-tail quantile for p in (0, 0.5]: rational approximation (relative
// error about 1e-9) followed by one Halley step against erfc.
inline double normal_quantile_lower(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace detail

/// Standard normal quantile. Returns -inf / +inf for p <= 0 / p >= 1.
inline double inverse_normal_cdf(double p) {
  if (std::isnan(p)) return p;
  if (p <= 0.0) return -kInf;
  if (p >= 1.0) return kInf;
  if (p <= 0.5) return detail::normal_quantile_lower(p);
  return -detail::normal_quantile_lower(1.0 - p);
}

// ---------------------------------------------------------------------------
// Lattice rules

/// Rank-1 lattice with generating vector z valid for every N = 2^k <= 2^m
/// (embedded rule; z is reduced modulo N).
struct LatticeRule {
  std::vector<std::uint64_t> z;
  int m = 0;
  int d = 0;

  std::size_t max_points() const { return std::size_t{1} << m; }

  LatticeRule truncated(int dims) const {
    if (dims < 1 || static_cast<std::size_t>(dims) > z.size())
      throw ConfigError("lattice: generating vector has " + std::to_string(z.size()) + " entries, " +
                        std::to_string(dims) + " requested");
    LatticeRule r = *this;
    r.d = dims;
    return r;
  }
};

/// Parses a generating vector: either one integer per line, or two columns
/// "index z_j" (detected from the first non-empty line). Entries must satisfy
/// 1 <= z_j < 2^m; the first d entries are used.
inline LatticeRule parse_generating_vector(std::istream& in, int m, int d) {
  if (m < 1 || m > 40) throw ConfigError("lattice: m must be in [1, 40]");
  if (d < 1) throw ConfigError("lattice: d must be positive");
  const std::uint64_t limit = std::uint64_t{1} << m;
  LatticeRule rule;
  rule.m = m;
  int columns = 0;
  std::string line;
  std::size_t lineno = 0;
  auto parse_int = [&](const std::string& tok) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
      throw FormatError("generating vector: non-integer token '" + tok + "' on line " + std::to_string(lineno));
    try {
      return std::stoull(tok);
    } catch (const std::exception&) {
      throw FormatError("generating vector: integer out of range on line " + std::to_string(lineno));
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::vector<std::string> toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    if (toks.empty()) continue;
    if (columns == 0) {
      columns = static_cast<int>(toks.size());
      if (columns != 1 && columns != 2)
        throw FormatError("generating vector: expected 1 or 2 columns on line " + std::to_string(lineno));
    }
    if (static_cast<int>(toks.size()) != columns)
      throw FormatError("generating vector: inconsistent column count on line " + std::to_string(lineno));
    const std::uint64_t zj = parse_int(toks.back());
    if (columns == 2) (void)parse_int(toks.front());
    if (zj < 1 || zj >= limit)
      throw FormatError("generating vector: entry " + std::to_string(zj) + " on line " + std::to_string(lineno) +
                        " outside [1, 2^" + std::to_string(m) + ")");
    rule.z.push_back(zj);
  }
  if (static_cast<int>(rule.z.size()) < d)
    throw FormatError("generating vector: " + std::to_string(rule.z.size()) + " entries, need " + std::to_string(d) +
                      " (line " + std::to_string(lineno) + ")");
  rule.d = d;
  return rule;
}

inline LatticeRule load_generating_vector(const std::string& path, int m, int d) {
  std::ifstream in(path);
  if (!in) throw ConfigError("generating vector: cannot open '" + path + "'");
  return parse_generating_vector(in, m, d);
}

/// Points x_i = frac(i z / N + shift) - 1/2, i = 1..N, as columns of a d x N
/// matrix. N must be a power of two not exceeding 2^m.
inline Matrix lattice_points(const LatticeRule& rule, const Vector& shift, std::size_t count) {
  if (count == 0 || (count & (count - 1)) != 0 || count > rule.max_points())
    throw ConfigError("lattice: point count must be a power of two <= 2^" + std::to_string(rule.m));
  if (shift.size() != rule.d) throw ConfigError("lattice: shift dimension mismatch");
  const auto n = static_cast<std::uint64_t>(count);
  const double inv_n = 1.0 / static_cast<double>(count);
  Matrix pts(rule.d, static_cast<Eigen::Index>(count));
  for (int j = 0; j < rule.d; ++j) {
    const std::uint64_t zj = rule.z[static_cast<std::size_t>(j)] % n;
    const double s = shift[j] - std::floor(shift[j]);
    for (std::uint64_t i = 1; i <= n; ++i) {
      const double t = static_cast<double>((i * zj) % n) * inv_n + s;
      pts(j, static_cast<Eigen::Index>(i - 1)) = (t >= 1.0 ? t - 1.0 : t) - 0.5;
    }
  }
  return pts;
}

inline Vector random_shift(int d, Rng& rng) {
  Vector s(d);
  for (int j = 0; j < d; ++j) s[j] = uniform01(rng);
  return s;
}

// ---------------------------------------------------------------------------
// Estimators

/// Sums returned by the QMC estimators. `z` estimates the normalizer, `z_prime`
/// the f-weighted integral (equal to `z` without a quantity of interest).
struct QmcEstimate {
  double z = 0.0;
  double z_prime = 0.0;
  std::size_t discarded = 0;  // points mapped outside the support or skipped
  std::size_t count = 0;

  double ratio() const { return z_prime / z; }
};

namespace detail {
inline QmcEstimate accumulate(std::vector<double>& theta, std::vector<double>& ftheta, std::size_t discarded,
                              double factor) {
  QmcEstimate e;
  const double inv = 1.0 / static_cast<double>(theta.size());
  e.z = factor * pairwise_sum(theta) * inv;
  e.z_prime = factor * pairwise_sum(ftheta) * inv;
  e.discarded = discarded;
  e.count = theta.size();
  return e;
}
}  // namespace detail

/// Plain lattice estimator over a uniform prior: the unit cube is mapped
/// affinely onto the prior box, so the result estimates ∫ Theta_n dmu_0 with
/// Theta_n = exp(-n Phi).
inline QmcEstimate qmc_prior_estimate(const ScaledPosterior& post, const ScalarField& f, const LatticeRule& rule,
                                      const Vector& shift, std::size_t count) {
  const Prior& prior = post.prior();
  if (prior.kind() != PriorKind::UniformBox)
    throw ConfigError("qmc_prior_estimate: requires a uniform prior; use the Gaussian inverse-CDF estimator");
  if (rule.d != post.dim()) throw ConfigError("qmc_prior_estimate: lattice dimension mismatch");
  const Matrix pts = lattice_points(rule, shift, count);
  const Vector center = prior.center();
  const Vector width = prior.upper() - prior.lower();
  std::vector<double> theta(count), ftheta(count);
  Vector x(post.dim());
  for (std::size_t i = 0; i < count; ++i) {
    x = center + pts.col(static_cast<Eigen::Index>(i)).cwiseProduct(width);
    const double t = std::exp(-post.n() * post.likelihood().value(x));
    theta[i] = t;
    ftheta[i] = f ? f(x) * t : t;
  }
  return detail::accumulate(theta, ftheta, 0, 1.0);
}

/// Affine map g_n(u) = x_* + sqrt(2 |ln tau| / n) Q D^{-1/2} u built from the
/// eigendecomposition H_* = Q D Q^T of the Laplace precision.
struct PreconditionedMap {
  Vector x_star;
  Matrix scale;
  double tau = 1e-6;
  double log_trans_const = 0.0;  // log |det scale|
  Vector eigenvalues;

  static PreconditionedMap from_laplace(const LaplaceApprox& approx, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("preconditioned map: tau must lie in (0, 1)");
    Eigen::SelfAdjointEigenSolver<Matrix> es(approx.precision());
    const Vector lambda = es.eigenvalues();
    if (!(lambda.array() > 0).all()) throw SingularHessian("preconditioned map: Hessian not SPD", lambda.minCoeff());
    const double zoom = std::sqrt(2.0 * std::abs(std::log(tau)) / approx.n());
    PreconditionedMap g;
    g.x_star = approx.mean();
    g.tau = tau;
    g.eigenvalues = lambda;
    g.scale = zoom * es.eigenvectors() * lambda.array().rsqrt().matrix().asDiagonal();
    const double dd = static_cast<double>(approx.dim());
    g.log_trans_const = 0.5 * dd * std::log(2.0 * std::abs(std::log(tau)) / approx.n()) - 0.5 * lambda.array().log().sum();
    return g;
  }

  double trans_const() const { return std::exp(log_trans_const); }
  Vector apply(const Vector& u) const { return x_star + scale * u; }
};

/// Laplace mass of the truncated domain g_n([-1/2, 1/2]^d): erf(sqrt(|ln tau|)/2)^d.
inline double truncation_mass(double tau, int d) {
  return std::pow(std::erf(0.5 * std::sqrt(std::abs(std::log(tau)))), d);
}

/// Preconditioned estimator C_trans * mean(Theta_n(g_n(x_i)) pi_0(g_n(x_i)));
/// transformed points outside the prior support contribute 0.
inline QmcEstimate qmc_laplace_estimate(const ScaledPosterior& post, const LaplaceApprox& approx,
                                        const ScalarField& f, const LatticeRule& rule, const Vector& shift,
                                        std::size_t count, double tau) {
  if (!post.calibrated() || post.token() != approx.token())
    throw UsageError("qmc_laplace_estimate: Laplace approximation was not built from this posterior");
  if (rule.d != post.dim()) throw ConfigError("qmc_laplace_estimate: lattice dimension mismatch");
  const PreconditionedMap g = PreconditionedMap::from_laplace(approx, tau);
  const Matrix pts = lattice_points(rule, shift, count);
  std::vector<double> theta(count), ftheta(count);
  std::size_t discarded = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const Vector x = g.apply(pts.col(static_cast<Eigen::Index>(i)));
    const double lp = post.prior().log_density(x);
    if (!std::isfinite(lp)) {
      theta[i] = ftheta[i] = 0.0;
      ++discarded;
      continue;
    }
    const double t = std::exp(-post.n() * post.likelihood().value(x) + lp);
    theta[i] = t;
    ftheta[i] = f ? f(x) * t : t;
  }
  return detail::accumulate(theta, ftheta, discarded, g.trans_const());
}

/// Laplace-whitened inverse-CDF estimator: lattice points are pushed through
/// the normal quantile and x_n + n^{-1/2} L^{-T} xi. Returns z = mean(w~_n) and
/// z_prime = mean(f w~_n), so z_prime / z estimates E_{mu_n}[f]. Points with
/// a non-finite quantile are skipped; more than 1% skipped is an error.
inline QmcEstimate qmc_gaussian_prior_estimate(const ScaledPosterior& post, const LaplaceApprox& approx,
                                               const ScalarField& f, const LatticeRule& rule,
                                               const Vector& shift, std::size_t count) {
  if (post.prior().kind() != PriorKind::Gaussian)
    throw ConfigError("qmc_gaussian_prior_estimate: requires a Gaussian prior");
  if (!post.calibrated() || post.token() != approx.token())
    throw UsageError("qmc_gaussian_prior_estimate: Laplace approximation was not built from this posterior");
  if (rule.d != post.dim()) throw ConfigError("qmc_gaussian_prior_estimate: lattice dimension mismatch");
  const Matrix pts = lattice_points(rule, shift, count);
  std::vector<double> w, fw;
  w.reserve(count);
  fw.reserve(count);
  std::size_t skipped = 0;
  Vector xi(post.dim());
  for (std::size_t i = 0; i < count; ++i) {
    bool ok = true;
    for (int j = 0; j < post.dim(); ++j) {
      xi[j] = inverse_normal_cdf(pts(j, static_cast<Eigen::Index>(i)) + 0.5);
      ok = ok && std::isfinite(xi[j]);
    }
    if (!ok) {
      ++skipped;
      continue;
    }
    const Vector x = approx.transform(xi);
    const double wt = std::exp(log_ratio_unnormalized(post, approx, x));
    w.push_back(wt);
    fw.push_back(f ? f(x) * wt : wt);
  }
  if (static_cast<double>(skipped) > 0.01 * static_cast<double>(count))
    throw NumericalError("qmc_gaussian_prior_estimate: " + std::to_string(skipped) + " of " +
                         std::to_string(count) + " points had a non-finite normal quantile");
  if (w.empty()) throw NumericalError("qmc_gaussian_prior_estimate: no usable points");
  return detail::accumulate(w, fw, skipped, 1.0);
}

struct ShiftStatistics {
  double mean = 0.0;
  double rmse = 0.0;
};

/// Evaluates `estimator` for `shifts` i.i.d. uniform shifts (shift s drawn
/// from stream (seed, s)) and reports the mean and the root-mean-square
/// deviation from `reference`, or from the mean when no reference is given.
inline ShiftStatistics qmc_shift_rmse(const std::function<double(const Vector&)>& estimator, int d,
                                      std::size_t shifts, std::uint64_t seed,
                                      std::optional<double> reference = std::nullopt,
                                      unsigned threads = 1) {
  if (shifts < 2) throw ConfigError("qmc_shift_rmse: need at least 2 shifts");
  std::vector<double> vals(shifts);
  parallel_for(shifts, threads, [&](std::size_t s) {
    Rng rng = make_stream(seed, 0x51f7, s);
    vals[s] = estimator(random_shift(d, rng));
  });
  ShiftStatistics st;
  st.mean = pairwise_sum(vals) / static_cast<double>(shifts);
  const double ref = reference.value_or(st.mean);
  std::vector<double> sq(shifts);
  for (std::size_t s = 0; s < shifts; ++s) sq[s] = (vals[s] - ref) * (vals[s] - ref);
  st.rmse = std::sqrt(pairwise_sum(sq) / static_cast<double>(shifts));
  return st;
}

}  // namespace lapqmc
