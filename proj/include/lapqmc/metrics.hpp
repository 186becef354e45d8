#pragma once

// Distances between probability measures (grid quadrature and closed-form
// Gaussian) and log-log convergence-rate fitting.

#include "lapqmc/common.hpp"

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace lapqmc {

class DegenerateInput : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InsufficientData : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct GridAxis {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t points = 3;
};

/// Tensor grid for trapezoidal integration.
struct GridSpec {
  std::vector<GridAxis> axes;
  std::size_t budget = 20'000'000;

  GridSpec() = default;
  explicit GridSpec(std::vector<GridAxis> a, std::size_t max_points = 20'000'000)
      : axes(std::move(a)), budget(max_points) {
    validate();
  }

  int dim() const { return static_cast<int>(axes.size()); }

  std::size_t total_points() const {
    std::size_t t = 1;
    for (const auto& a : axes) t *= a.points;
    return t;
  }

  void validate() const {
    if (axes.empty()) throw ConfigError("grid: at least one axis required");
    for (const auto& a : axes) {
      if (!(a.lo < a.hi)) throw ConfigError("grid: axis requires lo < hi");
      if (a.points < 3) throw ConfigError("grid: axis requires at least 3 points");
    }
    if (total_points() > budget)
      throw ConfigError("grid: " + std::to_string(total_points()) + " points exceed the budget of " +
                        std::to_string(budget));
  }

  /// Same center, half-widths scaled by `factor`, spacing preserved.
  GridSpec enlarged(double factor) const {
    std::vector<GridAxis> out;
    for (const auto& a : axes) {
      const double c = 0.5 * (a.lo + a.hi);
      const double h = (a.hi - a.lo) / static_cast<double>(a.points - 1);
      const double half = 0.5 * (a.hi - a.lo) * factor;
      const auto pts = static_cast<std::size_t>(std::ceil(2.0 * half / h)) + 1;
      out.push_back({c - half, c + half, pts});
    }
    return GridSpec(std::move(out), std::max(budget, total_points() * 64));
  }

  /// Spacing halved on every axis.
  GridSpec refined() const {
    std::vector<GridAxis> out;
    for (const auto& a : axes) out.push_back({a.lo, a.hi, 2 * a.points - 1});
    return GridSpec(std::move(out), std::max(budget, total_points() * (1u << axes.size())));
  }
};

namespace detail {

// Visits every grid point line by line along the last axis. For each line the
// callback receives the point buffer (last coordinate updated per node) and
// the product of trapezoid weights of the other axes.
template <class LineFn>
void for_each_grid_line(const GridSpec& grid, LineFn&& on_line) {
  grid.validate();
  const int d = grid.dim();
  std::vector<double> step(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    const auto& a = grid.axes[static_cast<std::size_t>(j)];
    step[static_cast<std::size_t>(j)] = (a.hi - a.lo) / static_cast<double>(a.points - 1);
  }
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  Vector x(d);
  const auto outer = grid.total_points() / grid.axes.back().points;
  for (std::size_t line = 0; line < outer; ++line) {
    double w = 1.0;
    for (int j = 0; j + 1 < d; ++j) {
      const auto& a = grid.axes[static_cast<std::size_t>(j)];
      const auto i = idx[static_cast<std::size_t>(j)];
      x[j] = a.lo + static_cast<double>(i) * step[static_cast<std::size_t>(j)];
      const double wj = (i == 0 || i + 1 == a.points) ? 0.5 : 1.0;
      w *= wj * step[static_cast<std::size_t>(j)];
    }
    on_line(x, w, step.back());
    for (int j = d - 2; j >= 0; --j) {
      if (++idx[static_cast<std::size_t>(j)] < grid.axes[static_cast<std::size_t>(j)].points) break;
      idx[static_cast<std::size_t>(j)] = 0;
    }
  }
}

// Trapezoidal integral over the grid of g(x), where g sees the point buffer.
template <class G>
double grid_integral(const GridSpec& grid, G&& g) {
  const auto& last = grid.axes.back();
  std::vector<double> line_sums;
  line_sums.reserve(grid.total_points() / last.points);
  std::vector<double> vals(last.points);
  for_each_grid_line(grid, [&](Vector& x, double w, double h) {
    const auto d = x.size();
    for (std::size_t i = 0; i < last.points; ++i) {
      x[d - 1] = last.lo + static_cast<double>(i) * h;
      const double wi = (i == 0 || i + 1 == last.points) ? 0.5 : 1.0;
      vals[i] = wi * g(x);
    }
    line_sums.push_back(w * h * pairwise_sum(vals));
  });
  return pairwise_sum(line_sums);
}

template <class P, class Q>
std::pair<double, double> grid_masses(const P& p, const Q& q, const GridSpec& grid) {
  const double zp = grid_integral(grid, [&](const Vector& x) { return p(x); });
  const double zq = grid_integral(grid, [&](const Vector& x) { return q(x); });
  if (!(zp > 0) || !(zq > 0) || !std::isfinite(zp) || !std::isfinite(zq))
    throw DegenerateInput("distance: a density has zero or non-finite mass on the grid");
  return {zp, zq};
}

}  // namespace detail

/// Trapezoidal integral of a scalar function over the grid.
template <class F>
double trapezoid(const F& f, const GridSpec& grid) {
  return detail::grid_integral(grid, [&](const Vector& x) { return f(x); });
}

/// Hellinger distance with d_H^2 = ∫ (sqrt(p) - sqrt(q))^2 (range [0, sqrt 2])
/// between the normalized versions of two unnormalized densities.
template <class P, class Q>
double hellinger_numeric(const P& p_unnorm, const Q& q_unnorm, const GridSpec& grid) {
  const auto [zp, zq] = detail::grid_masses(p_unnorm, q_unnorm, grid);
  const double d2 = detail::grid_integral(grid, [&](const Vector& x) {
    const double a = std::sqrt(p_unnorm(x) / zp);
    const double b = std::sqrt(q_unnorm(x) / zq);
    return (a - b) * (a - b);
  });
  return std::sqrt(std::max(0.0, d2));
}

/// Total variation distance 1/2 ∫ |p - q| of the normalized densities.
template <class P, class Q>
double tv_numeric(const P& p_unnorm, const Q& q_unnorm, const GridSpec& grid) {
  const auto [zp, zq] = detail::grid_masses(p_unnorm, q_unnorm, grid);
  const double l1 = detail::grid_integral(grid, [&](const Vector& x) {
    return std::abs(p_unnorm(x) / zp - q_unnorm(x) / zq);
  });
  return 0.5 * l1;
}

/// Relative mass missed by `grid` compared with a grid enlarged by `factor`.
template <class P>
double grid_mass_deficit(const P& p_unnorm, const GridSpec& grid, double factor = 1.5) {
  const double inner = trapezoid(p_unnorm, grid);
  const double outer = trapezoid(p_unnorm, grid.enlarged(factor));
  if (!(outer > 0)) throw DegenerateInput("grid coverage: zero mass");
  return std::abs(outer - inner) / outer;
}

/// Closed-form Hellinger distance (same normalization, max sqrt 2) between
/// N(mean_a, cov_a) and N(mean_b, cov_b).
inline double gaussian_hellinger(const Vector& mean_a, const Matrix& cov_a, const Vector& mean_b,
                                 const Matrix& cov_b) {
  const Eigen::Index d = mean_a.size();
  if (mean_b.size() != d || cov_a.rows() != d || cov_b.rows() != d || cov_a.cols() != d || cov_b.cols() != d)
    throw ConfigError("gaussian_hellinger: dimension mismatch");
  auto log_det = [](const Matrix& m, const char* what) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) throw FactorizationError(std::string("gaussian_hellinger: ") + what + " is not SPD");
    return std::pair{2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum(), llt};
  };
  const Matrix avg = 0.5 * (cov_a + cov_b);
  const auto [lda, lla] = log_det(cov_a, "first covariance");
  const auto [ldb, llb] = log_det(cov_b, "second covariance");
  const auto [ldm, llm] = log_det(avg, "mean covariance");
  const Vector delta = mean_a - mean_b;
  const double maha = delta.dot(llm.solve(delta));
  const double log_bc = 0.25 * lda + 0.25 * ldb - 0.5 * ldm - 0.125 * maha;
  const double d2 = 2.0 - 2.0 * std::exp(log_bc);
  return std::sqrt(std::max(0.0, d2));
}

// ---------------------------------------------------------------------------

/// (n, error) series with a least-squares fit of log(error) on log(n).
struct RateReport {
  std::vector<double> xs;
  std::vector<double> ys;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t dropped = 0;  // non-positive errors excluded from the fit
  bool fitted = false;      // false when too few points were available
};

/// Ordinary least squares on (log x, log y). Pairs with y <= 0 are dropped.
inline RateReport fit_rate(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ConfigError("fit_rate: xs and ys differ in length");
  RateReport rep;
  rep.xs.assign(xs.begin(), xs.end());
  rep.ys.assign(ys.begin(), ys.end());
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] > 0 && ys[i] > 0 && std::isfinite(ys[i])) {
      lx.push_back(std::log(xs[i]));
      ly.push_back(std::log(ys[i]));
    } else {
      ++rep.dropped;
    }
  }
  if (lx.size() < 3)
    throw InsufficientData("fit_rate: need at least 3 positive pairs, got " + std::to_string(lx.size()));
  const double m = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= m;
  my /= m;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0)) throw InsufficientData("fit_rate: abscissae are all equal");
  rep.slope = sxy / sxx;
  rep.intercept = my - rep.slope * mx;
  rep.r_squared = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  rep.fitted = true;
  return rep;
}

inline RateReport fit_rate(const std::vector<double>& xs, const std::vector<double>& ys) {
  return fit_rate(std::span<const double>(xs), std::span<const double>(ys));
}

/// Fit over the series with the first `skip` points excluded; the report
/// still lists the full series.
inline RateReport fit_rate_tail(const std::vector<double>& xs, const std::vector<double>& ys, std::size_t skip) {
  if (skip >= xs.size()) throw InsufficientData("fit_rate_tail: prefix covers the whole series");
  RateReport rep = fit_rate(std::span<const double>(xs).subspan(skip), std::span<const double>(ys).subspan(skip));
  rep.xs = xs;
  rep.ys = ys;
  return rep;
}

/// CSV: header "n,error", one row per point, then "slope,intercept,r2" and
/// the fitted values.
inline void write_csv(std::ostream& os, const RateReport& rep) {
  os << std::setprecision(17);
  os << "n,error\n";
  for (std::size_t i = 0; i < rep.xs.size(); ++i) os << rep.xs[i] << ',' << rep.ys[i] << '\n';
  os << "slope,intercept,r2\n";
  os << rep.slope << ',' << rep.intercept << ',' << rep.r_squared << '\n';
}

inline RateReport read_csv(std::istream& is) {
  RateReport rep;
  std::string line;
  if (!std::getline(is, line) || line != "n,error") throw FormatError("rate csv: missing 'n,error' header");
  auto split2 = [](const std::string& s, std::size_t lineno) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("rate csv: bad number '" + tok + "' on line " + std::to_string(lineno));
      }
    }
    return v;
  };
  std::size_t lineno = 1;
  bool footer = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == "slope,intercept,r2") {
      footer = true;
      break;
    }
    const auto v = split2(line, lineno);
    if (v.size() != 2) throw FormatError("rate csv: expected 2 columns on line " + std::to_string(lineno));
    rep.xs.push_back(v[0]);
    rep.ys.push_back(v[1]);
  }
  if (!footer || !std::getline(is, line)) throw FormatError("rate csv: missing footer");
  const auto v = split2(line, lineno + 1);
  if (v.size() != 3) throw FormatError("rate csv: footer needs 3 values");
  rep.slope = v[0];
  rep.intercept = v[1];
  rep.r_squared = v[2];
  for (double y : rep.ys)
    if (!(y > 0)) ++rep.dropped;
  return rep;
}

}  // namespace lapqmc
