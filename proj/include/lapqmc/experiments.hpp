#pragma once

// Experiment drivers behind the command line tool: configuration, model
// catalogue, reference integrals and the individual sweeps.

#include "lapqmc/forward.hpp"
#include "lapqmc/importance.hpp"
#include "lapqmc/laplace.hpp"
#include "lapqmc/metrics.hpp"
#include "lapqmc/model.hpp"
#include "lapqmc/optimize.hpp"
#include "lapqmc/qmc.hpp"
#include "lapqmc/quadrature.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>

namespace lapqmc {

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  std::string experiment = "hellinger";  // hellinger | is-sweep | qmc-sweep | bvm-demo | singular-demo
  std::string model = "cubic";  // conjugate (conjugate1d) | cubic | algebraic | elliptic | example2d1 | example2d2
  int d = 1;
  std::optional<PriorKind> prior;  // model default when unset
  std::vector<double> n_grid;      // experiment default when empty
  std::optional<std::size_t> samples;  // IS draws or QMC points
  std::optional<std::size_t> replicates;  // IS replicates or demo seeds
  std::size_t shifts = 64;
  double tau = 1e-6;
  std::uint64_t seed = 0;
  std::string generating_vector;
  int lattice_m = 20;
  std::string method = "both";  // prior | laplace | both
  std::optional<std::size_t> skip;
  int mesh_cells = 1024;
  int map_starts = 1;
  unsigned threads = default_threads();
  std::string output = "out";
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Comma- or whitespace-separated positive, strictly increasing reals.
inline std::vector<double> parse_n_grid(const std::string& text) {
  std::vector<double> out;
  std::string norm = text;
  std::replace(norm.begin(), norm.end(), ',', ' ');
  std::istringstream in(norm);
  for (std::string tok; in >> tok;) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || !std::isfinite(v)) throw ConfigError("n_grid: '" + tok + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("n_grid: empty list");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0)) throw ConfigError("n_grid: values must be positive");
    if (i > 0 && !(out[i] > out[i - 1])) throw ConfigError("n_grid: values must be strictly increasing");
  }
  return out;
}

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T v{};
  if constexpr (std::is_unsigned_v<T>) {
    if (!value.empty() && value[0] == '-') throw ConfigError("config: '" + key + "' must be non-negative");
  }
  in >> v;
  if (in.fail() || !in.eof()) {
    // Allow integral values written in scientific notation (e.g. N = 1e5).
    if constexpr (std::is_integral_v<T>) {
      std::istringstream in2(value);
      double dv = 0;
      in2 >> dv;
      if (!in2.fail() && in2.eof() && dv >= 0 && dv == std::floor(dv) && dv < 9e18) return static_cast<T>(dv);
    }
    throw ConfigError("config: invalid value '" + value + "' for '" + key + "'");
  }
  return v;
}

inline PriorKind parse_prior(const std::string& v) {
  if (v == "uniform") return PriorKind::UniformBox;
  if (v == "gaussian") return PriorKind::Gaussian;
  throw ConfigError("config: prior must be 'uniform' or 'gaussian', got '" + v + "'");
}

}  // namespace detail

/// Applies one "section.key = value" assignment.
inline void apply_config_key(ExperimentConfig& cfg, const std::string& qualified, const std::string& value) {
  using detail::parse_number;
  const auto& k = qualified;
  if (k == "experiment.name") cfg.experiment = value;
  else if (k == "experiment.seed") cfg.seed = parse_number<std::uint64_t>(k, value);
  else if (k == "experiment.threads") cfg.threads = std::max(1u, parse_number<unsigned>(k, value));
  else if (k == "experiment.n_grid") cfg.n_grid = parse_n_grid(value);
  else if (k == "experiment.skip") cfg.skip = parse_number<std::size_t>(k, value);
  else if (k == "model.name") cfg.model = value;
  else if (k == "model.d") cfg.d = parse_number<int>(k, value);
  else if (k == "model.prior") cfg.prior = detail::parse_prior(value);
  else if (k == "model.mesh_cells") cfg.mesh_cells = parse_number<int>(k, value);
  else if (k == "model.map_starts") cfg.map_starts = parse_number<int>(k, value);
  else if (k == "sampling.N") cfg.samples = parse_number<std::size_t>(k, value);
  else if (k == "sampling.replicates") cfg.replicates = parse_number<std::size_t>(k, value);
  else if (k == "sampling.shifts") cfg.shifts = parse_number<std::size_t>(k, value);
  else if (k == "sampling.tau") cfg.tau = parse_number<double>(k, value);
  else if (k == "sampling.method") cfg.method = value;
  else if (k == "sampling.generating_vector") cfg.generating_vector = value;
  else if (k == "sampling.lattice_m") cfg.lattice_m = parse_number<int>(k, value);
  else if (k == "output.dir") cfg.output = value;
  else throw ConfigError("config: unknown key '" + k + "'");
}

/// Flat key = value text with [section] headers; '#' starts a comment.
/// Every key must sit under a section and be known.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig cfg = {}) {
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string at = " (line " + std::to_string(lineno) + ")";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config: malformed section header" + at);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "experiment" && section != "model" && section != "sampling" && section != "output")
        throw ConfigError("config: unknown section '" + section + "'" + at);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key = value" + at);
    if (section.empty()) throw ConfigError("config: key outside of a section" + at);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_config_key(cfg, section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + at);
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in, std::move(cfg));
}

// ---------------------------------------------------------------------------
// Model catalogue

struct ModelSetup {
  std::string name;
  Prior prior;
  LogLikelihood likelihood;
  ScalarField qoi;
};

namespace detail {

// Phi(x) = 1/2 (x - m)^T H (x - m).
inline LogLikelihood quadratic_potential(const Vector& m, const Matrix& h) {
  LogLikelihood lik;
  lik.dim = static_cast<int>(m.size());
  lik.phi = [m, h](const Vector& x) {
    const Vector r = x - m;
    return 0.5 * r.dot(h * r);
  };
  lik.gradient = [m, h](const Vector& x) { return Vector(h * (x - m)); };
  lik.hessian = [h](const Vector&) { return h; };
  return lik;
}

}  // namespace detail

/// Conjugate family: prior N(0, I), quadratic Phi. d = 1 uses m = 1, H = 1;
/// d = 2 uses m = (0.5, -0.3), H = diag(2, 0.5).
inline ModelSetup conjugate_model(int d) {
  if (d == 1) return {"conjugate", Prior::standard_gaussian(1),
                      detail::quadratic_potential(Vector::Ones(1), Matrix::Identity(1, 1)),
                      [](const Vector& x) { return x[0]; }};
  if (d == 2) {
    Vector m(2);
    m << 0.5, -0.3;
    Matrix h = Matrix::Zero(2, 2);
    h(0, 0) = 2.0;
    h(1, 1) = 0.5;
    return {"conjugate", Prior::standard_gaussian(2), detail::quadratic_potential(m, h),
            [](const Vector& x) { return x.sum(); }};
  }
  throw ConfigError("conjugate model: d must be 1 or 2");
}

/// Phi(x) = u^2/2 + 0.1 u^3 exp(-u^2/25), u = x - 1, with prior N(0, 1).
/// Smooth and non-negative with the unique minimizer x = 1; the third
/// derivative there is 0.6.
inline ModelSetup cubic_model() {
  constexpr double c = 25.0;
  LogLikelihood lik;
  lik.dim = 1;
  lik.phi = [](const Vector& x) {
    const double u = x[0] - 1.0;
    return 0.5 * u * u + 0.1 * u * u * u * std::exp(-u * u / c);
  };
  lik.gradient = [](const Vector& x) {
    const double u = x[0] - 1.0, u2 = u * u;
    Vector g(1);
    g[0] = u + 0.1 * std::exp(-u2 / c) * (3 * u2 - 2 * u2 * u2 / c);
    return g;
  };
  lik.hessian = [](const Vector& x) {
    const double u = x[0] - 1.0, u2 = u * u;
    Matrix h(1, 1);
    h(0, 0) = 1.0 + 0.1 * std::exp(-u2 / c) * (6 * u - 14 * u * u2 / c + 4 * u * u2 * u2 / (c * c));
    return h;
  };
  return {"cubic", Prior::standard_gaussian(1), lik, [](const Vector& x) { return x[0]; }};
}

/// Phi(x) = (x2 - x1^2)^2 with prior N(0, I): minimizers form a parabola.
inline ModelSetup example2d1_model() {
  LogLikelihood lik;
  lik.dim = 2;
  lik.phi = [](const Vector& x) {
    const double r = x[1] - x[0] * x[0];
    return r * r;
  };
  lik.gradient = [](const Vector& x) {
    const double r = x[1] - x[0] * x[0];
    Vector g(2);
    g << -4.0 * x[0] * r, 2.0 * r;
    return g;
  };
  lik.hessian = [](const Vector& x) {
    const double r = x[1] - x[0] * x[0];
    Matrix h(2, 2);
    h << -4.0 * r + 8.0 * x[0] * x[0], -4.0 * x[0], -4.0 * x[0], 2.0;
    return h;
  };
  return {"example2d1", Prior::standard_gaussian(2), lik, [](const Vector& x) { return x.sum(); }};
}

/// Phi(x) = |y - F(x)|^2 with F(x) = (exp(s/5), sin s), s = x2 - x1,
/// y = (pi/2, 0.5) and prior N(0, I): minimizers form a line.
inline ModelSetup example2d2_model() {
  struct Parts {
    double phi, d1, d2;
  };
  auto parts = [](double s) {
    const double e = std::exp(s / 5.0);
    const double r1 = std::numbers::pi / 2 - e, r1p = -e / 5.0, r1pp = -e / 25.0;
    const double r2 = 0.5 - std::sin(s), r2p = -std::cos(s), r2pp = std::sin(s);
    return Parts{r1 * r1 + r2 * r2, 2.0 * (r1 * r1p + r2 * r2p),
                 2.0 * (r1p * r1p + r1 * r1pp + r2p * r2p + r2 * r2pp)};
  };
  LogLikelihood lik;
  lik.dim = 2;
  lik.phi = [parts](const Vector& x) { return parts(x[1] - x[0]).phi; };
  lik.gradient = [parts](const Vector& x) {
    const double g = parts(x[1] - x[0]).d1;
    Vector out(2);
    out << -g, g;
    return out;
  };
  lik.hessian = [parts](const Vector& x) {
    const double h = parts(x[1] - x[0]).d2;
    Matrix out(2, 2);
    out << h, -h, -h, h;
    return out;
  };
  return {"example2d2", Prior::standard_gaussian(2), lik, [](const Vector& x) { return x.sum(); }};
}

inline ModelSetup make_model(const std::string& name, int d, std::optional<PriorKind> prior, int mesh_cells = 1024) {
  auto require_prior = [&](PriorKind allowed) {
    if (prior && *prior != allowed)
      throw ConfigError("model '" + name + "' supports only the " +
                        (allowed == PriorKind::Gaussian ? std::string("gaussian") : std::string("uniform")) +
                        " prior");
  };
  auto require_dim = [&](int dd) {
    if (d != dd) throw ConfigError("model '" + name + "' has dimension " + std::to_string(dd));
  };
  if (name == "conjugate" || name == "conjugate1d") {
    require_prior(PriorKind::Gaussian);
    if (name == "conjugate1d") require_dim(1);
    return conjugate_model(d);
  }
  if (name == "cubic") {
    require_prior(PriorKind::Gaussian);
    require_dim(1);
    return cubic_model();
  }
  if (name == "example2d1") {
    require_prior(PriorKind::Gaussian);
    require_dim(2);
    return example2d1_model();
  }
  if (name == "example2d2") {
    require_prior(PriorKind::Gaussian);
    require_dim(2);
    return example2d2_model();
  }
  if (name == "algebraic") {
    require_prior(PriorKind::UniformBox);
    const AlgebraicModel m(d);
    return {"algebraic", m.prior(), m.likelihood(), &AlgebraicModel::qoi};
  }
  if (name == "elliptic") {
    const EllipticModel m(d, mesh_cells);
    const PriorKind kind = prior.value_or(PriorKind::UniformBox);
    if (kind == PriorKind::UniformBox) return {"elliptic", Prior::unit_cube(d), m.likelihood(0.01),
                                               [m](const Vector& x) { return m.qoi(x); }};
    return {"elliptic", Prior::standard_gaussian(d), m.likelihood(1.0), [m](const Vector& x) { return m.qoi(x); }};
  }
  throw ConfigError("unknown model '" + name + "'");
}

// ---------------------------------------------------------------------------
// Reference integrals

/// Quadrature reference values for a calibrated posterior.
///  - expectation: E_{mu_n}[f].
///  - Uniform prior: z = ∫ exp(-n Phi) dmu_0 and z_prime = ∫ f exp(-n Phi) dmu_0.
///  - Gaussian prior: z = E_L[w~_n] and z_prime = E_L[f w~_n] under the
///    Laplace approximation L (the quantities the inverse-CDF QMC path estimates).
struct ReferenceValues {
  double expectation = 0.0;
  double z = 0.0;
  double z_prime = 0.0;
};

struct ReferenceOptions {
  double width_sd = 12.0;  // half-width of the uniform-prior box in Laplace marginal sds
  std::size_t points_1d = 1'000'001;
  std::size_t points_2d = 2001;
  int gl_panels = 8;
  int gl_order = 8;
  int hermite_nodes = 100;
};

namespace detail {

inline std::vector<std::pair<double, double>> reference_box(const ScaledPosterior& post, const LaplaceApprox& approx,
                                                            double width_sd) {
  const Matrix cov = approx.covariance();
  std::vector<std::pair<double, double>> box;
  for (int j = 0; j < post.dim(); ++j) {
    const double half = width_sd * std::sqrt(cov(j, j));
    double lo = approx.mean()[j] - half, hi = approx.mean()[j] + half;
    lo = std::max(lo, post.prior().lower()[j]);
    hi = std::min(hi, post.prior().upper()[j]);
    if (!(lo < hi)) throw NumericalError("reference: empty integration box");
    box.emplace_back(lo, hi);
  }
  return box;
}

}  // namespace detail

namespace detail {

// ∫ exp(-n Phi) pi_0 dx = exp(-n iota_n) ∫ exp(-n I_n) dx over a sub-box of a uniform prior.
inline ReferenceValues uniform_reference(const ScaledPosterior& post,
                                         const std::vector<std::pair<double, double>>& box, const ScalarField& f,
                                         const ReferenceOptions& opt) {
  const int d = post.dim();
  double mass = 0, first = 0;
  if (d <= 2) {
    std::vector<GridAxis> axes;
    const std::size_t pts = d == 1 ? opt.points_1d : opt.points_2d;
    for (const auto& [lo, hi] : box) axes.push_back({lo, hi, pts});
    const GridSpec grid(axes, std::max<std::size_t>(pts * pts, 20'000'000));
    mass = trapezoid([&](const Vector& x) { return post.unnormalized_density(x); }, grid);
    first = trapezoid([&](const Vector& x) { return f(x) * post.unnormalized_density(x); }, grid);
  } else if (d <= 4) {
    std::vector<Rule1D> rules;
    for (const auto& [lo, hi] : box) rules.push_back(composite_gauss_legendre(lo, hi, opt.gl_panels, opt.gl_order));
    Accumulator m, fm;
    for_each_tensor_node(rules, [&](const Vector& x, double w) {
      const double p = post.unnormalized_density(x);
      m.add(w * p);
      fm.add(w * f(x) * p);
    });
    mass = m.value();
    first = fm.value();
  } else {
    throw ConfigError("reference: quadrature references support d <= 4; supply an external value");
  }
  if (!(mass > 0)) throw NumericalError("reference: zero posterior mass on the integration box");
  const double scale = std::exp(-post.n() * post.iota());
  ReferenceValues out;
  out.expectation = first / mass;
  out.z = scale * mass;
  out.z_prime = scale * first;
  return out;
}

}  // namespace detail

/// Reference integrals over the whole prior box (uniform priors only); usable
/// when no Laplace approximation exists, e.g. for a flat potential.
inline ReferenceValues reference_integrals(const ScaledPosterior& post, const ScalarField& f,
                                           const ReferenceOptions& opt = {}) {
  if (post.prior().kind() != PriorKind::UniformBox)
    throw ConfigError("reference: the whole-box rule needs a uniform prior");
  std::vector<std::pair<double, double>> box;
  for (int j = 0; j < post.dim(); ++j) box.emplace_back(post.prior().lower()[j], post.prior().upper()[j]);
  return detail::uniform_reference(post, box, f, opt);
}

inline ReferenceValues reference_integrals(const ScaledPosterior& post, const LaplaceApprox& approx,
                                           const ScalarField& f, const ReferenceOptions& opt = {}) {
  if (!post.calibrated() || post.token() != approx.token())
    throw UsageError("reference: Laplace approximation was not built from this posterior");
  const int d = post.dim();
  if (post.prior().kind() == PriorKind::UniformBox)
    return detail::uniform_reference(post, detail::reference_box(post, approx, opt.width_sd), f, opt);
  ReferenceValues out;
  if (d > 3) throw ConfigError("reference: Gauss-Hermite references support d <= 3");
  const Rule1D gh = gauss_hermite_normal(opt.hermite_nodes);
  Accumulator m, fm;
  for_each_tensor_node(std::vector<Rule1D>(static_cast<std::size_t>(d), gh), [&](const Vector& xi, double w) {
    const Vector x = approx.transform(xi);
    const double wt = std::exp(log_ratio_unnormalized(post, approx, x));
    if (wt == 0.0) return;
    m.add(w * wt);
    fm.add(w * wt * f(x));
  });
  out.z = m.value();
  out.z_prime = fm.value();
  if (!(out.z > 0) || !std::isfinite(out.z)) throw NumericalError("reference: degenerate Gauss-Hermite mass");
  out.expectation = out.z_prime / out.z;
  return out;
}

inline double reference_expectation(const ScaledPosterior& post, const LaplaceApprox& approx, const ScalarField& f,
                                    const ReferenceOptions& opt = {}) {
  return reference_integrals(post, approx, f, opt).expectation;
}

/// Calibrated posterior with its Laplace approximation.
struct PosteriorBundle {
  std::unique_ptr<ScaledPosterior> post;  // stable address for captured references
  MinResult map;
  std::optional<LaplaceApprox> approx;
};

inline PosteriorBundle prepare_posterior(const ModelSetup& model, double n, int starts = 1, std::uint64_t seed = 0) {
  PosteriorBundle b;
  b.post = std::make_unique<ScaledPosterior>(model.prior, model.likelihood, n);
  b.map = find_map(*b.post, starts, seed);
  b.approx.emplace(build_laplace(*b.post, b.map));
  return b;
}

// ---------------------------------------------------------------------------
// Hellinger sweeps

struct HellingerRow {
  double n = 0.0;
  double hellinger = 0.0;
  double tv = 0.0;
};

struct HellingerResult {
  std::string model;
  std::vector<HellingerRow> rows;
  RateReport report;
  RateReport tail_report;  // last four points
  double coverage_deficit = 0.0;  // worst relative mass outside the grid (first and last n)
};

/// Integration domain for d_H(mu_n, L_n). `rotation`, when present, maps grid
/// coordinates u to x = R u (orthogonal, so no Jacobian factor).
struct HellingerGrid {
  GridSpec grid;
  std::optional<Matrix> rotation;
};

inline HellingerGrid hellinger_grid(const std::string& model, const LaplaceApprox& approx) {
  const double n = approx.n();
  if (model == "example2d1") {
    // Mass concentrates along x2 = x1^2 with band width ~ (2n)^{-1/2};
    // |x1| <= 2.6 carries all but ~1e-11 of mu_n.
    const double h2 = std::min(0.05, 0.5 / std::sqrt(2.0 * n + 1.0));
    const double h1 = h2 / 5.2;
    auto axis = [](double lo, double hi, double h) {
      return GridAxis{lo, hi, static_cast<std::size_t>(std::ceil((hi - lo) / h)) + 1};
    };
    const double x2_lo = n < 16 ? -6.0 : -1.5;
    return {GridSpec({axis(-5.5, 5.5, h1), axis(x2_lo, 7.0, h2)}), std::nullopt};
  }
  if (model == "example2d2") {
    // u1 = (x2 - x1)/sqrt 2 carries the likelihood, u2 = (x1 + x2)/sqrt 2 is
    // untouched by it (the posterior factorizes in these coordinates).
    Matrix r(2, 2);
    const double c = 1.0 / std::numbers::sqrt2;
    r << -c, c, c, c;
    const Vector u = r.transpose() * approx.mean();
    const Matrix cov_u = r.transpose() * approx.covariance() * r;
    const double sd1 = std::sqrt(cov_u(0, 0));
    const double h1 = std::min(0.02, 0.25 * sd1);
    const double lo1 = std::min(-5.0, u[0] - 14 * sd1), hi1 = std::max(6.0, u[0] + 14 * sd1);
    const std::size_t p1 = static_cast<std::size_t>(std::ceil((hi1 - lo1) / h1)) + 1;
    return {GridSpec({{lo1, hi1, p1}, {-7.0, 7.0, 281}}), r};
  }
  // Generic: axis-aligned box of +-14 Laplace marginal sds.
  const Matrix cov = approx.covariance();
  const int d = approx.dim();
  if (d > 2) throw ConfigError("hellinger: grid quadrature supports d <= 2");
  std::vector<GridAxis> axes;
  for (int j = 0; j < d; ++j) {
    const double sd = std::sqrt(cov(j, j));
    axes.push_back({approx.mean()[j] - 14 * sd, approx.mean()[j] + 14 * sd, d == 1 ? std::size_t{4001} : std::size_t{801}});
  }
  return {GridSpec(axes), std::nullopt};
}

/// d_H and d_TV between mu_n and L_n for one calibrated posterior.
inline HellingerRow hellinger_point(const std::string& model, const ScaledPosterior& post, const LaplaceApprox& approx,
                                    double* coverage = nullptr) {
  const HellingerGrid hg = hellinger_grid(model, approx);
  const Matrix rot = hg.rotation.value_or(Matrix::Identity(post.dim(), post.dim()));
  auto p = [&](const Vector& u) { return post.unnormalized_density(rot * u); };
  auto q = [&](const Vector& u) { return std::exp(approx.log_density_unnormalized(rot * u)); };
  HellingerRow row;
  row.n = post.n();
  row.hellinger = hellinger_numeric(p, q, hg.grid);
  row.tv = tv_numeric(p, q, hg.grid);
  if (coverage) *coverage = std::max(grid_mass_deficit(p, hg.grid), grid_mass_deficit(q, hg.grid));
  return row;
}

inline std::vector<double> default_n_grid(const std::string& experiment, const std::string& model) {
  std::vector<double> g;
  if (experiment == "hellinger") {
    const int lo = (model == "example2d1" || model == "example2d2") ? 0 : 2;
    for (int k = lo; k <= 10; ++k) g.push_back(std::ldexp(1.0, k));
  } else if (experiment == "is-sweep") {
    g = {1e2, 1e3, 1e4};
  } else if (experiment == "qmc-sweep") {
    g = {1e2, 1e3, 1e4, 1e5, 1e6};
  } else {
    g = {1e2, 1e3, 1e4};
  }
  return g;
}

// The fit prefix never leaves fewer than three points.
inline std::size_t effective_skip(std::optional<std::size_t> skip, std::size_t points) {
  const std::size_t s = skip.value_or(2);
  return points >= 3 ? std::min(s, points - 3) : 0;
}

inline HellingerResult run_hellinger_experiment(const ExperimentConfig& cfg) {
  const ModelSetup model = make_model(cfg.model, cfg.d, cfg.prior, cfg.mesh_cells);
  const auto grid = cfg.n_grid.empty() ? default_n_grid("hellinger", cfg.model) : cfg.n_grid;
  HellingerResult res;
  res.model = cfg.model;
  const int starts = std::max(cfg.map_starts, model.prior.dim() > 1 ? 8 : 1);
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const PosteriorBundle b = prepare_posterior(model, grid[k], starts, cfg.seed);
    double cov = 0.0;
    const bool check = k == 0 || k + 1 == grid.size();
    res.rows.push_back(hellinger_point(cfg.model, *b.post, *b.approx, check ? &cov : nullptr));
    res.coverage_deficit = std::max(res.coverage_deficit, cov);
    xs.push_back(grid[k]);
    ys.push_back(res.rows.back().hellinger);
  }
  res.report = fit_rate_tail(xs, ys, effective_skip(cfg.skip, xs.size()));
  res.tail_report = fit_rate_tail(xs, ys, xs.size() > 4 ? xs.size() - 4 : 0);
  return res;
}

// ---------------------------------------------------------------------------
// Observations of a cubic forward map: Y_k = x0^3 + sigma eps_k, prior N(0, tau^2)

struct BvmSettings {
  double sigma = 0.1;
  double prior_sd = 1.0;
  double x0 = 1.0;
};

struct BvmRow {
  double n = 0.0;
  double map = 0.0;
  double grad_residual = 0.0;
  double var_laplace = 0.0;
  double var_bvm = 0.0;
  double hellinger = 0.0;
};

/// MAP of I_n(x) = (1/n)[sum (y_k - x^3)^2 / (2 sigma^2) + x^2 / (2 tau^2)] (up to a constant),
/// the Laplace variance 1 / (n I_n''(x_n)) and the BvM Gaussian
/// N(x_n, sigma^2 / (9 x0^4 n)).
inline BvmRow bvm_point(const std::vector<double>& ys, const BvmSettings& s = {}) {
  if (ys.empty()) throw ConfigError("bvm: need at least one observation");
  const double n = static_cast<double>(ys.size());
  const double ybar = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  const double s2 = s.sigma * s.sigma, t2 = s.prior_sd * s.prior_sd;
  // sum (y_i - x^3)^2 = sum (y_i - ybar)^2 + n (ybar - x^3)^2; the first part is constant in x and
  // dropping it avoids cancelling large terms near the minimum
  Objective obj;
  obj.value = [=](const Vector& v) {
    const double r = ybar - v[0] * v[0] * v[0];
    return r * r / (2 * s2) + v[0] * v[0] / (2 * n * t2);
  };
  obj.gradient = [=](const Vector& v) {
    const double x = v[0];
    Vector g(1);
    g[0] = 3 * x * x * (x * x * x - ybar) / s2 + x / (n * t2);
    return g;
  };
  obj.hessian = [=](const Vector& v) {
    const double x = v[0];
    Matrix h(1, 1);
    h(0, 0) = (15 * std::pow(x, 4) - 6 * x * ybar) / s2 + 1 / (n * t2);
    return h;
  };
  const Vector x0 = Vector::Constant(1, std::cbrt(ybar));
  const MinResult r = minimize_newton(obj, x0, 1e-12, 200, std::nullopt);
  if (!r.converged) throw NumericalError("bvm: MAP solve did not converge");
  BvmRow row;
  row.n = n;
  row.map = r.x[0];
  row.grad_residual = r.grad_norm;
  const double curv = obj.hessian(r.x)(0, 0);
  if (!(curv > 0)) throw SingularHessian("bvm: non-positive curvature at the MAP", curv);
  row.var_laplace = 1.0 / (n * curv);
  row.var_bvm = s2 / (9 * std::pow(s.x0, 4) * n);
  row.hellinger = gaussian_hellinger(r.x, Matrix::Constant(1, 1, row.var_laplace), r.x,
                                     Matrix::Constant(1, 1, row.var_bvm));
  return row;
}

inline std::vector<double> bvm_observations(std::size_t count, std::uint64_t seed, std::uint64_t stream,
                                            const BvmSettings& s = {}) {
  Rng rng = make_stream(seed, 0xb7, stream);
  std::vector<double> ys(count);
  for (auto& y : ys) y = s.x0 * s.x0 * s.x0 + s.sigma * standard_normal(rng);
  return ys;
}

struct BvmResult {
  std::vector<BvmRow> rows;  // first seed
  std::vector<double> median_hellinger;  // per n over all seeds
};

inline BvmResult run_bvm_demo(const ExperimentConfig& cfg, const BvmSettings& s = {}) {
  const auto grid = cfg.n_grid.empty() ? default_n_grid("bvm-demo", "") : cfg.n_grid;
  const std::size_t seeds = cfg.replicates.value_or(10);
  if (seeds < 1) throw ConfigError("bvm: replicates must be at least 1");
  BvmResult res;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (grid[k] != std::floor(grid[k])) throw ConfigError("bvm: n must be an integer observation count");
    std::vector<double> hs;
    for (std::size_t r = 0; r < seeds; ++r) {
      const auto row = bvm_point(bvm_observations(static_cast<std::size_t>(grid[k]), cfg.seed + r, k, s), s);
      if (r == 0) res.rows.push_back(row);
      hs.push_back(row.hellinger);
    }
    std::sort(hs.begin(), hs.end());
    const std::size_t m = hs.size();
    res.median_hellinger.push_back(m % 2 ? hs[m / 2] : 0.5 * (hs[m / 2 - 1] + hs[m / 2]));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Singular Hessian demo

struct SingularRow {
  std::string model;
  double n = 0.0;
  bool likelihood_only_singular = false;
  double likelihood_only_min_eig = 0.0;
  double regularized_min_eig = 0.0;
  double regularized_max_eig = 0.0;
};

/// Compares the Laplace construction with the likelihood curvature alone
/// (fails for both 2D examples) and with the prior-regularized I_n.
inline std::vector<SingularRow> run_singular_demo(const ExperimentConfig& cfg) {
  const auto grid = cfg.n_grid.empty() ? default_n_grid("hellinger", "example2d1") : cfg.n_grid;
  std::vector<SingularRow> rows;
  for (const std::string name : {"example2d1", "example2d2"}) {
    const ModelSetup model = make_model(name, 2, std::nullopt);
    for (double n : grid) {
      const PosteriorBundle b = prepare_posterior(model, n, 8, cfg.seed);
      SingularRow row;
      row.model = name;
      row.n = n;
      try {
        LaplaceApprox pure(b.map.x, model.likelihood.hess(b.map.x), n);
        row.likelihood_only_min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(pure.precision()).eigenvalues()[0];
      } catch (const SingularHessian& e) {
        row.likelihood_only_singular = true;
        row.likelihood_only_min_eig = e.smallest_eigenvalue();
      }
      const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(b.approx->precision()).eigenvalues();
      row.regularized_min_eig = ev[0];
      row.regularized_max_eig = ev[ev.size() - 1];
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Importance sampling and QMC sweeps

inline double predicted_is_slope(ProposalKind kind, int d) { return kind == ProposalKind::Prior ? d / 4.0 - 0.5 : -0.5; }

inline std::vector<ProposalKind> requested_methods(const std::string& method) {
  if (method == "prior") return {ProposalKind::Prior};
  if (method == "laplace") return {ProposalKind::Laplace};
  if (method == "both") return {ProposalKind::Prior, ProposalKind::Laplace};
  throw ConfigError("method must be 'prior', 'laplace' or 'both', got '" + method + "'");
}

struct IsExperimentResult {
  std::vector<std::pair<ProposalKind, IsSweepResult>> sweeps;
  std::size_t count = 0;
  std::size_t replicates = 0;
};

inline IsExperimentResult run_is_experiment(const ExperimentConfig& cfg) {
  const ModelSetup model = make_model(cfg.model, cfg.d, cfg.prior, cfg.mesh_cells);
  IsExperimentResult res;
  res.count = cfg.samples.value_or(100'000);
  res.replicates = cfg.replicates.value_or(200);
  const auto grid = cfg.n_grid.empty() ? default_n_grid("is-sweep", cfg.model) : cfg.n_grid;
  for (ProposalKind kind : requested_methods(cfg.method)) {
    IsSweepSpec spec;
    spec.make_posterior = [&model](double n) { return ScaledPosterior(model.prior, model.likelihood, n); };
    spec.qoi = model.qoi;
    spec.reference = [&model](const ScaledPosterior& p, const LaplaceApprox& a) {
      return reference_expectation(p, a, model.qoi);
    };
    spec.n_grid = grid;
    spec.proposal = kind;
    spec.count = res.count;
    spec.replicates = res.replicates;
    spec.seed = cfg.seed;
    spec.threads = cfg.threads;
    spec.map_starts = cfg.map_starts;
    res.sweeps.emplace_back(kind, run_is_sweep(spec, effective_skip(cfg.skip, grid.size())));
  }
  return res;
}

enum class QmcMethod { Prior, Laplace };

inline const char* to_string(QmcMethod m) { return m == QmcMethod::Prior ? "prior" : "laplace"; }

struct QmcRow {
  double n = 0.0;
  ReferenceValues reference;
  double rmse_z = 0.0;
  double rmse_z_prime = 0.0;
  double rmse_ratio = 0.0;
  double discarded_fraction = 0.0;

  double relative_rmse_z() const { return rmse_z / std::abs(reference.z); }
};

struct QmcSweepResult {
  QmcMethod method = QmcMethod::Laplace;
  std::vector<QmcRow> rows;
  RateReport z_report;         // absolute RMSE of Z
  RateReport relative_report;  // relative RMSE of Z
  RateReport ratio_report;
};

struct QmcExperimentResult {
  std::vector<QmcSweepResult> sweeps;
  std::size_t points = 0;
  std::size_t shifts = 0;
  double tau = 0.0;
  int d = 0;
};

/// Shift-wise estimates for one posterior; shift s uses stream (seed, s).
inline std::vector<QmcEstimate> qmc_shift_estimates(const std::function<QmcEstimate(const Vector&)>& estimator, int d,
                                                    std::size_t shifts, std::uint64_t seed, unsigned threads) {
  if (shifts < 2) throw ConfigError("qmc: need at least 2 shifts");
  std::vector<QmcEstimate> out(shifts);
  parallel_for(shifts, threads, [&](std::size_t s) {
    Rng rng = make_stream(seed, 0x51f7, s);
    out[s] = estimator(random_shift(d, rng));
  });
  return out;
}

inline QmcSweepResult run_qmc_sweep(const ModelSetup& model, QmcMethod method, const LatticeRule& rule,
                                    const std::vector<double>& grid, std::size_t points, std::size_t shifts,
                                    double tau, std::uint64_t seed, unsigned threads, std::size_t skip,
                                    int map_starts = 1, const ReferenceOptions& ref_opt = {}) {
  const bool gaussian = model.prior.kind() == PriorKind::Gaussian;
  if (method == QmcMethod::Prior && gaussian)
    throw ConfigError("qmc: the prior path requires a uniform prior; use method = laplace");
  QmcSweepResult res;
  res.method = method;
  std::vector<double> xs, ez, erel, eratio;
  for (double n : grid) {
    const PosteriorBundle b = prepare_posterior(model, n, map_starts, seed);
    const ScaledPosterior& post = *b.post;
    const LaplaceApprox& approx = *b.approx;
    QmcRow row;
    row.n = n;
    row.reference = reference_integrals(post, approx, model.qoi, ref_opt);
    std::function<QmcEstimate(const Vector&)> est;
    if (method == QmcMethod::Prior) {
      est = [&](const Vector& s) { return qmc_prior_estimate(post, model.qoi, rule, s, points); };
    } else if (gaussian) {
      est = [&](const Vector& s) { return qmc_gaussian_prior_estimate(post, approx, model.qoi, rule, s, points); };
    } else {
      est = [&](const Vector& s) { return qmc_laplace_estimate(post, approx, model.qoi, rule, s, points, tau); };
    }
    const auto vals = qmc_shift_estimates(est, rule.d, shifts, seed, threads);
    std::vector<double> sz, szp, sr;
    double discarded = 0;
    for (const auto& v : vals) {
      sz.push_back((v.z - row.reference.z) * (v.z - row.reference.z));
      szp.push_back((v.z_prime - row.reference.z_prime) * (v.z_prime - row.reference.z_prime));
      const double r = v.ratio() - row.reference.expectation;
      sr.push_back(std::isfinite(r) ? r * r : kInf);
      discarded += static_cast<double>(v.discarded) / static_cast<double>(v.count);
    }
    const double m = static_cast<double>(vals.size());
    row.rmse_z = std::sqrt(pairwise_sum(sz) / m);
    row.rmse_z_prime = std::sqrt(pairwise_sum(szp) / m);
    row.rmse_ratio = std::sqrt(pairwise_sum(sr) / m);
    row.discarded_fraction = discarded / m;
    res.rows.push_back(row);
    xs.push_back(n);
    ez.push_back(row.rmse_z);
    erel.push_back(row.relative_rmse_z());
    eratio.push_back(row.rmse_ratio);
  }
  auto fit = [&](const std::vector<double>& ys) {
    try {
      return fit_rate_tail(xs, ys, skip);
    } catch (const InsufficientData&) {
      return RateReport{xs, ys};
    }
  };
  res.z_report = fit(ez);
  res.relative_report = fit(erel);
  res.ratio_report = fit(eratio);
  return res;
}

inline QmcExperimentResult run_qmc_experiment(const ExperimentConfig& cfg) {
  const ModelSetup model = make_model(cfg.model, cfg.d, cfg.prior, cfg.mesh_cells);
  if (cfg.generating_vector.empty()) throw ConfigError("qmc: no generating vector file configured");
  const LatticeRule rule = load_generating_vector(cfg.generating_vector, cfg.lattice_m, model.prior.dim());
  QmcExperimentResult res;
  res.points = cfg.samples.value_or(std::size_t{1} << 13);
  res.shifts = cfg.shifts;
  res.tau = cfg.tau;
  res.d = model.prior.dim();
  const auto grid = cfg.n_grid.empty() ? default_n_grid("qmc-sweep", cfg.model) : cfg.n_grid;
  std::vector<QmcMethod> methods;
  if (cfg.method == "prior" || cfg.method == "both") {
    if (model.prior.kind() == PriorKind::UniformBox) methods.push_back(QmcMethod::Prior);
    else if (cfg.method == "prior") throw ConfigError("qmc: the prior path requires a uniform prior");
  }
  if (cfg.method == "laplace" || cfg.method == "both") methods.push_back(QmcMethod::Laplace);
  if (methods.empty()) throw ConfigError("method must be 'prior', 'laplace' or 'both', got '" + cfg.method + "'");
  for (QmcMethod m : methods)
    res.sweeps.push_back(run_qmc_sweep(model, m, rule, grid, res.points, cfg.shifts, cfg.tau, cfg.seed, cfg.threads,
                                       effective_skip(cfg.skip, grid.size()), cfg.map_starts));
  return res;
}

/// CSV with columns method,d,n,N,shifts,tau,rmse_Z,rmse_Zprime,rmse_ratio.
inline void write_qmc_csv(std::ostream& os, const QmcExperimentResult& res) {
  os << std::setprecision(17) << "method,d,n,N,shifts,tau,rmse_Z,rmse_Zprime,rmse_ratio\n";
  for (const auto& s : res.sweeps)
    for (const auto& r : s.rows)
      os << to_string(s.method) << ',' << res.d << ',' << r.n << ',' << res.points << ',' << res.shifts << ','
         << res.tau << ',' << r.rmse_z << ',' << r.rmse_z_prime << ',' << r.rmse_ratio << '\n';
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_slope_line(const std::string& label, const RateReport& rep, std::optional<double> expected,
                                     double tolerance) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << label << ": slope ";
  if (!rep.fitted) {
    os << "n/a (fewer than 3 usable points after skip)";
    return os.str();
  }
  os << rep.slope;
  if (expected) {
    const bool ok = std::abs(rep.slope - *expected) <= tolerance;
    os << " (expected " << *expected << " +- " << tolerance << ") " << (ok ? "PASS" : "FAIL");
  }
  return os.str();
}

/// Runs the configured experiment, writes CSV files and summary.txt into
/// cfg.output, and returns the summary text.
inline std::string run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output);
  const fs::path dir(cfg.output);
  std::ostringstream summary;
  summary << "experiment " << cfg.experiment << ", model " << cfg.model << ", d " << cfg.d << ", seed " << cfg.seed
          << "\n";
  auto open = [&](const std::string& name) {
    std::ofstream f(dir / name);
    if (!f) throw ConfigError("cannot write '" + (dir / name).string() + "'");
    return f;
  };

  if (cfg.experiment == "hellinger") {
    const auto res = run_hellinger_experiment(cfg);
    auto f = open("hellinger.csv");
    f << std::setprecision(17) << "model,n,hellinger,tv\n";
    for (const auto& r : res.rows) f << res.model << ',' << r.n << ',' << r.hellinger << ',' << r.tv << '\n';
    auto rf = open("hellinger_rate.csv");
    write_csv(rf, res.report);
    std::optional<double> expected;
    if (cfg.model == "cubic") expected = -0.5;
    summary << format_slope_line("hellinger d_H(mu_n, L_n)", res.report, expected, 0.15) << "\n";
    summary << format_slope_line("hellinger final segment", res.tail_report, std::nullopt, 0) << "\n";
    summary << "grid coverage deficit " << std::scientific << std::setprecision(2) << res.coverage_deficit << "\n";
  } else if (cfg.experiment == "is-sweep") {
    const auto res = run_is_experiment(cfg);
    auto f = open("is_sweep.csv");
    bool header = true;
    for (const auto& [kind, sweep] : res.sweeps) {
      write_is_csv(f, sweep, kind, cfg.d, res.count, res.replicates, header);
      header = false;
      summary << format_slope_line(std::string("is ") + to_string(kind) + " rmse", sweep.report,
                                   predicted_is_slope(kind, cfg.d), 0.2)
              << "\n";
    }
  } else if (cfg.experiment == "qmc-sweep") {
    const auto res = run_qmc_experiment(cfg);
    auto f = open("qmc_sweep.csv");
    write_qmc_csv(f, res);
    for (const auto& s : res.sweeps) {
      if (s.method == QmcMethod::Laplace && cfg.prior.value_or(PriorKind::UniformBox) == PriorKind::UniformBox) {
        summary << format_slope_line("qmc laplace abs rmse Z", s.z_report, -cfg.d / 2.0, 0.2) << "\n";
      } else if (s.method == QmcMethod::Prior) {
        summary << format_slope_line("qmc prior relative rmse Z", s.relative_report, std::nullopt, 0) << "\n";
      }
      summary << format_slope_line(std::string("qmc ") + to_string(s.method) + " rmse ratio", s.ratio_report,
                                   std::nullopt, 0)
              << "\n";
    }
  } else if (cfg.experiment == "bvm-demo") {
    const auto res = run_bvm_demo(cfg);
    auto f = open("bvm.csv");
    f << std::setprecision(17) << "n,map,var_laplace,var_bvm,hellinger,median_hellinger\n";
    for (std::size_t i = 0; i < res.rows.size(); ++i) {
      const auto& r = res.rows[i];
      f << r.n << ',' << r.map << ',' << r.var_laplace << ',' << r.var_bvm << ',' << r.hellinger << ','
        << res.median_hellinger[i] << '\n';
    }
    bool monotone = true;
    for (std::size_t i = 1; i < res.median_hellinger.size(); ++i)
      monotone = monotone && res.median_hellinger[i] < res.median_hellinger[i - 1];
    summary << "median Hellinger between Laplace and BvM Gaussians decreasing: " << (monotone ? "yes" : "no") << "\n";
  } else if (cfg.experiment == "singular-demo") {
    const auto rows = run_singular_demo(cfg);
    auto f = open("singular.csv");
    f << std::setprecision(17)
      << "model,n,likelihood_only_singular,likelihood_only_min_eig,regularized_min_eig,regularized_max_eig\n";
    for (const auto& r : rows)
      f << r.model << ',' << r.n << ',' << (r.likelihood_only_singular ? 1 : 0) << ',' << r.likelihood_only_min_eig
        << ',' << r.regularized_min_eig << ',' << r.regularized_max_eig << '\n';
    std::size_t singular = 0;
    for (const auto& r : rows) singular += r.likelihood_only_singular ? 1 : 0;
    summary << "likelihood-only Hessian singular in " << singular << " of " << rows.size() << " cases\n";
  } else {
    throw ConfigError("unknown experiment '" + cfg.experiment + "'");
  }
  auto sf = open("summary.txt");
  sf << summary.str();
  return summary.str();
}

}  // namespace lapqmc
