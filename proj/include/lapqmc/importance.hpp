#pragma once

// Self-normalized importance sampling with prior or Laplace proposals.

#include "lapqmc/laplace.hpp"
#include "lapqmc/metrics.hpp"
#include "lapqmc/model.hpp"
#include "lapqmc/optimize.hpp"

#include <ostream>

namespace lapqmc {

class DegenerateWeights : public NumericalError {
 public:
  DegenerateWeights(const std::string& what, double hit_rate) : NumericalError(what), hit_rate_(hit_rate) {}
  double hit_rate() const { return hit_rate_; }

 private:
  double hit_rate_;
};

enum class ProposalKind { Prior, Laplace };

inline const char* to_string(ProposalKind k) { return k == ProposalKind::Prior ? "prior" : "laplace"; }

/// Sampling distribution with a normalized log-density.
struct Proposal {
  ProposalKind kind = ProposalKind::Prior;
  std::function<void(Rng&, Vector&)> sampler;
  ScalarField log_density;
};

inline Proposal prior_proposal(const Prior& prior) {
  return Proposal{ProposalKind::Prior, [prior](Rng& rng, Vector& out) { prior.sample(rng, out); },
                  [prior](const Vector& x) { return prior.log_density(x); }};
}

inline Proposal laplace_proposal(const LaplaceApprox& approx) {
  return Proposal{ProposalKind::Laplace, [approx](Rng& rng, Vector& out) { approx.sample(rng, out); },
                  [approx](const Vector& x) { return approx.log_density(x); }};
}

struct ISResult {
  double estimate = 0.0;
  double ess = 0.0;
  double max_log_weight = -kInf;
  std::size_t count = 0;
  double hit_rate = 0.0;  // fraction of draws with positive weight
};

namespace detail {

struct WeightedDraws {
  std::vector<double> log_w;
  std::vector<double> fx;
  double max_log_w = -kInf;
  std::size_t hits = 0;
};

inline WeightedDraws draw_weighted(const ScalarField& f, const ScalarField& log_target,
                                   const Proposal& proposal, std::size_t count, Rng& rng) {
  WeightedDraws wd;
  wd.log_w.resize(count);
  wd.fx.assign(count, 0.0);
  Vector x;
  for (std::size_t i = 0; i < count; ++i) {
    proposal.sampler(rng, x);
    const double lt = log_target(x);
    double lw = -kInf;
    if (lt > -kInf) {
      lw = lt - proposal.log_density(x);
      wd.fx[i] = f(x);
      ++wd.hits;
    }
    wd.log_w[i] = lw;
    wd.max_log_w = std::max(wd.max_log_w, lw);
  }
  if (!(wd.max_log_w > -kInf)) {
    throw DegenerateWeights("importance sampling: all weights are zero (hit rate 0 of " +
                                std::to_string(count) + " draws)",
                            0.0);
  }
  return wd;
}

}  // namespace detail

/// Self-normalized estimate sum w_i f(x_i) / sum w_i with log-sum-exp
/// stabilized weights. Draws with zero target density keep their slot in the
/// count and contribute weight 0.
inline ISResult snis(const ScalarField& f, const ScalarField& log_target_unnorm, const Proposal& proposal,
                     std::size_t count, Rng& rng) {
  if (count < 2) throw ConfigError("snis: count must be at least 2");
  const auto wd = detail::draw_weighted(f, log_target_unnorm, proposal, count, rng);
  std::vector<double> w(count), w2(count), wf(count);
  // Differences from a pivot value keep constant integrands exact.
  double pivot = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    if (wd.log_w[i] == wd.max_log_w) {
      pivot = wd.fx[i];
      break;
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    w[i] = std::exp(wd.log_w[i] - wd.max_log_w);
    w2[i] = w[i] * w[i];
    wf[i] = w[i] > 0 ? w[i] * (wd.fx[i] - pivot) : 0.0;
  }
  const double sw = pairwise_sum(w);
  ISResult res;
  res.estimate = pivot + pairwise_sum(wf) / sw;
  res.ess = sw * sw / pairwise_sum(w2);
  res.max_log_weight = wd.max_log_w;
  res.count = count;
  res.hit_rate = static_cast<double>(wd.hits) / static_cast<double>(count);
  return res;
}

/// Plug-in estimate of E_nu[(dmu/dnu)^2 (f - E_mu f)^2], the asymptotic
/// variance constant of self-normalized importance sampling.
inline double asymptotic_variance_estimate(const ScalarField& f, const ScaledPosterior& post,
                                           const Proposal& proposal, std::size_t count, Rng& rng) {
  if (count < 2) throw ConfigError("asymptotic_variance_estimate: count must be at least 2");
  const ScalarField log_target = [&post](const Vector& x) { return post.log_unnormalized_density(x); };
  const auto wd = detail::draw_weighted(f, log_target, proposal, count, rng);
  std::vector<double> w(count), wf(count);
  for (std::size_t i = 0; i < count; ++i) {
    w[i] = std::exp(wd.log_w[i] - wd.max_log_w);
    wf[i] = w[i] * wd.fx[i];
  }
  const double sw = pairwise_sum(w);
  const double mean_f = pairwise_sum(wf) / sw;
  const double mean_w = sw / static_cast<double>(count);
  std::vector<double> terms(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double ratio = w[i] / mean_w;
    const double c = wd.fx[i] - mean_f;
    terms[i] = ratio * ratio * c * c;
  }
  return pairwise_sum(terms) / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

/// One member of a posterior family indexed by n together with what the IS
/// sweep needs from it.
struct IsSweepSpec {
  std::function<ScaledPosterior(double n)> make_posterior;
  ScalarField qoi;
  /// Reference E_{mu_n}[qoi]; receives the calibrated posterior and its Laplace approximation.
  std::function<double(const ScaledPosterior&, const LaplaceApprox&)> reference;
  std::vector<double> n_grid;
  ProposalKind proposal = ProposalKind::Laplace;
  std::size_t count = 100'000;
  std::size_t replicates = 200;
  std::uint64_t seed = 0;
  unsigned threads = default_threads();
  int map_starts = 1;
};

struct IsSweepRow {
  double n = 0.0;
  double reference = 0.0;
  double rmse = 0.0;
  double mean_ess = 0.0;
};

struct IsSweepResult {
  std::vector<IsSweepRow> rows;
  RateReport report;
};

/// Replicated SNIS over an n grid; RMSE is measured against the supplied
/// reference. Replicate r at grid index k uses the stream (seed, k, r).
inline IsSweepResult run_is_sweep(const IsSweepSpec& spec, std::size_t skip_prefix = 0) {
  if (spec.n_grid.empty()) throw ConfigError("is sweep: empty n grid");
  if (spec.replicates < 1) throw ConfigError("is sweep: replicates must be at least 1");
  IsSweepResult out;
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < spec.n_grid.size(); ++k) {
    const double n = spec.n_grid[k];
    ScaledPosterior post = spec.make_posterior(n);
    const MinResult map = find_map(post, spec.map_starts, spec.seed);
    const LaplaceApprox approx = build_laplace(post, map);
    const double ref = spec.reference(post, approx);
    const Proposal proposal =
        spec.proposal == ProposalKind::Prior ? prior_proposal(post.prior()) : laplace_proposal(approx);
    const ScalarField log_target = [&post](const Vector& x) { return post.log_unnormalized_density(x); };

    std::vector<double> sq(spec.replicates), ess(spec.replicates);
    parallel_for(spec.replicates, spec.threads, [&](std::size_t r) {
      Rng rng = make_stream(spec.seed, k, r);
      const ISResult res = snis(spec.qoi, log_target, proposal, spec.count, rng);
      const double e = res.estimate - ref;
      sq[r] = e * e;
      ess[r] = res.ess;
    });
    IsSweepRow row;
    row.n = n;
    row.reference = ref;
    row.rmse = std::sqrt(pairwise_sum(sq) / static_cast<double>(spec.replicates));
    row.mean_ess = pairwise_sum(ess) / static_cast<double>(spec.replicates);
    out.rows.push_back(row);
    xs.push_back(n);
    ys.push_back(row.rmse);
  }
  out.report = xs.size() >= 3 + skip_prefix ? fit_rate_tail(xs, ys, skip_prefix) : RateReport{xs, ys};
  return out;
}

/// CSV with columns method,d,n,N,replicates,rmse.
inline void write_is_csv(std::ostream& os, const IsSweepResult& res, ProposalKind kind, int d,
                         std::size_t count, std::size_t replicates, bool header = true) {
  os << std::setprecision(17);
  if (header) os << "method,d,n,N,replicates,rmse\n";
  for (const auto& r : res.rows)
    os << to_string(kind) << ',' << d << ',' << r.n << ',' << count << ',' << replicates << ',' << r.rmse << '\n';
}

}  // namespace lapqmc
