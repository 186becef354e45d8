#include "helpers.hpp"

#include <lapqmc/experiments.hpp>
#include <lapqmc/forward.hpp>
#include <lapqmc/importance.hpp>

#include <gtest/gtest.h>

using namespace lapqmc;
using lapqmc::testing::conjugate_1d;
using lapqmc::testing::vec;

namespace {

Proposal standard_normal_proposal() {
  const Prior p = Prior::standard_gaussian(1);
  return prior_proposal(p);
}

const ScalarField kIdentity = [](const Vector& x) { return x[0]; };

}  // namespace

TEST(Snis, ConstantIntegrandIsExact) {
  const AlgebraicModel alg(2);
  ScaledPosterior post(alg.prior(), alg.likelihood(), 300.0);
  const LaplaceApprox la = build_laplace(post, find_map(post));
  const ScalarField target = [&](const Vector& x) { return post.log_unnormalized_density(x); };
  const ScalarField c = [](const Vector&) { return 2.75; };
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng r1 = make_stream(seed), r2 = make_stream(seed);
    EXPECT_EQ(snis(c, target, prior_proposal(post.prior()), 1000, r1).estimate, 2.75);
    EXPECT_EQ(snis(c, target, laplace_proposal(la), 1000, r2).estimate, 2.75);
  }
}

TEST(Snis, MatchingProposalGivesPlainMean) {
  const Proposal prop = standard_normal_proposal();
  const ScalarField target = prop.log_density;
  const std::size_t count = 100000;
  Rng rng = make_stream(21);
  const ISResult res = snis(kIdentity, target, prop, count, rng);
  EXPECT_LT(std::abs(res.estimate), 4.0 / std::sqrt(static_cast<double>(count)));
  EXPECT_NEAR(res.ess, static_cast<double>(count), 1e-6);
  EXPECT_EQ(res.hit_rate, 1.0);

  Rng again = make_stream(21);
  double s = 0;
  Vector x;
  for (std::size_t i = 0; i < count; ++i) {
    prop.sampler(again, x);
    s += x[0];
  }
  EXPECT_NEAR(res.estimate, s / count, 1e-12);
}

namespace {

// Mean of `batches` independent SNIS estimates and their standard error.
std::pair<double, double> batch_snis(const ScaledPosterior& post, const Proposal& prop, std::size_t batches,
                                     std::size_t count) {
  std::vector<double> batch;
  const ScalarField target = [&](const Vector& x) { return post.log_unnormalized_density(x); };
  for (std::uint64_t b = 0; b < batches; ++b) {
    Rng rng = make_stream(31, b);
    batch.push_back(snis(&AlgebraicModel::qoi, target, prop, count, rng).estimate);
  }
  double mean = 0, var = 0;
  for (double v : batch) mean += v / batch.size();
  for (double v : batch) var += (v - mean) * (v - mean) / (batch.size() - 1);
  return {mean, std::sqrt(var / batch.size())};
}

double trapezoid_mean(const ScaledPosterior& post, std::size_t points) {
  const GridSpec grid({GridAxis{-0.5, 0.5, points}, GridAxis{-0.5, 0.5, points}});
  const auto dens = [&](const Vector& x) { return post.unnormalized_density(x); };
  return trapezoid([&](const Vector& x) { return dens(x) * AlgebraicModel::qoi(x); }, grid) / trapezoid(dens, grid);
}

}  // namespace

TEST(Snis, AlgebraicPriorProposalMatchesTrapezoid) {
  // n = 100 is far from Gaussian (mass spread over several modes), so only the prior proposal is reliable here
  const AlgebraicModel alg(2);
  ScaledPosterior post(alg.prior(), alg.likelihood(), 100.0);
  find_map(post);
  const auto [mean, se] = batch_snis(post, prior_proposal(post.prior()), 20, 20000);
  EXPECT_LT(std::abs(mean - trapezoid_mean(post, 2001)), 4 * se);
}

TEST(Snis, AlgebraicLaplaceProposalMatchesTrapezoid) {
  const AlgebraicModel alg(2);
  ScaledPosterior post(alg.prior(), alg.likelihood(), 1e4);
  const LaplaceApprox la = build_laplace(post, find_map(post));
  const auto [mean, se] = batch_snis(post, laplace_proposal(la), 20, 20000);
  EXPECT_LT(std::abs(mean - trapezoid_mean(post, 4001)), 4 * se + 1e-9);
}

TEST(Snis, InvariantUnderTargetAndIntegrandShifts) {
  const AlgebraicModel alg(3);
  ScaledPosterior post(alg.prior(), alg.likelihood(), 50.0);
  find_map(post);
  const ScalarField target = [&](const Vector& x) { return post.log_unnormalized_density(x); };
  const ScalarField shifted = [&](const Vector& x) { return post.log_unnormalized_density(x) + 123.0; };
  const Proposal prop = prior_proposal(post.prior());
  const ScalarField f = [](const Vector& x) { return x.sum(); };
  const ScalarField f_plus = [](const Vector& x) { return x.sum() + 5.0; };
  Rng a = make_stream(4), b = make_stream(4), c = make_stream(4);
  const ISResult base = snis(f, target, prop, 5000, a);
  const ISResult moved = snis(f, shifted, prop, 5000, b);
  const ISResult plus = snis(f_plus, target, prop, 5000, c);
  EXPECT_EQ(base.estimate, moved.estimate);
  EXPECT_NEAR(base.ess / moved.ess, 1.0, 1e-12);
  EXPECT_NEAR(plus.estimate, base.estimate + 5.0, 1e-12);
  EXPECT_GT(base.ess, 0.0);
  EXPECT_LT(base.ess, 5000.0);
}

TEST(Snis, Errors) {
  const AlgebraicModel alg(1);
  ScaledPosterior post(alg.prior(), alg.likelihood(), 10.0);
  find_map(post);
  const Proposal far{ProposalKind::Laplace, [](Rng&, Vector& out) { out = vec({3.0}); },
                     [](const Vector&) { return 0.0; }};
  const ScalarField target = [&](const Vector& x) { return post.log_unnormalized_density(x); };
  Rng rng = make_stream(0);
  try {
    snis(kIdentity, target, far, 100, rng);
    FAIL() << "expected DegenerateWeights";
  } catch (const DegenerateWeights& e) {
    EXPECT_EQ(e.hit_rate(), 0.0);
  }
  EXPECT_THROW(snis(kIdentity, target, prior_proposal(post.prior()), 1, rng), ConfigError);
}

TEST(Snis, OffSupportDrawsKeepTheirSlot) {
  const AlgebraicModel alg(1);
  ScaledPosterior post(alg.prior(), alg.likelihood(), 1.0);
  const LaplaceApprox la = build_laplace(post, find_map(post));
  const ScalarField target = [&](const Vector& x) { return post.log_unnormalized_density(x); };
  Rng rng = make_stream(2);
  const ISResult res = snis(kIdentity, target, laplace_proposal(la), 20000, rng);
  EXPECT_EQ(res.count, 20000u);
  EXPECT_GT(res.hit_rate, 0.1);
  EXPECT_LT(res.hit_rate, 1.0);
  EXPECT_TRUE(std::isfinite(res.estimate));
}

TEST(AsymptoticVariance, MatchingProposalIsVariance) {
  const Proposal prop = standard_normal_proposal();
  Rng rng = make_stream(6);
  ScaledPosterior post(Prior::standard_gaussian(1), lapqmc::testing::quadratic_likelihood(vec({0}), Matrix::Zero(1, 1)), 1.0);
  find_map(post);
  EXPECT_NEAR(asymptotic_variance_estimate(kIdentity, post, prop, 1000000, rng), 1.0, 0.1);
}

TEST(AsymptoticVariance, LaplaceProposalInConjugateCase) {
  ScaledPosterior post = conjugate_1d(20.0);
  const LaplaceApprox la = build_laplace(post, find_map(post));
  Rng rng = make_stream(7);
  const double sigma2 = asymptotic_variance_estimate(kIdentity, post, laplace_proposal(la), 1000000, rng);
  EXPECT_NEAR(sigma2 / (1.0 / 21.0), 1.0, 0.1);
}

TEST(AsymptoticVariance, PriorProposalGrowsWithN) {
  const AlgebraicModel alg(3);
  std::vector<double> ns{10, 100, 1000}, s2;
  for (double n : ns) {
    ScaledPosterior post(alg.prior(), alg.likelihood(), n);
    find_map(post);
    Rng rng = make_stream(8, static_cast<std::uint64_t>(n));
    s2.push_back(asymptotic_variance_estimate(&AlgebraicModel::qoi, post, prior_proposal(post.prior()), 1000000, rng));
  }
  EXPECT_NEAR(fit_rate(ns, s2).slope, 0.5, 0.2);
}

TEST(VarianceAsymptotics, ScaledVarianceApproachesInverseCurvature) {
  // cubic family: H_* = Phi''(1) = 1, f(x) = x
  const ModelSetup model = cubic_model();
  ScaledPosterior post(model.prior, model.likelihood, 1e4);
  find_map(post);
  const double sd = 1e-2;
  const GridSpec grid({GridAxis{1 - 20 * sd, 1 + 20 * sd, 40001}});
  const auto dens = [&](const Vector& x) { return post.unnormalized_density(x); };
  const double z = trapezoid(dens, grid);
  const double m1 = trapezoid([&](const Vector& x) { return dens(x) * x[0]; }, grid) / z;
  const double m2 = trapezoid([&](const Vector& x) { return dens(x) * (x[0] - m1) * (x[0] - m1); }, grid) / z;
  EXPECT_NEAR(1e4 * m2, 1.0, 0.05);
}
