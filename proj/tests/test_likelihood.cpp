#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace ppreg;

namespace {

double rel_gap(const Vec& a, const Vec& ref) {
  return (a - ref).cwiseAbs().maxCoeff() / std::max(1.0, ref.cwiseAbs().maxCoeff());
}
double rel_gap(const Mat& a, const Mat& ref) {
  return (a - ref).cwiseAbs().maxCoeff() / std::max(1.0, ref.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(Likelihood, PoissonClosedForm) {
  auto m = oracle::poisson(2.0, 50);
  SimOptions so;
  so.seed = 1;
  auto p = simulate(m, Vec::Constant(1, 1.3), so);
  double N = static_cast<double>(p.total_events());
  for (double mu : {0.2, 1.0, 3.7}) {
    double ref = N * std::log(mu) - 50.0 * mu * 2.0;
    EXPECT_NEAR(quasi_loglik(m, Vec::Constant(1, mu), p), ref, 1e-9 * std::abs(ref));
    EXPECT_NEAR(score(m, Vec::Constant(1, mu), p)[0], N / mu - 100.0, 1e-9 * N / mu);
    EXPECT_NEAR(hessian(m, Vec::Constant(1, mu), p)(0, 0), -N / (mu * mu), 1e-9 * N / (mu * mu));
  }
}

TEST(Likelihood, MatchesDirectDefinition) {
  for (std::uint64_t s = 0; s < 12; ++s) {
    auto t = oracle::random_triple(1000 + s);
    double fast = quasi_loglik(t.model, t.theta, t.path);
    double direct = oracle::loglik_direct(t.model, t.theta, t.path);
    EXPECT_NEAR(fast, direct, 1e-8 * std::max(1.0, std::abs(direct))) << "seed " << s;
  }
}

TEST(Likelihood, ScoreMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto t = oracle::random_triple(2000 + s);
    QuasiLikelihood ql(t.model, t.path);
    auto e = ql.evaluate(t.theta, 1);
    Vec fd = oracle::fd5_gradient([&](const Vec& x) { return ql.value(x); }, t.theta);
    EXPECT_LT(rel_gap(e.gradient, fd), 1e-5) << "seed " << s;
  }
}

TEST(Likelihood, HessianMatchesFiniteDifferencesOfScore) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto t = oracle::random_triple(3000 + s);
    QuasiLikelihood ql(t.model, t.path);
    auto e = ql.evaluate(t.theta, 2);
    Mat fd = oracle::fd5_jacobian([&](const Vec& x) { return ql.evaluate(x, 1).gradient; }, t.theta);
    EXPECT_LT(rel_gap(e.hessian, fd), 1e-4) << "seed " << s;
    EXPECT_LT((e.hessian - e.hessian.transpose()).norm(), 1e-10 * std::max(1.0, e.hessian.norm()));
  }
}

TEST(Likelihood, ComponentValuesSumToTotal) {
  auto m = oracle::hawkes2d_quadratic(2.0, 40);
  SimOptions so;
  so.seed = 4;
  auto p = simulate(m, oracle::hawkes2d_truth(), so);
  QuasiLikelihood ql(m, p);
  auto parts = ql.component_values(oracle::hawkes2d_truth());
  EXPECT_NEAR(parts[0] + parts[1], ql.value(oracle::hawkes2d_truth()), 1e-9 * std::abs(parts[0]));
}

TEST(Likelihood, VanishingIntensityIsMinusInfinity) {
  ModelSpec m = oracle::poisson(1.0, 10, 0.0, 2.0);
  PointPath p(m.horizon, 10, 1);
  p.events[0] = {0.5};
  EXPECT_EQ(quasi_loglik(m, Vec::Constant(1, 0.0), p), -std::numeric_limits<double>::infinity());
  EXPECT_THROW(score(m, Vec::Constant(1, 0.0), p), NumericalError);
}

TEST(Likelihood, EmptyPathIsMinusCompensator) {
  auto m = oracle::hawkes1d(2.0, 10);
  PointPath p(m.horizon, 10, 1);
  Vec th = oracle::hawkes1d_truth();
  EXPECT_NEAR(quasi_loglik(m, th, p), -10.0 * 1.0 * 2.0, 1e-12);
}

TEST(Likelihood, RejectsThetaOutsideBox) {
  auto m = oracle::hawkes1d(2.0, 10);
  PointPath p(m.horizon, 10, 1);
  EXPECT_THROW(quasi_loglik(m, Vec::Constant(3, 50.0), p), DomainError);
}

TEST(RandomField, ZAtZeroIsOneAndDeltaIsScaledScore) {
  auto m = oracle::hawkes1d(5.0, 100);
  SimOptions so;
  so.seed = 3;
  Vec th = oracle::hawkes1d_truth();
  auto p = simulate(m, th, so);
  auto z = random_field_Z(m, th, Vec::Zero(3), p);
  EXPECT_DOUBLE_EQ(z.z, 1.0);
  Vec d = delta_n(m, th, p);
  EXPECT_LT((d - score(m, th, p) / 10.0).norm(), 1e-12 * d.norm());
  Vec u = (Vec(3) << 0.3, -0.2, 0.5).finished();
  auto zu = random_field_Z(m, th, u, p);
  EXPECT_NEAR(zu.log_z, quasi_loglik(m, th + u / 10.0, p) - quasi_loglik(m, th, p), 1e-9);
  EXPECT_THROW(random_field_Z(m, th, Vec::Constant(3, 1e3), p), DomainError);
}

TEST(RandomField, LamnResidualIsSmallNearZero) {
  // log Z(u) - Delta[u] + Gamma_n[u,u]/2 is third order in u/sqrt(n) with the observed information.
  auto m = oracle::hawkes1d(5.0, 400);
  SimOptions so;
  so.seed = 8;
  Vec th = oracle::hawkes1d_truth();
  auto p = simulate(m, th, so);
  Mat gn = observed_information(m, th, p);
  Vec u = (Vec(3) << 0.2, 0.1, -0.3).finished();
  double r1 = std::abs(lamn_residual(m, th, u, p, gn));
  double r2 = std::abs(lamn_residual(m, th, 2.0 * u, p, gn));
  EXPECT_LT(r1, 1e-2);
  EXPECT_NEAR(r2 / r1, 8.0, 2.0);
}

TEST(RandomField, YFieldNonpositiveNearTruthForLargeN) {
  auto m = oracle::hawkes1d(5.0, 2000);
  SimOptions so;
  so.seed = 9;
  Vec th = oracle::hawkes1d_truth();
  auto p = simulate(m, th, so);
  Vec far = (Vec(3) << 2.0, 0.3, 5.0).finished();
  EXPECT_LT(y_field(m, p, far, th), 0.0);
}
