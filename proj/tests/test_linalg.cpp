#include "ppreg/linalg.hpp"
#include "ppreg/quadrature.hpp"
#include "ppreg/rng.hpp"
#include "ppreg/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

using namespace ppreg;

TEST(Expm, DiagonalMatchesScalarExp) {
  Mat a = Vec((Vec(3) << -2.0, 0.5, 7.0).finished()).asDiagonal();
  Mat e = expm(a);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(e(i, i), std::exp(a(i, i)), 1e-12 * std::exp(a(i, i)));
  EXPECT_NEAR(e(0, 1), 0.0, 1e-14);
}

TEST(Expm, NilpotentIsExact) {
  Mat a(2, 2);
  a << 0.0, 3.0, 0.0, 0.0;
  Mat e = expm(a);
  EXPECT_NEAR(e(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(e(0, 1), 3.0, 1e-13);
  EXPECT_NEAR(e(1, 0), 0.0, 1e-14);
}

TEST(Expm, RotationGenerator) {
  for (double t : {0.1, 2.0, 40.0}) {
    Mat a(2, 2);
    a << 0.0, -t, t, 0.0;
    Mat e = expm(a);
    EXPECT_NEAR(e(0, 0), std::cos(t), 1e-11);
    EXPECT_NEAR(e(1, 0), std::sin(t), 1e-11);
  }
}

TEST(Expm, SemigroupProperty) {
  Rng rng(3);
  Mat a(3, 3);
  for (int i = 0; i < 9; ++i) a.data()[i] = rng.normal();
  Mat e1 = expm(a), e2 = expm(2.0 * a);
  EXPECT_LT((e1 * e1 - e2).norm() / e2.norm(), 1e-12);
}

TEST(Linalg, SymSqrtSquaresBack) {
  Mat b(3, 3);
  b << 4, 1, 0.5, 1, 3, 0.2, 0.5, 0.2, 2;
  Mat r = sym_sqrt(b);
  EXPECT_LT((r * r - b).norm(), 1e-12);
  Mat ri = sym_inv_sqrt(b);
  EXPECT_LT((ri * b * ri - Mat::Identity(3, 3)).norm(), 1e-12);
}

TEST(Linalg, CheckedInverseRejectsSingular) {
  Mat s(2, 2);
  s << 1, 2, 2, 4;
  EXPECT_FALSE(is_invertible(s));
  EXPECT_THROW(checked_inverse(s), NumericalError);
  Mat g(2, 2);
  g << 2, 1, 1, 3;
  EXPECT_LT((checked_inverse(g) * g - Mat::Identity(2, 2)).norm(), 1e-14);
}

TEST(Quadrature, LegendreExactForPolynomials) {
  for (int m : {1, 2, 5, 16, 24}) {
    auto r = gauss_legendre(m);
    for (int deg = 0; deg <= 2 * m - 1; ++deg) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += r.weights[i] * std::pow(r.nodes[i], deg);
      double exact = deg % 2 ? 0.0 : 2.0 / (deg + 1);
      EXPECT_NEAR(s, exact, 1e-13) << "m=" << m << " deg=" << deg;
    }
  }
}

TEST(Quadrature, HermiteMomentsOfNormal) {
  const double c = std::sqrt(2.0 * std::numbers::pi);
  for (int m : {4, 12, 20}) {
    auto r = gauss_hermite_prob(m);
    double m0 = 0, m1 = 0, m2 = 0, m4 = 0;
    for (int i = 0; i < m; ++i) {
      double z = r.nodes[i], w = r.weights[i];
      m0 += w;
      m1 += w * z;
      m2 += w * z * z;
      m4 += w * z * z * z * z;
    }
    EXPECT_NEAR(m0 / c, 1.0, 1e-12);
    EXPECT_NEAR(m1, 0.0, 1e-12);
    EXPECT_NEAR(m2 / c, 1.0, 1e-11);
    EXPECT_NEAR(m4 / c, 3.0, 1e-10);
  }
}

TEST(Quadrature, SimpsonExactForCubics) {
  for (std::size_t count : {3u, 4u, 9u, 10u, 101u}) {
    double h = 2.0 / (count - 1);
    auto w = simpson_weights(count, h);
    double s = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      double x = i * h;
      s += w[i] * (x * x * x - x + 1.0);
    }
    EXPECT_NEAR(s, 4.0 - 2.0 + 2.0, 1e-12) << count;
  }
}

TEST(Rng, StreamsReproducibleAndDistinct) {
  Rng a(stream_seed(7, {1, 2})), b(stream_seed(7, {1, 2})), c(stream_seed(7, {2, 1}));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.uniform(), b.uniform());
  std::set<std::uint64_t> seeds;
  for (std::uint64_t k = 0; k < 1000; ++k) seeds.insert(stream_seed(1, {k}));
  EXPECT_EQ(seeds.size(), 1000u);
  EXPECT_NE(Rng(stream_seed(7, {1, 2})).uniform(), c.uniform());
}

TEST(Rng, MomentsOfDraws) {
  Rng r(11);
  const int n = 200000;
  double su = 0, se = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    su += r.uniform();
    se += r.exponential();
    double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(se / n, 1.0, 0.01);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.01);
}

TEST(Stats, KnownQuantiles) {
  EXPECT_NEAR(stats::normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(stats::chi2_quantile(1, 0.95), 3.841458820694124, 1e-10);
  EXPECT_NEAR(stats::chi2_sf(2, 2.0 * std::log(10.0)), 0.1, 1e-12);
}

TEST(Stats, WilsonInterval) {
  auto w = stats::wilson_interval(5, 10);
  EXPECT_NEAR(w.lower, 0.2365931, 1e-6);
  EXPECT_NEAR(w.upper, 0.7634069, 1e-6);
  auto z = stats::wilson_interval(0, 50);
  EXPECT_EQ(z.lower, 0.0);
  EXPECT_GT(z.upper, 0.0);
}

TEST(Stats, GoodnessOfFitDiscriminates) {
  Rng r(5);
  std::vector<double> normal, uniform, expo;
  for (int i = 0; i < 500; ++i) {
    normal.push_back(r.normal());
    uniform.push_back(4.0 * r.uniform() - 2.0);
    expo.push_back(r.exponential());
  }
  EXPECT_GT(stats::anderson_darling_normal(normal).p_value, 0.01);
  EXPECT_LT(stats::anderson_darling_normal(uniform).p_value, 0.01);
  EXPECT_GT(stats::ks_exp1(expo).p_value, 0.01);
  EXPECT_LT(stats::ks_exp1(uniform).p_value, 0.01);
}

TEST(Stats, AndersonDarlingUniformPValues) {
  // p-values under the null are roughly uniform: the 5% rejection rate stays near 5%.
  Rng r(17);
  int reject = 0;
  const int reps = 1000;
  for (int k = 0; k < reps; ++k) {
    std::vector<double> x(100);
    for (auto& v : x) v = r.normal();
    if (stats::anderson_darling_normal(x).p_value < 0.05) ++reject;
  }
  EXPECT_NEAR(reject / static_cast<double>(reps), 0.05, 0.025);
}

TEST(Stats, TwoSampleChiSquare) {
  Rng r(9);
  auto poisson = [&](double mean) {
    long k = 0;
    double t = r.exponential();
    while (t < mean) {
      ++k;
      t += r.exponential();
    }
    return k;
  };
  std::vector<long> a, b, c;
  for (int i = 0; i < 400; ++i) {
    a.push_back(poisson(20));
    b.push_back(poisson(20));
    c.push_back(poisson(26));
  }
  EXPECT_GT(stats::chi2_two_sample(a, b).p_value, 0.01);
  EXPECT_LT(stats::chi2_two_sample(a, c).p_value, 0.01);
}
