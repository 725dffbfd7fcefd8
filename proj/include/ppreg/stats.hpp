#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ppreg::stats {

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<>(), p);
}
inline double normal_cdf(double x) { return boost::math::cdf(boost::math::normal_distribution<>(), x); }

inline double chi2_quantile(double dof, double p) {
  if (p <= 0.0) return 0.0;
  return boost::math::quantile(boost::math::chi_squared_distribution<>(dof), p);
}
inline double chi2_sf(double dof, double x) {
  if (x <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<>(dof), x));
}

// Kolmogorov limiting survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_sf(double lambda) {
  if (lambda < 0.2) return 1.0;
  double s = 0.0, sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += sign * term;
    sign = -sign;
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

// One-sample KS against a continuous cdf; p-value with Stephens' small-sample correction.
template <class Cdf>
TestResult ks_test(std::vector<double> x, Cdf&& cdf) {
  if (x.empty()) throw std::invalid_argument("ks_test: empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double f = cdf(x[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  double sn = std::sqrt(n);
  return {d, kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)};
}

inline TestResult ks_exp1(std::vector<double> x) {
  return ks_test(std::move(x), [](double v) { return v <= 0.0 ? 0.0 : -std::expm1(-v); });
}

namespace detail {
// Marsaglia & Marsaglia (2004): limiting distribution of A^2 and a finite-n correction.
inline double ad_inf(double z) {
  if (z < 2.0)
    return std::exp(-1.2337141 / z) / std::sqrt(z) *
           (2.00012 + (.247105 - (.0649821 - (.0347962 - (.011672 - .00168691 * z) * z) * z) * z) * z);
  return std::exp(
      -std::exp(1.0776 - (2.30695 - (.43424 - (.082433 - (.008056 - .0003146 * z) * z) * z) * z) * z));
}
inline double ad_errfix(double n, double x) {
  if (x > .8)
    return (-130.2137 + (745.2337 - (1705.091 - (1950.646 - (1116.360 - 255.7844 * x) * x) * x) * x) * x) / n;
  double c = .01265 + .1757 / n;
  if (x < c) {
    double t = x / c;
    t = std::sqrt(t) * (1. - t) * (49 * t - 102);
    return t * (.0037 / (n * n) + .00078 / n + .00006) / n;
  }
  double t = (x - c) / (.8 - c);
  t = -.00022633 + (6.54034 - (14.6538 - (14.458 - (8.259 - 1.91864 * t) * t) * t) * t) * t;
  return t * (.04213 / n + .01365 / (n * n)) / n;
}
}  // namespace detail

// Anderson-Darling against a fully specified standard normal.
inline TestResult anderson_darling_normal(std::vector<double> x) {
  if (x.size() < 2) throw std::invalid_argument("anderson_darling_normal: need two points");
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double lo = std::clamp(normal_cdf(x[i]), 1e-300, 1.0 - 1e-16);
    double hi = std::clamp(normal_cdf(x[n - 1 - i]), 1e-300, 1.0 - 1e-16);
    s += (2.0 * i + 1.0) * (std::log(lo) + std::log1p(-hi));
  }
  double a2 = -static_cast<double>(n) - s / n;
  double cdf = a2 <= 0.0 ? 0.0 : detail::ad_inf(a2);
  cdf += detail::ad_errfix(static_cast<double>(n), cdf);
  return {a2, std::clamp(1.0 - cdf, 0.0, 1.0)};
}

// Pearson chi-square homogeneity test for two count samples, binning on pooled quantiles
// so every bin carries expected count >= min_expected.
inline TestResult chi2_two_sample(const std::vector<long>& a, const std::vector<long>& b,
                                  double min_expected = 5.0) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chi2_two_sample: empty sample");
  std::vector<long> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  // greedy bins on distinct values with pooled count >= 2*min_expected
  std::vector<long> edges;  // upper inclusive bounds
  std::size_t acc = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    ++acc;
    bool boundary = i + 1 == pooled.size() || pooled[i + 1] != pooled[i];
    if (boundary && acc >= static_cast<std::size_t>(2 * min_expected)) {
      edges.push_back(pooled[i]);
      acc = 0;
    }
  }
  if (edges.empty()) return {0.0, 1.0};
  if (acc > 0) edges.back() = pooled.back();
  auto bin = [&](long v) {
    return static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
  };
  std::size_t k = edges.size();
  std::vector<double> ca(k, 0.0), cb(k, 0.0);
  for (long v : a) ca[bin(v)] += 1.0;
  for (long v : b) cb[bin(v)] += 1.0;
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double stat = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double tot = ca[i] + cb[i];
    double ea = tot * na / (na + nb), eb = tot * nb / (na + nb);
    if (ea > 0) stat += (ca[i] - ea) * (ca[i] - ea) / ea;
    if (eb > 0) stat += (cb[i] - eb) * (cb[i] - eb) / eb;
  }
  if (k < 2) return {stat, 1.0};
  return {stat, chi2_sf(static_cast<double>(k - 1), stat)};
}

// Pearson goodness of fit of observed bin counts against expected counts.
inline TestResult chi2_gof(const std::vector<double>& observed, const std::vector<double>& expected,
                           int fitted_params = 0) {
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i)
    stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  double dof = static_cast<double>(observed.size()) - 1.0 - fitted_params;
  return {stat, dof > 0 ? chi2_sf(dof, stat) : 1.0};
}

struct Interval {
  double lower = 0.0;
  double upper = 1.0;
};

inline Interval wilson_interval(long successes, long trials, double level = 0.95) {
  if (trials <= 0) return {0.0, 1.0};
  double z = normal_quantile(0.5 + 0.5 * level);
  double n = static_cast<double>(trials), ph = successes / n;
  double den = 1.0 + z * z / n;
  double centre = (ph + z * z / (2 * n)) / den;
  double half = z * std::sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den;
  double lo = successes <= 0 ? 0.0 : std::max(0.0, centre - half);
  double hi = successes >= trials ? 1.0 : std::min(1.0, centre + half);
  return {lo, hi};
}

inline double mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / x.size();
}

inline double median(std::vector<double> x) {
  if (x.empty()) return std::nan("");
  std::size_t m = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + m, x.end());
  double hi = x[m];
  if (x.size() % 2 == 1) return hi;
  double lo = *std::max_element(x.begin(), x.begin() + m);
  return 0.5 * (lo + hi);
}

}  // namespace ppreg::stats
