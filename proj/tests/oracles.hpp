#pragma once

// Test models and independent reference computations.

#include "ppreg/ppreg.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using ppreg::CoefRef;
using ppreg::Mat;
using ppreg::ModelSpec;
using ppreg::Vec;

inline ppreg::ParamSpace box(std::initializer_list<double> lo, std::initializer_list<double> hi) {
  ppreg::ParamSpace ps;
  ps.lower = Eigen::Map<const Vec>(lo.begin(), static_cast<long>(lo.size()));
  ps.upper = Eigen::Map<const Vec>(hi.begin(), static_cast<long>(hi.size()));
  return ps;
}

// Homogeneous Poisson: lambda = mu on [0, T].
inline ModelSpec poisson(double t1 = 1.0, long long n = 100, double lo = 0.1, double hi = 5.0) {
  ModelSpec m;
  m.d = 1;
  m.horizon = {0.0, 0.0, t1};
  m.n = n;
  m.baseline = ppreg::BaselineSpec::constant({CoefRef::theta(0)});
  m.param_space = box({lo}, {hi});
  m.param_names = {"mu"};
  return m;
}

// 1D Hawkes: lambda = g + A int e^{-b(t-s)} dN_s / n, theta = (g, A, b) on [0, T].
inline ModelSpec hawkes1d(double t1 = 5.0, long long n = 100) {
  ModelSpec m;
  m.d = 1;
  m.horizon = {0.0, 0.0, t1};
  m.n = n;
  m.baseline = ppreg::BaselineSpec::constant({CoefRef::theta(0)});
  m.kernel = ppreg::KernelSpec::exponential({{CoefRef::theta(1)}}, CoefRef::theta(2));
  m.param_space = box({0.25, 0.1, 0.5}, {4.0, 3.0, 8.0});
  m.param_names = {"g", "A", "b"};
  return m;
}
inline Vec hawkes1d_truth() { return Vec((Vec(3) << 1.0, 1.0, 2.0).finished()); }

// 2D Hawkes with the centered quadratic baseline: theta = (gamma1(2), gamma2(2), A(4), b).
inline ModelSpec hawkes2d_quadratic(double t1 = 2.0, long long n = 100) {
  ModelSpec m;
  m.d = 2;
  m.horizon = {0.0, 0.0, t1};
  m.n = n;
  m.baseline = ppreg::BaselineSpec::centered_quadratic({CoefRef::theta(0), CoefRef::theta(1)},
                                                       {CoefRef::theta(2), CoefRef::theta(3)}, 0.5 * t1);
  m.kernel = ppreg::KernelSpec::exponential({{CoefRef::theta(4), CoefRef::theta(5)}, {CoefRef::theta(6), CoefRef::theta(7)}},
                                            CoefRef::theta(8));
  m.param_space = box({0.05, 0.05, 0.2, 0.2, 0.0, 0.0, 0.0, 0.0, 0.5}, {3.0, 3.0, 3.0, 3.0, 2.0, 2.0, 2.0, 2.0, 5.0});
  return m;
}
inline Vec hawkes2d_truth() {
  return Vec((Vec(9) << 0.5, 0.8, 1.0, 1.2, 0.6, 0.2, 0.3, 0.5, 2.0).finished());
}

// Direct O(N^2) quasi log-likelihood by definition; the integral by adaptive Gauss-Kronrod
// between consecutive source times.
inline double loglik_direct(const ModelSpec& m, const Vec& th, const ppreg::PointPath& path) {
  double s = 0.0;
  for (int a = 0; a < m.d; ++a)
    for (double t : path.events[a]) {
      double lam = ppreg::intensity_at(m, th, t, path)[a];
      if (!(lam > 0.0)) return -INFINITY;
      s += std::log(lam);
    }
  // compensator between breakpoints where the integrand is smooth
  std::vector<double> cuts{m.horizon.t0, m.horizon.t1};
  for (int a = 0; a < m.d; ++a)
    for (double t : path.events[a]) cuts.push_back(t);
  std::sort(cuts.begin(), cuts.end());
  auto rule = ppreg::gauss_legendre(24);
  double comp = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    double lo = cuts[k], hi = cuts[k + 1];
    if (!(hi > lo)) continue;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      double t = lo + 0.5 * (hi - lo) * (1.0 + rule.nodes[q]);
      comp += 0.5 * (hi - lo) * rule.weights[q] * ppreg::intensity_at(m, th, t, path).sum();
    }
  }
  return s - static_cast<double>(m.n) * comp;
}

// Five-point central differences: truncation O(h^4) lets h stay large against rounding.
inline Vec fd5_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double rel = 1e-3) {
  Vec g(x.size());
  for (long i = 0; i < x.size(); ++i) {
    double h = rel * std::max(1.0, std::abs(x[i]));
    auto at = [&](double s) {
      Vec y = x;
      y[i] += s * h;
      return f(y);
    };
    g[i] = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
  }
  return g;
}

inline Mat fd5_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double rel = 1e-3) {
  Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (long i = 0; i < x.size(); ++i) {
    double h = rel * std::max(1.0, std::abs(x[i]));
    auto at = [&](double s) {
      Vec y = x;
      y[i] += s * h;
      return f(y);
    };
    J.col(i) = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
  }
  return J;
}

inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double rel = 1e-5) {
  Vec g(x.size());
  for (long i = 0; i < x.size(); ++i) {
    double h = rel * std::max(1.0, std::abs(x[i]));
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double rel = 1e-5) {
  Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (long i = 0; i < x.size(); ++i) {
    double h = rel * std::max(1.0, std::abs(x[i]));
    Vec a = x, b = x;
    a[i] += h;
    b[i] -= h;
    J.col(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return J;
}

// A random model with a simulated path and an interior evaluation point. Mixes d in {1, 2},
// constant / linear / centered quadratic baselines, exponential / power-law / tabulated /
// zero kernels and an optional pre-sample history.
struct Triple {
  ModelSpec model;
  Vec theta_star;
  Vec theta;
  ppreg::PointPath path;
};

inline Triple random_triple(std::uint64_t seed) {
  ppreg::Rng rng(seed);
  auto unif = [&](double a, double b) { return a + (b - a) * rng.uniform(); };
  Triple t;
  ModelSpec& m = t.model;
  m.d = 1 + static_cast<int>(rng.index(2));
  const int d = m.d;
  const int kernel = static_cast<int>(rng.index(4));
  const int base = static_cast<int>(rng.index(3));
  double t1 = unif(1.0, 3.0);
  m.horizon = {rng.uniform() < 0.3 ? -0.5 : 0.0, 0.0, t1};
  m.n = 20 + static_cast<long long>(rng.index(60));
  std::vector<double> lo, hi;
  auto param = [&](double a, double b) {
    lo.push_back(a);
    hi.push_back(b);
    return CoefRef::theta(static_cast<int>(lo.size()) - 1);
  };
  if (base == 0) {
    std::vector<CoefRef> mu;
    for (int a = 0; a < d; ++a) mu.push_back(param(0.5, 2.0));
    m.baseline = ppreg::BaselineSpec::constant(mu);
  } else if (base == 1) {
    std::vector<std::vector<CoefRef>> c(2);
    for (int a = 0; a < d; ++a) c[0].push_back(param(0.5, 2.0));
    for (int a = 0; a < d; ++a) c[1].push_back(param(0.0, 0.5));
    m.baseline = ppreg::BaselineSpec::polynomial(c);
  } else {
    std::vector<CoefRef> g1, g2;
    for (int a = 0; a < d; ++a) g1.push_back(param(0.05, 0.5));
    for (int a = 0; a < d; ++a) g2.push_back(param(0.5, 2.0));
    m.baseline = ppreg::BaselineSpec::centered_quadratic(g1, g2, 0.5 * t1);
  }
  if (kernel != 3) {
    std::vector<std::vector<CoefRef>> amp(d);
    for (int a = 0; a < d; ++a)
      for (int c = 0; c < d; ++c) amp[a].push_back(param(0.05, 0.6 / d));
    if (kernel == 0) {
      m.kernel = ppreg::KernelSpec::exponential(amp, param(1.0, 4.0));
    } else if (kernel == 1) {
      auto decay = param(1.0, 4.0);
      m.kernel = ppreg::KernelSpec::power_law_exp(amp, decay, param(0.2, 1.0));
    } else {
      m.kernel = ppreg::KernelSpec::tabulated(
          amp, ppreg::TabulatedShape::from_callable([](double x) { return std::exp(-2.0 * x); }, 0.01, 5.0));
    }
  }
  m.param_space.lower = Eigen::Map<Vec>(lo.data(), static_cast<long>(lo.size()));
  m.param_space.upper = Eigen::Map<Vec>(hi.data(), static_cast<long>(hi.size()));
  const long p = m.p();
  t.theta_star.resize(p);
  t.theta.resize(p);
  for (long i = 0; i < p; ++i) {
    double w = hi[i] - lo[i];
    t.theta_star[i] = unif(lo[i] + 0.1 * w, hi[i] - 0.1 * w);
    t.theta[i] = unif(lo[i] + 0.1 * w, hi[i] - 0.1 * w);
  }
  ppreg::SimOptions so;
  so.seed = ppreg::stream_seed(seed, {1});
  t.path = ppreg::simulate(m, t.theta_star, so);
  return t;
}

// Flat-prior posterior mean for Poisson counts N on [lo, hi]: truncated Gamma(N+1, nT).
inline double poisson_posterior_mean(long long count, double nT, double lo, double hi) {
  using boost::math::gamma_p;
  double a = static_cast<double>(count) + 1.0;
  double num = gamma_p(a + 1.0, hi * nT) - gamma_p(a + 1.0, lo * nT);
  double den = gamma_p(a, hi * nT) - gamma_p(a, lo * nT);
  return a / nT * num / den;
}

// Closed-form limit intensity for 1D exponential Hawkes with constant g from T^0 = 0:
// lambda' = (A - b) lambda + b g.
inline double hawkes1d_limit(double g, double A, double b, double x) {
  double c = A - b;
  if (c == 0.0) return g * (1.0 + b * x);
  return g + A * g * std::expm1(c * x) / c;
}

}  // namespace oracle
