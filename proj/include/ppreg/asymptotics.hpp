#pragma once

#include "ppreg/linalg.hpp"
#include "ppreg/model.hpp"
#include "ppreg/quadrature.hpp"
#include "ppreg/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace ppreg {

struct DegenerateModel : NumericalError {
  using NumericalError::NumericalError;
};

// ---------------------------------------------------------------- grid

// Grid on [T^0, T1] that contains T0: uniform on each of [T^0, T0] and [T0, T1].
struct TimeGrid {
  std::vector<double> t;
  std::size_t i0 = 0;  // index of T0
  double h_pre = 0.0;
  double h_main = 0.0;

  std::size_t size() const { return t.size(); }
  bool uniform() const { return i0 == 0 || std::abs(h_pre - h_main) <= 1e-14 * h_main; }
  double step(std::size_t i) const { return i <= i0 ? h_pre : h_main; }  // step ending at t[i]
};

inline TimeGrid make_grid(const TimeHorizon& hz, double h) {
  if (!(h > 0.0)) h = (hz.t1 - hz.t_hat0) / 4096.0;
  TimeGrid g;
  std::size_t npre = hz.t0 > hz.t_hat0 ? std::max<std::size_t>(1, std::llround((hz.t0 - hz.t_hat0) / h)) : 0;
  std::size_t nmain = std::max<std::size_t>(2, std::llround((hz.t1 - hz.t0) / h));
  g.h_pre = npre ? (hz.t0 - hz.t_hat0) / npre : 0.0;
  g.h_main = (hz.t1 - hz.t0) / nmain;
  for (std::size_t i = 0; i < npre; ++i) g.t.push_back(hz.t_hat0 + i * g.h_pre);
  g.i0 = g.t.size();
  for (std::size_t i = 0; i <= nmain; ++i) g.t.push_back(i == nmain ? hz.t1 : hz.t0 + i * g.h_main);
  if (npre == 0) g.h_pre = g.h_main;
  return g;
}

// Simpson weights for integrating grid samples over [T0, T1] (zero on the pre-sample part).
inline std::vector<double> main_weights(const TimeGrid& g) {
  std::vector<double> w(g.size(), 0.0);
  auto sw = simpson_weights(g.size() - g.i0, g.h_main);
  for (std::size_t i = 0; i < sw.size(); ++i) w[g.i0 + i] = sw[i];
  return w;
}

enum class Provenance { Analytic, Volterra, Quadrature };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Analytic: return "analytic";
    case Provenance::Volterra: return "volterra";
    default: return "quadrature";
  }
}

struct LimitIntensity {
  TimeGrid grid;
  Mat values;   // grid x d
  Mat dvalues;  // grid x (d*p), column alpha*p + i; empty when not computed
  Provenance provenance = Provenance::Volterra;
  Vec theta;

  int d() const { return static_cast<int>(values.cols()); }
  double dval(std::size_t i, int alpha, int k, int p) const { return dvalues(static_cast<long>(i), alpha * p + k); }
};

// ---------------------------------------------------------------- baseline helpers

inline void require_polynomial_baseline(const ModelSpec& m) {
  if (m.baseline.has_queue()) throw UnsupportedError("limit intensity needs a deterministic baseline");
}

inline Mat baseline_values(const ModelSpec& m, const Vec& th, const TimeGrid& g) {
  require_polynomial_baseline(m);
  Mat out = Mat::Zero(static_cast<long>(g.size()), m.d);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int a = 0; a < m.d; ++a)
      for (const auto& term : m.baseline.terms[a]) out(i, a) += term.coef(th) * basis_value(term, m.baseline, g.t[i]);
  return out;
}

// Coefficients of g(., theta) in powers of (t - origin): result[l] in R^d.
inline std::vector<Vec> baseline_poly(const ModelSpec& m, const Vec& th, double origin) {
  require_polynomial_baseline(m);
  int deg = m.baseline.degree();
  std::vector<Vec> out(deg + 1, Vec::Zero(m.d));
  for (int a = 0; a < m.d; ++a)
    for (const auto& term : m.baseline.terms[a]) {
      // (t - s)^k = ((t - origin) + (origin - s))^k
      double s = term.kind == BasisKind::Centered ? m.baseline.center : 0.0;
      double shift = origin - s, c = term.coef(th);
      int k = term.degree;
      double binom = 1.0;
      for (int l = 0; l <= k; ++l) {
        out[l][a] += c * binom * ipow(shift, k - l);
        binom = binom * (k - l) / (l + 1);
      }
    }
  return out;
}

// Solves (l+1) c_{l+1} - M c_l = ghat_l top-down; ghat in powers of (s - T^0).
inline std::vector<Vec> poly_coeffs_c(const Mat& M, const std::vector<Vec>& ghat) {
  Mat Minv = checked_inverse(M, "M");
  int p = static_cast<int>(ghat.size()) - 1;
  std::vector<Vec> c(p + 1);
  c[p] = -Minv * ghat[p];
  for (int l = p - 1; l >= 0; --l) c[l] = Minv * ((l + 1.0) * c[l + 1] - ghat[l]);
  return c;
}

namespace detail {
// int_{T^0}^{t} e^{(t-s)M} g(s) ds on the grid by exact-exponential recursion with
// Gauss-Legendre on each step.
inline Mat g_operator_quadrature(const Mat& M, const std::vector<Vec>& ghat, double origin, const TimeGrid& grid) {
  const int d = static_cast<int>(M.rows());
  auto rule = gauss_legendre(16);
  auto gval = [&](double s) {
    Vec v = Vec::Zero(d);
    double x = s - origin, pw = 1.0;
    for (const auto& c : ghat) {
      v += c * pw;
      pw *= x;
    }
    return v;
  };
  Mat out = Mat::Zero(static_cast<long>(grid.size()), d);
  Vec G = Vec::Zero(d);
  double cached_h = -1.0;
  Mat Eh;
  std::vector<Mat> En(rule.nodes.size());
  for (std::size_t i = 1; i < grid.size(); ++i) {
    double h = grid.t[i] - grid.t[i - 1];
    if (std::abs(h - cached_h) > 1e-15 * std::abs(h)) {
      cached_h = h;
      Eh = expm(h * M);
      for (std::size_t k = 0; k < rule.nodes.size(); ++k) En[k] = expm(0.5 * h * (1.0 - rule.nodes[k]) * M);
    }
    Vec inc = Vec::Zero(d);
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      double s = grid.t[i - 1] + 0.5 * h * (1.0 + rule.nodes[k]);
      inc += rule.weights[k] * (En[k] * gval(s));
    }
    G = Eh * G + 0.5 * h * inc;
    out.row(static_cast<long>(i)) = G.transpose();
  }
  return out;
}
}  // namespace detail

// G(M)_t = int_{T^0}^t e^{(t-s)M} g*(s) ds on the grid; closed form via c_l(M) when M is
// invertible, quadrature otherwise.
inline Mat g_operator(const Mat& M, const std::vector<Vec>& ghat, double origin, const TimeGrid& grid) {
  if (!is_invertible(M)) return detail::g_operator_quadrature(M, ghat, origin, grid);
  auto c = poly_coeffs_c(M, ghat);
  const int d = static_cast<int>(M.rows());
  Mat out(static_cast<long>(grid.size()), d);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double x = grid.t[i] - origin;
    Vec v = Vec::Zero(d);
    if (x == 0.0) {
      out.row(static_cast<long>(i)) = v.transpose();
      continue;
    }
    double pw = 1.0;
    for (const auto& cl : c) {
      v += pw * cl;
      pw *= x;
    }
    v -= expm(x * M) * c[0];
    out.row(static_cast<long>(i)) = v.transpose();
  }
  return out;
}

// Scalar decay version G(-bI) and its b-derivative, per component.
inline void g_operator_decay(double b, const std::vector<Vec>& ghat, double origin, const TimeGrid& grid, Mat& G,
                             Mat& dG) {
  const int d = static_cast<int>(ghat[0].size());
  const int p = static_cast<int>(ghat.size()) - 1;
  G.resize(static_cast<long>(grid.size()), d);
  dG.resize(static_cast<long>(grid.size()), d);
  double span = grid.t.back() - origin;
  if (std::abs(b) * span > 1e-2) {
    std::vector<Vec> c(p + 1), dc(p + 1);
    for (int l = p; l >= 0; --l) {
      Vec up = l < p ? Vec((l + 1.0) * c[l + 1]) : Vec::Zero(d);
      Vec dup = l < p ? Vec((l + 1.0) * dc[l + 1]) : Vec::Zero(d);
      c[l] = (ghat[l] - up) / b;
      dc[l] = -(dup + c[l]) / b;
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
      double x = grid.t[i] - origin, e = std::exp(-b * x), pw = 1.0;
      Vec v = Vec::Zero(d), dv = Vec::Zero(d);
      for (int l = 0; l <= p; ++l) {
        v += pw * c[l];
        dv += pw * dc[l];
        pw *= x;
      }
      v -= e * c[0];
      dv += x * e * c[0] - e * dc[0];
      G.row(static_cast<long>(i)) = v.transpose();
      dG.row(static_cast<long>(i)) = dv.transpose();
    }
    return;
  }
  // small b: recursion with Gauss-Legendre per step
  auto rule = gauss_legendre(16);
  Vec I = Vec::Zero(d), J = Vec::Zero(d);
  G.row(0).setZero();
  dG.row(0).setZero();
  for (std::size_t i = 1; i < grid.size(); ++i) {
    double h = grid.t[i] - grid.t[i - 1], e = std::exp(-b * h);
    Vec inc = Vec::Zero(d), dinc = Vec::Zero(d);
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      double s = grid.t[i - 1] + 0.5 * h * (1.0 + rule.nodes[k]);
      double lag = grid.t[i] - s, x = s - origin, pw = 1.0;
      Vec gv = Vec::Zero(d);
      for (const auto& cl : ghat) {
        gv += pw * cl;
        pw *= x;
      }
      double w = 0.5 * h * rule.weights[k] * std::exp(-b * lag);
      inc += w * gv;
      dinc -= w * lag * gv;
    }
    J = e * (J - h * I) + dinc;
    I = e * I + inc;
    G.row(static_cast<long>(i)) = I.transpose();
    dG.row(static_cast<long>(i)) = J.transpose();
  }
}

// ---------------------------------------------------------------- model views

struct ExpKernelView {
  Mat A;     // d x d amplitude at theta
  double b;  // decay at theta
};

inline void require_self_exciting(const ModelSpec& m) {
  if (m.covariate.variant != CovariateVariant::SelfExciting)
    throw UnsupportedError("limit intensity requires a self-exciting covariate");
}

inline ExpKernelView exp_view(const ModelSpec& m, const Vec& th) {
  ExpKernelView v;
  v.A = Mat::Zero(m.d, m.d);
  v.b = 0.0;
  if (!m.has_kernel()) return v;
  if (m.kernel.variant != KernelVariant::Exponential) throw UnsupportedError("exponential kernel required");
  for (int a = 0; a < m.d; ++a)
    for (int c = 0; c < m.d; ++c) v.A(a, c) = m.kernel.amplitude[a][c](th);
  v.b = m.kernel.shape[0](th);
  return v;
}

// ---------------------------------------------------------------- analytic at theta*

// lambda_inf(t, theta*) = g*_t + A* G(C*)_t with C* = A* - b* I.
inline LimitIntensity limit_intensity_exp_analytic(const std::vector<Vec>& ghat, const Mat& A_star, double b_star,
                                                   const TimeHorizon& hz, double h = 0.0) {
  LimitIntensity L;
  L.grid = make_grid(hz, h);
  L.provenance = Provenance::Analytic;
  const int d = static_cast<int>(A_star.rows());
  Mat C = A_star - b_star * Mat::Identity(d, d);
  Mat G = g_operator(C, ghat, hz.t_hat0, L.grid);
  L.values.resize(static_cast<long>(L.grid.size()), d);
  for (std::size_t i = 0; i < L.grid.size(); ++i) {
    double x = L.grid.t[i] - hz.t_hat0, pw = 1.0;
    Vec gv = Vec::Zero(d);
    for (const auto& c : ghat) {
      gv += pw * c;
      pw *= x;
    }
    L.values.row(static_cast<long>(i)) = (gv + A_star * G.row(static_cast<long>(i)).transpose()).transpose();
  }
  return L;
}

inline LimitIntensity limit_intensity_exp_analytic(const ModelSpec& m, const Vec& theta_star, double h = 0.0) {
  m.check_shapes();
  require_self_exciting(m);
  auto v = exp_view(m, theta_star);
  auto L = limit_intensity_exp_analytic(baseline_poly(m, theta_star, m.horizon.t_hat0), v.A, v.b, m.horizon, h);
  L.theta = theta_star;
  return L;
}

// ---------------------------------------------------------------- Volterra

struct VolterraOptions {
  double tol = 1e-10;
  int max_iter = 10000;
  bool richardson = true;  // combine steps h and h/2 to cancel the O(h^2) trapezoid error
};

namespace detail {

// Trapezoid Picard iteration for lambda = g + int K lambda on a given grid.
inline Mat volterra_grid(const ModelSpec& m, const Vec& th, const TimeGrid& grid, const VolterraOptions& opt) {
  Mat g = baseline_values(m, th, grid);
  if (!m.has_kernel()) return g;
  const int d = m.d;
  Mat A(d, d);
  for (int a = 0; a < d; ++a)
    for (int c = 0; c < d; ++c) A(a, c) = m.kernel.amplitude[a][c](th);
  auto eta = m.shape_params(th);
  const std::size_t M = grid.size();
  const bool expk = m.kernel.variant == KernelVariant::Exponential;
  std::vector<double> lagtab;
  if (!expk && grid.uniform()) {
    lagtab.resize(M);
    for (std::size_t k = 0; k < M; ++k) lagtab[k] = shape_value(m.kernel, eta.data(), k * grid.h_main, 0).v;
  }
  auto conv = [&](const Mat& lam) {
    Mat out = Mat::Zero(static_cast<long>(M), d);
    if (expk) {
      Vec T = Vec::Zero(d);
      for (std::size_t i = 1; i < M; ++i) {
        double h = grid.t[i] - grid.t[i - 1], e = std::exp(-eta[0] * h);
        T = e * T + 0.5 * h * (e * lam.row(static_cast<long>(i - 1)).transpose() + lam.row(static_cast<long>(i)).transpose());
        out.row(static_cast<long>(i)) = T.transpose();
      }
      return out;
    }
    for (std::size_t i = 1; i < M; ++i) {
      Vec acc = Vec::Zero(d);
      for (std::size_t j = 0; j <= i; ++j) {
        double wl = (j > 0 ? grid.t[j] - grid.t[j - 1] : 0.0), wr = (j < i ? grid.t[j + 1] - grid.t[j] : 0.0);
        double w = 0.5 * (wl * (j > 0) + wr);
        if (j == 0) w = 0.5 * wr;
        if (j == i) w = 0.5 * wl;
        double k = lagtab.empty() ? shape_value(m.kernel, eta.data(), grid.t[i] - grid.t[j], 0).v : lagtab[i - j];
        acc += (w * k) * lam.row(static_cast<long>(j)).transpose();
      }
      out.row(static_cast<long>(i)) = acc.transpose();
    }
    return out;
  };
  Mat lam = g;
  for (int it = 0; it < opt.max_iter; ++it) {
    Mat next = g + conv(lam) * A.transpose();
    if (!next.allFinite()) throw NumericalError("Volterra iteration diverged");
    double diff = (next - lam).cwiseAbs().maxCoeff();
    lam = std::move(next);
    if (diff <= opt.tol * std::max(1.0, lam.cwiseAbs().maxCoeff())) return lam;
  }
  throw NumericalError("Volterra iteration did not converge; kernel too large for the horizon");
}

inline TimeGrid refine(const TimeGrid& g) {
  TimeGrid r;
  r.h_pre = 0.5 * g.h_pre;
  r.h_main = 0.5 * g.h_main;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (i > 0) r.t.push_back(0.5 * (g.t[i - 1] + g.t[i]));
    if (i == g.i0) r.i0 = r.t.size();
    r.t.push_back(g.t[i]);
  }
  return r;
}

}  // namespace detail

inline LimitIntensity limit_intensity_volterra(const ModelSpec& m, const Vec& theta_star, double h = 0.0,
                                               const VolterraOptions& opt = {}) {
  m.check_shapes();
  require_self_exciting(m);
  LimitIntensity L;
  L.grid = make_grid(m.horizon, h);
  L.provenance = Provenance::Volterra;
  L.theta = theta_star;
  Mat coarse = detail::volterra_grid(m, theta_star, L.grid, opt);
  if (!opt.richardson || !m.has_kernel()) {
    L.values = coarse;
    return L;
  }
  auto fine_grid = detail::refine(L.grid);
  Mat fine = detail::volterra_grid(m, theta_star, fine_grid, opt);
  L.values.resize(coarse.rows(), coarse.cols());
  for (long i = 0; i < coarse.rows(); ++i) L.values.row(i) = (4.0 * fine.row(2 * i) - coarse.row(i)) / 3.0;
  return L;
}

// Sup-norm residual of lambda - g - int K lambda. The integral is a trapezoid rule on the
// grid and on its midpoint refinement (cubic interpolation), extrapolated. O(M^2).
inline double volterra_residual(const ModelSpec& m, const Vec& th, const LimitIntensity& L) {
  Mat g = baseline_values(m, th, L.grid);
  if (!m.has_kernel()) return (L.values - g).cwiseAbs().maxCoeff();
  auto conv_apply = [&](const TimeGrid& grid, const Mat& lam) {
    const int d = m.d;
    Mat A(d, d);
    for (int a = 0; a < d; ++a)
      for (int c = 0; c < d; ++c) A(a, c) = m.kernel.amplitude[a][c](th);
    auto eta = m.shape_params(th);
    Mat out = Mat::Zero(static_cast<long>(grid.size()), d);
    for (std::size_t i = 1; i < grid.size(); ++i) {
      Vec acc = Vec::Zero(d);
      for (std::size_t j = 0; j < i; ++j) {
        double h = grid.t[j + 1] - grid.t[j];
        double k0 = shape_value(m.kernel, eta.data(), grid.t[i] - grid.t[j], 0).v;
        double k1 = shape_value(m.kernel, eta.data(), grid.t[i] - grid.t[j + 1], 0).v;
        acc += 0.5 * h * (k0 * lam.row(static_cast<long>(j)).transpose() + k1 * lam.row(static_cast<long>(j + 1)).transpose());
      }
      out.row(static_cast<long>(i)) = (A * acc).transpose();
    }
    return out;
  };
  auto fg = detail::refine(L.grid);
  Mat lf(static_cast<long>(fg.size()), L.values.cols());
  for (long i = 0; i < L.values.rows(); ++i) {
    lf.row(2 * i) = L.values.row(i);
    if (i + 1 < L.values.rows()) {
      // cubic interpolation where neighbours exist
      long a = std::max<long>(0, i - 1), b = std::min<long>(L.values.rows() - 1, i + 2);
      if (a == i - 1 && b == i + 2)
        lf.row(2 * i + 1) = (-L.values.row(a) + 9.0 * L.values.row(i) + 9.0 * L.values.row(i + 1) - L.values.row(b)) / 16.0;
      else
        lf.row(2 * i + 1) = 0.5 * (L.values.row(i) + L.values.row(i + 1));
    }
  }
  Mat c1 = conv_apply(L.grid, L.values);
  Mat c2 = conv_apply(fg, lf);
  double worst = 0.0;
  for (long i = 0; i < L.values.rows(); ++i) {
    Vec integral = ((4.0 * c2.row(2 * i) - c1.row(i)) / 3.0).transpose();
    worst = std::max(worst, (L.values.row(i).transpose() - g.row(i).transpose() - integral).cwiseAbs().maxCoeff());
  }
  return worst;
}

// ---------------------------------------------------------------- general theta

namespace detail {
// Phi_i = int_{T^0}^{t_i} e^{-b(t_i-s)} lam*(s) ds and its b-derivative, by trapezoid.
inline void exp_convolution(const TimeGrid& grid, const Mat& lam, double b, Mat& Phi, Mat& dPhi) {
  const long M = static_cast<long>(grid.size()), d = lam.cols();
  Phi = Mat::Zero(M, d);
  dPhi = Mat::Zero(M, d);
  Vec T = Vec::Zero(d), dT = Vec::Zero(d);
  for (long i = 1; i < M; ++i) {
    double h = grid.t[i] - grid.t[i - 1], e = std::exp(-b * h);
    Vec prev = lam.row(i - 1).transpose(), cur = lam.row(i).transpose();
    // d/db of e*T + h/2 (e prev + cur)
    dT = e * dT - h * e * T - 0.5 * h * h * e * prev;
    T = e * T + 0.5 * h * (e * prev + cur);
    Phi.row(i) = T.transpose();
    dPhi.row(i) = dT.transpose();
  }
}

// Generic kernel: Phi_i(eta) and eta-derivatives by trapezoid (O(M^2)).
inline void generic_convolution(const ModelSpec& m, const std::array<double, 2>& eta, const TimeGrid& grid,
                                const Mat& lam, Mat& Phi, std::vector<Mat>& dPhi) {
  const long M = static_cast<long>(grid.size()), d = lam.cols();
  const int q = m.kernel.shape_dim();
  Phi = Mat::Zero(M, d);
  dPhi.assign(q, Mat::Zero(M, d));
  for (long i = 1; i < M; ++i)
    for (long j = 0; j <= i; ++j) {
      double w = 0.0;
      if (j > 0) w += 0.5 * (grid.t[j] - grid.t[j - 1]);
      if (j < i) w += 0.5 * (grid.t[j + 1] - grid.t[j]);
      auto r = shape_value(m.kernel, eta.data(), grid.t[i] - grid.t[j], 1);
      Phi.row(i) += (w * r.v) * lam.row(j);
      for (int k = 0; k < q; ++k) dPhi[k].row(i) += (w * r.d[k]) * lam.row(j);
    }
}
}  // namespace detail

// Evaluates lambda_inf(., theta) = g(., theta) + int K(theta) lambda_inf(., theta*) ds over
// the grid of lim_star. Exponential kernels with polynomial baselines use the closed form
// through (bI + C*)^{-1}; other models integrate against lim_star by trapezoid.
class LimitField {
 public:
  LimitField(const ModelSpec& m, const LimitIntensity& lim_star) : m_(m), star_(lim_star) {
    m_.check_shapes();
    require_self_exciting(m_);
    require_polynomial_baseline(m_);
    basis_.resize(m_.d);
    for (int a = 0; a < m_.d; ++a)
      for (const auto& term : m_.baseline.terms[a]) {
        Vec v(static_cast<long>(star_.grid.size()));
        for (std::size_t i = 0; i < star_.grid.size(); ++i) v[static_cast<long>(i)] = basis_value(term, m_.baseline, star_.grid.t[i]);
        basis_[a].push_back(v);
      }
    analytic_ = m_.kernel.variant == KernelVariant::Exponential && star_.theta.size() == m_.p();
    if (analytic_) {
      auto vs = exp_view(m_, star_.theta);
      A_star_ = vs.A;
      b_star_ = vs.b;
      C_star_ = A_star_ - b_star_ * Mat::Identity(m_.d, m_.d);
      ghat_star_ = baseline_poly(m_, star_.theta, m_.horizon.t_hat0);
      Gc_ = g_operator(C_star_, ghat_star_, m_.horizon.t_hat0, star_.grid);
    }
  }

  const TimeGrid& grid() const { return star_.grid; }
  const Mat& star_values() const { return star_.values; }

  // Force the quadrature route even when the closed form applies.
  void set_quadrature_only(bool q) { quadrature_only_ = q; }

  LimitIntensity evaluate(const Vec& th, bool derivatives) const {
    const int d = m_.d, p = m_.p();
    const long M = static_cast<long>(star_.grid.size());
    LimitIntensity out;
    out.grid = star_.grid;
    out.theta = th;
    out.values = Mat::Zero(M, d);
    if (derivatives) out.dvalues = Mat::Zero(M, d * p);
    for (int a = 0; a < d; ++a)
      for (std::size_t k = 0; k < basis_[a].size(); ++k) {
        const auto& term = m_.baseline.terms[a][k];
        out.values.col(a) += term.coef(th) * basis_[a][k];
        if (derivatives && term.coef.free()) out.dvalues.col(a * p + term.coef.param) += basis_[a][k];
      }
    if (!m_.has_kernel()) {
      out.provenance = star_.provenance;
      return out;
    }
    Mat A(d, d);
    for (int a = 0; a < d; ++a)
      for (int c = 0; c < d; ++c) A(a, c) = m_.kernel.amplitude[a][c](th);
    auto eta = m_.shape_params(th);

    Mat U, dU;  // kernel integrals per source column and their decay derivative
    std::vector<Mat> dUq;
    bool closed = false;
    if (analytic_ && !quadrature_only_) {
      double b = eta[0];
      Mat BC = b * Mat::Identity(d, d) + C_star_;
      if (is_invertible(BC)) {
        closed = true;
        Mat R = BC.fullPivLu().inverse();
        Mat Gb, dGb;
        g_operator_decay(b, ghat_star_, m_.horizon.t_hat0, star_.grid, Gb, dGb);
        // u_t = (b - b*) R Gb_t + A* R Gc_t
        U = (b - b_star_) * Gb * R.transpose() + Gc_ * (A_star_ * R).transpose();
        if (derivatives) {
          Mat R2 = R * R;
          dU = Gb * R.transpose() - (b - b_star_) * Gb * R2.transpose() + (b - b_star_) * dGb * R.transpose() -
               Gc_ * (A_star_ * R2).transpose();
        }
        out.provenance = Provenance::Analytic;
      }
    }
    if (!closed) {
      if (m_.kernel.variant == KernelVariant::Exponential) {
        Mat dPhi;
        detail::exp_convolution(star_.grid, star_.values, eta[0], U, dPhi);
        dU = dPhi;
      } else {
        detail::generic_convolution(m_, eta, star_.grid, star_.values, U, dUq);
      }
      out.provenance = Provenance::Quadrature;
    }
    out.values += U * A.transpose();
    if (!derivatives) return out;
    for (int a = 0; a < d; ++a)
      for (int c = 0; c < d; ++c) {
        const auto& ac = m_.kernel.amplitude[a][c];
        if (ac.free()) out.dvalues.col(a * p + ac.param) += U.col(c);
      }
    const int q = m_.kernel.shape_dim();
    for (int r = 0; r < q; ++r) {
      if (!m_.kernel.shape[r].free()) continue;
      int pr = m_.kernel.shape[r].param;
      const Mat& D = (m_.kernel.variant == KernelVariant::Exponential) ? dU : dUq[r];
      Mat dl = D * A.transpose();
      for (int a = 0; a < d; ++a) out.dvalues.col(a * p + pr) += dl.col(a);
    }
    return out;
  }

 private:
  ModelSpec m_;
  LimitIntensity star_;
  std::vector<std::vector<Vec>> basis_;
  bool analytic_ = false;
  bool quadrature_only_ = false;
  Mat A_star_, C_star_, Gc_;
  double b_star_ = 0.0;
  std::vector<Vec> ghat_star_;
};

inline LimitIntensity limit_intensity_theta(const ModelSpec& m, const Vec& theta, const LimitIntensity& lim_star) {
  return LimitField(m, lim_star).evaluate(theta, true);
}

// Limit intensity at theta* with derivatives, analytic when the kernel is exponential.
inline LimitIntensity limit_intensity_star(const ModelSpec& m, const Vec& theta_star, double h = 0.0) {
  bool expk = m.kernel.variant == KernelVariant::Exponential || !m.has_kernel();
  LimitIntensity base = expk ? limit_intensity_exp_analytic(m, theta_star, h) : limit_intensity_volterra(m, theta_star, h);
  auto full = limit_intensity_theta(m, theta_star, base);
  full.values = base.values;
  full.provenance = base.provenance;
  return full;
}

// ---------------------------------------------------------------- Gamma

struct GammaMatrix {
  Mat gamma;
  double min_eigenvalue = 0.0;
  Vec eigenvalues;
};

// Gamma = sum_alpha int_{T0}^{T1} (d lambda)^{x2} / lambda dt, Simpson on the grid.
inline GammaMatrix gamma_matrix(const LimitIntensity& lim, int p) {
  if (lim.dvalues.size() == 0) throw std::invalid_argument("gamma_matrix needs derivatives of the limit intensity");
  const int d = lim.d();
  auto w = main_weights(lim.grid);
  Mat G = Mat::Zero(p, p);
  for (std::size_t i = lim.grid.i0; i < lim.grid.size(); ++i) {
    for (int a = 0; a < d; ++a) {
      double lam = lim.values(static_cast<long>(i), a);
      Vec dl = lim.dvalues.row(static_cast<long>(i)).segment(a * p, p).transpose();
      if (!(lam > 0.0)) {
        if (dl.cwiseAbs().maxCoeff() == 0.0) continue;
        std::ostringstream os;
        os << "limit intensity vanishes at t=" << lim.grid.t[i] << " in component " << a;
        throw DegenerateModel(os.str());
      }
      G += (w[i] / lam) * (dl * dl.transpose());
    }
  }
  GammaMatrix r;
  r.gamma = 0.5 * (G + G.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(r.gamma, Eigen::EigenvaluesOnly);
  r.eigenvalues = es.eigenvalues();
  r.min_eigenvalue = p > 0 ? r.eigenvalues.minCoeff() : 0.0;
  return r;
}

inline GammaMatrix gamma_matrix(const ModelSpec& m, const Vec& theta_star, double h = 0.0) {
  return gamma_matrix(limit_intensity_star(m, theta_star, h), m.p());
}

// ---------------------------------------------------------------- Y and chi0

// Y(theta) = -sum_alpha int [lam - lam* - log(lam/lam*) lam*] dt over [T0, T1].
inline double y_limit(const Mat& lam, const Mat& lam_star, const TimeGrid& grid) {
  auto w = main_weights(grid);
  double s = 0.0;
  for (std::size_t i = grid.i0; i < grid.size(); ++i)
    for (long a = 0; a < lam.cols(); ++a) {
      double x = lam(static_cast<long>(i), a), y = lam_star(static_cast<long>(i), a);
      double f;
      if (y > 0.0) {
        if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
        double r = x / y;
        f = y * (r - 1.0 - std::log(r));
      } else {
        f = std::max(x, 0.0);
      }
      s += w[i] * f;
    }
  return -s;
}

struct Chi0Options {
  int points_per_axis = 41;
  int random_points = 20000;  // used when p > 3
  bool refine = true;
  std::uint64_t seed = 7;
};

struct YLimitResult {
  std::vector<Vec> thetas;
  std::vector<double> y;
  double chi0 = 0.0;
  Vec argmin;
  double grid_chi0 = 0.0;
};

inline YLimitResult y_limit_and_chi0(const ModelSpec& m, const LimitIntensity& lim_star, const Vec& theta_star,
                                     const Chi0Options& opt = {}) {
  LimitField field(m, lim_star);
  const auto& ps = m.param_space;
  const int p = m.p();
  YLimitResult res;
  auto ratio = [&](const Vec& th, double& yv) {
    yv = y_limit(field.evaluate(th, false).values, lim_star.values, lim_star.grid);
    double r2 = (th - theta_star).squaredNorm();
    return -yv / r2;
  };
  std::vector<Vec> pts;
  if (p <= 3) {
    int k = opt.points_per_axis;
    long total = 1;
    for (int i = 0; i < p; ++i) total *= k;
    for (long idx = 0; idx < total; ++idx) {
      long r = idx;
      Vec th(p);
      for (int i = 0; i < p; ++i) {
        th[i] = ps.lower[i] + (ps.upper[i] - ps.lower[i]) * (r % k) / (k - 1.0);
        r /= k;
      }
      pts.push_back(th);
    }
  } else {
    Rng rng(opt.seed);
    for (int j = 0; j < opt.random_points; ++j) {
      Vec th(p);
      for (int i = 0; i < p; ++i) th[i] = ps.lower[i] + (ps.upper[i] - ps.lower[i]) * rng.uniform();
      pts.push_back(th);
    }
  }
  double best = std::numeric_limits<double>::infinity();
  Vec arg;
  double minw = ps.width().minCoeff();
  for (const auto& th : pts) {
    double yv;
    if ((th - theta_star).norm() < 1e-12 * minw) {
      res.thetas.push_back(th);
      res.y.push_back(0.0);
      continue;
    }
    double r = ratio(th, yv);
    res.thetas.push_back(th);
    res.y.push_back(yv);
    if (r < best) {
      best = r;
      arg = th;
    }
  }
  res.grid_chi0 = best;
  if (opt.refine && arg.size() == p) {
    // compass search on the ratio, staying in the box and away from theta*
    Vec step = ps.width() / std::max(2, opt.points_per_axis - 1);
    Vec cur = arg;
    double cv = best;
    for (int round = 0; round < 40; ++round) {
      bool moved = false;
      for (int i = 0; i < p; ++i)
        for (int sgn : {-1, 1}) {
          Vec cand = cur;
          cand[i] = std::clamp(cand[i] + sgn * step[i], ps.lower[i], ps.upper[i]);
          if ((cand - theta_star).norm() < 1e-3 * minw) continue;
          double yv, r = ratio(cand, yv);
          if (r < cv) {
            cv = r;
            cur = cand;
            moved = true;
          }
        }
      if (!moved) step *= 0.5;
      if (step.maxCoeff() < 1e-9 * ps.width().maxCoeff()) break;
    }
    best = cv;
    arg = cur;
  }
  res.chi0 = best;
  res.argmin = arg;
  return res;
}

// ---------------------------------------------------------------- identifiability

struct ConditionResult {
  std::string name;
  bool pass = false;
  std::string witness;
};

struct IdentifiabilityReport {
  std::vector<ConditionResult> items;  // (i) .. (vii)
  bool all_pass() const {
    return std::all_of(items.begin(), items.end(), [](const auto& c) { return c.pass; });
  }
};

struct IdentifiabilityOptions {
  int grid_points = 512;
  double eigen_tol = 1e-8;
};

namespace detail {
inline std::string num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}
}  // namespace detail

// Range of the kernel decay over the closed box.
inline std::pair<double, double> decay_range(const ModelSpec& m) {
  const auto& c = m.kernel.shape[0];
  return {c.min_over(m.param_space), c.max_over(m.param_space)};
}

inline IdentifiabilityReport check_identifiability_M(const ModelSpec& m, const Vec& theta_star,
                                                     const IdentifiabilityOptions& opt = {}) {
  m.check_shapes();
  if (m.kernel.variant != KernelVariant::Exponential) throw UnsupportedError("condition check needs an exponential kernel");
  require_self_exciting(m);
  require_polynomial_baseline(m);
  IdentifiabilityReport rep;
  const int d = m.d;
  const auto& ps = m.param_space;
  auto v = exp_view(m, theta_star);
  Mat C = v.A - v.b * Mat::Identity(d, d);
  auto [blo, bhi] = decay_range(m);
  std::vector<double> bgrid;
  for (int k = 0; k < opt.grid_points; ++k) bgrid.push_back(opt.grid_points == 1 ? blo : blo + (bhi - blo) * k / (opt.grid_points - 1.0));

  // (i)
  {
    bool pass = blo > 0.0 || bhi < 0.0;
    rep.items.push_back({"(i) b != 0", pass, "b range [" + detail::num(blo) + ", " + detail::num(bhi) + "]"});
  }
  // (ii) C* invertible and bI + C* invertible for every b in range (exact via real eigenvalues)
  {
    double detC = C.determinant();
    bool pass = is_invertible(C);
    double worst_det = std::numeric_limits<double>::infinity(), worst_b = blo;
    Eigen::EigenSolver<Mat> es(C);
    for (long k = 0; k < es.eigenvalues().size(); ++k) {
      auto mu = es.eigenvalues()[k];
      if (std::abs(mu.imag()) <= 1e-12 * (1.0 + std::abs(mu.real())) && -mu.real() >= blo && -mu.real() <= bhi) {
        pass = false;
        worst_det = 0.0;
        worst_b = -mu.real();
      }
    }
    for (double b : bgrid) {
      Mat BC = b * Mat::Identity(d, d) + C;
      double dt = std::abs(BC.determinant());
      if (dt < worst_det) {
        worst_det = dt;
        worst_b = b;
      }
      if (!is_invertible(BC)) pass = false;
    }
    rep.items.push_back({"(ii) C* and bI + C* invertible", pass,
                         "det(C*)=" + detail::num(detC) + " min|det(bI+C*)|=" + detail::num(worst_det) +
                             " at b=" + detail::num(worst_b)});
  }
  auto ghat = baseline_poly(m, theta_star, m.horizon.t_hat0);
  // (iii) c0(-bI) != 0
  {
    bool pass = true;
    double worst = std::numeric_limits<double>::infinity(), wb = blo;
    Vec wc;
    for (double b : bgrid) {
      if (b == 0.0) {
        pass = false;
        worst = 0.0;
        wb = 0.0;
        continue;
      }
      auto c = poly_coeffs_c(-b * Mat::Identity(d, d), ghat);
      double nrm = c[0].cwiseAbs().maxCoeff();
      if (nrm < worst) {
        worst = nrm;
        wb = b;
        wc = c[0];
      }
    }
    if (!(worst > 1e-12)) pass = false;
    std::string w = "min |c0(-bI)| = " + detail::num(worst) + " at b=" + detail::num(wb);
    if (wc.size()) w += " c0=" + detail::vec_str(wc);
    rep.items.push_back({"(iii) c0(-bI) != 0", pass, w});
  }
  // (iv) c0(C*) not an eigenvector of C*
  {
    bool pass = false;
    std::string w;
    if (is_invertible(C)) {
      auto c = poly_coeffs_c(C, ghat);
      Vec c0 = c[0], Cc = C * c0;
      double n0 = c0.norm(), n1 = Cc.norm();
      double resid = 0.0;
      if (n0 > 0.0 && n1 > 0.0) {
        Vec proj = c0 * (c0.dot(Cc) / (n0 * n0));
        resid = (Cc - proj).norm() / n1;
      }
      pass = resid > opt.eigen_tol;
      w = "normalized cross term " + detail::num(resid) + " c0(C*)=" + detail::vec_str(c0);
    } else {
      w = "C* singular";
    }
    rep.items.push_back({"(iv) c0(C*) not an eigenvector of C*", pass, w});
  }
  // baseline parameters
  std::vector<int> gparams;
  for (int a = 0; a < d; ++a)
    for (const auto& t : m.baseline.terms[a])
      if (t.coef.free() && std::find(gparams.begin(), gparams.end(), t.coef.param) == gparams.end())
        gparams.push_back(t.coef.param);
  std::sort(gparams.begin(), gparams.end());
  // (v) coefficient map injective: Jacobian of polynomial coefficients w.r.t. gamma has full rank
  {
    int deg = m.baseline.degree();
    Mat J = Mat::Zero(d * (deg + 1), static_cast<long>(gparams.size()));
    for (std::size_t j = 0; j < gparams.size(); ++j) {
      Vec e = Vec::Zero(m.p());
      e[gparams[j]] = 1.0;
      Vec z = Vec::Zero(m.p());
      auto hi = baseline_poly(m, e, 0.0), lo = baseline_poly(m, z, 0.0);
      // constants cancel in the difference since the map is affine
      for (int l = 0; l <= deg; ++l) J.block(l * d, static_cast<long>(j), d, 1) = hi[l] - lo[l];
    }
    Eigen::FullPivLU<Mat> lu(J);
    long rank = gparams.empty() ? 0 : lu.rank();
    bool pass = rank == static_cast<long>(gparams.size());
    rep.items.push_back({"(v) polynomial baseline identifiable", pass,
                         "rank " + std::to_string(rank) + " of " + std::to_string(gparams.size())});
  }
  // (vi) inf g > 0 over I x box
  {
    double worst = std::numeric_limits<double>::infinity();
    std::string w;
    for (int a = 0; a < d; ++a)
      for (int k = 0; k < opt.grid_points; ++k) {
        double t = m.horizon.t0 + m.horizon.length() * k / (opt.grid_points - 1.0);
        std::vector<std::pair<CoefRef, double>> terms;
        for (const auto& term : m.baseline.terms[a]) terms.push_back({term.coef, basis_value(term, m.baseline, t)});
        Vec arg;
        double val = detail::affine_min(terms, ps, arg);
        if (val < worst) {
          worst = val;
          w = "inf g = " + detail::num(val) + " at t=" + detail::num(t) + " component " + std::to_string(a) +
              " theta=" + detail::vec_str(arg);
        }
      }
    rep.items.push_back({"(vi) inf g > 0", worst > 0.0, w});
  }
  // (vii) sum_alpha (d_gamma g^alpha)^{x2} positive definite at some t; when the pointwise
  // rank cannot reach dim(gamma) the integrated Gram matrix over I is reported instead.
  {
    const long q = static_cast<long>(gparams.size());
    auto grad_at = [&](double t) {
      Mat G = Mat::Zero(q, q);
      for (int a = 0; a < d; ++a) {
        Vec gr = Vec::Zero(q);
        for (const auto& term : m.baseline.terms[a])
          if (term.coef.free()) {
            long j = std::find(gparams.begin(), gparams.end(), term.coef.param) - gparams.begin();
            gr[j] += basis_value(term, m.baseline, t);
          }
        G += gr * gr.transpose();
      }
      return G;
    };
    bool pointwise = false;
    double best_pt = -1.0, best_t = m.horizon.t0;
    Mat integ = Mat::Zero(q, q);
    for (int k = 0; k < opt.grid_points; ++k) {
      double t = m.horizon.t0 + m.horizon.length() * k / (opt.grid_points - 1.0);
      Mat G = grad_at(t);
      integ += G * (m.horizon.length() / opt.grid_points);
      double ev = q ? min_eigenvalue(G) : 0.0;
      if (ev > best_pt) {
        best_pt = ev;
        best_t = t;
      }
      if (q && ev > 1e-12 * std::max(1.0, G.norm())) pointwise = true;
    }
    double ev_int = q ? min_eigenvalue(integ) : 0.0;
    bool integrated = q > 0 && ev_int > 1e-12 * std::max(1.0, integ.norm());
    std::string w = "pointwise min eigenvalue " + detail::num(best_pt) + " at t=" + detail::num(best_t) +
                    "; integrated min eigenvalue " + detail::num(ev_int);
    if (!pointwise && integrated) w += " (pointwise rank limited by d; integrated Gram used)";
    rep.items.push_back({"(vii) gradient Gram positive definite", pointwise || integrated, w});
  }
  return rep;
}

}  // namespace ppreg
