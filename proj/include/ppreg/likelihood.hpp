#pragma once

#include "ppreg/model.hpp"
#include "ppreg/path.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace ppreg {

// Intensities at or below this level are treated as zero.
inline constexpr double kTinyIntensity = 1e-300;

struct LikelihoodEval {
  double value = 0.0;
  Vec gradient;
  Mat hessian;
  bool feasible = true;
};

// Kernel lag sums at every event for one value of the shape parameters eta:
// psi[j*d0+c] = sum over increments of column c strictly before event j of size * psi(t_j - s),
// plus integrals over [T0, T1] of the same sums, each with eta-derivatives.
struct ShapeSweep {
  int d0 = 0;
  int q = 0;
  int order = 0;
  std::array<double, 2> eta{0.0, 0.0};
  std::vector<double> psi, dpsi, ddpsi;
  std::vector<double> ipsi, dipsi, ddipsi;
};

class QuasiLikelihood {
 public:
  QuasiLikelihood(const ModelSpec& m, const PointPath& path) : m_(m) {
    m_.check_shapes();
    if (path.d != m_.d) throw ModelError("path dimension differs from model");
    path.check();
    ev_ = merge_events(path);
    src_ = covariate_sources(m_, path);
    if (m_.baseline.has_queue()) qt_ = build_queue_track(m_, path);
    const auto& h = m_.horizon;
    // basis values at events
    phi_off_.resize(ev_.time.size() + 1, 0);
    for (std::size_t j = 0; j < ev_.time.size(); ++j) {
      int a = ev_.comp[j];
      for (const auto& term : m_.baseline.terms[a])
        phi_.push_back(term.kind == BasisKind::Queue ? qt_.at_left(a, ev_.time[j])
                                                     : basis_value(term, m_.baseline, ev_.time[j]));
      phi_off_[j + 1] = phi_.size();
    }
    phi_int_.resize(m_.d);
    for (int a = 0; a < m_.d; ++a)
      for (const auto& term : m_.baseline.terms[a])
        phi_int_[a].push_back(term.kind == BasisKind::Queue ? qt_.integral(a, h.t0, h.t1)
                                                            : basis_integral(term, m_.baseline, h.t0, h.t1));
    events_per_comp_.assign(m_.d, 0);
    for (int a : ev_.comp) ++events_per_comp_[a];
  }

  const ModelSpec& model() const { return m_; }
  std::size_t event_count() const { return ev_.time.size(); }
  const MergedEvents& events() const { return ev_; }

  // Highest derivative order available analytically in the sweep.
  int analytic_order() const { return m_.kernel.variant == KernelVariant::PowerLawExp ? 1 : 2; }

  ShapeSweep sweep(const std::array<double, 2>& eta, int order) const {
    ShapeSweep sw;
    sw.d0 = m_.has_kernel() ? m_.d0() : 0;
    sw.q = m_.kernel.shape_dim();
    sw.order = std::min(order, analytic_order());
    sw.eta = eta;
    if (sw.d0 == 0) return sw;
    const std::size_t ne = ev_.time.size();
    const int d0 = sw.d0, q = sw.q;
    sw.psi.assign(ne * d0, 0.0);
    if (sw.order >= 1 && q > 0) sw.dpsi.assign(ne * d0 * q, 0.0);
    if (sw.order >= 2 && q > 0) sw.ddpsi.assign(ne * d0 * q * q, 0.0);
    sw.ipsi.assign(d0, 0.0);
    if (sw.order >= 1 && q > 0) sw.dipsi.assign(d0 * q, 0.0);
    if (sw.order >= 2 && q > 0) sw.ddipsi.assign(d0 * q * q, 0.0);
    const auto& h = m_.horizon;

    for (const auto& s : src_) {
      if (!(s.time < h.t1)) continue;
      double l0 = std::max(h.t0 - s.time, 0.0), l1 = h.t1 - s.time;
      auto r = shape_integral(m_.kernel, eta.data(), l0, l1, sw.order);
      sw.ipsi[s.column] += s.size * r.v;
      for (int i = 0; i < q && sw.order >= 1; ++i) sw.dipsi[s.column * q + i] += s.size * r.d[i];
      for (int i = 0; i < q && sw.order >= 2; ++i)
        for (int k = 0; k < q; ++k) sw.ddipsi[(s.column * q + i) * q + k] += s.size * r.dd[i][k];
    }

    if (m_.kernel.variant == KernelVariant::Exponential) {
      const double b = eta[0];
      std::vector<double> S(d0, 0.0), S1(d0, 0.0), S2(d0, 0.0);
      double tcur = src_.empty() ? h.t0 : std::min(h.t0, src_.front().time);
      auto advance = [&](double t) {
        double dt = t - tcur;
        if (dt == 0.0) return;
        double e = std::exp(-b * dt);
        for (int c = 0; c < d0; ++c) {
          if (sw.order >= 2) S2[c] = e * (S2[c] - 2.0 * dt * S1[c] + dt * dt * S[c]);
          if (sw.order >= 1) S1[c] = e * (S1[c] - dt * S[c]);
          S[c] = e * S[c];
        }
        tcur = t;
      };
      std::size_t k = 0;
      for (std::size_t j = 0; j < ne; ++j) {
        double t = ev_.time[j];
        while (k < src_.size() && src_[k].time < t) {
          advance(src_[k].time);
          S[src_[k].column] += src_[k].size;
          ++k;
        }
        advance(t);
        for (int c = 0; c < d0; ++c) {
          sw.psi[j * d0 + c] = S[c];
          if (sw.order >= 1) sw.dpsi[j * d0 + c] = S1[c];
          if (sw.order >= 2) sw.ddpsi[j * d0 + c] = S2[c];
        }
      }
      return sw;
    }

    for (std::size_t j = 0; j < ne; ++j) {
      double t = ev_.time[j];
      for (const auto& s : src_) {
        if (!(s.time < t)) break;
        auto r = shape_value(m_.kernel, eta.data(), t - s.time, sw.order);
        std::size_t base = j * d0 + s.column;
        sw.psi[base] += s.size * r.v;
        for (int i = 0; i < q && sw.order >= 1; ++i) sw.dpsi[base * q + i] += s.size * r.d[i];
        for (int i = 0; i < q && sw.order >= 2; ++i)
          for (int l = 0; l < q; ++l) sw.ddpsi[(base * q + i) * q + l] += s.size * r.dd[i][l];
      }
    }
    return sw;
  }

  // Combines a sweep with theta. The sweep must belong to the shape parameters of theta.
  // mask selects components (empty = all).
  LikelihoodEval evaluate_with(const ShapeSweep& sw, const Vec& th, int order,
                               const std::vector<bool>& mask = {}) const {
    const int p = m_.p(), d0 = sw.d0, q = sw.q;
    LikelihoodEval out;
    if (order >= 1) out.gradient = Vec::Zero(p);
    if (order >= 2) out.hessian = Mat::Zero(p, p);
    auto on = [&](int a) { return mask.empty() || mask[a]; };
    const auto& K = m_.kernel;
    Vec gl(p);
    double value = 0.0;
    for (std::size_t j = 0; j < ev_.time.size(); ++j) {
      int a = ev_.comp[j];
      if (!on(a)) continue;
      const auto& terms = m_.baseline.terms[a];
      const double* phi = phi_.data() + phi_off_[j];
      double lam = 0.0;
      for (std::size_t k = 0; k < terms.size(); ++k) lam += terms[k].coef(th) * phi[k];
      for (int c = 0; c < d0; ++c) lam += K.amplitude[a][c](th) * sw.psi[j * d0 + c];
      if (!(lam > kTinyIntensity)) return infeasible(p, order);
      value += std::log(lam);
      if (order < 1) continue;
      gl.setZero();
      for (std::size_t k = 0; k < terms.size(); ++k)
        if (terms[k].coef.free()) gl[terms[k].coef.param] += phi[k];
      for (int c = 0; c < d0; ++c) {
        const auto& ac = K.amplitude[a][c];
        if (ac.free()) gl[ac.param] += sw.psi[j * d0 + c];
        double av = ac(th);
        for (int r = 0; r < q; ++r)
          if (K.shape[r].free()) gl[K.shape[r].param] += av * sw.dpsi[(j * d0 + c) * q + r];
      }
      out.gradient += gl / lam;
      if (order < 2) continue;
      out.hessian.noalias() -= (gl * gl.transpose()) / (lam * lam);
      // second derivatives of lambda: amplitude x shape and shape x shape
      for (int c = 0; c < d0; ++c) {
        const auto& ac = K.amplitude[a][c];
        double av = ac(th);
        for (int r = 0; r < q; ++r) {
          if (!K.shape[r].free()) continue;
          int pr = K.shape[r].param;
          if (ac.free()) {
            double v = sw.dpsi[(j * d0 + c) * q + r] / lam;
            out.hessian(ac.param, pr) += v;
            out.hessian(pr, ac.param) += v;
          }
          for (int s = 0; s < q; ++s) {
            if (!K.shape[s].free()) continue;
            out.hessian(pr, K.shape[s].param) += av * sw.ddpsi[((j * d0 + c) * q + r) * q + s] / lam;
          }
        }
      }
    }
    // compensator part
    const double nn = static_cast<double>(m_.n);
    for (int a = 0; a < m_.d; ++a) {
      if (!on(a)) continue;
      const auto& terms = m_.baseline.terms[a];
      double comp = 0.0;
      for (std::size_t k = 0; k < terms.size(); ++k) {
        comp += terms[k].coef(th) * phi_int_[a][k];
        if (order >= 1 && terms[k].coef.free()) out.gradient[terms[k].coef.param] -= nn * phi_int_[a][k];
      }
      for (int c = 0; c < d0; ++c) {
        const auto& ac = K.amplitude[a][c];
        double av = ac(th);
        comp += av * sw.ipsi[c];
        if (order < 1) continue;
        if (ac.free()) out.gradient[ac.param] -= nn * sw.ipsi[c];
        for (int r = 0; r < q; ++r) {
          if (!K.shape[r].free()) continue;
          int pr = K.shape[r].param;
          out.gradient[pr] -= nn * av * sw.dipsi[c * q + r];
          if (order < 2) continue;
          if (ac.free()) {
            out.hessian(ac.param, pr) -= nn * sw.dipsi[c * q + r];
            out.hessian(pr, ac.param) -= nn * sw.dipsi[c * q + r];
          }
          for (int s = 0; s < q; ++s)
            if (K.shape[s].free()) out.hessian(pr, K.shape[s].param) -= nn * av * sw.ddipsi[(c * q + r) * q + s];
        }
      }
      value -= nn * comp;
    }
    out.value = value;
    if (order >= 2) out.hessian = (0.5 * (out.hessian + out.hessian.transpose())).eval();
    return out;
  }

  LikelihoodEval evaluate(const Vec& th, int order = 0, const std::vector<bool>& mask = {}) const {
    if (th.size() != m_.p()) throw ModelError("theta has wrong dimension");
    if (order >= 2 && analytic_order() < 2) return evaluate_fd_hessian(th, mask);
    return evaluate_with(sweep(m_.shape_params(th), order), th, order, mask);
  }

  double value(const Vec& th) const { return evaluate(th, 0).value; }

  // Per-component contributions; they sum to the full value.
  std::vector<double> component_values(const Vec& th) const {
    auto sw = sweep(m_.shape_params(th), 0);
    std::vector<double> out(m_.d);
    for (int a = 0; a < m_.d; ++a) {
      std::vector<bool> mask(m_.d, false);
      mask[a] = true;
      out[a] = evaluate_with(sw, th, 0, mask).value;
    }
    return out;
  }

 private:
  static LikelihoodEval infeasible(int p, int order) {
    LikelihoodEval e;
    e.value = -std::numeric_limits<double>::infinity();
    e.feasible = false;
    if (order >= 1) e.gradient = Vec::Constant(p, std::numeric_limits<double>::quiet_NaN());
    if (order >= 2) e.hessian = Mat::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
    return e;
  }

  // Analytic score, Hessian from central differences of the score.
  LikelihoodEval evaluate_fd_hessian(const Vec& th, const std::vector<bool>& mask) const {
    auto base = evaluate_with(sweep(m_.shape_params(th), 1), th, 1, mask);
    if (!base.feasible) return infeasible(m_.p(), 2);
    const int p = m_.p();
    base.hessian = Mat::Zero(p, p);
    for (int i = 0; i < p; ++i) {
      double hstep = 1e-4 * std::max(1.0, std::abs(th[i]));
      Vec tp = th, tm = th;
      tp[i] += hstep;
      tm[i] -= hstep;
      auto ep = evaluate_with(sweep(m_.shape_params(tp), 1), tp, 1, mask);
      auto em = evaluate_with(sweep(m_.shape_params(tm), 1), tm, 1, mask);
      if (!ep.feasible || !em.feasible) return infeasible(p, 2);
      base.hessian.col(i) = (ep.gradient - em.gradient) / (2.0 * hstep);
    }
    base.hessian = (0.5 * (base.hessian + base.hessian.transpose())).eval();
    return base;
  }

  ModelSpec m_;
  MergedEvents ev_;
  std::vector<Source> src_;
  QueueTrack qt_;
  std::vector<double> phi_;
  std::vector<std::size_t> phi_off_;
  std::vector<std::vector<double>> phi_int_;
  std::vector<int> events_per_comp_;
};

// ---------------------------------------------------------------- free functions

inline LikelihoodEval quasi_loglik_eval(const ModelSpec& m, const Vec& theta, const PointPath& path,
                                        int order = 0) {
  m.check_theta(theta);
  return QuasiLikelihood(m, path).evaluate(theta, order);
}

inline double quasi_loglik(const ModelSpec& m, const Vec& theta, const PointPath& path) {
  return quasi_loglik_eval(m, theta, path, 0).value;
}

inline Vec score(const ModelSpec& m, const Vec& theta, const PointPath& path) {
  auto e = quasi_loglik_eval(m, theta, path, 1);
  if (!e.feasible) throw NumericalError("score undefined: intensity vanishes at an event");
  return e.gradient;
}

inline Mat hessian(const ModelSpec& m, const Vec& theta, const PointPath& path) {
  auto e = quasi_loglik_eval(m, theta, path, 2);
  if (!e.feasible) throw NumericalError("hessian undefined: intensity vanishes at an event");
  return e.hessian;
}

// Gamma_n(theta) = -n^{-1} d^2 l_n(theta)
inline Mat observed_information(const ModelSpec& m, const Vec& theta, const PointPath& path) {
  return -hessian(m, theta, path) / static_cast<double>(m.n);
}

struct RandomFieldPoint {
  Vec u;
  double z = 1.0;
  double log_z = 0.0;
};

inline Vec local_to_theta(const ModelSpec& m, const Vec& theta_star, const Vec& u) {
  return theta_star + u / std::sqrt(static_cast<double>(m.n));
}

inline RandomFieldPoint random_field_Z(const QuasiLikelihood& ql, const Vec& theta_star, const Vec& u,
                                       double loglik_star) {
  const auto& m = ql.model();
  Vec th = local_to_theta(m, theta_star, u);
  if (!m.param_space.contains(th)) throw DomainError("u outside U_n: theta* + u/sqrt(n) leaves the box");
  RandomFieldPoint r;
  r.u = u;
  r.log_z = ql.value(th) - loglik_star;
  r.z = std::exp(r.log_z);
  return r;
}

inline RandomFieldPoint random_field_Z(const ModelSpec& m, const Vec& theta_star, const Vec& u,
                                       const PointPath& path) {
  QuasiLikelihood ql(m, path);
  return random_field_Z(ql, theta_star, u, ql.value(theta_star));
}

// Delta_n = n^{-1/2} * score(theta*)
inline Vec delta_n(const ModelSpec& m, const Vec& theta_star, const PointPath& path) {
  return score(m, theta_star, path) / std::sqrt(static_cast<double>(m.n));
}

// r_n(u) = log Z_n(u) - Delta_n[u] + Gamma[u,u]/2
inline double lamn_residual(const ModelSpec& m, const Vec& theta_star, const Vec& u,
                            const PointPath& path, const Mat& gamma) {
  QuasiLikelihood ql(m, path);
  auto e = ql.evaluate(theta_star, 1);
  if (!e.feasible) throw NumericalError("likelihood infeasible at theta*");
  auto z = random_field_Z(ql, theta_star, u, e.value);
  Vec delta = e.gradient / std::sqrt(static_cast<double>(m.n));
  return z.log_z - delta.dot(u) + 0.5 * u.dot(gamma * u);
}

// Y_n(theta) = n^{-1} (l_n(theta) - l_n(theta*))
inline double y_field(const ModelSpec& m, const PointPath& path, const Vec& theta, const Vec& theta_star) {
  QuasiLikelihood ql(m, path);
  double a = ql.value(theta), b = ql.value(theta_star);
  if (a == -std::numeric_limits<double>::infinity()) return a;
  return (a - b) / static_cast<double>(m.n);
}

}  // namespace ppreg
