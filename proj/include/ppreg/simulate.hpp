#pragma once

#include "ppreg/model.hpp"
#include "ppreg/path.hpp"
#include "ppreg/rng.hpp"
#include "ppreg/stats.hpp"

#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace ppreg {

enum class SimMethod { Thinning, ExpExact };

struct SimOptions {
  std::uint64_t seed = 0;
  SimMethod method = SimMethod::Thinning;
  double majorant_refresh = 0.0;  // 0 selects (T1 - T^0)/64
};

// Thrown when the thinning envelope is exceeded; indicates a bug, never a user error.
struct EnvelopeViolation : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {

// Running state of the covariate integral used by both samplers.
class Excitation {
 public:
  Excitation(const ModelSpec& m, const Vec& th) : m_(m), d0_(m.has_kernel() ? m.d0() : 0) {
    eta_ = m.shape_params(th);
    amp_ = Mat::Zero(m.d, d0_);
    for (int a = 0; a < m.d; ++a)
      for (int c = 0; c < d0_; ++c) amp_(a, c) = m.kernel.amplitude[a][c](th);
    exp_ = m.kernel.variant == KernelVariant::Exponential;
    S_.assign(d0_, 0.0);
    tS_ = m.horizon.t_hat0;
  }

  bool exponential() const { return exp_; }
  double decay() const { return eta_[0]; }
  const Mat& amplitude() const { return amp_; }

  void add(const Source& s) {
    if (d0_ == 0) return;
    if (exp_) {
      decay_to(s.time);
      S_[s.column] += s.size;
    } else {
      src_.push_back(s);
    }
  }

  // Kernel contribution per component at t (sources strictly before t; t >= last source).
  Vec at(double t) {
    Vec out = Vec::Zero(m_.d);
    if (d0_ == 0) return out;
    if (exp_) {
      double e = std::exp(-eta_[0] * (t - tS_));
      for (int c = 0; c < d0_; ++c) out += amp_.col(c) * (S_[c] * e);
      return out;
    }
    for (const auto& s : src_) {
      if (!(s.time < t)) continue;
      double psi = shape_value(m_.kernel, eta_.data(), t - s.time, 0).v;
      out += amp_.col(s.column) * (psi * s.size);
    }
    return out;
  }

  // Upper bound of the total kernel contribution over (t0, t1].
  double sup_total(double t0, double t1) {
    if (d0_ == 0) return 0.0;
    Vec colsum = amp_.cwiseMax(0.0).colwise().sum().transpose();
    double s = 0.0;
    if (exp_) {
      double lag0 = t0 - tS_, lag1 = t1 - tS_;
      double f = shape_sup(m_.kernel, eta_.data(), lag0, lag1);
      for (int c = 0; c < d0_; ++c) s += colsum[c] * S_[c] * f;
      return s;
    }
    for (const auto& src : src_) {
      double l0 = std::max(t0 - src.time, 0.0), l1 = t1 - src.time;
      s += colsum[src.column] * src.size * shape_sup(m_.kernel, eta_.data(), l0, l1);
    }
    return s;
  }

  // exponential state decayed to t: S_c(t)
  std::vector<double> state_at(double t) const {
    std::vector<double> out(S_);
    double e = std::exp(-eta_[0] * (t - tS_));
    for (auto& v : out) v *= e;
    return out;
  }

 private:
  void decay_to(double t) {
    if (t == tS_) return;
    double e = std::exp(-eta_[0] * (t - tS_));
    for (auto& v : S_) v *= e;
    tS_ = t;
  }

  const ModelSpec& m_;
  int d0_;
  std::array<double, 2> eta_{};
  Mat amp_;
  bool exp_ = false;
  std::vector<double> S_;
  double tS_ = 0.0;
  std::vector<Source> src_;
};

struct BaselineTracker {
  const ModelSpec& m;
  const Vec& th;
  BookState book;
  bool queue = false;

  BaselineTracker(const ModelSpec& model, const Vec& theta) : m(model), th(theta) {
    queue = m.baseline.has_queue();
    if (queue) book = m.baseline.book->initial;
  }
  double queue_level(int a) const {
    const auto& e = m.baseline.book->event_map[a];
    return static_cast<double>(std::max(0LL, book.queue(e.side, e.level))) / static_cast<double>(book.q);
  }
  double value(int a, double t) const {
    double s = 0.0;
    for (const auto& term : m.baseline.terms[a])
      s += term.coef(th) * (term.kind == BasisKind::Queue ? queue_level(a) : basis_value(term, m.baseline, t));
    return s;
  }
  double sup(int a, double t0, double t1) const {
    double s = 0.0;
    for (const auto& term : m.baseline.terms[a]) {
      double c = term.coef(th);
      s += term.kind == BasisKind::Queue ? c * queue_level(a) : basis_sup(term, m.baseline, c, t0, t1);
    }
    return s;
  }
  double integral(int a, double t0, double t1) const {
    double s = 0.0;
    for (const auto& term : m.baseline.terms[a])
      s += term.coef(th) *
           (term.kind == BasisKind::Queue ? queue_level(a) * (t1 - t0) : basis_integral(term, m.baseline, t0, t1));
    return s;
  }
  void on_event(int a, double t) {
    if (queue && t > m.horizon.t0) apply_book_event(book, m.baseline.book->event_map[a]);
  }
};

inline void record_event(PointPath& path, int a, double t) {
  (t <= path.horizon.t0 ? path.history[a] : path.events[a]).push_back(t);
}

}  // namespace detail

// Simulates N on (T^0, T1]; events at or before T0 form the pre-sample history.
inline PointPath simulate(const ModelSpec& m, const Vec& theta_star, const SimOptions& opts) {
  m.check_shapes();
  m.check_theta(theta_star);
  const auto& h = m.horizon;
  double refresh = opts.majorant_refresh > 0.0 ? opts.majorant_refresh : (h.t1 - h.t_hat0) / 64.0;
  if (!(refresh > 0.0)) throw ModelError("majorant_refresh must be positive");
  Rng rng(opts.seed);
  PointPath path(h, m.n, m.d);
  if (m.covariate.variant != CovariateVariant::SelfExciting) {
    if (!m.covariate.external) throw ModelError("external covariate path missing for simulation");
    path.external = *m.covariate.external;
  }
  const double nn = static_cast<double>(m.n);
  const double w = 1.0 / nn;
  detail::Excitation ex(m, theta_star);
  detail::BaselineTracker base(m, theta_star);

  // external increments in time order
  std::vector<Source> ext;
  if (m.covariate.variant != CovariateVariant::SelfExciting) {
    PointPath tmp(h, m.n, m.d);
    tmp.external = path.external;
    ModelSpec only_ext = m;
    only_ext.covariate.variant = CovariateVariant::ExternalPath;
    for (auto s : covariate_sources(only_ext, tmp)) {
      s.column = m.covariate.external_column(m.d, s.column);
      ext.push_back(s);
    }
  }
  std::size_t next_ext = 0;
  auto absorb_external = [&](double t) {
    while (next_ext < ext.size() && ext[next_ext].time <= t) ex.add(ext[next_ext++]);
  };

  double t = h.t_hat0;
  absorb_external(t);

  if (opts.method == SimMethod::ExpExact) {
    if (m.kernel.variant != KernelVariant::Exponential && m.kernel.variant != KernelVariant::Zero)
      throw UnsupportedError("exp_exact requires an exponential kernel");
    if (m.covariate.variant != CovariateVariant::SelfExciting)
      throw UnsupportedError("exp_exact requires a self-exciting covariate");
    if (m.baseline.has_queue()) throw UnsupportedError("exp_exact does not support queue baselines");
    const double b = m.has_kernel() ? ex.decay() : 0.0;
    for (;;) {
      double best = std::numeric_limits<double>::infinity();
      int who = -1;
      std::vector<double> S = m.has_kernel() ? ex.state_at(t) : std::vector<double>{};
      for (int a = 0; a < m.d; ++a) {
        // kernel-driven arrival: intensity n D e^{-b u}
        double D = 0.0;
        for (std::size_t c = 0; c < S.size(); ++c) D += ex.amplitude()(a, c) * S[c];
        double uk = rng.uniform();
        if (D > 0.0) {
          double cand;
          if (b > 0.0) {
            double arg = 1.0 + b * std::log(uk) / (nn * D);
            cand = arg > 0.0 ? -std::log(arg) / b : std::numeric_limits<double>::infinity();
          } else {
            cand = -std::log(uk) / (nn * D);
          }
          if (t + cand < best) {
            best = t + cand;
            who = a;
          }
        }
        // baseline-driven arrival: invert n * int_t^s g = E
        double e = -std::log(rng.uniform());
        double total = nn * base.integral(a, t, h.t1);
        if (total >= e) {
          auto f = [&](double s) { return nn * base.integral(a, t, s) - e; };
          std::uintmax_t iters = 200;
          auto tol = boost::math::tools::eps_tolerance<double>(52);
          double lo = t, hi = h.t1;
          double s;
          if (f(hi) == 0.0) {
            s = hi;
          } else {
            auto r = boost::math::tools::toms748_solve(f, lo, hi, f(lo), f(hi), tol, iters);
            s = 0.5 * (r.first + r.second);
          }
          if (s < best) {
            best = s;
            who = a;
          }
        }
      }
      if (who < 0 || best > h.t1) break;
      if (!(best > t)) best = std::nextafter(t, h.t1);
      t = best;
      detail::record_event(path, who, t);
      ex.add({t, who, w});
    }
    path.check();
    return path;
  }

  while (t < h.t1) {
    double wend = std::min(t + refresh, h.t1);
    if (next_ext < ext.size()) wend = std::min(wend, ext[next_ext].time);
    double bound = ex.sup_total(t, wend);
    for (int a = 0; a < m.d; ++a) bound += std::max(0.0, base.sup(a, t, wend));
    if (!(bound > 0.0)) {
      t = wend;
      absorb_external(t);
      continue;
    }
    double tau = t + rng.exponential() / (nn * bound);
    if (tau > wend) {
      t = wend;
      absorb_external(t);
      continue;
    }
    t = tau;
    Vec lam = ex.at(t);
    double total = 0.0;
    for (int a = 0; a < m.d; ++a) {
      lam[a] += base.value(a, t);
      if (lam[a] < 0.0) throw EnvelopeViolation("negative intensity during thinning");
      total += lam[a];
    }
    if (total > bound * (1.0 + 1e-9)) throw EnvelopeViolation("intensity exceeds thinning envelope");
    double u = rng.uniform() * bound;
    if (u > total) continue;
    int who = m.d - 1;
    double acc = 0.0;
    for (int a = 0; a < m.d; ++a) {
      acc += lam[a];
      if (u <= acc) {
        who = a;
        break;
      }
    }
    detail::record_event(path, who, t);
    if (m.covariate.self_exciting()) ex.add({t, who, w});
    base.on_event(who, t);
  }
  path.check();
  return path;
}

// int_{T0}^{t} n lambda(s, theta) ds per component, closed form piecewise between events.
inline Mat compensator_at(const ModelSpec& m, const Vec& theta, const PointPath& path,
                          const std::vector<double>& times) {
  m.check_shapes();
  const auto& h = m.horizon;
  const double nn = static_cast<double>(m.n);
  auto sources = covariate_sources(m, path);
  QueueTrack qt;
  if (m.baseline.has_queue()) qt = build_queue_track(m, path);
  auto eta = m.shape_params(theta);
  Mat out = Mat::Zero(static_cast<long>(times.size()), m.d);
  for (std::size_t i = 0; i < times.size(); ++i) {
    double t = times[i];
    if (!(t >= h.t0 && t <= h.t1)) throw DomainError("compensator time outside [T0, T1]");
    for (int a = 0; a < m.d; ++a) {
      double s = 0.0;
      for (const auto& term : m.baseline.terms[a])
        s += term.coef(theta) *
             (term.kind == BasisKind::Queue ? qt.integral(a, h.t0, t) : basis_integral(term, m.baseline, h.t0, t));
      out(i, a) = s;
    }
    if (m.has_kernel())
      for (const auto& src : sources) {
        if (!(src.time < t)) break;
        double l0 = std::max(h.t0 - src.time, 0.0), l1 = t - src.time;
        double I = shape_integral(m.kernel, eta.data(), l0, l1, 0).v * src.size;
        for (int a = 0; a < m.d; ++a) out(i, a) += m.kernel.amplitude[a][src.column](theta) * I;
      }
    out.row(i) *= nn;
  }
  return out;
}

inline Vec compensator(const ModelSpec& m, const Vec& theta, const PointPath& path, double t) {
  return compensator_at(m, theta, path, {t}).row(0).transpose();
}

struct ComponentRescaling {
  int events = 0;
  double ks = 0.0;
  double p_value = 1.0;
  bool insufficient = false;
};

struct TimeRescalingResult {
  std::vector<ComponentRescaling> components;
};

// Compensator increments between successive events of each component against Exp(1).
inline TimeRescalingResult time_rescaling_check(const ModelSpec& m, const Vec& theta_star,
                                                const PointPath& path) {
  TimeRescalingResult r;
  for (int a = 0; a < m.d; ++a) {
    ComponentRescaling c;
    const auto& ev = path.events[a];
    c.events = static_cast<int>(ev.size());
    if (ev.size() < 10) {
      c.insufficient = true;
      c.p_value = std::nan("");
      c.ks = std::nan("");
      r.components.push_back(c);
      continue;
    }
    Mat L = compensator_at(m, theta_star, path, ev);
    std::vector<double> inc(ev.size());
    double prev = 0.0;
    for (std::size_t i = 0; i < ev.size(); ++i) {
      inc[i] = L(static_cast<long>(i), a) - prev;
      prev = L(static_cast<long>(i), a);
    }
    auto t = stats::ks_exp1(inc);
    c.ks = t.statistic;
    c.p_value = t.p_value;
    r.components.push_back(c);
  }
  return r;
}

}  // namespace ppreg
