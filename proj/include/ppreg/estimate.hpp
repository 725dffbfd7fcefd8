#pragma once

#include "ppreg/likelihood.hpp"
#include "ppreg/quadrature.hpp"
#include "ppreg/rng.hpp"
#include "ppreg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace ppreg {

struct EstimationError : NumericalError {
  using NumericalError::NumericalError;
};
struct DegenerateInformation : NumericalError {
  using NumericalError::NumericalError;
};

// Called once per accepted iterate with (theta, value, gradient norm).
using TraceFn = std::function<void(const Vec&, double, double)>;

struct QmleOptions {
  int starts = 8;
  int max_iter = 500;
  double grad_tol = 1e-6;
  std::uint64_t seed = 0x51a7;
  bool allow_empty = true;
  TraceFn trace;
};

struct QmleResult {
  Vec theta_hat;
  double loglik = 0.0;
  double grad_norm = 0.0;
  Mat observed_info;  // Gamma_n(theta_hat)
  Vec std_error;      // sqrt(diag((n Gamma_n)^{-1}))
  int n_restarts_used = 0;
  bool converged = false;
  bool boundary = false;
  int iterations = 0;
  long long n = 1;
};

namespace detail {

struct AscentOutcome {
  Vec theta;
  LikelihoodEval eval;
  bool converged = false;
  int iterations = 0;
};

inline Vec projected_gradient(const Vec& th, const Vec& g, const ParamSpace& ps) {
  Vec pg = g;
  for (int i = 0; i < th.size(); ++i) {
    double eps = 1e-12 * (ps.upper[i] - ps.lower[i]);
    if (th[i] <= ps.lower[i] + eps && g[i] < 0.0) pg[i] = 0.0;
    if (th[i] >= ps.upper[i] - eps && g[i] > 0.0) pg[i] = 0.0;
  }
  return pg;
}

// Projected ascent: Newton direction on the free coordinates (absolute eigenvalues where
// the Hessian is indefinite), gradient as a fallback; Armijo backtracking.
inline AscentOutcome ascend(const QuasiLikelihood& ql, Vec th, const QmleOptions& opt) {
  const auto& ps = ql.model().param_space;
  const int p = static_cast<int>(th.size());
  AscentOutcome out;
  auto e = ql.evaluate(th, 2);
  if (!e.feasible) {
    out.theta = th;
    out.eval = e;
    return out;
  }
  int polish = 0;
  for (int it = 0; it < opt.max_iter; ++it) {
    out.iterations = it + 1;
    Vec pg = projected_gradient(th, e.gradient, ps);
    double tol = opt.grad_tol * (1.0 + std::abs(e.value));
    if (opt.trace) opt.trace(th, e.value, pg.norm());
    bool small = pg.norm() <= tol;
    if (small) {
      out.converged = true;
      if (++polish > 3) break;
    }
    std::vector<int> freeset;
    for (int i = 0; i < p; ++i)
      if (pg[i] != 0.0 || e.gradient[i] == 0.0) freeset.push_back(i);
    if (freeset.empty()) break;
    const int f = static_cast<int>(freeset.size());
    Mat Hf(f, f);
    Vec gf(f);
    for (int i = 0; i < f; ++i) {
      gf[i] = e.gradient[freeset[i]];
      for (int j = 0; j < f; ++j) Hf(i, j) = -e.hessian(freeset[i], freeset[j]);
    }
    Vec newton_dir = Vec::Zero(p);
    bool have_newton = false;
    Eigen::LLT<Mat> llt(Hf);
    Vec df;
    if (llt.info() == Eigen::Success) {
      df = llt.solve(gf);
    } else {
      // indefinite: Newton with absolute eigenvalues keeps curvature scaling along ridges
      Eigen::SelfAdjointEigenSolver<Mat> es(Hf);
      Vec ev = es.eigenvalues().cwiseAbs();
      double floor = 1e-10 * std::max(ev.maxCoeff(), 1e-300);
      ev = ev.cwiseMax(floor);
      df = es.eigenvectors() * (es.eigenvectors().transpose() * gf).cwiseQuotient(ev);
    }
    if (df.allFinite()) {
      for (int i = 0; i < f; ++i) newton_dir[freeset[i]] = df[i];
      have_newton = true;
    }
    Vec grad_dir = Vec::Zero(p);
    for (int i : freeset) grad_dir[i] = e.gradient[i];
    {
      // scale the gradient step to a tenth of the box in the largest coordinate
      double worst = 0.0;
      for (int i : freeset) worst = std::max(worst, std::abs(grad_dir[i]) / (ps.upper[i] - ps.lower[i]));
      if (worst > 0.0) grad_dir *= 0.1 / worst;
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      if (attempt == 0 && !have_newton) continue;
      if (attempt == 1 && small) continue;
      const Vec& dir = attempt == 0 ? newton_dir : grad_dir;
      double alpha = 1.0;
      for (int k = 0; k < 60; ++k, alpha *= 0.5) {
        Vec cand = ps.clamp(th + alpha * dir);
        if (cand == th) break;
        double v = ql.value(cand);
        double gain = e.gradient.dot(cand - th);
        // near the optimum the value change drops to rounding level, so polishing steps only
        // have to avoid a loss beyond that noise
        bool ok = small ? v >= e.value - 1e-13 * (1.0 + std::abs(e.value))
                        : v >= e.value + 1e-4 * std::max(gain, 0.0) && v > e.value - 1e-15;
        if (std::isfinite(v) && ok) {
          if (small && v == e.value && (cand - th).norm() == 0.0) break;
          th = cand;
          accepted = true;
          break;
        }
      }
    }
    if (!accepted) break;
    e = ql.evaluate(th, 2);
    if (!e.feasible) break;
  }
  Vec pg = projected_gradient(th, e.gradient, ps);
  out.converged = e.feasible && pg.norm() <= opt.grad_tol * (1.0 + std::abs(e.value));
  out.theta = th;
  out.eval = e;
  return out;
}

}  // namespace detail

// Box center followed by a Latin hypercube of starts-1 points.
inline std::vector<Vec> qmle_starts(const ParamSpace& ps, int starts, std::uint64_t seed) {
  std::vector<Vec> out{ps.center()};
  int k = std::max(0, starts - 1);
  if (k == 0) return out;
  Rng rng(seed);
  const int p = ps.dim();
  std::vector<std::vector<int>> perm(p, std::vector<int>(k));
  for (int i = 0; i < p; ++i) {
    std::iota(perm[i].begin(), perm[i].end(), 0);
    for (int j = k - 1; j > 0; --j) std::swap(perm[i][j], perm[i][rng.index(j + 1)]);
  }
  for (int j = 0; j < k; ++j) {
    Vec v(p);
    for (int i = 0; i < p; ++i)
      v[i] = ps.lower[i] + (perm[i][j] + rng.uniform()) / k * (ps.upper[i] - ps.lower[i]);
    out.push_back(v);
  }
  return out;
}

inline QmleResult qmle(const QuasiLikelihood& ql, const QmleOptions& opt = {}) {
  const auto& m = ql.model();
  const auto& ps = m.param_space;
  if (!opt.allow_empty && ql.event_count() == 0) throw EstimationError("empty path and empty paths not allowed");
  QmleResult best;
  best.n = m.n;
  bool have = false;
  int used = 0, total_iter = 0;
  for (const auto& start : qmle_starts(ps, opt.starts, opt.seed)) {
    auto r = detail::ascend(ql, start, opt);
    total_iter += r.iterations;
    if (!r.eval.feasible) continue;
    ++used;
    if (!have || r.eval.value > best.loglik) {
      have = true;
      best.theta_hat = r.theta;
      best.loglik = r.eval.value;
      best.grad_norm = r.eval.gradient.norm();
      best.converged = r.converged;
      best.observed_info = -r.eval.hessian / static_cast<double>(m.n);
    }
  }
  if (!have) throw EstimationError("all QMLE starts are infeasible");
  best.n_restarts_used = used;
  best.iterations = total_iter;
  for (int i = 0; i < ps.dim(); ++i) {
    double eps = 1e-9 * (ps.upper[i] - ps.lower[i]);
    if (best.theta_hat[i] <= ps.lower[i] + eps || best.theta_hat[i] >= ps.upper[i] - eps) best.boundary = true;
  }
  Mat info = best.observed_info * static_cast<double>(m.n);
  Eigen::LLT<Mat> llt(info);
  if (llt.info() == Eigen::Success) {
    Mat inv = llt.solve(Mat::Identity(ps.dim(), ps.dim()));
    best.std_error = inv.diagonal().cwiseMax(0.0).cwiseSqrt();
  } else {
    best.std_error = Vec::Constant(ps.dim(), std::numeric_limits<double>::quiet_NaN());
  }
  return best;
}

inline QmleResult qmle(const ModelSpec& m, const PointPath& path, const QmleOptions& opt = {}) {
  return qmle(QuasiLikelihood(m, path), opt);
}

// ---------------------------------------------------------------- QBE

struct Prior {
  std::string name = "uniform";
  std::function<double(const Vec&)> density;  // empty means constant 1

  double operator()(const Vec& th) const { return density ? density(th) : 1.0; }
  static Prior uniform() { return {}; }
};

enum class QbeMethod { Auto, TensorQuadrature, ImportanceSampling };

inline const char* to_string(QbeMethod m) {
  return m == QbeMethod::ImportanceSampling ? "importance_sampling" : "tensor_quadrature";
}

struct QbeOptions {
  QbeMethod method = QbeMethod::Auto;
  int nodes = 0;  // per axis; 0 picks 64, 32 or 20 nodes for p = 1, 2, >= 3
  double spread = 1.7;  // Hermite node scale in posterior standard deviations
  int is_draws = 50000;
  std::uint64_t seed = 0x9be5;
};

struct QbeResult {
  Vec theta_tilde;
  double log_normalizer = 0.0;
  QbeMethod method = QbeMethod::TensorQuadrature;
  double error_estimate = 0.0;
  std::string domain;  // whitened, box or gaussian_proposal
};

using LogField = std::function<double(const Vec&)>;

namespace detail {

struct TensorSums {
  double shift = 0.0;
  double mass = 0.0;     // sum of weights * exp(H - shift) * prior
  Vec first;             // first moments about the domain centre
  double edge = 0.0;     // largest relative weight on the outermost node layer
  bool any_finite = false;
};

// One tensor axis: z = center + nodes[j] with weight weights[j]; nodes symmetric about 0.
struct TensorAxis {
  double center = 0.0;
  GaussRule rule;
};

// Tensor product rule with theta = map(z). Weight values are gathered first so the shift
// is the maximum of H over the nodes. first holds moments of z - center.
template <class Map>
TensorSums tensor_sums(const LogField& H, const Prior& prior, const ParamSpace& box,
                       const std::vector<TensorAxis>& axes, Map&& map, double prior_ref) {
  const int p = static_cast<int>(axes.size());
  const int nodes = static_cast<int>(axes[0].rule.nodes.size());
  std::size_t total = 1;
  for (int i = 0; i < p; ++i) total *= nodes;
  std::vector<double> logw(total, -std::numeric_limits<double>::infinity());
  Vec z(p);
  TensorSums s;
  s.first = Vec::Zero(p);
  double hmax = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < total; ++k) {
    std::size_t r = k;
    double w = 1.0;
    for (int i = 0; i < p; ++i) {
      int j = static_cast<int>(r % nodes);
      r /= nodes;
      z[i] = axes[i].center + axes[i].rule.nodes[j];
      w *= axes[i].rule.weights[j];
    }
    Vec th = map(z);
    if (!box.contains(th)) continue;
    double pr = prior(th) / prior_ref;
    if (!(pr > 0.0)) continue;
    double hv = H(th);
    if (!std::isfinite(hv)) continue;
    logw[k] = hv + std::log(w * pr);
    hmax = std::max(hmax, hv);
  }
  if (!std::isfinite(hmax)) return s;
  s.any_finite = true;
  s.shift = hmax;
  // marginal sums per axis keep mirrored nodes paired for exact symmetry
  std::vector<std::vector<double>> marg(p, std::vector<double>(nodes, 0.0));
  double edge = 0.0, wmax = 0.0;
  for (std::size_t k = 0; k < total; ++k) {
    if (!std::isfinite(logw[k])) continue;
    double v = std::exp(logw[k] - hmax);
    std::size_t r = k;
    bool outer = false;
    for (int i = 0; i < p; ++i) {
      int j = static_cast<int>(r % nodes);
      r /= nodes;
      marg[i][j] += v;
      outer = outer || j == 0 || j == nodes - 1;
    }
    s.mass += v;
    wmax = std::max(wmax, v);
    if (outer) edge = std::max(edge, v);
  }
  for (int i = 0; i < p; ++i) {
    const auto& x = axes[i].rule.nodes;
    double acc = 0.0;
    for (int j = 0; j < nodes / 2; ++j) acc += x[nodes - 1 - j] * (marg[i][nodes - 1 - j] - marg[i][j]);
    s.first[i] = acc;
  }
  s.edge = wmax > 0.0 ? edge / wmax : 0.0;
  return s;
}

inline std::vector<TensorAxis> legendre_axes(const Vec& lo, const Vec& hi, int nodes) {
  auto rule = gauss_legendre(nodes);
  std::vector<TensorAxis> axes(lo.size());
  for (long i = 0; i < lo.size(); ++i) {
    double h = 0.5 * (hi[i] - lo[i]);
    axes[i].center = 0.5 * (lo[i] + hi[i]);
    axes[i].rule = rule;
    for (int j = 0; j < nodes; ++j) {
      axes[i].rule.nodes[j] *= h;
      axes[i].rule.weights[j] *= h;
    }
  }
  return axes;
}

// Plain integrals over R^p of functions that look Gaussian in z: the Hermite weight is
// folded back into the node weights.
inline std::vector<TensorAxis> hermite_axes(int p, int nodes, double scale) {
  auto rule = gauss_hermite_prob(nodes);
  for (int j = 0; j < nodes; ++j) {
    rule.weights[j] *= scale * std::exp(0.5 * rule.nodes[j] * rule.nodes[j]);
    rule.nodes[j] *= scale;
  }
  return std::vector<TensorAxis>(p, TensorAxis{0.0, rule});
}

}  // namespace detail

// Posterior mean of theta under exp(H) * prior over the box.
// center: mode estimate; cov: optional local covariance (inverse negative Hessian).
// slow: coordinates that should vary only along the outermost tensor axes, so a field
// caching work keyed on them recomputes it once per outer node.
inline QbeResult qbe_integrate(const LogField& H, const ParamSpace& box, const Prior& prior, const Vec& center,
                               const Mat* cov, const QbeOptions& opt = {}, const std::vector<int>& slow = {}) {
  const int p = box.dim();
  double prior_ref = prior(center);
  if (!(prior_ref > 0.0) || !std::isfinite(prior_ref)) throw ModelError("prior must be positive on the box");
  QbeMethod method = opt.method;
  if (method == QbeMethod::Auto) method = p <= 3 ? QbeMethod::TensorQuadrature : QbeMethod::ImportanceSampling;

  // theta = center + F z with F triangular after moving the slow coordinates last: the
  // reversed Cholesky factor is upper triangular, so slow coordinates see only outer axes.
  Mat F;
  double logjac = 0.0;
  bool whiten = false;
  if (cov) {
    std::vector<int> order;
    for (int i = 0; i < p; ++i)
      if (std::find(slow.begin(), slow.end(), i) == slow.end()) order.push_back(i);
    for (int i : slow)
      if (i >= 0 && i < p) order.push_back(i);
    if (static_cast<int>(order.size()) != p) throw std::invalid_argument("QBE: repeated slow coordinate");
    Mat sym = 0.5 * (*cov + cov->transpose());
    Mat rev(p, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) rev(i, j) = sym(order[p - 1 - i], order[p - 1 - j]);
    Eigen::LLT<Mat> llt(rev);
    if (llt.info() == Eigen::Success) {
      Mat lr = llt.matrixL();
      F = Mat::Zero(p, p);
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) F(order[i], j) = lr(p - 1 - i, p - 1 - j);
      logjac = lr.diagonal().array().log().sum();
      whiten = F.allFinite() && std::isfinite(logjac);
    }
  }

  QbeResult res;
  res.method = method;
  const int nodes = opt.nodes > 0 ? opt.nodes : (p == 1 ? 64 : p == 2 ? 32 : 20);

  if (method == QbeMethod::ImportanceSampling) {
    if (!whiten) throw NumericalError("importance sampling needs a positive definite proposal covariance");
    Rng rng(opt.seed);
    std::vector<double> logw(opt.is_draws, -std::numeric_limits<double>::infinity());
    std::vector<Vec> pts(opt.is_draws);
    double hmax = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < opt.is_draws; ++k) {
      Vec z(p);
      for (int i = 0; i < p; ++i) z[i] = rng.normal();
      Vec th = center + F * z;
      pts[k] = th;
      if (!box.contains(th)) continue;
      double pr = prior(th) / prior_ref;
      double hv = H(th);
      if (!(pr > 0.0) || !std::isfinite(hv)) continue;
      logw[k] = hv + std::log(pr) + 0.5 * z.squaredNorm();
      hmax = std::max(hmax, logw[k]);
    }
    if (!std::isfinite(hmax)) throw NumericalError("importance sampling: no draw inside the support");
    double sw = 0.0;
    Vec m1 = Vec::Zero(p);
    std::vector<double> w(opt.is_draws, 0.0);
    for (int k = 0; k < opt.is_draws; ++k) {
      if (!std::isfinite(logw[k])) continue;
      w[k] = std::exp(logw[k] - hmax);
      sw += w[k];
      m1 += w[k] * pts[k];
    }
    res.theta_tilde = m1 / sw;
    Vec var = Vec::Zero(p);
    for (int k = 0; k < opt.is_draws; ++k)
      if (w[k] > 0.0) var += (w[k] * w[k]) * (pts[k] - res.theta_tilde).cwiseAbs2();
    res.error_estimate = (var.cwiseSqrt() / sw).maxCoeff();
    res.log_normalizer = hmax + std::log(sw / opt.is_draws) + logjac + 0.5 * p * std::log(2.0 * std::numbers::pi) +
                         std::log(prior_ref);
    res.domain = "gaussian_proposal";
    return res;
  }

  if (std::pow(static_cast<double>(nodes), p) > 5e7)
    throw UnsupportedError("tensor quadrature grid too large for p = " + std::to_string(p) + "; use importance sampling");
  // Whitened coordinates: Gauss-Hermite with the integrand set to zero outside the box.
  // Without a usable covariance: Gauss-Legendre over the box.
  auto run = [&](int nodes) {
    if (whiten)
      return detail::tensor_sums(H, prior, box, detail::hermite_axes(p, nodes, opt.spread),
                                 [&](const Vec& z) -> Vec { return center + F * z; }, prior_ref);
    return detail::tensor_sums(H, prior, box, detail::legendre_axes(box.lower, box.upper, nodes),
                               [](const Vec& z) -> Vec { return z; }, prior_ref);
  };
  Vec mid = whiten ? Vec::Zero(p) : Vec(0.5 * (box.lower + box.upper));
  auto s = run(nodes);
  if (!s.any_finite) throw NumericalError("QBE: log field is -inf on every node");
  if (!(s.mass > 0.0) || !std::isfinite(s.mass)) throw NumericalError("QBE normalizer underflow");
  Vec local = mid + s.first / s.mass;
  res.theta_tilde = whiten ? Vec(center + F * local) : local;
  res.log_normalizer = s.shift + std::log(s.mass) + (whiten ? logjac : 0.0) + std::log(prior_ref);
  // a coarser rule gives the error estimate
  auto coarse = run(std::max(2, (2 * nodes) / 3));
  Vec th_coarse = coarse.mass > 0.0 ? Vec(mid + coarse.first / coarse.mass) : Vec::Constant(p, std::nan(""));
  if (whiten) th_coarse = center + F * th_coarse;
  res.error_estimate = (res.theta_tilde - th_coarse).cwiseAbs().maxCoeff();
  res.domain = whiten ? "whitened" : "box";
  res.theta_tilde = box.clamp(res.theta_tilde);
  return res;
}

// The field keeps the last kernel sweep, so nodes sharing shape parameters reuse it.
inline QbeResult qbe(const QuasiLikelihood& ql, const Prior& prior, const QbeOptions& opt,
                     const QmleResult& mode) {
  const auto& m = ql.model();
  ShapeSweep cached;
  bool have = false;
  LogField H = [&](const Vec& th) {
    auto eta = m.shape_params(th);
    if (!have || eta != cached.eta) {
      cached = ql.sweep(eta, 0);
      have = true;
    }
    return ql.evaluate_with(cached, th, 0).value;
  };
  std::vector<int> slow;
  for (const auto& c : m.kernel.shape)
    if (c.free() && std::find(slow.begin(), slow.end(), c.param) == slow.end()) slow.push_back(c.param);
  Mat cov;
  const Mat* covp = nullptr;
  Mat info = mode.observed_info * static_cast<double>(m.n);
  Eigen::LLT<Mat> llt(info);
  if (info.size() > 0 && llt.info() == Eigen::Success) {
    cov = llt.solve(Mat::Identity(m.p(), m.p()));
    covp = &cov;
  }
  return qbe_integrate(H, m.param_space, prior, mode.theta_hat, covp, opt, slow);
}

inline QbeResult qbe(const ModelSpec& m, const PointPath& path, const Prior& prior = Prior::uniform(),
                     const QbeOptions& opt = {}) {
  QuasiLikelihood ql(m, path);
  auto mode = qmle(ql);
  return qbe(ql, prior, opt, mode);
}

// ---------------------------------------------------------------- confidence regions

struct ConfidenceRegion {
  double level = 0.95;
  Vec center;
  Vec lower, upper;  // per-coordinate intervals
  Mat shape;         // n * Gamma_n
  double radius2 = 0.0;

  bool ellipsoid_contains(const Vec& th) const {
    Vec d = th - center;
    return d.dot(shape * d) <= radius2;
  }
};

inline ConfidenceRegion confidence_region(const QmleResult& r, double level) {
  if (!(level >= 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in [0, 1)");
  const int p = static_cast<int>(r.theta_hat.size());
  Mat info = r.observed_info * static_cast<double>(r.n);
  Eigen::LLT<Mat> llt(0.5 * (info + info.transpose()));
  if (r.observed_info.size() == 0 || llt.info() != Eigen::Success)
    throw DegenerateInformation("observed information is not positive definite");
  Mat inv = llt.solve(Mat::Identity(p, p));
  Vec se = inv.diagonal().cwiseSqrt();
  double z = level == 0.0 ? 0.0 : stats::normal_quantile(0.5 + 0.5 * level);
  ConfidenceRegion c;
  c.level = level;
  c.center = r.theta_hat;
  c.lower = r.theta_hat - z * se;
  c.upper = r.theta_hat + z * se;
  c.shape = info;
  c.radius2 = stats::chi2_quantile(p, level);
  return c;
}

}  // namespace ppreg
