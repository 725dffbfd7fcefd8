#pragma once

#include "ppreg/book.hpp"
#include "ppreg/linalg.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppreg {

struct ModelError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct UnsupportedError : std::logic_error {
  using std::logic_error::logic_error;
};

struct TimeHorizon {
  double t_hat0 = 0.0;
  double t0 = 0.0;
  double t1 = 1.0;

  double length() const { return t1 - t0; }
  void check() const {
    if (!(t_hat0 <= t0 && t0 < t1) || !std::isfinite(t_hat0) || !std::isfinite(t1))
      throw ModelError("horizon must satisfy t_hat0 <= t0 < t1");
  }
};

// Bounded open box; estimators work on its closure.
struct ParamSpace {
  Vec lower;
  Vec upper;

  int dim() const { return static_cast<int>(lower.size()); }
  Vec center() const { return 0.5 * (lower + upper); }
  Vec width() const { return upper - lower; }
  bool contains(const Vec& th, double slack = 0.0) const {
    if (th.size() != lower.size()) return false;
    for (int i = 0; i < th.size(); ++i)
      if (!(th[i] >= lower[i] - slack && th[i] <= upper[i] + slack)) return false;
    return true;
  }
  Vec clamp(const Vec& th) const { return th.cwiseMax(lower).cwiseMin(upper); }
  void check() const {
    if (lower.size() != upper.size()) throw ModelError("param_space bounds differ in length");
    for (int i = 0; i < lower.size(); ++i)
      if (!(lower[i] < upper[i]) || !std::isfinite(lower[i]) || !std::isfinite(upper[i]))
        throw ModelError("param_space needs finite lower < upper in every coordinate");
  }
};

// A model coefficient: either a constant or a coordinate of theta.
struct CoefRef {
  int param = -1;
  double value = 0.0;

  static CoefRef fixed(double v) { return {-1, v}; }
  static CoefRef theta(int i) { return {i, 0.0}; }
  bool free() const { return param >= 0; }
  double operator()(const Vec& th) const { return param >= 0 ? th[param] : value; }
  double min_over(const ParamSpace& ps) const { return param >= 0 ? ps.lower[param] : value; }
  double max_over(const ParamSpace& ps) const { return param >= 0 ? ps.upper[param] : value; }
};

// ---------------------------------------------------------------- baseline

enum class BasisKind { Power, Centered, Queue };

// One term c(theta) * phi(t). Power: t^degree. Centered: (t - center)^degree.
// Queue: size of the queue mapped to the component, at t-, divided by q.
struct BaselineTerm {
  CoefRef coef;
  BasisKind kind = BasisKind::Power;
  int degree = 0;
};

enum class BaselineVariant { Constant, Polynomial, CenteredQuadratic, BookQueue };

struct BaselineSpec {
  BaselineVariant variant = BaselineVariant::Constant;
  std::vector<std::vector<BaselineTerm>> terms;  // per component
  double center = 0.0;
  std::shared_ptr<const BookSpec> book;

  int dim() const { return static_cast<int>(terms.size()); }
  bool has_queue() const { return variant == BaselineVariant::BookQueue; }
  int degree() const {
    int p = 0;
    for (const auto& row : terms)
      for (const auto& t : row)
        if (t.kind != BasisKind::Queue) p = std::max(p, t.degree);
    return p;
  }

  static BaselineSpec constant(const std::vector<CoefRef>& mu) {
    BaselineSpec b;
    b.variant = BaselineVariant::Constant;
    for (const auto& c : mu) b.terms.push_back({{c, BasisKind::Power, 0}});
    return b;
  }
  // coeffs[l][alpha] multiplies t^l in component alpha
  static BaselineSpec polynomial(const std::vector<std::vector<CoefRef>>& coeffs) {
    if (coeffs.empty()) throw ModelError("polynomial baseline needs at least one coefficient row");
    BaselineSpec b;
    b.variant = BaselineVariant::Polynomial;
    std::size_t d = coeffs[0].size();
    b.terms.resize(d);
    for (std::size_t l = 0; l < coeffs.size(); ++l) {
      if (coeffs[l].size() != d) throw ModelError("polynomial baseline rows differ in length");
      for (std::size_t a = 0; a < d; ++a)
        b.terms[a].push_back({coeffs[l][a], BasisKind::Power, static_cast<int>(l)});
    }
    return b;
  }
  // g^alpha(t) = gamma1^alpha (t - center)^2 + gamma2^alpha
  static BaselineSpec centered_quadratic(const std::vector<CoefRef>& gamma1,
                                         const std::vector<CoefRef>& gamma2, double center) {
    if (gamma1.size() != gamma2.size()) throw ModelError("centered quadratic: gamma1/gamma2 size");
    BaselineSpec b;
    b.variant = BaselineVariant::CenteredQuadratic;
    b.center = center;
    for (std::size_t a = 0; a < gamma1.size(); ++a)
      b.terms.push_back({{gamma1[a], BasisKind::Centered, 2}, {gamma2[a], BasisKind::Centered, 0}});
    return b;
  }
  // g^alpha = mu^alpha + theta_c^alpha * Q^alpha(t-)/q; either part may be absent.
  static BaselineSpec book_queue(const std::vector<std::optional<CoefRef>>& constant_part,
                                 const std::vector<std::optional<CoefRef>>& queue_part,
                                 std::shared_ptr<const BookSpec> book) {
    if (constant_part.size() != queue_part.size()) throw ModelError("book baseline: size mismatch");
    BaselineSpec b;
    b.variant = BaselineVariant::BookQueue;
    b.book = std::move(book);
    b.terms.resize(constant_part.size());
    for (std::size_t a = 0; a < constant_part.size(); ++a) {
      if (constant_part[a]) b.terms[a].push_back({*constant_part[a], BasisKind::Power, 0});
      if (queue_part[a]) b.terms[a].push_back({*queue_part[a], BasisKind::Queue, 0});
    }
    return b;
  }
};

inline double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

// Value of a deterministic basis function (not Queue).
inline double basis_value(const BaselineTerm& term, const BaselineSpec& b, double t) {
  switch (term.kind) {
    case BasisKind::Power: return ipow(t, term.degree);
    case BasisKind::Centered: return ipow(t - b.center, term.degree);
    default: throw std::logic_error("queue basis needs book state");
  }
}

// Integral of a deterministic basis function over [a, c].
inline double basis_integral(const BaselineTerm& term, const BaselineSpec& b, double a, double c) {
  double shift = term.kind == BasisKind::Centered ? b.center : 0.0;
  int k = term.degree + 1;
  return (ipow(c - shift, k) - ipow(a - shift, k)) / k;
}

// Upper bound of c * phi over [a, c] for a deterministic basis with fixed coefficient value.
inline double basis_sup(const BaselineTerm& term, const BaselineSpec& b, double coef, double a,
                        double c) {
  double shift = term.kind == BasisKind::Centered ? b.center : 0.0;
  double best = std::max(coef * ipow(a - shift, term.degree), coef * ipow(c - shift, term.degree));
  if (a < shift && shift < c) best = std::max(best, coef * ipow(0.0, term.degree));
  return best;
}

// ---------------------------------------------------------------- kernel

enum class KernelVariant { Zero, Exponential, PowerLawExp, Tabulated };

// Piecewise-linear lag profile psi on [0, step*(n-1)], zero beyond.
struct TabulatedShape {
  double step = 1.0;
  std::vector<double> values;

  static TabulatedShape from_callable(const std::function<double(double)>& f, double step,
                                      double max_lag) {
    TabulatedShape t;
    t.step = step;
    auto n = static_cast<std::size_t>(std::ceil(max_lag / step)) + 1;
    for (std::size_t k = 0; k < n; ++k) t.values.push_back(f(k * step));
    return t;
  }
  double max_lag() const { return step * (values.size() - 1); }
  double operator()(double tau) const {
    if (tau < 0.0 || values.empty() || tau > max_lag()) return 0.0;
    double x = tau / step;
    auto k = static_cast<std::size_t>(x);
    if (k + 1 >= values.size()) return values.back();
    double w = x - k;
    return (1.0 - w) * values[k] + w * values[k + 1];
  }
  double integral(double l0, double l1) const {
    l0 = std::max(l0, 0.0);
    l1 = std::min(l1, max_lag());
    if (!(l1 > l0)) return 0.0;
    double s = 0.0;
    auto k0 = static_cast<std::size_t>(l0 / step);
    for (std::size_t k = k0; k + 1 < values.size() && k * step < l1; ++k) {
      double a = std::max(l0, k * step), b = std::min(l1, (k + 1) * step);
      if (b > a) s += 0.5 * (b - a) * ((*this)(a) + (*this)(b));
    }
    return s;
  }
  double sup(double l0, double l1) const {
    double best = std::max((*this)(l0), (*this)(l1));
    for (std::size_t k = 0; k < values.size(); ++k)
      if (k * step > l0 && k * step < l1) best = std::max(best, values[k]);
    return best;
  }
};

// Lag profile value with derivatives in the (at most two) shape parameters eta.
struct ShapeEval {
  double v = 0.0;
  std::array<double, 2> d{0.0, 0.0};
  std::array<std::array<double, 2>, 2> dd{{{0.0, 0.0}, {0.0, 0.0}}};
};

struct KernelSpec {
  KernelVariant variant = KernelVariant::Zero;
  std::vector<std::vector<CoefRef>> amplitude;  // d x d0
  std::vector<CoefRef> shape;                   // Exponential {b}; PowerLawExp {decay, power}
  std::shared_ptr<const TabulatedShape> table;

  int shape_dim() const { return static_cast<int>(shape.size()); }

  static KernelSpec zero() { return {}; }
  static KernelSpec exponential(std::vector<std::vector<CoefRef>> a, CoefRef b) {
    KernelSpec k;
    k.variant = KernelVariant::Exponential;
    k.amplitude = std::move(a);
    k.shape = {b};
    return k;
  }
  // c * tau^power * exp(-decay * tau)
  static KernelSpec power_law_exp(std::vector<std::vector<CoefRef>> c, CoefRef decay, CoefRef power) {
    KernelSpec k;
    k.variant = KernelVariant::PowerLawExp;
    k.amplitude = std::move(c);
    k.shape = {decay, power};
    return k;
  }
  static KernelSpec tabulated(std::vector<std::vector<CoefRef>> a, TabulatedShape table) {
    KernelSpec k;
    k.variant = KernelVariant::Tabulated;
    k.amplitude = std::move(a);
    k.table = std::make_shared<const TabulatedShape>(std::move(table));
    return k;
  }
};

namespace detail {
// m_k(b, L) = int_0^L tau^k e^{-b tau} dtau for k = 0, 1, 2.
inline std::array<double, 3> exp_moments(double b, double len) {
  double x = b * len;
  if (std::abs(x) < 0.5) {
    // series in x: m_k = L^{k+1} sum_j (-x)^j / (j! (j+k+1))
    std::array<double, 3> m{0.0, 0.0, 0.0};
    double term = 1.0;
    for (int j = 0; j < 30; ++j) {
      for (int k = 0; k < 3; ++k) m[k] += term / (j + k + 1);
      term *= -x / (j + 1);
    }
    return {m[0] * len, m[1] * len * len, m[2] * len * len * len};
  }
  double e = std::exp(-x);
  double m0 = -std::expm1(-x) / b;
  double m1 = (1.0 - e * (1.0 + x)) / (b * b);
  double m2 = (2.0 - e * (2.0 + 2.0 * x + x * x)) / (b * b * b);
  return {m0, m1, m2};
}
}  // namespace detail

inline ShapeEval shape_value(const KernelSpec& k, const double* eta, double tau, int order) {
  ShapeEval r;
  switch (k.variant) {
    case KernelVariant::Zero: return r;
    case KernelVariant::Exponential: {
      r.v = std::exp(-eta[0] * tau);
      if (order >= 1) r.d[0] = -tau * r.v;
      if (order >= 2) r.dd[0][0] = tau * tau * r.v;
      return r;
    }
    case KernelVariant::PowerLawExp: {
      double decay = eta[0], power = eta[1];
      if (tau <= 0.0) {
        r.v = power == 0.0 ? 1.0 : (power > 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        return r;
      }
      double lt = std::log(tau);
      r.v = std::exp(power * lt - decay * tau);
      if (order >= 1) {
        r.d[0] = -tau * r.v;
        r.d[1] = lt * r.v;
      }
      if (order >= 2) {
        r.dd[0][0] = tau * tau * r.v;
        r.dd[0][1] = r.dd[1][0] = -tau * lt * r.v;
        r.dd[1][1] = lt * lt * r.v;
      }
      return r;
    }
    case KernelVariant::Tabulated: r.v = (*k.table)(tau); return r;
  }
  return r;
}

// Integral of the lag profile over [l0, l1] (0 <= l0 <= l1) with eta-derivatives.
// PowerLawExp provides first derivatives only.
inline ShapeEval shape_integral(const KernelSpec& k, const double* eta, double l0, double l1,
                                int order) {
  ShapeEval r;
  if (!(l1 > l0)) return r;
  switch (k.variant) {
    case KernelVariant::Zero: return r;
    case KernelVariant::Exponential: {
      double b = eta[0];
      auto m = detail::exp_moments(b, l1 - l0);
      double e0 = std::exp(-b * l0);
      r.v = e0 * m[0];
      if (order >= 1) r.d[0] = -e0 * (l0 * m[0] + m[1]);
      if (order >= 2) r.dd[0][0] = e0 * (l0 * l0 * m[0] + 2.0 * l0 * m[1] + m[2]);
      return r;
    }
    case KernelVariant::PowerLawExp: {
      double decay = eta[0], power = eta[1];
      // int_{l0}^{l1} tau^s e^{-decay tau}
      auto base = [&](double s) {
        if (decay <= 0.0) return (std::pow(l1, s + 1.0) - std::pow(l0, s + 1.0)) / (s + 1.0);
        double scale = std::pow(decay, -(s + 1.0));
        return scale * (boost::math::tgamma_lower(s + 1.0, decay * l1) -
                        boost::math::tgamma_lower(s + 1.0, decay * l0));
      };
      r.v = base(power);
      if (order >= 1) {
        r.d[0] = -base(power + 1.0);
        boost::math::quadrature::tanh_sinh<double> ts;
        r.d[1] = ts.integrate(
            [&](double t) { return t <= 0.0 ? 0.0 : std::log(t) * std::exp(power * std::log(t) - decay * t); },
            l0, l1);
      }
      return r;
    }
    case KernelVariant::Tabulated: r.v = k.table->integral(l0, l1); return r;
  }
  return r;
}

// Supremum of the lag profile over lags [l0, l1].
inline double shape_sup(const KernelSpec& k, const double* eta, double l0, double l1) {
  switch (k.variant) {
    case KernelVariant::Zero: return 0.0;
    case KernelVariant::Exponential:
      return eta[0] >= 0.0 ? std::exp(-eta[0] * l0) : std::exp(-eta[0] * l1);
    case KernelVariant::PowerLawExp: {
      double decay = eta[0], power = eta[1];
      auto f = [&](double t) { return shape_value(k, eta, t, 0).v; };
      double best = std::max(f(l0), f(l1));
      if (power > 0.0 && decay > 0.0) {
        double mode = power / decay;
        if (mode > l0 && mode < l1) best = std::max(best, f(mode));
      }
      return best;
    }
    case KernelVariant::Tabulated: return k.table->sup(l0, l1);
  }
  return 0.0;
}

// ---------------------------------------------------------------- covariate

enum class CovariateVariant { SelfExciting, ExternalPath, Mixed };

// A nondecreasing pure-jump path: increments at sorted times.
struct ExternalPath {
  int dim = 0;
  std::vector<double> times;
  std::vector<std::vector<double>> jumps;

  bool empty() const { return times.empty(); }
};

struct CovariateSpec {
  CovariateVariant variant = CovariateVariant::SelfExciting;
  int external_dim = 0;
  std::shared_ptr<const ExternalPath> external;  // the given path used by the simulator

  bool self_exciting() const { return variant != CovariateVariant::ExternalPath; }
  int d0(int d) const {
    switch (variant) {
      case CovariateVariant::SelfExciting: return d;
      case CovariateVariant::ExternalPath: return external_dim;
      default: return d + external_dim;
    }
  }
  // column of external coordinate k
  int external_column(int d, int k) const { return variant == CovariateVariant::Mixed ? d + k : k; }
};

// ---------------------------------------------------------------- model

struct ModelSpec {
  int d = 1;
  TimeHorizon horizon;
  BaselineSpec baseline;
  KernelSpec kernel;
  CovariateSpec covariate;
  long long n = 1;
  ParamSpace param_space;
  bool require_positive_baseline = false;
  std::vector<std::string> param_names;

  int d0() const { return covariate.d0(d); }
  int p() const { return param_space.dim(); }

  // Throws ModelError on any inconsistency of dimensions or references.
  void check_shapes() const {
    if (d < 1) throw ModelError("d must be positive");
    if (n < 1) throw ModelError("n must be a positive integer");
    horizon.check();
    param_space.check();
    const int pp = p();
    auto check_ref = [&](const CoefRef& c, const char* where) {
      if (c.param >= pp) throw ModelError(std::string(where) + " references parameter out of range");
      if (c.param < 0 && !std::isfinite(c.value)) throw ModelError(std::string(where) + " constant not finite");
    };
    if (baseline.dim() != d) throw ModelError("baseline output dimension differs from d");
    for (const auto& row : baseline.terms)
      for (const auto& t : row) {
        check_ref(t.coef, "baseline");
        if (t.degree < 0) throw ModelError("baseline degree negative");
        if (t.kind == BasisKind::Queue && !baseline.book) throw ModelError("queue basis without a book");
      }
    if (baseline.has_queue()) {
      if (!baseline.book) throw ModelError("book baseline without a book");
      if (static_cast<int>(baseline.book->event_map.size()) != d)
        throw ModelError("book event map must cover every component");
    }
    int cols = d0();
    if (covariate.variant != CovariateVariant::SelfExciting && covariate.external_dim < 1)
      throw ModelError("external covariate needs a positive dimension");
    if (kernel.variant != KernelVariant::Zero) {
      if (static_cast<int>(kernel.amplitude.size()) != d)
        throw ModelError("kernel row count differs from d");
      for (const auto& row : kernel.amplitude) {
        if (static_cast<int>(row.size()) != cols) throw ModelError("kernel column count differs from d0");
        for (const auto& c : row) check_ref(c, "kernel amplitude");
      }
      int want = kernel.variant == KernelVariant::Exponential ? 1
                 : kernel.variant == KernelVariant::PowerLawExp ? 2
                                                                : 0;
      if (kernel.shape_dim() != want) throw ModelError("kernel shape parameter count");
      for (const auto& c : kernel.shape) check_ref(c, "kernel shape");
      if (kernel.variant == KernelVariant::Tabulated && (!kernel.table || kernel.table->values.empty()))
        throw ModelError("tabulated kernel without a table");
    }
    if (covariate.external) {
      if (covariate.external->dim != covariate.external_dim)
        throw ModelError("external path dimension differs from covariate dimension");
    }
    if (!param_names.empty() && static_cast<int>(param_names.size()) != pp)
      throw ModelError("param_names length differs from parameter dimension");
  }

  bool has_kernel() const { return kernel.variant != KernelVariant::Zero; }

  double amplitude(const Vec& th, int a, int col) const {
    return has_kernel() ? kernel.amplitude[a][col](th) : 0.0;
  }

  std::array<double, 2> shape_params(const Vec& th) const {
    std::array<double, 2> eta{0.0, 0.0};
    for (int i = 0; i < kernel.shape_dim(); ++i) eta[i] = kernel.shape[i](th);
    return eta;
  }

  void check_theta(const Vec& th) const {
    if (th.size() != p()) throw ModelError("theta has wrong dimension");
    if (!param_space.contains(th, 1e-12)) throw DomainError("theta outside the parameter box");
  }

  std::string param_name(int i) const {
    if (i < static_cast<int>(param_names.size())) return param_names[i];
    return "theta" + std::to_string(i);
  }
};

// ---------------------------------------------------------------- validation

struct ValidationCheck {
  std::string name;
  bool pass = true;
  std::string witness;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
};

namespace detail {
inline std::string vec_str(const Vec& v) {
  std::ostringstream os;
  os.precision(10);
  os << "[";
  for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << "]";
  return os.str();
}

// Minimum over the box of an affine function sum_k c_k(theta) w_k; also returns the minimizer.
inline double affine_min(const std::vector<std::pair<CoefRef, double>>& terms, const ParamSpace& ps,
                         Vec& argmin) {
  Vec slope = Vec::Zero(ps.dim());
  double constant = 0.0;
  for (const auto& [c, w] : terms) {
    if (c.free()) slope[c.param] += w;
    else constant += c.value * w;
  }
  argmin = ps.center();
  double v = constant;
  for (int i = 0; i < ps.dim(); ++i) {
    argmin[i] = slope[i] >= 0.0 ? ps.lower[i] : ps.upper[i];
    v += slope[i] * argmin[i];
  }
  return v;
}
}  // namespace detail

// Screens the checkable positivity and shape conditions. Baseline values are affine in
// theta, so their minimum over the box is exact at each grid time.
inline ValidationReport validate_model(const ModelSpec& m, int grid_points = 512) {
  ValidationReport rep;
  try {
    m.check_shapes();
    rep.checks.push_back({"shape_consistency", true, ""});
  } catch (const std::exception& e) {
    rep.checks.push_back({"shape_consistency", false, e.what()});
    return rep;
  }
  const auto& ps = m.param_space;
  const auto& h = m.horizon;
  double worst = std::numeric_limits<double>::infinity();
  std::string witness;
  bool queue_ok = true;
  std::string queue_witness;
  for (int a = 0; a < m.d; ++a) {
    for (const auto& t : m.baseline.terms[a]) {
      if (t.kind == BasisKind::Queue && t.coef.min_over(ps) < 0.0) {
        queue_ok = false;
        Vec arg = ps.center();
        if (t.coef.free()) arg[t.coef.param] = ps.lower[t.coef.param];
        queue_witness = "component " + std::to_string(a) + " theta=" + detail::vec_str(arg);
      }
    }
    for (int k = 0; k <= grid_points; ++k) {
      double tt = grid_points == 1 ? h.t0 : h.t0 + h.length() * k / (grid_points - 1);
      // the extra point is the quadratic's vertex, where the minimum may sit between grid times
      if (k == grid_points) {
        if (m.baseline.variant != BaselineVariant::CenteredQuadratic || m.baseline.center < h.t0 ||
            m.baseline.center > h.t1)
          continue;
        tt = m.baseline.center;
      }
      std::vector<std::pair<CoefRef, double>> terms;
      for (const auto& t : m.baseline.terms[a])
        if (t.kind != BasisKind::Queue) terms.push_back({t.coef, basis_value(t, m.baseline, tt)});
      Vec arg;
      double v = detail::affine_min(terms, ps, arg);
      if (v < worst) {
        worst = v;
        std::ostringstream os;
        os.precision(10);
        os << "component " << a << " t=" << tt << " theta=" << detail::vec_str(arg) << " g=" << v;
        witness = os.str();
      }
    }
  }
  rep.checks.push_back({"baseline_nonnegative", worst >= 0.0 && queue_ok,
                        worst >= 0.0 ? queue_witness : witness});
  if (m.require_positive_baseline) {
    bool pos = worst > 0.0 && !m.baseline.has_queue();
    rep.checks.push_back({"baseline_strictly_positive", pos, witness});
  }
  bool kern_ok = true;
  std::string kw;
  if (m.has_kernel()) {
    for (int a = 0; a < m.d && kern_ok; ++a)
      for (std::size_t c = 0; c < m.kernel.amplitude[a].size(); ++c)
        if (m.kernel.amplitude[a][c].min_over(ps) < 0.0) {
          kern_ok = false;
          kw = "amplitude (" + std::to_string(a) + "," + std::to_string(c) + ") can be negative";
          break;
        }
    if (m.kernel.variant == KernelVariant::Exponential && m.kernel.shape[0].min_over(ps) < 0.0) {
      kern_ok = false;
      kw = "decay rate can be negative";
    }
    if (m.kernel.variant == KernelVariant::PowerLawExp) {
      if (m.kernel.shape[0].min_over(ps) < 0.0) {
        kern_ok = false;
        kw = "decay rate can be negative";
      }
      if (m.kernel.shape[1].min_over(ps) < 0.0) {
        kern_ok = false;
        kw = "power below zero makes the kernel unbounded at lag 0";
      }
    }
    if (m.kernel.variant == KernelVariant::Tabulated)
      for (std::size_t i = 0; i < m.kernel.table->values.size(); ++i)
        if (m.kernel.table->values[i] < 0.0) {
          kern_ok = false;
          kw = "tabulated value negative at lag " + std::to_string(i * m.kernel.table->step);
          break;
        }
  }
  rep.checks.push_back({"kernel_nonnegative", kern_ok, kw});
  return rep;
}

}  // namespace ppreg
