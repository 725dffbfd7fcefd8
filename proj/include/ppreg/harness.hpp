#pragma once

#include "ppreg/asymptotics.hpp"
#include "ppreg/estimate.hpp"
#include "ppreg/likelihood.hpp"
#include "ppreg/model_io.hpp"
#include "ppreg/rng.hpp"
#include "ppreg/simulate.hpp"
#include "ppreg/stats.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace ppreg {

inline constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------- worker pool

// Runs body(i) for i in [0, count) on `threads` workers. Results must be written to
// per-index slots so the caller can fold them in index order.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  threads = std::max(1, threads);
  if (threads == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto work = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(threads, static_cast<int>(count)); ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------- Gaussian-limit moments

// E|X|^k for X ~ N(0, sigma). k = 2 and k = 4 from the eigenvalues, k = 1 from
// E sqrt(Q) = (2 sqrt(pi))^{-1} int_0^inf (1 - E e^{-sQ}) s^{-3/2} ds, other k by Monte Carlo.
inline double gaussian_norm_moment(const Mat& sigma, double k, std::uint64_t seed = 0x6d6f6d,
                                   long samples = 1000000) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (sigma + sigma.transpose()));
  Vec lam = es.eigenvalues().cwiseMax(0.0);
  double tr = lam.sum();
  if (k == 0.0) return 1.0;
  if (k == 2.0) return tr;
  if (k == 4.0) return tr * tr + 2.0 * lam.squaredNorm();
  if (k == 1.0) {
    auto f = [&](double s) {
      double lp = 0.0;
      for (long i = 0; i < lam.size(); ++i) lp += std::log1p(2.0 * s * lam[i]);
      return -std::expm1(-0.5 * lp) * std::pow(s, -1.5);
    };
    boost::math::quadrature::exp_sinh<double> integrator;
    return integrator.integrate(f) / (2.0 * std::sqrt(std::numbers::pi));
  }
  Rng rng(seed);
  double acc = 0.0;
  for (long j = 0; j < samples; ++j) {
    double q = 0.0;
    for (long i = 0; i < lam.size(); ++i) {
      double z = rng.normal();
      q += lam[i] * z * z;
    }
    acc += std::pow(q, 0.5 * k);
  }
  return acc / static_cast<double>(samples);
}

// ---------------------------------------------------------------- configuration

struct McConfig {
  ModelSpec model;
  Vec theta_star;
  std::vector<long long> n_values{100, 400, 1600};
  int replicates = 500;
  bool use_qmle = true;
  bool use_qbe = true;
  std::uint64_t seed = 1;
  std::vector<double> moment_orders{1.0, 2.0, 4.0};
  int threads = 1;
  SimMethod sim_method = SimMethod::Thinning;
  int qmle_starts = 4;
  int qbe_nodes = 16;
  double qbe_spread = 1.7;
  double coverage_level = 0.95;
  double abort_fraction = 0.2;
  long moment_mc_samples = 1000000;

  void check() const {
    model.check_shapes();
    if (theta_star.size() != model.p()) throw ModelError("theta_star has wrong dimension");
    model.check_theta(theta_star);
    if (replicates < 2) throw ModelError("replicates must be at least 2");
    if (n_values.empty()) throw ModelError("n_values must not be empty");
    for (std::size_t i = 0; i < n_values.size(); ++i) {
      if (n_values[i] < 1) throw ModelError("n_values must be positive");
      if (i > 0 && !(n_values[i] > n_values[i - 1])) throw ModelError("n_values must be strictly increasing");
    }
    if (!use_qmle && !use_qbe) throw ModelError("select at least one estimator");
  }
};

inline json mc_config_to_json(const McConfig& c) {
  json j;
  j["model"] = model_to_json(c.model);
  j["theta_star"] = detail::vec_to(c.theta_star);
  j["n_values"] = c.n_values;
  j["replicates"] = c.replicates;
  json est = json::array();
  if (c.use_qmle) est.push_back("qmle");
  if (c.use_qbe) est.push_back("qbe");
  j["estimators"] = est;
  j["seed"] = c.seed;
  j["moment_orders"] = c.moment_orders;
  j["sim_method"] = c.sim_method == SimMethod::ExpExact ? "exp_exact" : "thinning";
  j["qmle_starts"] = c.qmle_starts;
  j["qbe_nodes"] = c.qbe_nodes;
  j["qbe_spread"] = c.qbe_spread;
  j["coverage_level"] = c.coverage_level;
  j["abort_fraction"] = c.abort_fraction;
  j["moment_mc_samples"] = c.moment_mc_samples;
  return j;
}

// `model` may be inline JSON or a file name (resolved against base_dir).
inline McConfig mc_config_from_json(const json& j, const std::string& base_dir = ".") {
  McConfig c;
  try {
    const auto& mj = detail::field(j, "model");
    if (mj.is_string()) {
      std::filesystem::path p = mj.get<std::string>();
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      c.model = load_model(p.string());
    } else {
      c.model = model_from_json(mj);
    }
    c.theta_star = detail::vec_from(detail::field(j, "theta_star"), "theta_star");
    if (j.contains("n_values")) c.n_values = j.at("n_values").get<std::vector<long long>>();
    c.replicates = j.value("replicates", c.replicates);
    if (j.contains("estimators")) {
      auto e = j.at("estimators").get<std::vector<std::string>>();
      c.use_qmle = std::find(e.begin(), e.end(), "qmle") != e.end();
      c.use_qbe = std::find(e.begin(), e.end(), "qbe") != e.end();
      for (const auto& s : e)
        if (s != "qmle" && s != "qbe") throw ModelError("unknown estimator '" + s + "'");
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("moment_orders")) c.moment_orders = j.at("moment_orders").get<std::vector<double>>();
    auto sm = j.value("sim_method", std::string("thinning"));
    if (sm != "thinning" && sm != "exp_exact") throw ModelError("sim_method must be thinning or exp_exact");
    c.sim_method = sm == "exp_exact" ? SimMethod::ExpExact : SimMethod::Thinning;
    c.qmle_starts = j.value("qmle_starts", c.qmle_starts);
    c.qbe_nodes = j.value("qbe_nodes", c.qbe_nodes);
    c.qbe_spread = j.value("qbe_spread", c.qbe_spread);
    c.coverage_level = j.value("coverage_level", c.coverage_level);
    c.abort_fraction = j.value("abort_fraction", c.abort_fraction);
    c.moment_mc_samples = j.value("moment_mc_samples", c.moment_mc_samples);
  } catch (const json::exception& e) {
    throw ModelError(std::string("study config: ") + e.what());
  }
  c.check();
  return c;
}

// FNV-1a over the canonical (sorted-key) JSON dump.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const McConfig& c) { return hex64(fnv1a(mc_config_to_json(c).dump())); }

// ---------------------------------------------------------------- summary types

struct ReplicateRecord {
  bool ok = false;
  std::string error;
  std::uint64_t seed = 0;
  std::size_t events = 0;
  bool converged = false;
  Vec u_qmle;  // sqrt(n) (theta_hat - theta*)
  Vec u_qbe;   // sqrt(n) (theta_tilde - theta*)
  Vec se;      // QMLE standard errors
  double gamma_gap = std::nan("");  // ||Gamma_n(theta_hat) - Gamma||_F / ||Gamma||_F
};

struct EstimatorSummary {
  std::string name;
  Vec bias;                        // mean of theta_est - theta*
  Mat cov;                         // empirical covariance of sqrt(n)(theta_est - theta*)
  double cov_gap = std::nan("");   // Frobenius relative gap to Gamma^{-1}
  std::vector<double> ad_stat;     // Anderson-Darling per coordinate of Gamma^{1/2} u
  std::vector<double> ad_p;
  std::vector<double> moments;     // E|u|^k per moment order
  std::vector<double> moment_gap;  // |moment / gaussian - 1|
  Vec coverage;                    // per-coordinate CI coverage (QMLE only)
};

struct NSummary {
  long long n = 0;
  int replicates = 0;
  int failures = 0;
  int nonconverged = 0;
  std::map<std::string, int> failure_reasons;
  double gamma_gap_median = std::nan("");
  std::vector<ReplicateRecord> records;
  std::vector<EstimatorSummary> estimators;

  const EstimatorSummary* find(const std::string& name) const {
    for (const auto& e : estimators)
      if (e.name == name) return &e;
    return nullptr;
  }
};

struct McSummary {
  std::string config_hash;
  std::uint64_t seed = 0;
  bool diagnostics_only = false;  // Gamma is random for this model: Gamma-based checks skipped
  bool aborted = false;
  std::string diagnostic;
  Mat gamma;
  Mat gamma_inv;
  std::vector<double> moment_orders;
  std::vector<double> gaussian_moments;
  std::vector<NSummary> per_n;
};

// Gamma is deterministic when the covariate is the self-exciting one and the baseline
// is deterministic; otherwise the harness reports diagnostics only.
inline bool deterministic_gamma(const ModelSpec& m) {
  return m.covariate.variant == CovariateVariant::SelfExciting && !m.baseline.has_queue();
}

namespace detail {

inline EstimatorSummary summarize_estimator(const std::string& name, const std::vector<Vec>& us, long long n,
                                            const McSummary& s, const std::vector<Vec>* se, const Vec& theta_star,
                                            double level) {
  EstimatorSummary e;
  e.name = name;
  const long p = theta_star.size();
  const double cnt = static_cast<double>(us.size());
  const double rn = std::sqrt(static_cast<double>(n));
  Vec mean = Vec::Zero(p);
  for (const auto& u : us) mean += u;
  if (!us.empty()) mean /= cnt;
  e.bias = mean / rn;
  e.cov = Mat::Zero(p, p);
  for (const auto& u : us) e.cov += (u - mean) * (u - mean).transpose();
  if (us.size() > 1) e.cov /= cnt - 1.0;
  bool have_gamma = s.gamma.size() > 0;
  if (have_gamma) e.cov_gap = frobenius_rel_gap(e.cov, s.gamma_inv);
  if (have_gamma && us.size() >= 2) {
    Mat root = sym_sqrt(s.gamma);
    for (long i = 0; i < p; ++i) {
      std::vector<double> z;
      for (const auto& u : us) z.push_back((root * u)[i]);
      auto t = stats::anderson_darling_normal(z);
      e.ad_stat.push_back(t.statistic);
      e.ad_p.push_back(t.p_value);
    }
  }
  for (std::size_t k = 0; k < s.moment_orders.size(); ++k) {
    double acc = 0.0;
    for (const auto& u : us) acc += std::pow(u.norm(), s.moment_orders[k]);
    double mom = us.empty() ? std::nan("") : acc / cnt;
    e.moments.push_back(mom);
    e.moment_gap.push_back(have_gamma ? std::abs(mom / s.gaussian_moments[k] - 1.0) : std::nan(""));
  }
  if (se) {
    double z = stats::normal_quantile(0.5 + 0.5 * level);
    e.coverage = Vec::Zero(p);
    for (std::size_t r = 0; r < us.size(); ++r)
      for (long i = 0; i < p; ++i)
        if (std::abs(us[r][i] / rn) <= z * (*se)[r][i]) e.coverage[i] += 1.0;
    if (!us.empty()) e.coverage /= cnt;
  }
  return e;
}

}  // namespace detail

// simulate -> estimate for every n and replicate; QMLE and QBE share each simulated path.
inline McSummary mc_study(const McConfig& cfg) {
  cfg.check();
  auto vr = validate_model(cfg.model);
  if (!vr.ok()) {
    std::string why;
    for (const auto& c : vr.checks)
      if (!c.pass) why += c.name + " (" + c.witness + ") ";
    throw ModelError("model fails validation: " + why);
  }
  McSummary s;
  s.config_hash = config_hash(cfg);
  s.seed = cfg.seed;
  s.moment_orders = cfg.moment_orders;
  s.diagnostics_only = !deterministic_gamma(cfg.model);
  const int p = cfg.model.p();
  if (!s.diagnostics_only) {
    auto G = gamma_matrix(cfg.model, cfg.theta_star);
    if (!(G.min_eigenvalue > 0.0)) throw DegenerateInformation("Gamma is not positive definite at theta*");
    s.gamma = G.gamma;
    s.gamma_inv = G.gamma.llt().solve(Mat::Identity(p, p));
    for (double k : cfg.moment_orders)
      s.gaussian_moments.push_back(gaussian_norm_moment(s.gamma_inv, k, stream_seed(cfg.seed, {0x6d6f6d}), cfg.moment_mc_samples));
  }
  for (std::size_t ni = 0; ni < cfg.n_values.size(); ++ni) {
    long long n = cfg.n_values[ni];
    ModelSpec m = cfg.model;
    m.n = n;
    NSummary ns;
    ns.n = n;
    ns.replicates = cfg.replicates;
    ns.records.resize(cfg.replicates);
    parallel_for(static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
      ReplicateRecord rec;
      rec.seed = stream_seed(cfg.seed, {static_cast<std::uint64_t>(n), r});
      try {
        SimOptions so;
        so.seed = rec.seed;
        so.method = cfg.sim_method;
        auto path = simulate(m, cfg.theta_star, so);
        rec.events = path.total_events();
        QuasiLikelihood ql(m, path);
        QmleOptions qo;
        qo.starts = cfg.qmle_starts;
        qo.seed = stream_seed(rec.seed, {1});
        auto mode = qmle(ql, qo);
        double rn = std::sqrt(static_cast<double>(n));
        rec.converged = mode.converged;
        rec.u_qmle = rn * (mode.theta_hat - cfg.theta_star);
        rec.se = mode.std_error;
        if (s.gamma.size()) rec.gamma_gap = frobenius_rel_gap(mode.observed_info, s.gamma);
        if (cfg.use_qbe) {
          QbeOptions bo;
          bo.nodes = cfg.qbe_nodes;
          bo.spread = cfg.qbe_spread;
          bo.seed = stream_seed(rec.seed, {2});
          auto tilde = qbe(ql, Prior::uniform(), bo, mode);
          rec.u_qbe = rn * (tilde.theta_tilde - cfg.theta_star);
          if (!rec.u_qbe.allFinite()) throw NumericalError("QBE produced a non-finite estimate");
        }
        rec.ok = true;
      } catch (const NumericalError& e) {
        rec.ok = false;
        rec.error = e.what();
      }
      ns.records[r] = std::move(rec);
    });
    std::vector<Vec> uq, ub, se;
    std::vector<double> gaps;
    for (const auto& rec : ns.records) {
      if (!rec.ok) {
        ++ns.failures;
        ++ns.failure_reasons[rec.error];
        continue;
      }
      if (!rec.converged) ++ns.nonconverged;
      uq.push_back(rec.u_qmle);
      se.push_back(rec.se);
      if (cfg.use_qbe) ub.push_back(rec.u_qbe);
      if (std::isfinite(rec.gamma_gap)) gaps.push_back(rec.gamma_gap);
    }
    if (!gaps.empty()) ns.gamma_gap_median = stats::median(gaps);
    if (cfg.use_qmle)
      ns.estimators.push_back(detail::summarize_estimator("qmle", uq, n, s, &se, cfg.theta_star, cfg.coverage_level));
    if (cfg.use_qbe)
      ns.estimators.push_back(detail::summarize_estimator("qbe", ub, n, s, nullptr, cfg.theta_star, cfg.coverage_level));
    bool abort = ns.failures > cfg.abort_fraction * cfg.replicates;
    s.per_n.push_back(std::move(ns));
    if (abort) {
      s.aborted = true;
      s.diagnostic = "estimation failure rate above " + std::to_string(cfg.abort_fraction) + " at n=" +
                     std::to_string(n) + ": " + std::to_string(s.per_n.back().failures) + " of " +
                     std::to_string(cfg.replicates);
      break;
    }
  }
  return s;
}

// ---------------------------------------------------------------- PLDI probe

struct PldiConfig {
  ModelSpec model;
  Vec theta_star;
  long long n = 400;
  std::vector<double> r_grid{1.0, 2.0, 4.0, 8.0};
  int replicates = 2000;
  std::uint64_t seed = 1;
  int points_per_axis = 61;
  int threads = 1;
  int qmle_starts = 4;
  SimMethod sim_method = SimMethod::Thinning;
};

struct PldiRow {
  double r = 0.0;
  long exceed = 0;
  long trials = 0;
  double prob = 0.0;
  stats::Interval wilson;
};

struct PldiResult {
  std::vector<PldiRow> rows;
  long failures = 0;
  long coarse_grid = 0;  // replicates where refinement beat the grid max by > 1e-3 in log
  long grid_searches = 0;

  // Nonincreasing up to interval width: no later Wilson interval lies wholly above an earlier one.
  bool monotone() const {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].wilson.lower > rows[i - 1].wilson.upper) return false;
    return true;
  }
};

namespace detail {

struct PldiOutcome {
  bool ok = false;
  std::vector<bool> exceed;
  bool coarse = false;
  bool searched = false;
};

// sup over U_n with |u| >= r of log Z_n(u) >= -r, for each r. Any point with |u| >= r and
// log Z >= -r settles r at once. Candidates in order: the QMLE; the points where the
// principal axes of the observed information through the QMLE cross |u| = r, each
// followed by a compass ascent restricted to |u| >= r; and, only for r still open, the
// dense grid with a compass refinement at its max.
inline PldiOutcome pldi_replicate(const ModelSpec& m, const Vec& theta_star, const std::vector<double>& rs,
                                  const PointPath& path, int points_per_axis, int starts, std::uint64_t seed) {
  PldiOutcome out;
  out.exceed.assign(rs.size(), false);
  QuasiLikelihood ql(m, path);
  const int p = m.p();
  const auto& ps = m.param_space;
  const double rn = std::sqrt(static_cast<double>(m.n));
  double l_star = ql.value(theta_star);
  if (!std::isfinite(l_star)) throw NumericalError("likelihood infeasible at theta*");
  auto logz = [&](const Vec& th) { return ql.value(th) - l_star; };
  auto settle = [&](const Vec& u, double lz) {
    double nu = u.norm();
    for (std::size_t k = 0; k < rs.size(); ++k)
      if (nu >= rs[k] && lz >= -rs[k]) out.exceed[k] = true;
  };
  auto pending = [&] {
    for (bool e : out.exceed)
      if (!e) return true;
    return false;
  };
  // compass ascent of log Z over the box minus the ball |u| < r
  auto refine = [&](Vec cur, double cv, double r, Vec step) {
    for (int round = 0; round < 60; ++round) {
      bool moved = false;
      for (int i = 0; i < p; ++i)
        for (int sgn : {-1, 1}) {
          Vec cand = cur;
          cand[i] = std::clamp(cand[i] + sgn * step[i], ps.lower[i], ps.upper[i]);
          if ((rn * (cand - theta_star)).norm() < r) continue;
          double lz = logz(cand);
          if (lz > cv) {
            cv = lz;
            cur = cand;
            moved = true;
          }
        }
      if (cv >= -r) break;
      if (!moved) step *= 0.5;
      if (step.maxCoeff() < 1e-10 * ps.width().maxCoeff()) break;
    }
    return cv;
  };

  QmleOptions qo;
  qo.starts = starts;
  qo.seed = seed;
  auto mode = qmle(ql, qo);
  Vec u_hat = rn * (mode.theta_hat - theta_star);
  settle(u_hat, mode.loglik - l_star);
  settle(Vec::Zero(p), 0.0);  // r = 0 boundary case
  if (!pending()) {
    out.ok = true;
    return out;
  }

  if (mode.observed_info.size() == p * p && mode.observed_info.allFinite()) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (mode.observed_info + mode.observed_info.transpose()));
    for (std::size_t j = 0; j < rs.size(); ++j) {
      if (out.exceed[j]) continue;
      double r = rs[j], best = -std::numeric_limits<double>::infinity();
      Vec arg;
      for (int k = 0; k < p && !out.exceed[j]; ++k)
        for (int sgn : {-1, 1}) {
          // u_hat + s v crosses |u| = r at the larger root of a quadratic in s
          Vec v = sgn * rn * es.eigenvectors().col(k);
          double ra = r * (1.0 + 1e-9);  // just outside, against rounding
          double a2 = v.squaredNorm(), b1 = u_hat.dot(v), c0 = u_hat.squaredNorm() - ra * ra;
          double disc = b1 * b1 - a2 * c0;
          if (!(disc >= 0.0)) continue;
          double sroot = (-b1 + std::sqrt(disc)) / a2;
          if (!(sroot > 0.0)) continue;
          Vec th = ps.clamp(Vec(mode.theta_hat + sroot * es.eigenvectors().col(k) * sgn));
          Vec u = rn * (th - theta_star);
          if (u.norm() < r) continue;
          double lz = logz(th);
          settle(u, lz);
          if (lz > best) {
            best = lz;
            arg = th;
          }
        }
      if (!out.exceed[j] && arg.size() == p) {
        double cv = refine(arg, best, r, ps.width() / (points_per_axis - 1.0));
        if (cv >= -r) out.exceed[j] = true;
      }
    }
  }
  if (!pending()) {
    out.ok = true;
    return out;
  }

  if (p > 3) throw UnsupportedError("PLDI grid search supports p <= 3");
  out.searched = true;
  const int k = points_per_axis;
  long total = 1;
  for (int i = 0; i < p; ++i) total *= k;
  std::vector<double> best(rs.size(), -std::numeric_limits<double>::infinity());
  std::vector<Vec> arg(rs.size());
  for (long idx = 0; idx < total; ++idx) {
    long rem = idx;
    Vec th(p);
    for (int i = 0; i < p; ++i) {
      th[i] = ps.lower[i] + ps.width()[i] * (rem % k) / (k - 1.0);
      rem /= k;
    }
    Vec u = rn * (th - theta_star);
    double nu = u.norm();
    bool wanted = false;
    for (std::size_t j = 0; j < rs.size(); ++j) wanted = wanted || (!out.exceed[j] && nu >= rs[j]);
    if (!wanted) continue;
    double lz = logz(th);
    for (std::size_t j = 0; j < rs.size(); ++j)
      if (nu >= rs[j] && lz > best[j]) {
        best[j] = lz;
        arg[j] = th;
      }
  }
  for (std::size_t j = 0; j < rs.size(); ++j) {
    if (out.exceed[j] || arg[j].size() == 0) continue;
    double cv = refine(arg[j], best[j], rs[j], ps.width() / (k - 1.0));
    if (cv > best[j] + 1e-3) out.coarse = true;
    if (cv >= -rs[j]) out.exceed[j] = true;
  }
  out.ok = true;
  return out;
}

}  // namespace detail

inline PldiResult pldi_probe(const PldiConfig& cfg) {
  cfg.model.check_shapes();
  cfg.model.check_theta(cfg.theta_star);
  if (cfg.replicates < 1) throw ModelError("replicates must be positive");
  if (cfg.points_per_axis < 2) throw ModelError("points_per_axis must be at least 2");
  for (double r : cfg.r_grid)
    if (!(r >= 0.0)) throw ModelError("r grid must be nonnegative");
  ModelSpec m = cfg.model;
  m.n = cfg.n;
  std::vector<detail::PldiOutcome> outs(cfg.replicates);
  parallel_for(static_cast<std::size_t>(cfg.replicates), cfg.threads, [&](std::size_t r) {
    auto seed = stream_seed(cfg.seed, {0x706c6469, static_cast<std::uint64_t>(cfg.n), r});
    try {
      SimOptions so;
      so.seed = seed;
      so.method = cfg.sim_method;
      auto path = simulate(m, cfg.theta_star, so);
      outs[r] = detail::pldi_replicate(m, cfg.theta_star, cfg.r_grid, path, cfg.points_per_axis, cfg.qmle_starts,
                                       stream_seed(seed, {1}));
    } catch (const NumericalError&) {
      outs[r].ok = false;
    }
  });
  PldiResult res;
  for (std::size_t j = 0; j < cfg.r_grid.size(); ++j) {
    PldiRow row;
    row.r = cfg.r_grid[j];
    for (const auto& o : outs) {
      if (!o.ok) continue;
      ++row.trials;
      if (o.exceed[j]) ++row.exceed;
    }
    row.prob = row.trials ? static_cast<double>(row.exceed) / row.trials : std::nan("");
    row.wilson = row.trials ? stats::wilson_interval(row.exceed, row.trials) : stats::Interval{0.0, 1.0};
    res.rows.push_back(row);
  }
  for (const auto& o : outs) {
    if (!o.ok) ++res.failures;
    if (o.coarse) ++res.coarse_grid;
    if (o.searched) ++res.grid_searches;
  }
  return res;
}

// ---------------------------------------------------------------- export / import

namespace detail {

inline json num_to_json(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}
inline double num_from_json(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) return j.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                          : -std::numeric_limits<double>::infinity();
  return j.get<double>();
}
inline json dvec_to_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num_to_json(x));
  return a;
}
inline std::vector<double> dvec_from_json(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(num_from_json(x));
  return v;
}
inline json evec_to_json(const Vec& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(num_to_json(v[i]));
  return a;
}
inline Vec evec_from_json(const json& j) {
  Vec v(static_cast<long>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<long>(i)] = num_from_json(j[i]);
  return v;
}
inline json mat_to_json(const Mat& m) {
  json a = json::array();
  for (long i = 0; i < m.rows(); ++i) a.push_back(evec_to_json(m.row(i).transpose()));
  return a;
}
inline Mat mat_from_json(const json& j) {
  if (j.empty()) return Mat();
  Mat m(static_cast<long>(j.size()), static_cast<long>(j[0].size()));
  for (std::size_t i = 0; i < j.size(); ++i) m.row(static_cast<long>(i)) = evec_from_json(j[i]).transpose();
  return m;
}

}  // namespace detail

inline json summary_to_json(const McSummary& s) {
  using namespace detail;
  json j;
  j["config_hash"] = s.config_hash;
  j["seed"] = s.seed;
  j["diagnostics_only"] = s.diagnostics_only;
  j["aborted"] = s.aborted;
  j["diagnostic"] = s.diagnostic;
  j["gamma"] = mat_to_json(s.gamma);
  j["gamma_inv"] = mat_to_json(s.gamma_inv);
  j["moment_orders"] = dvec_to_json(s.moment_orders);
  j["gaussian_moments"] = dvec_to_json(s.gaussian_moments);
  json per = json::array();
  for (const auto& ns : s.per_n) {
    json a;
    a["n"] = ns.n;
    a["replicates"] = ns.replicates;
    a["failures"] = ns.failures;
    a["nonconverged"] = ns.nonconverged;
    a["failure_reasons"] = ns.failure_reasons;
    a["gamma_gap_median"] = num_to_json(ns.gamma_gap_median);
    json est = json::array();
    for (const auto& e : ns.estimators) {
      json b;
      b["name"] = e.name;
      b["bias"] = evec_to_json(e.bias);
      b["cov"] = mat_to_json(e.cov);
      b["cov_gap"] = num_to_json(e.cov_gap);
      b["ad_stat"] = dvec_to_json(e.ad_stat);
      b["ad_p"] = dvec_to_json(e.ad_p);
      b["moments"] = dvec_to_json(e.moments);
      b["moment_gap"] = dvec_to_json(e.moment_gap);
      b["coverage"] = evec_to_json(e.coverage);
      est.push_back(b);
    }
    a["estimators"] = est;
    json recs = json::array();
    for (const auto& r : ns.records) {
      json b;
      b["ok"] = r.ok;
      b["error"] = r.error;
      b["seed"] = r.seed;
      b["events"] = r.events;
      b["converged"] = r.converged;
      b["u_qmle"] = evec_to_json(r.u_qmle);
      b["u_qbe"] = evec_to_json(r.u_qbe);
      b["se"] = evec_to_json(r.se);
      b["gamma_gap"] = num_to_json(r.gamma_gap);
      recs.push_back(b);
    }
    a["records"] = recs;
    per.push_back(a);
  }
  j["per_n"] = per;
  return j;
}

inline McSummary summary_from_json(const json& j) {
  using namespace detail;
  McSummary s;
  s.config_hash = j.at("config_hash").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.diagnostics_only = j.at("diagnostics_only").get<bool>();
  s.aborted = j.at("aborted").get<bool>();
  s.diagnostic = j.at("diagnostic").get<std::string>();
  s.gamma = mat_from_json(j.at("gamma"));
  s.gamma_inv = mat_from_json(j.at("gamma_inv"));
  s.moment_orders = dvec_from_json(j.at("moment_orders"));
  s.gaussian_moments = dvec_from_json(j.at("gaussian_moments"));
  for (const auto& a : j.at("per_n")) {
    NSummary ns;
    ns.n = a.at("n").get<long long>();
    ns.replicates = a.at("replicates").get<int>();
    ns.failures = a.at("failures").get<int>();
    ns.nonconverged = a.at("nonconverged").get<int>();
    ns.failure_reasons = a.at("failure_reasons").get<std::map<std::string, int>>();
    ns.gamma_gap_median = num_from_json(a.at("gamma_gap_median"));
    for (const auto& b : a.at("estimators")) {
      EstimatorSummary e;
      e.name = b.at("name").get<std::string>();
      e.bias = evec_from_json(b.at("bias"));
      e.cov = mat_from_json(b.at("cov"));
      e.cov_gap = num_from_json(b.at("cov_gap"));
      e.ad_stat = dvec_from_json(b.at("ad_stat"));
      e.ad_p = dvec_from_json(b.at("ad_p"));
      e.moments = dvec_from_json(b.at("moments"));
      e.moment_gap = dvec_from_json(b.at("moment_gap"));
      e.coverage = evec_from_json(b.at("coverage"));
      ns.estimators.push_back(e);
    }
    for (const auto& b : a.at("records")) {
      ReplicateRecord r;
      r.ok = b.at("ok").get<bool>();
      r.error = b.at("error").get<std::string>();
      r.seed = b.at("seed").get<std::uint64_t>();
      r.events = b.at("events").get<std::size_t>();
      r.converged = b.at("converged").get<bool>();
      r.u_qmle = evec_from_json(b.at("u_qmle"));
      r.u_qbe = evec_from_json(b.at("u_qbe"));
      r.se = evec_from_json(b.at("se"));
      r.gamma_gap = num_from_json(b.at("gamma_gap"));
      ns.records.push_back(r);
    }
    s.per_n.push_back(std::move(ns));
  }
  return s;
}

// Bitwise equality with NaN equal to NaN.
inline bool same_bits(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || std::memcmp(&a, &b, sizeof a) == 0;
}
inline bool same_bits(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (long i = 0; i < a.size(); ++i)
    if (!same_bits(a.data()[i], b.data()[i])) return false;
  return true;
}
inline bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same_bits(a[i], b[i])) return false;
  return true;
}

inline bool summaries_identical(const McSummary& a, const McSummary& b) {
  if (a.config_hash != b.config_hash || a.seed != b.seed || a.diagnostics_only != b.diagnostics_only ||
      a.aborted != b.aborted || a.diagnostic != b.diagnostic || !same_bits(a.gamma, b.gamma) ||
      !same_bits(a.gamma_inv, b.gamma_inv) || !same_bits(a.moment_orders, b.moment_orders) ||
      !same_bits(a.gaussian_moments, b.gaussian_moments) || a.per_n.size() != b.per_n.size())
    return false;
  for (std::size_t i = 0; i < a.per_n.size(); ++i) {
    const auto &x = a.per_n[i], &y = b.per_n[i];
    if (x.n != y.n || x.replicates != y.replicates || x.failures != y.failures || x.nonconverged != y.nonconverged ||
        x.failure_reasons != y.failure_reasons || !same_bits(x.gamma_gap_median, y.gamma_gap_median) ||
        x.estimators.size() != y.estimators.size() || x.records.size() != y.records.size())
      return false;
    for (std::size_t k = 0; k < x.estimators.size(); ++k) {
      const auto &e = x.estimators[k], &f = y.estimators[k];
      if (e.name != f.name || !same_bits(e.bias, f.bias) || !same_bits(e.cov, f.cov) || !same_bits(e.cov_gap, f.cov_gap) ||
          !same_bits(e.ad_stat, f.ad_stat) || !same_bits(e.ad_p, f.ad_p) || !same_bits(e.moments, f.moments) ||
          !same_bits(e.moment_gap, f.moment_gap) || !same_bits(e.coverage, f.coverage))
        return false;
    }
    for (std::size_t k = 0; k < x.records.size(); ++k) {
      const auto &r = x.records[k], &q = y.records[k];
      if (r.ok != q.ok || r.error != q.error || r.seed != q.seed || r.events != q.events || r.converged != q.converged ||
          !same_bits(r.u_qmle, q.u_qmle) || !same_bits(r.u_qbe, q.u_qbe) || !same_bits(r.se, q.se) ||
          !same_bits(r.gamma_gap, q.gamma_gap))
        return false;
    }
  }
  return true;
}

namespace detail {
inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}
}  // namespace detail

// Writes manifest.json and, unless the summary is empty, summary.json, summary.csv,
// long.csv (n, estimator, statistic, value) and replicates.csv.
inline void export_summary(const McSummary& s, const McConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json man;
  man["version"] = kVersion;
  man["config_hash"] = s.config_hash;
  man["seed"] = s.seed;
  man["seed_rule"] = "replicate r at scale n uses stream_seed(seed, {n, r})";
  man["config"] = mc_config_to_json(cfg);
  json files = json::array();
  if (!s.per_n.empty()) files = {"summary.json", "summary.csv", "long.csv", "replicates.csv"};
  man["files"] = files;
  detail::write_file(fs::path(dir) / "manifest.json", man.dump(2) + "\n");
  if (s.per_n.empty()) return;
  detail::write_file(fs::path(dir) / "summary.json", summary_to_json(s).dump(1) + "\n");

  std::string csv = "n,estimator,replicates,failures,nonconverged,cov_gap,gamma_gap_median";
  const int p = s.gamma.rows() ? static_cast<int>(s.gamma.rows()) : (s.per_n[0].estimators.empty() ? 0 : static_cast<int>(s.per_n[0].estimators[0].bias.size()));
  for (int i = 0; i < p; ++i) csv += ",bias_" + std::to_string(i) + ",ad_p_" + std::to_string(i);
  for (double k : s.moment_orders) csv += ",moment_" + format_g17(k) + ",moment_gap_" + format_g17(k);
  csv += "\n";
  std::string lng = "n,estimator,statistic,value\n";
  auto cell = [](double v) { return std::isnan(v) ? std::string("nan") : format_g17(v); };
  for (const auto& ns : s.per_n)
    for (const auto& e : ns.estimators) {
      csv += std::to_string(ns.n) + "," + e.name + "," + std::to_string(ns.replicates) + "," +
             std::to_string(ns.failures) + "," + std::to_string(ns.nonconverged) + "," + cell(e.cov_gap) + "," +
             cell(ns.gamma_gap_median);
      for (int i = 0; i < p; ++i)
        csv += "," + cell(i < e.bias.size() ? e.bias[i] : std::nan("")) + "," +
               cell(i < static_cast<int>(e.ad_p.size()) ? e.ad_p[i] : std::nan(""));
      for (std::size_t k = 0; k < s.moment_orders.size(); ++k) csv += "," + cell(e.moments[k]) + "," + cell(e.moment_gap[k]);
      csv += "\n";
      auto row = [&](const std::string& stat, double v) {
        lng += std::to_string(ns.n) + "," + e.name + "," + stat + "," + cell(v) + "\n";
      };
      row("cov_gap", e.cov_gap);
      row("gamma_gap_median", ns.gamma_gap_median);
      row("failures", ns.failures);
      for (long i = 0; i < e.bias.size(); ++i) row("bias_" + std::to_string(i), e.bias[i]);
      for (std::size_t i = 0; i < e.ad_p.size(); ++i) row("ad_p_" + std::to_string(i), e.ad_p[i]);
      for (long i = 0; i < e.coverage.size(); ++i) row("coverage_" + std::to_string(i), e.coverage[i]);
      for (std::size_t k = 0; k < s.moment_orders.size(); ++k) {
        row("moment_" + format_g17(s.moment_orders[k]), e.moments[k]);
        row("moment_gap_" + format_g17(s.moment_orders[k]), e.moment_gap[k]);
        if (k < s.gaussian_moments.size()) row("gaussian_moment_" + format_g17(s.moment_orders[k]), s.gaussian_moments[k]);
      }
    }
  detail::write_file(fs::path(dir) / "summary.csv", csv);
  detail::write_file(fs::path(dir) / "long.csv", lng);

  std::string rep = "n,replicate,seed,ok,events,converged,gamma_gap";
  for (int i = 0; i < p; ++i) rep += ",u_qmle_" + std::to_string(i);
  for (int i = 0; i < p; ++i) rep += ",u_qbe_" + std::to_string(i);
  rep += "\n";
  for (const auto& ns : s.per_n)
    for (std::size_t r = 0; r < ns.records.size(); ++r) {
      const auto& rec = ns.records[r];
      rep += std::to_string(ns.n) + "," + std::to_string(r) + "," + std::to_string(rec.seed) + "," +
             (rec.ok ? "1" : "0") + "," + std::to_string(rec.events) + "," + (rec.converged ? "1" : "0") + "," +
             cell(rec.gamma_gap);
      for (int i = 0; i < p; ++i) rep += "," + cell(i < rec.u_qmle.size() ? rec.u_qmle[i] : std::nan(""));
      for (int i = 0; i < p; ++i) rep += "," + cell(i < rec.u_qbe.size() ? rec.u_qbe[i] : std::nan(""));
      rep += "\n";
    }
  detail::write_file(fs::path(dir) / "replicates.csv", rep);
}

inline McSummary import_summary(const std::string& dir) {
  return summary_from_json(read_json_file((std::filesystem::path(dir) / "summary.json").string()));
}

inline void export_pldi(const PldiResult& r, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::string csv = "r,exceed,trials,prob,wilson_lower,wilson_upper\n";
  for (const auto& row : r.rows)
    csv += format_g17(row.r) + "," + std::to_string(row.exceed) + "," + std::to_string(row.trials) + "," +
           format_g17(row.prob) + "," + format_g17(row.wilson.lower) + "," + format_g17(row.wilson.upper) + "\n";
  detail::write_file(fs::path(dir) / "pldi.csv", csv);
  json j;
  j["monotone"] = r.monotone();
  j["failures"] = r.failures;
  j["coarse_grid"] = r.coarse_grid;
  j["grid_searches"] = r.grid_searches;
  detail::write_file(fs::path(dir) / "pldi.json", j.dump(2) + "\n");
}

}  // namespace ppreg
