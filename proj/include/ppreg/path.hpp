#pragma once

#include "ppreg/model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace ppreg {

struct PointPath {
  TimeHorizon horizon;
  long long n = 1;
  int d = 1;
  std::vector<std::vector<double>> events;   // per component, in (T0, T1]
  std::vector<std::vector<double>> history;  // per component, in (T^0, T0]; feeds X = N/n only
  ExternalPath external;                     // observed external covariate increments

  PointPath() = default;
  PointPath(const TimeHorizon& h, long long scale, int dim)
      : horizon(h), n(scale), d(dim), events(dim), history(dim) {}

  std::size_t total_events() const {
    std::size_t s = 0;
    for (const auto& e : events) s += e.size();
    return s;
  }

  // Throws DomainError when the ordering, range or no-common-jump conditions fail.
  void check() const {
    if (static_cast<int>(events.size()) != d || static_cast<int>(history.size()) != d)
      throw ModelError("path component count differs from d");
    std::vector<double> all;
    for (int a = 0; a < d; ++a) {
      for (std::size_t i = 0; i < events[a].size(); ++i) {
        double t = events[a][i];
        if (!(t > horizon.t0 && t <= horizon.t1))
          throw DomainError("event time outside (T0, T1]");
        if (i > 0 && !(t > events[a][i - 1])) throw DomainError("event times not strictly increasing");
        all.push_back(t);
      }
      for (std::size_t i = 0; i < history[a].size(); ++i) {
        double t = history[a][i];
        if (!(t > horizon.t_hat0 && t <= horizon.t0)) throw DomainError("history time outside (T^0, T0]");
        if (i > 0 && !(t > history[a][i - 1])) throw DomainError("history times not strictly increasing");
        all.push_back(t);
      }
    }
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
      throw DomainError("two components share a jump time");
  }
};

// Merged events of all components in (T0, T1], sorted by time.
struct MergedEvents {
  std::vector<double> time;
  std::vector<int> comp;
};

inline MergedEvents merge_events(const PointPath& path) {
  MergedEvents m;
  std::vector<std::pair<double, int>> all;
  for (int a = 0; a < path.d; ++a)
    for (double t : path.events[a]) all.push_back({t, a});
  std::sort(all.begin(), all.end());
  for (const auto& [t, a] : all) {
    m.time.push_back(t);
    m.comp.push_back(a);
  }
  return m;
}

// A covariate increment dX at `time` in column `column`.
struct Source {
  double time;
  int column;
  double size;
};

inline std::vector<Source> covariate_sources(const ModelSpec& m, const PointPath& path) {
  std::vector<Source> s;
  if (m.covariate.self_exciting()) {
    double w = 1.0 / static_cast<double>(m.n);
    for (int a = 0; a < path.d; ++a) {
      for (double t : path.history[a]) s.push_back({t, a, w});
      for (double t : path.events[a]) s.push_back({t, a, w});
    }
  }
  if (m.covariate.variant != CovariateVariant::SelfExciting) {
    const auto& ext = path.external;
    for (std::size_t i = 0; i < ext.times.size(); ++i)
      for (int k = 0; k < ext.dim && k < m.covariate.external_dim; ++k)
        if (ext.jumps[i][k] != 0.0)
          s.push_back({ext.times[i], m.covariate.external_column(m.d, k), ext.jumps[i][k]});
  }
  std::stable_sort(s.begin(), s.end(), [](const Source& x, const Source& y) { return x.time < y.time; });
  return s;
}

// Book queue levels seen by the queue basis: piecewise constant, changing at events.
struct QueueTrack {
  std::vector<double> times;            // change times, increasing
  std::vector<std::vector<double>> level;  // level[k][alpha]: Q^alpha/q on [times[k], times[k+1])
  int d = 0;

  // Q/q of component alpha just before t
  double at_left(int alpha, double t) const {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    std::size_t k = static_cast<std::size_t>(it - times.begin());
    return level[k == 0 ? 0 : k - 1][alpha];
  }
  double integral(int alpha, double a, double b) const {
    double s = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      double lo = std::max(a, times[k]);
      double hi = std::min(b, k + 1 < times.size() ? times[k + 1] : b);
      if (hi > lo) s += (hi - lo) * level[k][alpha];
    }
    return s;
  }
};

inline QueueTrack build_queue_track(const ModelSpec& m, const PointPath& path) {
  QueueTrack qt;
  qt.d = m.d;
  if (!m.baseline.has_queue()) return qt;
  const auto& book = *m.baseline.book;
  BookState s = book.initial;
  auto snapshot = [&]() {
    std::vector<double> v(m.d);
    for (int a = 0; a < m.d; ++a) {
      const auto& e = book.event_map[a];
      v[a] = static_cast<double>(std::max(0LL, s.queue(e.side, e.level))) / static_cast<double>(s.q);
    }
    return v;
  };
  qt.times.push_back(m.horizon.t0);
  qt.level.push_back(snapshot());
  auto merged = merge_events(path);
  for (std::size_t i = 0; i < merged.time.size(); ++i) {
    apply_book_event(s, book.event_map[merged.comp[i]]);
    qt.times.push_back(merged.time[i]);
    qt.level.push_back(snapshot());
  }
  return qt;
}

// lambda(t, theta) by direct summation over covariate increments strictly before t.
inline Vec intensity_at(const ModelSpec& m, const Vec& theta, double t, const PointPath& path) {
  m.check_shapes();
  if (theta.size() != m.p()) throw ModelError("theta has wrong dimension");
  if (path.d != m.d) throw ModelError("path dimension differs from model");
  if (!(t >= m.horizon.t0 && t <= m.horizon.t1)) throw DomainError("time outside [T0, T1]");
  Vec lam = Vec::Zero(m.d);
  QueueTrack qt;
  if (m.baseline.has_queue()) qt = build_queue_track(m, path);
  for (int a = 0; a < m.d; ++a)
    for (const auto& term : m.baseline.terms[a]) {
      double phi = term.kind == BasisKind::Queue ? qt.at_left(a, t) : basis_value(term, m.baseline, t);
      lam[a] += term.coef(theta) * phi;
    }
  if (m.has_kernel()) {
    auto eta = m.shape_params(theta);
    for (const auto& s : covariate_sources(m, path)) {
      if (!(s.time < t)) continue;
      double psi = shape_value(m.kernel, eta.data(), t - s.time, 0).v;
      for (int a = 0; a < m.d; ++a) lam[a] += m.kernel.amplitude[a][s.column](theta) * psi * s.size;
    }
  }
  return lam;
}

// ---------------------------------------------------------------- CSV

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}
}  // namespace detail

// Events and history of every component, `component,time` with 17 significant digits.
inline void write_path_csv(const PointPath& path, const std::string& file) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os << "component,time\n";
  std::vector<std::pair<double, int>> all;
  for (int a = 0; a < path.d; ++a) {
    for (double t : path.history[a]) all.push_back({t, a});
    for (double t : path.events[a]) all.push_back({t, a});
  }
  std::sort(all.begin(), all.end());
  for (const auto& [t, a] : all) os << a << ',' << format_g17(t) << '\n';
}

// Cumulative covariate path (time, x_1..x_d0) at every increment time, starting at T^0.
inline void write_covariate_csv(const ModelSpec& m, const PointPath& path, const std::string& file) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  int d0 = m.d0();
  os << "time";
  for (int k = 1; k <= d0; ++k) os << ",x_" << k;
  os << '\n';
  auto sources = covariate_sources(m, path);
  std::vector<double> x(d0, 0.0);
  auto row = [&](double t) {
    os << format_g17(t);
    for (double v : x) os << ',' << format_g17(v);
    os << '\n';
  };
  row(m.horizon.t_hat0);
  for (std::size_t i = 0; i < sources.size();) {
    double t = sources[i].time;
    while (i < sources.size() && sources[i].time == t) {
      x[sources[i].column] += sources[i].size;
      ++i;
    }
    row(t);
  }
}

// Reads `component,time`; times at or before T0 go to the history. An optional covariate
// CSV supplies the external columns as differences of the cumulative path.
inline PointPath read_path_csv(const ModelSpec& m, const std::string& file,
                               const std::string& covariate_file = "") {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open " + file);
  PointPath path(m.horizon, m.n, m.d);
  std::string line;
  if (!std::getline(is, line) || detail::split_csv(line) != std::vector<std::string>{"component", "time"})
    throw ModelError("path CSV must start with header component,time");
  std::vector<std::pair<double, int>> all;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv(line);
    if (f.size() != 2) throw ModelError("path CSV row needs two fields: " + line);
    int a = std::stoi(f[0]);
    if (a < 0 || a >= m.d) throw ModelError("path CSV component out of range: " + line);
    all.push_back({detail::parse_double(f[1]), a});
  }
  std::sort(all.begin(), all.end());
  for (const auto& [t, a] : all) (t <= m.horizon.t0 ? path.history[a] : path.events[a]).push_back(t);
  if (m.covariate.variant != CovariateVariant::SelfExciting) {
    if (!covariate_file.empty()) {
      std::ifstream cs(covariate_file);
      if (!cs) throw std::runtime_error("cannot open " + covariate_file);
      std::getline(cs, line);
      int d0 = m.d0();
      int first_ext = m.covariate.external_column(m.d, 0);
      path.external.dim = m.covariate.external_dim;
      std::vector<double> prev(m.covariate.external_dim, 0.0);
      bool have_prev = false;
      while (std::getline(cs, line)) {
        if (line.empty() || line == "\r") continue;
        auto f = detail::split_csv(line);
        if (static_cast<int>(f.size()) != d0 + 1) throw ModelError("covariate CSV row width: " + line);
        double t = detail::parse_double(f[0]);
        std::vector<double> cur(m.covariate.external_dim);
        for (int k = 0; k < m.covariate.external_dim; ++k) cur[k] = detail::parse_double(f[1 + first_ext + k]);
        if (have_prev) {
          std::vector<double> jump(cur.size());
          bool any = false;
          for (std::size_t k = 0; k < cur.size(); ++k) {
            jump[k] = cur[k] - prev[k];
            if (jump[k] < 0.0) throw ModelError("external covariate path decreases");
            any = any || jump[k] != 0.0;
          }
          if (any) {
            path.external.times.push_back(t);
            path.external.jumps.push_back(jump);
          }
        }
        prev = cur;
        have_prev = true;
      }
    } else if (m.covariate.external) {
      path.external = *m.covariate.external;
    }
  }
  path.check();
  return path;
}

}  // namespace ppreg
