#pragma once

#include "ppreg/book.hpp"
#include "ppreg/model.hpp"
#include "ppreg/path.hpp"

#include <Eigen/Dense>

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ppreg {

using IntMat = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic>;
using IntVec = Eigen::Matrix<long long, Eigen::Dynamic, 1>;

// Y = A N with A = a_unit * weights and integer weights.
struct PriceMap {
  double a_unit = 1.0;
  IntMat weights;  // m x d

  int d() const { return static_cast<int>(weights.cols()); }
  int m() const { return static_cast<int>(weights.rows()); }

  Mat matrix() const { return a_unit * weights.cast<double>(); }

  // Exact integer part W N; the price is a_unit times this.
  IntVec ticks(const IntVec& counts) const {
    if (counts.size() != weights.cols()) throw ModelError("price map: count vector length differs from d");
    return weights * counts;
  }
  Vec apply(const IntVec& counts) const { return a_unit * ticks(counts).cast<double>(); }

  // +-one-unit jumps of `prices` assets: component 2k raises asset k, 2k+1 lowers it.
  static PriceMap one_unit(int prices, double a = 1.0) {
    PriceMap pm{a, IntMat::Zero(prices, 2 * prices)};
    for (int k = 0; k < prices; ++k) {
      pm.weights(k, 2 * k) = 1;
      pm.weights(k, 2 * k + 1) = -1;
    }
    return pm;
  }
  // +-one and +-two unit jumps: per asset the columns carry 1, 2, -1, -2.
  static PriceMap one_two_unit(int prices, double a = 1.0) {
    PriceMap pm{a, IntMat::Zero(prices, 4 * prices)};
    for (int k = 0; k < prices; ++k) {
      pm.weights(k, 4 * k) = 1;
      pm.weights(k, 4 * k + 1) = 2;
      pm.weights(k, 4 * k + 2) = -1;
      pm.weights(k, 4 * k + 3) = -2;
    }
    return pm;
  }
  // Two assets with separate jumps (components 0..3) and joint jumps (4, 5). The second
  // asset moves with the first under the plus branch and against it otherwise.
  static PriceMap simultaneous(bool plus_branch = true, double a = 1.0) {
    PriceMap pm{a, IntMat::Zero(2, 6)};
    long long s = plus_branch ? 1 : -1;
    pm.weights << 1, -1, 0, 0, 1, -1,  //
        0, 0, 1, -1, s, -s;
    return pm;
  }
};

// Step function Y_t = A N_t sampled right after each event of (T0, T1].
struct PricePath {
  std::vector<double> times;     // T0 followed by event times
  std::vector<IntVec> ticks;     // W N_t
  double a_unit = 1.0;

  Vec at(std::size_t k) const { return a_unit * ticks[k].cast<double>(); }
};

inline PricePath price_path(const PriceMap& pm, const PointPath& path) {
  if (pm.d() != path.d) throw ModelError("price map column count differs from path dimension");
  PricePath out;
  out.a_unit = pm.a_unit;
  IntVec counts = IntVec::Zero(path.d);
  out.times.push_back(path.horizon.t0);
  out.ticks.push_back(pm.ticks(counts));
  auto merged = merge_events(path);
  for (std::size_t i = 0; i < merged.time.size(); ++i) {
    counts[merged.comp[i]] += 1;
    out.times.push_back(merged.time[i]);
    out.ticks.push_back(pm.ticks(counts));
  }
  return out;
}

// ---------------------------------------------------------------- book replay

struct BookReplay {
  std::vector<double> times;        // T0 followed by event times
  std::vector<BookState> states;    // state after each event
  std::vector<bool> violation;      // per event: removal attempted on an empty queue
  std::size_t violations = 0;

  const BookState& final_state() const { return states.back(); }
};

inline BookReplay book_replay(const BookState& initial, const PointPath& path, std::vector<EventMapEntry> event_map) {
  BookSpec spec{initial, std::move(event_map)};
  spec.normalize(path.d);
  if (initial.q <= 0) throw ModelError("book unit q must be positive");
  for (auto v : initial.ask)
    if (v < 0) throw ModelError("initial ask queue negative");
  for (auto v : initial.bid)
    if (v < 0) throw ModelError("initial bid queue negative");
  BookReplay r;
  BookState s = initial;
  r.times.push_back(path.horizon.t0);
  r.states.push_back(s);
  auto merged = merge_events(path);
  for (std::size_t i = 0; i < merged.time.size(); ++i) {
    bool ok = apply_book_event(s, spec.event_map[merged.comp[i]]);
    r.violation.push_back(!ok);
    if (!ok) ++r.violations;
    r.times.push_back(merged.time[i]);
    r.states.push_back(s);
  }
  return r;
}

// Level ids in trajectory output: asks +1..+k_A, bids -1..-k_B.
inline int level_id(Side s, int level) { return s == Side::Ask ? level : -level; }

inline void write_trajectory_csv(const BookReplay& r, const std::string& file) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os << "time,level_id,count\n";
  for (std::size_t k = 0; k < r.states.size(); ++k) {
    const auto& s = r.states[k];
    for (std::size_t l = 0; l < s.ask.size(); ++l)
      os << format_g17(r.times[k]) << ',' << level_id(Side::Ask, static_cast<int>(l + 1)) << ',' << s.ask[l] << '\n';
    for (std::size_t l = 0; l < s.bid.size(); ++l)
      os << format_g17(r.times[k]) << ',' << level_id(Side::Bid, static_cast<int>(l + 1)) << ',' << s.bid[l] << '\n';
  }
}

// ---------------------------------------------------------------- intensity builder

// Baseline rule per component: constant rate and/or theta_c * (queue at t-)/q, where the
// queue is the one the component's own event map entry refers to.
struct BookCovariateRule {
  std::vector<std::optional<CoefRef>> constant_part;
  std::vector<std::optional<CoefRef>> queue_part;
};

inline BaselineSpec lob_intensity_builder(const BookCovariateRule& rule, const BookState& initial,
                                          std::vector<EventMapEntry> event_map) {
  auto book = std::make_shared<BookSpec>(BookSpec{initial, std::move(event_map)});
  book->normalize(static_cast<int>(rule.constant_part.size()));
  return BaselineSpec::book_queue(rule.constant_part, rule.queue_part, book);
}

// Two-component ask-level-1 book: limit orders at rate theta_0, cancellations at rate
// theta_1 * A^1/q. No kernel.
inline ModelSpec lob_cancellation_model(double t1, long long n, long long initial_units, const ParamSpace& box) {
  BookState init;
  init.ask = {initial_units};
  init.q = 1;
  std::vector<EventMapEntry> map{{0, Side::Ask, 1, OrderKind::Limit}, {1, Side::Ask, 1, OrderKind::Cancel}};
  BookCovariateRule rule;
  rule.constant_part = {CoefRef::theta(0), std::nullopt};
  rule.queue_part = {std::nullopt, CoefRef::theta(1)};
  ModelSpec m;
  m.d = 2;
  m.horizon = {0.0, 0.0, t1};
  m.n = n;
  m.baseline = lob_intensity_builder(rule, init, map);
  m.kernel = KernelSpec::zero();
  m.param_space = box;
  m.param_names = {"limit_rate", "cancel_rate"};
  m.check_shapes();
  return m;
}

}  // namespace ppreg
