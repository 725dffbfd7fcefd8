#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ppreg {

enum class Side { Ask, Bid };
enum class OrderKind { Market, Limit, Cancel };

inline const char* to_string(Side s) { return s == Side::Ask ? "ask" : "bid"; }
inline const char* to_string(OrderKind k) {
  switch (k) {
    case OrderKind::Market: return "market";
    case OrderKind::Limit: return "limit";
    default: return "cancel";
  }
}
inline Side side_from_string(const std::string& s) {
  if (s == "ask") return Side::Ask;
  if (s == "bid") return Side::Bid;
  throw std::invalid_argument("unknown book side '" + s + "'");
}
inline OrderKind kind_from_string(const std::string& s) {
  if (s == "market") return OrderKind::Market;
  if (s == "limit") return OrderKind::Limit;
  if (s == "cancel") return OrderKind::Cancel;
  throw std::invalid_argument("unknown order kind '" + s + "'");
}

// Levels are 1-based and fixed (not relative to the best quote).
struct EventMapEntry {
  int component = 0;
  Side side = Side::Ask;
  int level = 1;
  OrderKind kind = OrderKind::Limit;
};

struct BookState {
  std::vector<long long> ask;  // A^1..A^{k_A}
  std::vector<long long> bid;  // B^1..B^{k_B}
  long long q = 1;

  long long& queue(Side s, int level) { return s == Side::Ask ? ask.at(level - 1) : bid.at(level - 1); }
  long long queue(Side s, int level) const {
    return s == Side::Ask ? ask.at(level - 1) : bid.at(level - 1);
  }
  bool operator==(const BookState&) const = default;
};

// Book dynamics attached to a model: initial state at T0 and the component map.
struct BookSpec {
  BookState initial;
  std::vector<EventMapEntry> event_map;  // indexed by component after normalize()

  void normalize(int d) {
    std::vector<EventMapEntry> sorted(d);
    std::vector<bool> seen(d, false);
    for (const auto& e : event_map) {
      if (e.component < 0 || e.component >= d)
        throw std::invalid_argument("event map component out of range");
      if (seen[e.component]) throw std::invalid_argument("event map lists a component twice");
      seen[e.component] = true;
      sorted[e.component] = e;
    }
    for (int a = 0; a < d; ++a)
      if (!seen[a]) throw std::invalid_argument("event map is not total on components");
    for (const auto& e : sorted) {
      int k = static_cast<int>(e.side == Side::Ask ? initial.ask.size() : initial.bid.size());
      if (e.level < 1 || e.level > k) throw std::invalid_argument("event map level out of range");
    }
    event_map = std::move(sorted);
  }
};

// Applies one event; returns false (state unchanged) when removing from an empty queue.
inline bool apply_book_event(BookState& s, const EventMapEntry& e) {
  long long& qv = s.queue(e.side, e.level);
  if (e.kind == OrderKind::Limit) {
    qv += s.q;
    return true;
  }
  if (qv < s.q) return false;
  qv -= s.q;
  return true;
}

}  // namespace ppreg
