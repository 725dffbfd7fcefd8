#pragma once

#include "ppreg/book.hpp"
#include "ppreg/model.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

// Model files are JSON:
//   {d, n, horizon:{t_hat0,t0,t1}, baseline:{variant,...}, kernel:{variant,...},
//    covariate:{variant,...}, param_space:{lower,upper,names?}, require_positive_baseline?}
// A coefficient is a number (fixed) or a parameter name: an entry of param_space.names
// or "theta<i>".

namespace ppreg {

using json = nlohmann::json;

namespace detail {

inline const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ModelError(std::string("missing field '") + key + "'");
  return j.at(key);
}

inline Vec vec_from(const json& j, const char* what) {
  if (!j.is_array()) throw ModelError(std::string(what) + " must be an array");
  Vec v(static_cast<long>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<long>(i)] = j[i].get<double>();
  return v;
}

inline json vec_to(const Vec& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

struct CoefCodec {
  std::vector<std::string> names;
  int p = 0;

  CoefRef read(const json& j) const {
    if (j.is_number()) return CoefRef::fixed(j.get<double>());
    if (!j.is_string()) throw ModelError("coefficient must be a number or a parameter name");
    auto s = j.get<std::string>();
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == s) return CoefRef::theta(static_cast<int>(i));
    if (s.rfind("theta", 0) == 0 && s.size() > 5) {
      int i = std::stoi(s.substr(5));
      if (i >= 0 && i < p) return CoefRef::theta(i);
    }
    throw ModelError("unknown parameter '" + s + "'");
  }
  json write(const CoefRef& c) const {
    if (!c.free()) return c.value;
    if (c.param < static_cast<int>(names.size())) return names[c.param];
    return "theta" + std::to_string(c.param);
  }
  std::vector<CoefRef> read_list(const json& j) const {
    if (!j.is_array()) throw ModelError("coefficient list must be an array");
    std::vector<CoefRef> out;
    for (const auto& e : j) out.push_back(read(e));
    return out;
  }
  std::vector<std::vector<CoefRef>> read_matrix(const json& j) const {
    if (!j.is_array()) throw ModelError("coefficient matrix must be an array of rows");
    std::vector<std::vector<CoefRef>> out;
    for (const auto& r : j) out.push_back(read_list(r));
    return out;
  }
  std::vector<std::optional<CoefRef>> read_optional_list(const json& j) const {
    std::vector<std::optional<CoefRef>> out;
    for (const auto& e : j) out.push_back(e.is_null() ? std::nullopt : std::optional<CoefRef>(read(e)));
    return out;
  }
  json write_matrix(const std::vector<std::vector<CoefRef>>& m) const {
    json a = json::array();
    for (const auto& r : m) {
      json row = json::array();
      for (const auto& c : r) row.push_back(write(c));
      a.push_back(row);
    }
    return a;
  }
};

}  // namespace detail

inline std::vector<EventMapEntry> event_map_from_json(const json& j) {
  if (!j.is_array()) throw ModelError("event map must be a JSON array");
  std::vector<EventMapEntry> out;
  for (const auto& e : j) {
    EventMapEntry x;
    x.component = detail::field(e, "component").get<int>();
    x.side = side_from_string(detail::field(e, "side").get<std::string>());
    x.level = detail::field(e, "level").get<int>();
    x.kind = kind_from_string(detail::field(e, "kind").get<std::string>());
    out.push_back(x);
  }
  return out;
}

inline json event_map_to_json(const std::vector<EventMapEntry>& m) {
  json a = json::array();
  for (const auto& e : m)
    a.push_back({{"component", e.component}, {"side", to_string(e.side)}, {"level", e.level}, {"kind", to_string(e.kind)}});
  return a;
}

inline BookState book_state_from_json(const json& j) {
  BookState s;
  s.ask = detail::field(j, "ask").get<std::vector<long long>>();
  s.bid = j.value("bid", std::vector<long long>{});
  s.q = j.value("q", 1LL);
  return s;
}

inline json book_state_to_json(const BookState& s) { return {{"ask", s.ask}, {"bid", s.bid}, {"q", s.q}}; }

inline ModelSpec model_from_json(const json& j) {
  ModelSpec m;
  try {
    m.d = detail::field(j, "d").get<int>();
    m.n = detail::field(j, "n").get<long long>();
    const auto& h = detail::field(j, "horizon");
    m.horizon = {detail::field(h, "t_hat0").get<double>(), detail::field(h, "t0").get<double>(),
                 detail::field(h, "t1").get<double>()};
    const auto& ps = detail::field(j, "param_space");
    m.param_space.lower = detail::vec_from(detail::field(ps, "lower"), "param_space.lower");
    m.param_space.upper = detail::vec_from(detail::field(ps, "upper"), "param_space.upper");
    if (ps.contains("names")) m.param_names = ps.at("names").get<std::vector<std::string>>();
    m.require_positive_baseline = j.value("require_positive_baseline", false);
    detail::CoefCodec cc{m.param_names, m.param_space.dim()};

    const auto& b = detail::field(j, "baseline");
    auto bv = detail::field(b, "variant").get<std::string>();
    if (bv == "constant") {
      m.baseline = BaselineSpec::constant(cc.read_list(detail::field(b, "mu")));
    } else if (bv == "polynomial") {
      m.baseline = BaselineSpec::polynomial(cc.read_matrix(detail::field(b, "coefficients")));
    } else if (bv == "centered_quadratic") {
      double center = b.value("center", 0.5 * (m.horizon.t0 + m.horizon.t1));
      m.baseline = BaselineSpec::centered_quadratic(cc.read_list(detail::field(b, "gamma1")),
                                                    cc.read_list(detail::field(b, "gamma2")), center);
    } else if (bv == "book_queue") {
      auto book = std::make_shared<BookSpec>();
      book->initial = book_state_from_json(detail::field(b, "book"));
      book->event_map = event_map_from_json(detail::field(b, "event_map"));
      book->normalize(m.d);
      m.baseline = BaselineSpec::book_queue(cc.read_optional_list(detail::field(b, "constant")),
                                            cc.read_optional_list(detail::field(b, "queue")), book);
    } else {
      throw ModelError("unknown baseline variant '" + bv + "'");
    }

    const auto& c = j.contains("covariate") ? j.at("covariate") : json{{"variant", "self_exciting"}};
    auto cv = detail::field(c, "variant").get<std::string>();
    if (cv == "self_exciting") {
      m.covariate.variant = CovariateVariant::SelfExciting;
    } else if (cv == "external_path" || cv == "mixed") {
      m.covariate.variant = cv == "mixed" ? CovariateVariant::Mixed : CovariateVariant::ExternalPath;
      m.covariate.external_dim = detail::field(c, "dim").get<int>();
      if (c.contains("path")) {
        auto ext = std::make_shared<ExternalPath>();
        ext->dim = m.covariate.external_dim;
        ext->times = detail::field(c.at("path"), "times").get<std::vector<double>>();
        ext->jumps = detail::field(c.at("path"), "jumps").get<std::vector<std::vector<double>>>();
        if (ext->times.size() != ext->jumps.size()) throw ModelError("external path times/jumps length");
        m.covariate.external = ext;
      }
    } else {
      throw ModelError("unknown covariate variant '" + cv + "'");
    }

    const auto& k = j.contains("kernel") ? j.at("kernel") : json{{"variant", "zero"}};
    auto kv = detail::field(k, "variant").get<std::string>();
    if (kv == "zero") {
      m.kernel = KernelSpec::zero();
    } else if (kv == "exponential") {
      m.kernel = KernelSpec::exponential(cc.read_matrix(detail::field(k, "amplitude")), cc.read(detail::field(k, "decay")));
    } else if (kv == "power_law_exp") {
      m.kernel = KernelSpec::power_law_exp(cc.read_matrix(detail::field(k, "amplitude")),
                                           cc.read(detail::field(k, "decay")), cc.read(detail::field(k, "power")));
    } else if (kv == "tabulated") {
      TabulatedShape t;
      t.step = detail::field(k, "step").get<double>();
      t.values = detail::field(k, "values").get<std::vector<double>>();
      m.kernel = KernelSpec::tabulated(cc.read_matrix(detail::field(k, "amplitude")), std::move(t));
    } else {
      throw ModelError("unknown kernel variant '" + kv + "'");
    }
  } catch (const json::exception& e) {
    throw ModelError(std::string("model JSON: ") + e.what());
  }
  m.check_shapes();
  return m;
}

inline json model_to_json(const ModelSpec& m) {
  detail::CoefCodec cc{m.param_names, m.p()};
  json j;
  j["d"] = m.d;
  j["n"] = m.n;
  j["horizon"] = {{"t_hat0", m.horizon.t_hat0}, {"t0", m.horizon.t0}, {"t1", m.horizon.t1}};
  j["param_space"] = {{"lower", detail::vec_to(m.param_space.lower)}, {"upper", detail::vec_to(m.param_space.upper)}};
  if (!m.param_names.empty()) j["param_space"]["names"] = m.param_names;
  if (m.require_positive_baseline) j["require_positive_baseline"] = true;

  json b;
  auto coef_of = [&](int a, BasisKind kind, int deg) -> json {
    for (const auto& t : m.baseline.terms[a])
      if (t.kind == kind && t.degree == deg) return cc.write(t.coef);
    return nullptr;
  };
  switch (m.baseline.variant) {
    case BaselineVariant::Constant: {
      b["variant"] = "constant";
      json mu = json::array();
      for (int a = 0; a < m.d; ++a) mu.push_back(coef_of(a, BasisKind::Power, 0));
      b["mu"] = mu;
      break;
    }
    case BaselineVariant::Polynomial: {
      b["variant"] = "polynomial";
      json rows = json::array();
      for (int l = 0; l <= m.baseline.degree(); ++l) {
        json row = json::array();
        for (int a = 0; a < m.d; ++a) {
          json c = coef_of(a, BasisKind::Power, l);
          row.push_back(c.is_null() ? json(0.0) : c);
        }
        rows.push_back(row);
      }
      b["coefficients"] = rows;
      break;
    }
    case BaselineVariant::CenteredQuadratic: {
      b["variant"] = "centered_quadratic";
      json g1 = json::array(), g2 = json::array();
      for (int a = 0; a < m.d; ++a) {
        g1.push_back(coef_of(a, BasisKind::Centered, 2));
        g2.push_back(coef_of(a, BasisKind::Centered, 0));
      }
      b["gamma1"] = g1;
      b["gamma2"] = g2;
      b["center"] = m.baseline.center;
      break;
    }
    case BaselineVariant::BookQueue: {
      b["variant"] = "book_queue";
      json cp = json::array(), qp = json::array();
      for (int a = 0; a < m.d; ++a) {
        cp.push_back(coef_of(a, BasisKind::Power, 0));
        qp.push_back(coef_of(a, BasisKind::Queue, 0));
      }
      b["constant"] = cp;
      b["queue"] = qp;
      b["book"] = book_state_to_json(m.baseline.book->initial);
      b["event_map"] = event_map_to_json(m.baseline.book->event_map);
      break;
    }
  }
  j["baseline"] = b;

  json k;
  switch (m.kernel.variant) {
    case KernelVariant::Zero: k["variant"] = "zero"; break;
    case KernelVariant::Exponential:
      k["variant"] = "exponential";
      k["amplitude"] = cc.write_matrix(m.kernel.amplitude);
      k["decay"] = cc.write(m.kernel.shape[0]);
      break;
    case KernelVariant::PowerLawExp:
      k["variant"] = "power_law_exp";
      k["amplitude"] = cc.write_matrix(m.kernel.amplitude);
      k["decay"] = cc.write(m.kernel.shape[0]);
      k["power"] = cc.write(m.kernel.shape[1]);
      break;
    case KernelVariant::Tabulated:
      k["variant"] = "tabulated";
      k["amplitude"] = cc.write_matrix(m.kernel.amplitude);
      k["step"] = m.kernel.table->step;
      k["values"] = m.kernel.table->values;
      break;
  }
  j["kernel"] = k;

  json c;
  switch (m.covariate.variant) {
    case CovariateVariant::SelfExciting: c["variant"] = "self_exciting"; break;
    case CovariateVariant::ExternalPath: c["variant"] = "external_path"; break;
    case CovariateVariant::Mixed: c["variant"] = "mixed"; break;
  }
  if (m.covariate.variant != CovariateVariant::SelfExciting) {
    c["dim"] = m.covariate.external_dim;
    if (m.covariate.external)
      c["path"] = {{"times", m.covariate.external->times}, {"jumps", m.covariate.external->jumps}};
  }
  j["covariate"] = c;
  return j;
}

inline json read_json_file(const std::string& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open " + file);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ModelError(file + ": " + e.what());
  }
}

inline ModelSpec load_model(const std::string& file) { return model_from_json(read_json_file(file)); }

inline void save_model(const ModelSpec& m, const std::string& file) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os << model_to_json(m).dump(2) << '\n';
}

}  // namespace ppreg
