// ppreg command line: simulate, estimate, asymptotics, mc-study, pldi-probe, lob-replay.
// Exit codes: 0 success, 2 validation failure, 3 numerical failure.

#include "ppreg/ppreg.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace ppreg;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  int threads = 1;
  json cfg = json::object();
  std::string cfg_dir = ".";

  void load() {
    if (config.empty()) return;
    cfg = read_json_file(config);
    cfg_dir = fs::path(config).parent_path().string();
    if (cfg_dir.empty()) cfg_dir = ".";
  }
  // Option value from the command line, else from the config file, else empty.
  std::string str(const std::string& cli, const char* key) const {
    if (!cli.empty()) return cli;
    if (cfg.contains(key) && cfg.at(key).is_string()) {
      fs::path p = cfg.at(key).get<std::string>();
      return p.is_relative() && fs::exists(fs::path(cfg_dir) / p) ? (fs::path(cfg_dir) / p).string() : p.string();
    }
    return "";
  }
  std::uint64_t seed_or(std::uint64_t def) const {
    if (seed) return *seed;
    return cfg.value("seed", def);
  }
};

Vec parse_theta(const std::string& text, const json& cfg, const char* key) {
  if (!text.empty()) {
    json j;
    try {
      j = json::parse(text.front() == '[' ? text : "[" + text + "]");
    } catch (const json::exception&) {
      throw ModelError(std::string("cannot parse ") + key + " '" + text + "'");
    }
    return detail::vec_from(j, key);
  }
  if (cfg.contains(key)) return detail::vec_from(cfg.at(key), key);
  throw ModelError(std::string("missing ") + key);
}

std::string require(const std::string& v, const char* what) {
  if (v.empty()) throw ModelError(std::string("missing --") + what);
  return v;
}

void write_json(const fs::path& file, const json& j) {
  if (!file.parent_path().empty()) fs::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << j.dump(2) << '\n';
}

// --out names a directory unless it ends in .json.
fs::path out_file(const std::string& out, const char* name) {
  fs::path p(out);
  if (p.extension() == ".json") return p;
  return p / name;
}

json mat_json(const Mat& m) { return detail::mat_to_json(m); }

json qmle_json(const QmleResult& r, const ModelSpec& m) {
  json j;
  j["theta_hat"] = detail::evec_to_json(r.theta_hat);
  j["loglik"] = detail::num_to_json(r.loglik);
  j["grad_norm"] = detail::num_to_json(r.grad_norm);
  j["observed_info"] = mat_json(r.observed_info);
  j["stderr"] = detail::evec_to_json(r.std_error);
  j["n_restarts_used"] = r.n_restarts_used;
  j["converged"] = r.converged;
  j["boundary"] = r.boundary;
  j["iterations"] = r.iterations;
  j["n"] = r.n;
  json names = json::array();
  for (int i = 0; i < m.p(); ++i) names.push_back(m.param_name(i));
  j["param_names"] = names;
  return j;
}

int cmd_simulate(const Globals& g, const std::string& model_file, const std::string& theta, const std::string& method) {
  auto m = load_model(require(g.str(model_file, "model"), "model"));
  Vec th = parse_theta(theta, g.cfg, "theta");
  m.check_theta(th);
  SimOptions so;
  so.seed = g.seed_or(1);
  std::string meth = method.empty() ? g.cfg.value("method", std::string("thinning")) : method;
  if (meth == "exp_exact") so.method = SimMethod::ExpExact;
  else if (meth != "thinning") throw ModelError("--method must be thinning or exp_exact");
  auto path = simulate(m, th, so);
  fs::create_directories(g.out);
  write_path_csv(path, (fs::path(g.out) / "path.csv").string());
  write_covariate_csv(m, path, (fs::path(g.out) / "covariate.csv").string());
  json j;
  j["seed"] = so.seed;
  j["method"] = meth;
  j["events"] = path.total_events();
  json per = json::array();
  for (const auto& e : path.events) per.push_back(e.size());
  j["events_per_component"] = per;
  j["path_csv"] = (fs::path(g.out) / "path.csv").string();
  j["covariate_csv"] = (fs::path(g.out) / "covariate.csv").string();
  write_json(fs::path(g.out) / "simulate.json", j);
  std::cout << "simulated " << path.total_events() << " events -> " << j["path_csv"].get<std::string>() << '\n';
  return 0;
}

int cmd_estimate(const Globals& g, const std::string& model_file, const std::string& path_file,
                 const std::string& cov_file, const std::string& method, const std::string& prior) {
  auto m = load_model(require(g.str(model_file, "model"), "model"));
  auto path = read_path_csv(m, require(g.str(path_file, "path"), "path"), g.str(cov_file, "covariate"));
  std::string meth = method.empty() ? g.cfg.value("method", std::string("qmle")) : method;
  std::string pr = prior.empty() ? g.cfg.value("prior", std::string("uniform")) : prior;
  if (pr != "uniform") throw ModelError("only the uniform prior is available");
  QuasiLikelihood ql(m, path);
  QmleOptions qo;
  qo.seed = g.seed_or(qo.seed);
  auto mode = qmle(ql, qo);
  json j;
  if (meth == "qmle") {
    j = qmle_json(mode, m);
    j["method"] = "qmle";
  } else if (meth == "qbe") {
    QbeOptions bo;
    bo.seed = stream_seed(g.seed_or(bo.seed), {2});
    auto r = qbe(ql, Prior::uniform(), bo, mode);
    j["method"] = "qbe";
    j["prior"] = pr;
    j["theta_tilde"] = detail::evec_to_json(r.theta_tilde);
    j["log_normalizer"] = detail::num_to_json(r.log_normalizer);
    j["integration"] = to_string(r.method);
    j["error_estimate"] = detail::num_to_json(r.error_estimate);
    j["domain"] = r.domain;
    j["stderr"] = detail::evec_to_json(mode.std_error);
    j["qmle"] = qmle_json(mode, m);
  } else {
    throw ModelError("--method must be qmle or qbe");
  }
  auto file = out_file(g.out, "estimate.json");
  write_json(file, j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_asymptotics(const Globals& g, const std::string& model_file, const std::string& theta) {
  auto m = load_model(require(g.str(model_file, "model"), "model"));
  Vec th = parse_theta(theta, g.cfg, "theta_star");
  m.check_theta(th);
  auto lim = limit_intensity_star(m, th);
  fs::create_directories(g.out);
  auto csv = fs::path(g.out) / "lambda_inf.csv";
  {
    std::ofstream os(csv);
    os << "time";
    for (int a = 0; a < m.d; ++a) os << ",lambda_" << a;
    os << '\n';
    for (std::size_t i = 0; i < lim.grid.size(); ++i) {
      os << format_g17(lim.grid.t[i]);
      for (int a = 0; a < m.d; ++a) os << ',' << format_g17(lim.values(static_cast<long>(i), a));
      os << '\n';
    }
  }
  json j;
  j["lambda_inf_csv"] = csv.string();
  j["provenance"] = to_string(lim.provenance);
  auto G = gamma_matrix(lim, m.p());
  j["gamma"] = mat_json(G.gamma);
  j["gamma_min_eigenvalue"] = G.min_eigenvalue;
  json rep = nullptr;
  if (m.kernel.variant == KernelVariant::Exponential && !m.baseline.has_queue()) {
    auto r = check_identifiability_M(m, th);
    rep = json::array();
    for (const auto& c : r.items) rep.push_back({{"condition", c.name}, {"pass", c.pass}, {"witness", c.witness}});
  }
  j["identifiability"] = rep;
  Chi0Options co;
  co.seed = g.seed_or(co.seed);
  auto yc = y_limit_and_chi0(m, lim, th, co);
  j["chi0"] = detail::num_to_json(yc.chi0);
  j["chi0_argmin"] = detail::evec_to_json(yc.argmin);
  j["half_min_eigenvalue_gamma"] = 0.5 * G.min_eigenvalue;
  write_json(fs::path(g.out) / "asymptotics.json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_mc_study(const Globals& g) {
  if (g.config.empty()) throw ModelError("mc-study needs --config");
  auto cfg = mc_config_from_json(g.cfg, g.cfg_dir);
  if (g.seed) cfg.seed = *g.seed;
  cfg.threads = g.threads;
  auto s = mc_study(cfg);
  export_summary(s, cfg, g.out);
  for (const auto& ns : s.per_n)
    for (const auto& e : ns.estimators)
      std::printf("n=%lld %s cov_gap=%.4g failures=%d\n", ns.n, e.name.c_str(), e.cov_gap, ns.failures);
  if (s.aborted) {
    std::cerr << "study aborted: " << s.diagnostic << '\n';
    return 3;
  }
  return 0;
}

int cmd_pldi(const Globals& g) {
  if (g.config.empty()) throw ModelError("pldi-probe needs --config");
  PldiConfig c;
  const auto& j = g.cfg;
  const auto& mj = detail::field(j, "model");
  if (mj.is_string()) {
    fs::path p = mj.get<std::string>();
    if (p.is_relative()) p = fs::path(g.cfg_dir) / p;
    c.model = load_model(p.string());
  } else {
    c.model = model_from_json(mj);
  }
  c.theta_star = detail::vec_from(detail::field(j, "theta_star"), "theta_star");
  c.n = j.value("n", c.n);
  if (j.contains("r_grid")) c.r_grid = j.at("r_grid").get<std::vector<double>>();
  c.replicates = j.value("replicates", c.replicates);
  c.points_per_axis = j.value("points_per_axis", c.points_per_axis);
  c.seed = g.seed_or(c.seed);
  c.threads = g.threads;
  auto r = pldi_probe(c);
  export_pldi(r, g.out);
  for (const auto& row : r.rows)
    std::printf("r=%g P=%.4f [%.4f, %.4f]\n", row.r, row.prob, row.wilson.lower, row.wilson.upper);
  std::printf("monotone=%s coarse_grid=%ld\n", r.monotone() ? "yes" : "no", r.coarse_grid);
  return 0;
}

int cmd_lob(const Globals& g, const std::string& path_file, const std::string& map_file, const std::string& book_file,
            const std::string& dim) {
  auto emap = event_map_from_json(read_json_file(require(g.str(map_file, "event_map"), "event-map")));
  BookState init = book_state_from_json(read_json_file(require(g.str(book_file, "book"), "book")));
  int d = dim.empty() ? static_cast<int>(emap.size()) : std::stoi(dim);
  // read the path with a throwaway model that only fixes d and the horizon
  ModelSpec m;
  m.d = d;
  double t_lo = 0.0, t_hi = 0.0;
  {
    std::ifstream is(require(g.str(path_file, "path"), "path"));
    if (!is) throw std::runtime_error("cannot open path");
    std::string line;
    std::getline(is, line);
    bool first = true;
    while (std::getline(is, line)) {
      auto f = detail::split_csv(line);
      if (f.size() != 2) continue;
      double t = detail::parse_double(f[1]);
      if (first || t > t_hi) t_hi = t;
      if (first || t < t_lo) t_lo = t;
      first = false;
    }
  }
  double t0 = g.cfg.value("t0", std::min(0.0, t_lo) - 1.0);
  m.horizon = {t0, t0, std::max(t_hi, t0 + 1.0)};
  m.baseline = BaselineSpec::constant(std::vector<CoefRef>(d, CoefRef::fixed(1.0)));
  m.param_space.lower = Vec::Zero(1);
  m.param_space.upper = Vec::Ones(1);
  auto path = read_path_csv(m, g.str(path_file, "path"));
  auto r = book_replay(init, path, emap);
  fs::create_directories(g.out);
  auto csv = fs::path(g.out) / "trajectory.csv";
  write_trajectory_csv(r, csv.string());
  json j;
  j["events"] = path.total_events();
  j["violations"] = r.violations;
  j["final"] = book_state_to_json(r.final_state());
  j["trajectory_csv"] = csv.string();
  write_json(fs::path(g.out) / "lob.json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-process regression: simulation, estimation and asymptotics"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "JSON config supplying defaults for the subcommand");
  auto* seed_opt = app.add_option("--seed", seed_value, "master seed");
  app.add_option("--out", g.out, "output directory (estimate also accepts a .json file)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  std::string model, theta, method, path, cov, prior, event_map, book, dim;
  auto* sim = app.add_subcommand("simulate", "simulate a path at theta");
  sim->add_option("--model", model);
  sim->add_option("--theta", theta, "comma list or JSON array");
  sim->add_option("--method", method, "thinning | exp_exact");

  auto* est = app.add_subcommand("estimate", "QMLE or QBE from a path");
  est->add_option("--model", model);
  est->add_option("--path", path);
  est->add_option("--covariate", cov);
  est->add_option("--method", method, "qmle | qbe");
  est->add_option("--prior", prior, "uniform");

  auto* asy = app.add_subcommand("asymptotics", "limit intensity, Gamma, identifiability, chi0");
  asy->add_option("--model", model);
  asy->add_option("--theta-star", theta);

  auto* mc = app.add_subcommand("mc-study", "Monte Carlo study from --config");
  auto* pl = app.add_subcommand("pldi-probe", "tail probabilities of the random field from --config");

  auto* lob = app.add_subcommand("lob-replay", "replay a path through a limit order book");
  lob->add_option("--path", path);
  lob->add_option("--event-map", event_map);
  lob->add_option("--book", book, "initial book JSON {ask, bid, q}");
  lob->add_option("--d", dim, "component count (default: event map length)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (*seed_opt) g.seed = seed_value;
    g.load();
    if (*sim) return cmd_simulate(g, model, theta, method);
    if (*est) return cmd_estimate(g, model, path, cov, method, prior);
    if (*asy) return cmd_asymptotics(g, model, theta);
    if (*mc) return cmd_mc_study(g);
    if (*pl) return cmd_pldi(g);
    if (*lob) return cmd_lob(g, path, event_map, book, dim);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const EnvelopeViolation& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "validation failure: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
