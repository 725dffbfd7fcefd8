#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace ppreg;

namespace {

std::string tmp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ppreg_test_harness" / name;
  std::filesystem::remove_all(dir);
  return dir.string();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

McConfig small_hawkes_study() {
  McConfig c;
  c.model = oracle::hawkes1d(5.0, 100);
  c.theta_star = oracle::hawkes1d_truth();
  c.n_values = {50, 100};
  c.replicates = 6;
  c.seed = 12;
  c.qbe_nodes = 8;
  c.moment_mc_samples = 1000;
  return c;
}

}  // namespace

TEST(GaussianMoments, ClosedFormsAgreeWithSampling) {
  Mat s(2, 2);
  s << 2.0, 0.3, 0.3, 0.5;
  EXPECT_DOUBLE_EQ(gaussian_norm_moment(s, 2.0), 2.5);
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  Vec l = es.eigenvalues();
  EXPECT_NEAR(gaussian_norm_moment(s, 4.0), 2.5 * 2.5 + 2.0 * l.squaredNorm(), 1e-12);
  // scalar: E|X| = sigma sqrt(2/pi), E|X|^3 = 2 sigma^3 sqrt(2/pi)
  Mat one = Mat::Constant(1, 1, 4.0);
  EXPECT_NEAR(gaussian_norm_moment(one, 1.0), 2.0 * std::sqrt(2.0 / std::numbers::pi), 1e-9);
  EXPECT_NEAR(gaussian_norm_moment(one, 3.0), 16.0 * std::sqrt(2.0 / std::numbers::pi), 0.01 * 16.0);
  // k = 1 in two dimensions against sampling
  double mc = gaussian_norm_moment(s, 1.0 + 1e-12, 5, 400000);
  EXPECT_NEAR(gaussian_norm_moment(s, 1.0), mc, 0.005 * mc);
}

TEST(McStudy, PoissonVarianceAndBias) {
  McConfig c;
  c.model = oracle::poisson(1.0, 400, 0.1, 5.0);
  c.theta_star = Vec::Constant(1, 2.0);
  c.n_values = {400};
  c.replicates = 1000;
  c.use_qbe = false;
  c.seed = 3;
  auto s = mc_study(c);
  ASSERT_EQ(s.per_n.size(), 1u);
  EXPECT_NEAR(s.gamma_inv(0, 0), 2.0, 1e-10);
  const auto* q = s.per_n[0].find("qmle");
  ASSERT_NE(q, nullptr);
  EXPECT_NEAR(q->cov(0, 0) / 2.0, 1.0, 0.1);
  double se = std::sqrt(2.0 / 400.0 / 1000.0);
  EXPECT_LE(std::abs(q->bias[0]), 3.0 * se);
  EXPECT_EQ(s.per_n[0].failures, 0);
}

TEST(McStudy, DeterministicAcrossRunsAndThreads) {
  auto c = small_hawkes_study();
  auto a = mc_study(c);
  auto b = mc_study(c);
  EXPECT_TRUE(summaries_identical(a, b));
  c.threads = 3;
  auto t = mc_study(c);
  EXPECT_TRUE(summaries_identical(a, t));
  ASSERT_EQ(a.per_n.size(), 2u);
  ASSERT_NE(a.per_n[1].find("qbe"), nullptr);
  // QMLE and QBE come from the same paths
  for (const auto& rec : a.per_n[1].records)
    if (rec.ok) EXPECT_EQ(rec.u_qmle.size(), rec.u_qbe.size());
}

TEST(McStudy, ConfigJsonRoundTrip) {
  auto c = small_hawkes_study();
  c.use_qbe = false;
  c.sim_method = SimMethod::ExpExact;
  auto j = mc_config_to_json(c);
  auto back = mc_config_from_json(j);
  EXPECT_EQ(mc_config_to_json(back), j);
  EXPECT_EQ(config_hash(back), config_hash(c));
  auto d = c;
  d.seed += 1;
  EXPECT_NE(config_hash(d), config_hash(c));
  j["n_values"] = {100, 50};
  EXPECT_THROW(mc_config_from_json(j), ModelError);
  j = mc_config_to_json(c);
  j["estimators"] = {"mle"};
  EXPECT_THROW(mc_config_from_json(j), ModelError);
}

TEST(McStudy, RandomGammaIsDiagnosticsOnly) {
  McConfig c;
  c.model = lob_cancellation_model(1.0, 50, 3, oracle::box({0.1, 0.05}, {5.0, 3.0}));
  c.theta_star = (Vec(2) << 1.0, 0.7).finished();
  c.n_values = {50};
  c.replicates = 4;
  c.use_qbe = false;
  auto s = mc_study(c);
  EXPECT_TRUE(s.diagnostics_only);
  EXPECT_EQ(s.gamma.size(), 0);
  EXPECT_TRUE(std::isnan(s.per_n[0].find("qmle")->cov_gap));
}

TEST(Export, EmptySummaryWritesManifestOnly) {
  auto dir = tmp_dir("empty");
  McSummary s;
  export_summary(s, small_hawkes_study(), dir);
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(dir)) names.push_back(e.path().filename().string());
  EXPECT_EQ(names, std::vector<std::string>{"manifest.json"});
}

TEST(Export, RoundTripIsBitExactAndOutputsAreStable) {
  auto c = small_hawkes_study();
  auto s = mc_study(c);
  auto d1 = tmp_dir("a"), d2 = tmp_dir("b");
  export_summary(s, c, d1);
  auto back = import_summary(d1);
  EXPECT_TRUE(summaries_identical(s, back));
  export_summary(mc_study(c), c, d2);
  for (auto f : {"manifest.json", "summary.json", "summary.csv", "long.csv", "replicates.csv"})
    EXPECT_EQ(slurp(std::filesystem::path(d1) / f), slurp(std::filesystem::path(d2) / f)) << f;
}

TEST(Pldi, PoissonTailDecreases) {
  PldiConfig c;
  c.model = oracle::poisson(1.0, 400, 0.5, 5.0);
  c.theta_star = Vec::Constant(1, 2.0);
  c.n = 400;
  c.r_grid = {0.0, 1.0, 2.0, 5.0};
  c.replicates = 300;
  c.seed = 4;
  auto r = pldi_probe(c);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.failures, 0);
  EXPECT_EQ(r.rows[0].exceed, r.rows[0].trials);
  EXPECT_TRUE(r.monotone());
  EXPECT_LT(r.rows[3].prob, r.rows[1].prob);
  for (std::size_t i = 1; i < r.rows.size(); ++i) EXPECT_LE(r.rows[i].exceed, r.rows[i - 1].exceed);
  auto dir = tmp_dir("pldi");
  export_pldi(r, dir);
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) / "pldi.csv"));
}

TEST(Pldi, ExceedanceMatchesPoissonOracle) {
  // For Poisson the sup over |u| >= r is explicit: log Z is concave with maximum at u_hat.
  PldiConfig c;
  c.model = oracle::poisson(1.0, 400, 0.5, 5.0);
  c.theta_star = Vec::Constant(1, 2.0);
  c.r_grid = {1.0, 2.0};
  c.replicates = 60;
  c.seed = 8;
  auto r = pldi_probe(c);
  ModelSpec m = c.model;
  m.n = c.n;
  std::vector<long> expect(2, 0);
  for (int k = 0; k < c.replicates; ++k) {
    SimOptions so;
    so.seed = stream_seed(c.seed, {0x706c6469, static_cast<std::uint64_t>(c.n), static_cast<std::uint64_t>(k)});
    auto path = simulate(m, c.theta_star, so);
    double N = static_cast<double>(path.total_events()), rn = 20.0;
    auto logz = [&](double u) {
      double mu = 2.0 + u / rn;
      return N * std::log(mu / 2.0) - 400.0 * (mu - 2.0);
    };
    double uhat = rn * (std::clamp(N / 400.0, 0.5, 5.0) - 2.0);
    for (int j = 0; j < 2; ++j) {
      double rr = c.r_grid[j];
      double lo = rn * (0.5 - 2.0), hi = rn * (5.0 - 2.0);
      double best = -std::numeric_limits<double>::infinity();
      for (double u : {-rr, rr, lo, hi, uhat})
        if (std::abs(u) >= rr && u >= lo && u <= hi) best = std::max(best, logz(u));
      if (best >= -rr) ++expect[j];
    }
  }
  EXPECT_EQ(r.rows[0].exceed, expect[0]);
  EXPECT_EQ(r.rows[1].exceed, expect[1]);
}
