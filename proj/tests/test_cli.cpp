#include "ppreg/ppreg.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kCli = PPREG_CLI;
const std::string kSamples = PPREG_SAMPLES;

fs::path work_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "ppreg_test_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

int run(const std::string& args) {
  std::string cmd = "\"" + kCli + "\" " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string sample(const std::string& name) { return "\"" + kSamples + "/" + name + "\""; }

nlohmann::json read(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

}  // namespace

TEST(Cli, SimulateThenEstimate) {
  auto d = work_dir("sim");
  ASSERT_EQ(run("simulate --model " + sample("hawkes1d.json") + " --theta 1,1,2 --seed 5 --out " + d.string()), 0);
  ASSERT_TRUE(fs::exists(d / "path.csv"));
  auto s = read(d / "simulate.json");
  EXPECT_GT(s["events"].get<long>(), 0);
  auto est = d / "est.json";
  ASSERT_EQ(run("estimate --model " + sample("hawkes1d.json") + " --path " + (d / "path.csv").string() +
                " --method qmle --out " + est.string()),
            0);
  auto j = read(est);
  EXPECT_EQ(j["theta_hat"].size(), 3u);
  EXPECT_EQ(j["stderr"].size(), 3u);
  EXPECT_TRUE(j.contains("observed_info"));
  auto bayes = d / "qbe.json";
  ASSERT_EQ(run("estimate --model " + sample("hawkes1d.json") + " --path " + (d / "path.csv").string() +
                " --method qbe --out " + bayes.string()),
            0);
  EXPECT_EQ(read(bayes)["theta_tilde"].size(), 3u);
}

TEST(Cli, SameSeedSameOutput) {
  auto a = work_dir("seed_a"), b = work_dir("seed_b");
  ASSERT_EQ(run("simulate --model " + sample("poisson.json") + " --theta 2 --seed 9 --out " + a.string()), 0);
  ASSERT_EQ(run("simulate --model " + sample("poisson.json") + " --theta 2 --seed 9 --out " + b.string()), 0);
  std::ifstream fa(a / "path.csv"), fb(b / "path.csv");
  std::string ta((std::istreambuf_iterator<char>(fa)), {}), tb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(ta, tb);
}

TEST(Cli, AsymptoticsReport) {
  auto d = work_dir("asy");
  ASSERT_EQ(run("asymptotics --model " + sample("hawkes2d_quadratic.json") +
                " --theta-star 0.5,0.8,1.0,1.2,0.6,0.2,0.3,0.5,2.0 --out " + d.string()),
            0);
  auto j = read(d / "asymptotics.json");
  EXPECT_EQ(j["identifiability"].size(), 7u);
  EXPECT_GT(j["gamma_min_eigenvalue"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(d / "lambda_inf.csv"));
}

TEST(Cli, StudyAndProbeFromConfig) {
  auto d = work_dir("mc");
  ASSERT_EQ(run("mc-study --config " + sample("mc_quick.json") + " --out " + d.string()), 0);
  EXPECT_TRUE(fs::exists(d / "manifest.json"));
  EXPECT_TRUE(fs::exists(d / "long.csv"));
  auto p = work_dir("pldi");
  ASSERT_EQ(run("pldi-probe --config " + sample("pldi_quick.json") + " --out " + p.string()), 0);
  EXPECT_TRUE(fs::exists(p / "pldi.csv"));
}

TEST(Cli, LobReplay) {
  auto d = work_dir("lob");
  ASSERT_EQ(run("lob-replay --path " + sample("lob_path.csv") + " --event-map " + sample("lob_event_map.json") +
                " --book " + sample("lob_book.json") + " --out " + d.string()),
            0);
  auto j = read(d / "lob.json");
  EXPECT_GT(j["events"].get<long>(), 0);
  EXPECT_TRUE(fs::exists(d / "trajectory.csv"));
}

TEST(Cli, ValidationFailuresExitTwo) {
  auto d = work_dir("bad");
  EXPECT_EQ(run("simulate --model " + sample("hawkes1d.json") + " --theta 1,1 --out " + d.string()), 2);
  EXPECT_EQ(run("simulate --model " + sample("hawkes1d.json") + " --theta 100,1,2 --out " + d.string()), 2);
  EXPECT_EQ(run("simulate --model /nonexistent.json --theta 1 --out " + d.string()), 2);
  write(d / "broken.json", "{\"d\": 1");
  EXPECT_EQ(run("simulate --model " + (d / "broken.json").string() + " --theta 1 --out " + d.string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("simulate --threads 0"), 2);
}

TEST(Cli, NumericalFailuresExitThree) {
  // a vanishing limit intensity makes Gamma undefined
  auto d = work_dir("num");
  write(d / "zero.json", R"({"d": 1, "n": 10, "horizon": {"t_hat0": 0, "t0": 0, "t1": 1},
    "baseline": {"variant": "constant", "mu": ["theta0"]},
    "param_space": {"lower": [0.0], "upper": [2.0]}})");
  EXPECT_EQ(run("asymptotics --model " + (d / "zero.json").string() + " --theta-star 0 --out " + d.string()), 3);
}
