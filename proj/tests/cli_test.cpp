#include "spdls/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace spdls {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "spdls");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::cli_main(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("spdls_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out(const std::string& sub) const { return (dir_ / sub).string(); }
  fs::path dir_;
};

TEST_F(CliTest, ConstantsGoeBelowHalfDimension) {
  const Outcome r = run({"constants", "--m", "20", "--n", "80", "--ensemble", "goe", "--seed", "7", "--out", out("c")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream f(dir_ / "c" / "constants.txt");
  const GeometryReport rep = read_report(f);
  EXPECT_LE(rep.tau0_sq, 1e-6);
  EXPECT_TRUE(rep.heuristic_flags.count("tau0_sq_effective_zero"));
  EXPECT_NE(r.out.find("tau0_sq"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "c" / "operator.txt"));
}

TEST_F(CliTest, MissingDimensionNamesTheFlag) {
  const Outcome r = run({"constants", "--n", "80", "--out", out("x")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--m"), std::string::npos) << r.err;
  EXPECT_EQ(run({"checks", "prop1", "--out", out("y")}).code, 1);
}

TEST_F(CliTest, UnknownFlagPrintsUsage) {
  const Outcome r = run({"constants", "--m", "5", "--frobnicate", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"nonsense"}).code, 1);
  EXPECT_EQ(run({"checks"}).code, 1);
}

TEST_F(CliTest, HelpExitsZero) {
  const Outcome r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("tau-phase"), std::string::npos);
}

TEST_F(CliTest, ValidationErrorsExitOne) {
  EXPECT_EQ(run({"tau-phase", "--m-list", "10", "--reps", "0", "--out", out("a")}).code, 1);
  EXPECT_EQ(run({"compare", "--sigma", "-1", "--out", out("b")}).code, 1);
  EXPECT_EQ(run({"constants", "--m", "4", "--n", "5", "--ensemble", "cauchy", "--out", out("c")}).code, 1);
  EXPECT_EQ(run({"spiked", "--data", out("missing.csv"), "--out", out("d")}).code, 1);
  EXPECT_EQ(run({"compare", "--reps", "two", "--out", out("e")}).code, 1);
}

TEST_F(CliTest, Prop1ReportsPass) {
  const Outcome r = run({"checks", "prop1", "--m", "40", "--reps", "20", "--seed", "1", "--out", out("p")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mean "), std::string::npos);
  EXPECT_NE(r.out.find("result PASS"), std::string::npos) << r.out;
}

TEST_F(CliTest, OtherChecksRun) {
  Outcome r = run({"checks", "prop2", "--m", "10", "--trials", "4", "--out", out("p2")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("result"), std::string::npos);
  r = run({"checks", "example1", "--m", "4", "--n", "3", "--out", out("e1")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("objectives_agree true"), std::string::npos) << r.out;
  r = run({"checks", "prop4", "--m", "8", "--r", "1", "--trials", "2", "--out", out("p4")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "p4" / "prop4.csv"));
}

TEST_F(CliTest, ManifestReproducesOutputs) {
  const Outcome a = run({"tau-phase", "--m-list", "8", "--alpha-grid", "0.4, 0.9", "--r-list", "1,2", "--reps", "2",
                     "--fit", "--seed", "99", "--out", out("a"), "--quiet"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_TRUE(a.out.empty());
  const fs::path manifest = dir_ / "a" / "run.manifest";
  ASSERT_TRUE(fs::exists(manifest));
  const Config m = read_config(manifest.string());
  EXPECT_EQ(m.get("run", "command"), "tau-phase");
  EXPECT_EQ(m.get_u64("run", "seed"), 99u);
  EXPECT_TRUE(m.get_bool("tau-phase", "fit"));

  const Outcome b = run({"tau-phase", "--config", manifest.string(), "--out", out("b"), "--threads", "2", "--quiet"});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir_ / "a" / "tau_phase.csv"), slurp(dir_ / "b" / "tau_phase.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "tau_fit.csv"), slurp(dir_ / "b" / "tau_fit.csv"));

  // Command-line flags override the file.
  const Outcome c = run({"tau-phase", "--config", manifest.string(), "--reps", "1", "--out", out("c"), "--quiet"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(read_config((dir_ / "c" / "run.manifest").string()).get("tau-phase", "reps"), "1");
}

TEST_F(CliTest, ConfigWithUnknownKeyIsRejected) {
  fs::create_directories(dir_);
  {
    std::ofstream f(dir_ / "bad.cfg");
    f << "[compare]\nm = 6\nlambda = 3\n";
  }
  const Outcome r = run({"compare", "--config", (dir_ / "bad.cfg").string(), "--out", out("o")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("lambda"), std::string::npos);
}

TEST_F(CliTest, CompareAndSpikedWriteCsv) {
  Outcome r = run({"compare", "--m", "5", "--n-grid", "10", "--r-grid", "1", "--reps", "1", "--chen", "false",
               "--lambda-factors", "0.5,1", "--out", out("cmp")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir_ / "cmp" / "compare.csv");
  EXPECT_EQ(csv.rfind("n,r,rep,method,nuclear_error,tuned_lambda,reason\n", 0), 0u);
  EXPECT_NE(csv.find(",oracle_ref,"), std::string::npos);

  r = run({"spiked", "--m", "6", "--spikes", "4,2", "--r", "2", "--c-grid", "3", "--reps", "1", "--out", out("sp")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir_ / "sp" / "spiked.csv").find("C,beta,rep,n,frob_error"), std::string::npos);

  fs::create_directories(dir_);
  {
    std::ofstream f(dir_ / "data.csv");
    f << "a,b,c\n1,2,0\n0,1,3\n2,0,1\n1,1,1\n3,2,2\n";
  }
  r = run({"spiked", "--data", (dir_ / "data.csv").string(), "--correlation", "--r", "1", "--c-grid", "2",
           "--beta-grid", "0.2,1", "--reps", "1", "--out", out("sd")});
  ASSERT_EQ(r.code, 0) << r.err;
}

TEST_F(CliTest, SolveFromFiles) {
  ASSERT_EQ(run({"constants", "--m", "3", "--n", "4", "--ensemble", "wishart", "--out", out("op"), "--quiet"}).code, 0);
  fs::create_directories(dir_);
  {
    std::ofstream f(dir_ / "y.txt");
    f << "1 0.5 2 0.1\n";
  }
  const std::string op = (dir_ / "op" / "operator.txt").string();
  const std::string y = (dir_ / "y.txt").string();
  for (const std::string est : {"cls", "ols", "nucreg", "psd_tracereg", "spiked"}) {
    const Outcome r = run({"solve", "--operator", op, "--y", y, "--estimator", est, "--lambda", "0.1", "--out", out(est)});
    ASSERT_EQ(r.code, 0) << est << ": " << r.err;
    std::ifstream f(dir_ / est / "estimate.txt");
    EXPECT_EQ(read_matrix(f).rows(), 3);
  }
  EXPECT_EQ(run({"solve", "--operator", op, "--out", out("z")}).code, 1);
  EXPECT_EQ(run({"solve", "--operator", op, "--y", op, "--out", out("z")}).code, 1);
}

}  // namespace
}  // namespace spdls
