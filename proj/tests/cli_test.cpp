#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "knnres_cli.hpp"
#include "test_support.hpp"

using namespace knnres;
namespace kt = knnres::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("knnres_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpAndVersion) {
  EXPECT_EQ(run({"--help"}).code, 0);
  const CliRun v = run({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find(cli::kVersion), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"register", "--loss", "l2"}).code, 2);
}

TEST_F(CliTest, SynthLevelZeroIsIdentity) {
  const CliRun r = run({"synth", "--shape", "ring", "--m", "50", "--level", "0", "--out", path("s")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("s/reference.csv")), slurp(path("s/target.csv")));
  const json spec = read_json(path("s/spec.json"));
  EXPECT_EQ(spec["deform"]["level"], 0);
  EXPECT_EQ(spec["deform"]["coeff_std"], 0.0);
}

TEST_F(CliTest, SynthIsByteIdenticalOnRerun) {
  ASSERT_EQ(run({"synth", "--level", "3", "--seed", "5", "--out", path("a")}).code, 0);
  ASSERT_EQ(run({"synth", "--level", "3", "--seed", "5", "--out", path("b")}).code, 0);
  for (auto f : {"reference.csv", "target.csv", "spec.json"}) EXPECT_EQ(slurp(path("a/") + f), slurp(path("b/") + f));
}

TEST_F(CliTest, SynthLevelsMonotone) {
  double prev = -1;
  for (int level = 1; level <= 5; ++level) {
    const std::string out = path("l" + std::to_string(level));
    ASSERT_EQ(run({"synth", "--shape", "grid", "--m", "100", "--level", std::to_string(level), "--out", out}).code, 0);
    const double md = read_json(out + "/spec.json")["mean_displacement"];
    EXPECT_GT(md, prev);
    prev = md;
  }
}

TEST_F(CliTest, SynthInvalidLevel) {
  const CliRun r = run({"synth", "--level", "7", "--out", path("x")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("level"), std::string::npos);
}

TEST_F(CliTest, SynthParametricKinds) {
  EXPECT_EQ(run({"synth", "--deform", "scale", "--scale", "0.5", "--out", path("sc")}).code, 0);
  EXPECT_EQ(run({"synth", "--deform", "rotate", "--angle", "0.3", "--out", path("ro")}).code, 0);
  EXPECT_EQ(run({"synth", "--deform", "translate", "--translate", "0.3,0", "--out", path("tr")}).code, 0);
  EXPECT_EQ(run({"synth", "--deform", "translate", "--translate", "0.3", "--out", path("tr2")}).code, 2);
}

TEST_F(CliTest, RegisterMissingFileNamesPath) {
  const std::string missing = path("does_not_exist.csv");
  const CliRun r = run({"register", "--reference", missing, "--target", missing, "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos);
}

TEST_F(CliTest, RegisterBadCsvIsUsageError) {
  std::ofstream(path("bad.csv")) << "1,2\n3\n";
  std::ofstream(path("ok.csv")) << "1,2\n3,4\n";
  const CliRun r = run({"register", "--reference", path("ok.csv"), "--target", path("bad.csv"), "--out", path("o")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 2"), std::string::npos) << r.err;
}

TEST_F(CliTest, RegisterTranslatedCloudSmoke) {
  const PointSet ref = kt::random_points(100, 2, 21);
  const PointSet tgt(ref.matrix().rowwise() + (RowVector(2) << 0.3, 0.0).finished());
  save_pointset(path("ref.csv"), ref);
  save_pointset(path("tgt.csv"), tgt);
  const CliRun r = run({"register", "--reference", path("ref.csv"), "--target", path("tgt.csv"), "--ground-truth",
                     path("ref.csv"), "--sigma", "0.01", "--epochs", "500", "--grid-warp", "--field", "--hamming-k",
                     "3,5", "--out", path("run")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = read_json(path("run/manifest.json"));
  EXPECT_EQ(m["status"], "ok");
  EXPECT_LT(m["metrics"]["rmse"].get<double>(), 0.01);
  EXPECT_EQ(m["metrics"]["hamming"].size(), 2u);
  EXPECT_EQ(m["config"]["sigma"], 0.01);
  EXPECT_EQ(m["config"]["lambda"], 1e-5);  // low-d default
  EXPECT_EQ(m["inputs"]["reference"]["sha256"].get<std::string>().size(), 64u);
  for (auto f : {"aligned.csv", "loss_history.csv", "net.txt", "grid_warp.csv", "field.csv"})
    EXPECT_TRUE(fs::exists(path("run/") + f)) << f;
  const Table aligned = load_pointset(path("run/aligned.csv"));
  EXPECT_EQ(aligned.points.size(), 100);

  // Replaying the manifest reproduces the metrics bitwise.
  const CliRun replay = run({"register", "--config", path("run/manifest.json"), "--out", path("replay")});
  ASSERT_EQ(replay.code, 0) << replay.err;
  EXPECT_EQ(read_json(path("replay/manifest.json"))["metrics"], m["metrics"]);
  EXPECT_EQ(slurp(path("replay/aligned.csv")), slurp(path("run/aligned.csv")));
}

TEST_F(CliTest, RegisterConfigPrecedence) {
  save_pointset(path("ref.csv"), kt::random_points(20, 2, 1));
  save_pointset(path("tgt.csv"), kt::random_points(20, 2, 2));
  std::ofstream(path("cfg.json")) << R"({"sigma": 0.2, "lambda": 0.5, "max_epochs": 2, "loss": "mmd"})";
  const CliRun r = run({"register", "--reference", path("ref.csv"), "--target", path("tgt.csv"), "--config",
                     path("cfg.json"), "--lambda", "0.25", "--out", path("o")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json c = read_json(path("o/manifest.json"))["config"];
  EXPECT_EQ(c["sigma"], 0.2);     // file over default
  EXPECT_EQ(c["lambda"], 0.25);   // flag over file
  EXPECT_EQ(c["max_epochs"], 2);
  EXPECT_EQ(c["loss"], "mmd");
  EXPECT_EQ(c["fd_epsilon"], 0.005);  // default
}

TEST_F(CliTest, RegisterHighDimProfile) {
  save_pointset(path("ref.csv"), kt::random_points(30, 8, 1));
  save_pointset(path("tgt.csv"), kt::random_points(30, 8, 2));
  const CliRun r = run({"register", "--reference", path("ref.csv"), "--target", path("tgt.csv"), "--epochs", "1",
                     "--preprocess", "standardize", "--out", path("o")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = read_json(path("o/manifest.json"));
  EXPECT_EQ(m["profile"], "highd");
  EXPECT_EQ(m["config"]["sigma"], 0.04);
  EXPECT_EQ(m["config"]["lambda"], 0.1);
  EXPECT_EQ(m["config"]["fd_epsilon"], 0.05);
  EXPECT_EQ(m["penalty_resolved"], "hutch-qf");
}

TEST_F(CliTest, RegisterDivergenceExitsOne) {
  save_pointset(path("ref.csv"), kt::random_points(20, 2, 1));
  save_pointset(path("tgt.csv"), kt::random_points(20, 2, 2));
  const CliRun r = run({"register", "--reference", path("ref.csv"), "--target", path("tgt.csv"), "--loss", "mmd",
                     "--sigma", "0.2", "--lr", "1e300", "--epochs", "50", "--out", path("o")});
  EXPECT_EQ(r.code, 1);
  const json m = read_json(path("o/manifest.json"));
  EXPECT_EQ(m["status"], "diverged");
  EXPECT_FALSE(fs::exists(path("o/aligned.csv")));
}

TEST_F(CliTest, EvalIdenticalAndOffset) {
  const PointSet a = kt::random_points(30, 2, 3);
  save_pointset(path("a.csv"), a);
  save_pointset(path("b.csv"), PointSet(a.matrix().array() + 1.0 / std::sqrt(2.0)));
  CliRun r = run({"eval", "--aligned", path("a.csv"), "--truth", path("a.csv"), "--before", path("a.csv"), "--k",
               "3,5,10", "--out", path("m.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  json m = json::parse(r.out);
  EXPECT_EQ(m["rmse"], 0.0);
  EXPECT_EQ(m["hamming"].size(), 3u);
  for (auto& [k, v] : m["hamming"].items()) EXPECT_EQ(v, 0) << k;
  EXPECT_EQ(read_json(path("m.json")), m);

  r = run({"eval", "--aligned", path("b.csv"), "--truth", path("a.csv"), "--pca-out", path("pca.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(json::parse(r.out)["rmse"].get<double>(), 1.0, 1e-12);
  EXPECT_TRUE(fs::exists(path("pca.csv")));
}

TEST_F(CliTest, EvalShapeMismatch) {
  save_pointset(path("a.csv"), kt::random_points(10, 2, 1));
  save_pointset(path("b.csv"), kt::random_points(11, 2, 1));
  const CliRun r = run({"eval", "--aligned", path("a.csv"), "--truth", path("b.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run({"eval", "--aligned", path("zzz.csv")}).code, 2);
}
