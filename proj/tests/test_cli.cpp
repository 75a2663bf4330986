#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "advise/csv.hpp"
#include "advise/image.hpp"
#include "advise/runner.hpp"
#include "advise/stub_model.hpp"
#include "support.hpp"

using namespace advise;
using advise::test::TempDir;

namespace {

const std::string kCli = shell_quote(ADVISE_CLI);
const std::string kRunner = shell_quote(ADVISE_STUB_RUNNER);

/// Runs a shell command, stdout+stderr into `log`; returns the exit status.
int sh(const std::string& cmd, const std::filesystem::path& log) {
  const int status = std::system((cmd + " > " + shell_quote(log.string()) + " 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const std::filesystem::path& p) { return shell_quote(p.string()); }

/// Synthetic image plus exported bundles for its top-2 classes.
struct StubCase {
  TempDir dir;
  StubCase() {
    write_png(dir / "img.png", stub::synthetic_image(48, 52, 21));
    stub::StubRunner r;
    const auto b = r.export_bundle({dir / "img.png", "m", "l", "top1", dir / "b1"});
    r.export_bundle({dir / "img.png", "m", "l", std::to_string((*b.manifest.top5)[1]), dir / "b2"});
  }
  std::string evaluate(const std::string& out, const std::string& extra = "") const {
    return kCli + " evaluate --bundle " + q(dir / "b1") + " --bundle2 " + q(dir / "b2") + " --image " +
           q(dir / "img.png") + " --out " + q(dir / out) + " --runner " + shell_quote(kRunner) + " " + extra;
  }
};

}  // namespace

TEST(Cli, ScoreWritesScoresJson) {
  TempDir dir;
  write_bundle(test::three_unit_bundle(), dir / "b");
  ASSERT_EQ(sh(kCli + " score --bundle " + q(dir / "b") + " --out " + q(dir / "s.json") + " --threads 1",
               dir / "log"), 0)
      << test::slurp(dir / "log");
  const auto j = nlohmann::json::parse(test::slurp(dir / "s.json"));
  EXPECT_EQ(j["scores"], nlohmann::json::array({0, 1, 2}));
  EXPECT_EQ(j["kde_config"]["gamma_mode"], "search");
}

TEST(Cli, ScoreMissingManifestExitsTwoNamingThePath) {
  TempDir dir;
  EXPECT_EQ(sh(kCli + " score --bundle " + q(dir / "nowhere") + " --out " + q(dir / "s.json"), dir / "log"), 2);
  EXPECT_NE(test::slurp(dir / "log").find((dir / "nowhere").string()), std::string::npos);
}

TEST(Cli, GammaFlagIsEchoed) {
  TempDir dir;
  write_bundle(test::three_unit_bundle(), dir / "b");
  ASSERT_EQ(sh(kCli + " score --bundle " + q(dir / "b") + " --out " + q(dir / "s.json") + " --gamma fixed:0.5",
               dir / "log"), 0);
  EXPECT_EQ(nlohmann::json::parse(test::slurp(dir / "s.json"))["kde_config"]["gamma_mode"], "fixed:0.5");
}

TEST(Cli, BadFlagsExitTwo) {
  TempDir dir;
  write_bundle(test::three_unit_bundle(), dir / "b");
  EXPECT_EQ(sh(kCli + " score --bundle " + q(dir / "b") + " --out " + q(dir / "s.json") + " --gamma sometimes",
               dir / "log"), 2);
  EXPECT_EQ(sh(kCli + " frobnicate", dir / "log"), 2);
}

TEST(Cli, ExplainEmitsOneHeatmapAndOverlayPerGroup) {
  TempDir dir;
  write_bundle(test::three_unit_bundle(), dir / "b");
  write_png(dir / "img.png", stub::synthetic_image(32, 32, 1));
  ASSERT_EQ(sh(kCli + " explain --bundle " + q(dir / "b") + " --image " + q(dir / "img.png") + " --out " +
                   q(dir / "o") + " --baseline gradcam --no-relu",
               dir / "log"), 0)
      << test::slurp(dir / "log");
  for (int s = 0; s < 3; ++s) {
    EXPECT_TRUE(std::filesystem::exists(dir / "o" / "maps" / ("score_" + std::to_string(s) + ".png")));
    EXPECT_TRUE(std::filesystem::exists(dir / "o" / "maps" / ("score_" + std::to_string(s) + "_overlay.png")));
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "o" / "maps" / "gradcam.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "o" / "maps" / "raw.atb"));
  const auto idx = nlohmann::json::parse(test::slurp(dir / "o" / "maps" / "index.json"));
  EXPECT_EQ(idx["groups"].size(), 3u);
  EXPECT_EQ(idx["relu_applied"], false);
}

TEST(Cli, EvaluateIdentityMaskGivesAvxOne) {
  StubCase c;
  ASSERT_EQ(sh(c.evaluate("e", "--mask identity"), c.dir / "log"), 0) << test::slurp(c.dir / "log");
  const auto j = nlohmann::json::parse(test::slurp(c.dir / "e" / "metrics.json"));
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["avx"].get<double>(), 1.0);
  EXPECT_EQ(j[0]["hit"], 1);
  EXPECT_EQ(j[0]["selected"], true);
}

TEST(Cli, EvaluateSelectionPolicyChangesHeadline) {
  StubCase c;
  ASSERT_EQ(sh(c.evaluate("best"), c.dir / "log"), 0) << test::slurp(c.dir / "log");
  const auto j = nlohmann::json::parse(test::slurp(c.dir / "best" / "metrics.json"));
  ASSERT_GE(j.size(), 2u) << "fixture needs at least two score groups";
  int best = -1, other = -1;
  for (const auto& r : j) (r["selected"].get<bool>() ? best : other) = r["score"].get<int>();
  ASSERT_NE(other, -1);
  ASSERT_EQ(sh(c.evaluate("pick", "--select score:" + std::to_string(other)), c.dir / "log"), 0);
  const auto recs = csv::read(c.dir / "pick" / "metrics.csv");
  for (const auto& r : recs) {
    if (r.at("selected") == "1") {
      EXPECT_EQ(r.at("score"), std::to_string(other));
    }
  }
  EXPECT_NE(best, other);
  const auto idx = nlohmann::json::parse(test::slurp(c.dir / "pick" / "maps" / "index.json"));
  EXPECT_EQ(idx["selected"], other);
}

TEST(Cli, EvaluateWithoutSecondBundleWarns) {
  StubCase c;
  const std::string cmd = kCli + " evaluate --bundle " + q(c.dir / "b1") + " --image " + q(c.dir / "img.png") +
                          " --out " + q(c.dir / "e") + " --runner " + shell_quote(kRunner);
  ASSERT_EQ(sh(cmd, c.dir / "log"), 0);
  EXPECT_NE(test::slurp(c.dir / "log").find("warning"), std::string::npos);
  for (const auto& r : csv::read(c.dir / "e" / "metrics.csv")) {
    EXPECT_EQ(r.at("cs"), "NA");
    EXPECT_EQ(r.at("cs_state"), "missing");
  }
}

TEST(Cli, RunnerTimeoutExitsFour) {
  StubCase c;
  const std::string cmd = kCli + " evaluate --bundle " + q(c.dir / "b1") + " --image " + q(c.dir / "img.png") +
                          " --out " + q(c.dir / "e") + " --runner-timeout 0.2 --runner " +
                          shell_quote("sh -c 'sleep 20' x");
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(sh(cmd, c.dir / "log"), 4);
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  EXPECT_LT(dt.count(), 10.0);
}

TEST(Cli, FailingRunnerExitsFour) {
  StubCase c;
  const std::string cmd = kCli + " evaluate --bundle " + q(c.dir / "b1") + " --image " + q(c.dir / "img.png") +
                          " --out " + q(c.dir / "e") + " --runner false";
  EXPECT_EQ(sh(cmd, c.dir / "log"), 4);
}

TEST(Cli, AblateAndReport) {
  StubCase c;
  const std::string ab = kCli + " ablate --image " + q(c.dir / "img.png") + " --out " + q(c.dir / "ab") +
                         " --densities 0,0.1 --seed 5 --runner " + shell_quote(kRunner);
  ASSERT_EQ(sh(ab, c.dir / "log"), 0) << test::slurp(c.dir / "log");
  const auto rows = csv::read(c.dir / "ab" / "ablation.csv");
  EXPECT_EQ(rows.size(), 4u);
  ASSERT_EQ(sh(kCli + " report --input " + q(c.dir / "ab" / "ablation.csv") + " --table " + q(c.dir / "t.csv") +
                   " --plot " + q(c.dir / "p.svg") + " --aggregation of-averages",
               c.dir / "log"), 0)
      << test::slurp(c.dir / "log");
  EXPECT_EQ(csv::read(c.dir / "t.csv").size(), 4u);
  EXPECT_NE(test::slurp(c.dir / "p.svg").find("of-averages"), std::string::npos);
  EXPECT_EQ(sh(kCli + " report --input " + q(c.dir / "ab" / "ablation.csv"), c.dir / "log"), 2);
}

TEST(StubRunnerTool, MakeImageAndExport) {
  TempDir dir;
  ASSERT_EQ(sh(kRunner + " make-image --height 40 --width 30 --seed 3 --out " + q(dir / "i.png"), dir / "log"), 0);
  EXPECT_EQ(read_png(dir / "i.png"), stub::synthetic_image(40, 30, 3));
  ASSERT_EQ(sh(kRunner + " export --image " + q(dir / "i.png") + " --out " + q(dir / "b"), dir / "log"), 0);
  EXPECT_NO_THROW(read_bundle(dir / "b"));
}
