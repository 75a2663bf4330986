#include <gtest/gtest.h>

#include <chrono>
#include <fstream>

#include "advise/runner.hpp"
#include "advise/stub_model.hpp"
#include "support.hpp"

using namespace advise;
using advise::test::TempDir;

namespace {

nlohmann::json response(std::vector<int> idx, std::vector<double> scores) {
  return {{"results", {{{"id", "a"}, {"topk_indices", idx}, {"topk_scores", scores}, {"score_for_class", {{"3", 0.5}}}}}}};
}

InferRequest one_image() { return {{{"a", "a.png"}}, {3}}; }

RunnerHandle stub_handle() {
  RunnerHandle h;
  h.command = shell_quote(ADVISE_STUB_RUNNER);
  h.timeout_seconds = 60;
  return h;
}

/// Shell script runner that answers every infer call with `body`.
std::string fake_runner(const TempDir& dir, const std::string& body) {
  const auto path = dir / "runner.sh";
  std::ofstream(path) << "#!/bin/sh\n"
                         "while [ $# -gt 0 ]; do [ \"$1\" = --out ] && out=$2; shift; done\n"
                         "cat > \"$out\" <<'EOF'\n"
                      << body << "\nEOF\n";
  return "/bin/sh " + shell_quote(path.string());
}

}  // namespace

TEST(Responses, ValidDocumentParses) {
  const auto r = responses_from_json(response({3, 1, 2, 0, 4}, {0.5, 0.2, 0.1, 0.1, 0.05}), one_image());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].topk_indices[0], 3);
  EXPECT_EQ(r[0].score(3), 0.5);
  EXPECT_THROW(r[0].score(4), RunnerError);
}

TEST(Responses, FourEntryTop5IsAProtocolError) {
  EXPECT_THROW(responses_from_json(response({3, 1, 2, 0}, {0.5, 0.2, 0.1, 0.1}), one_image()), RunnerError);
}

TEST(Responses, OtherViolations) {
  EXPECT_THROW(responses_from_json(response({3, 1, 2, 0, 4}, {1.5, 0.2, 0.1, 0.1, 0.05}), one_image()), RunnerError);
  EXPECT_THROW(responses_from_json(nlohmann::json::object(), one_image()), RunnerError);
  InferRequest two = one_image();
  two.images.push_back({"b", "b.png"});
  EXPECT_THROW(responses_from_json(response({3, 1, 2, 0, 4}, {0.5, 0.2, 0.1, 0.1, 0.05}), two), RunnerError);
  InferRequest other_class = one_image();
  other_class.classes = {7};
  EXPECT_THROW(responses_from_json(response({3, 1, 2, 0, 4}, {0.5, 0.2, 0.1, 0.1, 0.05}), other_class), RunnerError);
  const nlohmann::json err = {{"results", {{{"id", "a"}, {"error", "boom"}}}}};
  EXPECT_THROW(responses_from_json(err, one_image()), RunnerError);
}

TEST(Requests, JsonRoundTrip) {
  InferRequest r{{{"x", "/tmp/x.png"}, {"y", "y.png"}}, {1, 4}};
  const auto j = request_to_json(r);
  EXPECT_EQ(j["topk"], 5);
  const auto back = request_from_json(nlohmann::json::parse(j.dump()));
  ASSERT_EQ(back.images.size(), 2u);
  EXPECT_EQ(back.images[1].id, "y");
  EXPECT_EQ(back.classes, (std::vector<int>{1, 4}));
  EXPECT_THROW(request_from_json(nlohmann::json::parse(R"({"images":[],"topk":3})")), ValidationError);
}

TEST(ShellQuote, SurvivesTheShell) {
  TempDir dir;
  const std::string nasty = "it's a $HOME `x` \"q\"";
  run_shell("printf %s " + shell_quote(nasty), {}, 10, dir / "log");
  EXPECT_EQ(test::slurp(dir / "log"), nasty);
}

TEST(RunShell, TimeoutKillsTheProcessGroup) {
  TempDir dir;
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_THROW(run_shell("sleep 30 & sleep 30", {}, 0.3, dir / "log"), RunnerTimeout);
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  EXPECT_LT(dt.count(), 5.0);
}

TEST(RunShell, NonZeroExitAndWorkdir) {
  TempDir dir;
  EXPECT_THROW(run_shell("exit 3", {}, 10, dir / "log"), RunnerError);
  run_shell("pwd", dir.path(), 10, dir / "log");
  EXPECT_EQ(test::slurp(dir / "log"), std::filesystem::canonical(dir.path()).string() + "\n");
}

TEST(RunnerHandle, Validation) {
  RunnerHandle h;
  EXPECT_THROW(h.validate(), ValidationError);
  h.command = "x";
  h.capacity = 0;
  EXPECT_THROW(h.validate(), ValidationError);
  h.capacity = 1;
  h.timeout_seconds = 0;
  EXPECT_THROW(h.validate(), ValidationError);
}

TEST(SubprocessRunner, BatchesByCapacityAndKeepsOrder) {
  TempDir dir;
  InferRequest req;
  req.classes = {0, 5};
  stub::StubRunner local;
  for (int i = 0; i < 5; ++i) {
    const auto p = dir / ("i" + std::to_string(i) + ".png");
    write_png(p, stub::synthetic_image(24, 24 + i, i));
    req.images.push_back({"img" + std::to_string(i), p});
  }
  auto h = stub_handle();
  h.capacity = 2;
  const auto got = run_model_runner(h, req, dir / "scratch");
  const auto want = local.infer(req);
  ASSERT_EQ(got.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(got[i].id, want[i].id);
    EXPECT_EQ(got[i].topk_indices, want[i].topk_indices);
    EXPECT_EQ(got[i].score_for_class, want[i].score_for_class);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "scratch" / "requests_2.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "scratch" / "requests_3.json"));
}

TEST(SubprocessRunner, ExportProducesValidBundle) {
  TempDir dir;
  write_png(dir / "i.png", stub::synthetic_image(32, 32, 1));
  SubprocessRunner r(stub_handle(), dir / "scratch");
  const auto b = r.export_bundle({dir / "i.png", "m", "l", "top1", dir / "bundle"});
  EXPECT_NO_THROW(validate_bundle(b));
  stub::StubRunner local;
  EXPECT_EQ(b, local.export_bundle({dir / "i.png", "m", "l", "top1", dir / "bundle_local"}));
}

TEST(SubprocessRunner, MalformedResponsesAreRunnerErrors) {
  TempDir dir;
  RunnerHandle h;
  h.timeout_seconds = 10;
  h.command = fake_runner(dir, R"({"results":[{"id":"a","topk_indices":[1,2,3,4],"topk_scores":[0.1,0.1,0.1,0.1]}]})");
  EXPECT_THROW(run_model_runner(h, {{{"a", "a.png"}}, {}}, dir / "s"), RunnerError);
  h.command = fake_runner(dir, "not json");
  EXPECT_THROW(run_model_runner(h, {{{"a", "a.png"}}, {}}, dir / "s"), RunnerError);
}

TEST(SubprocessRunner, InvalidImageReportedInline) {
  TempDir dir;
  std::ofstream(dir / "bad.png") << "nope";
  EXPECT_THROW(run_model_runner(stub_handle(), {{{"bad", dir / "bad.png"}}, {}}, dir / "s"), RunnerError);
}
