#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "../../tools/cli.hpp"
#include "gradepipe/error.hpp"
#include "gradepipe/io.hpp"
#include "gradepipe/pipeline.hpp"
#include "support.hpp"

using namespace gradepipe;
using gradepipe::testing::fixture_dir;
using gradepipe::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string cfg(const char* name) { return (fixture_dir() / name).string(); }

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> v;
  std::istringstream in(io::read_file(p));
  std::string line;
  while (std::getline(in, line)) v.push_back(json::parse(line));
  return v;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  }
  return files;
}

Errc config_error(const json& doc) {
  try {
    cli::parse_run_config(doc, "/tmp");
    cli::validate(cli::parse_run_config(doc, "/tmp"), true);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("config accepted");
  return Errc::Io;
}

}  // namespace

TEST_CASE("generate: seed 7 writes fifteen submissions, reproducibly") {
  TempDir a, b;
  const auto ra = invoke({"--config", cfg("generate.json"), "--out", a.path().string(), "generate"});
  REQUIRE(ra.code == cli::kExitOk);
  CHECK(ra.err.empty());
  const auto rb = invoke({"--config", cfg("generate.json"), "--out", b.path().string(), "generate"});
  REQUIRE(rb.code == cli::kExitOk);
  const auto ta = tree(a.path());
  CHECK(ta == tree(b.path()));
  int sources = 0;
  for (const auto& [rel, body] : ta) sources += rel.rfind("submissions/", 0) == 0;
  CHECK(sources == 15);
  // The checked-in corpus is what this command produces.
  CHECK(io::read_file(a / "manifest.json") == io::read_file(fixture_dir() / "corpus/manifest.json"));
  const auto corpus = load_manifest(a / "manifest.json");
  CHECK(corpus.submissions.size() == 15);
}

TEST_CASE("generate: --seed and --count override the config") {
  TempDir a, b;
  REQUIRE(invoke({"--config", cfg("generate.json"), "--out", a.path().string(), "--seed", "8", "generate", "--count", "2"}).code ==
          0);
  REQUIRE(invoke({"--config", cfg("generate.json"), "--out", b.path().string(), "generate"}).code == 0);
  const auto ca = load_manifest(a / "manifest.json");
  CHECK(ca.submissions.size() == 30);
  CHECK(ca.metadata["seed"] == 8);
  CHECK(io::read_file(a / "manifest.json") != io::read_file(b / "manifest.json"));
}

TEST_CASE("generate: unwritable output directory is fatal") {
  TempDir t;
  io::write_file(t / "blocker", "x");
  const auto r = invoke({"--config", cfg("generate.json"), "--out", (t / "blocker/inner").string(), "generate"});
  CHECK(r.code == cli::kExitFatal);
  const auto e = json::parse(r.err);
  CHECK(e["command"] == "generate");
  CHECK_FALSE(e["error"].get<std::string>().empty());
}

TEST_CASE("generate: a failing cell gives a partial exit") {
  TempDir t;
  auto doc = json::parse(io::read_file(fixture_dir() / "problems/manifest.json"));
  for (auto& p : doc["problems"]) {
    p["solution_path"] = (fixture_dir() / "problems" / p["solution_path"].get<std::string>()).string();
    p.erase("tests_path");
  }
  doc["problems"].push_back({{"id", "no-solution"}, {"title", "T"}, {"statement", "S"}, {"language", "java"}});
  io::write_file(t / "problems.json", doc.dump());
  io::write_file(t / "gen.json", json{{"problems", "problems.json"}, {"out", "out"}, {"seed", 7}}.dump());
  const auto r = invoke({"--config", (t / "gen.json").string(), "generate"});
  CHECK(r.code == cli::kExitPartial);
  std::istringstream lines(r.err);
  std::string line;
  int failed = 0;
  while (std::getline(lines, line)) {
    const auto e = json::parse(line);
    CHECK(e["error"] == "CellFailed");
    CHECK(e["problem_id"] == "no-solution");
    ++failed;
  }
  CHECK(failed == 3);
  CHECK(load_manifest(t / "out/manifest.json").submissions.size() == 15);
}

TEST_CASE("grade over the replay fixture") {
  TempDir t;
  const auto r = invoke({"--config", cfg("grade.json"), "--out", t.path().string(), "grade"});
  REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
  const auto records = jsonl(t / "results.jsonl");
  REQUIRE(records.size() == 15);
  int autos = 0;
  for (const auto& j : records) {
    const auto p = pipeline_result_from_json(j);
    if (p.route == Route::AutoFull) {
      ++autos;
      CHECK(p.results.size() == 1);
      continue;
    }
    CHECK(p.test_status == TestStatus::Fail);
    if (p.route == Route::LlmGraded) CHECK(p.results.size() == 4);
  }
  CHECK(autos == 5);
  const auto summary = json::parse(io::read_file(t / "summary.json"));
  CHECK(summary["submissions"] == 15);
  CHECK(summary["routes"]["AutoFull"] == 5);
  CHECK(summary["gateway_mode"] == "replay");
  CHECK(summary["scales"] == json{10, 100});
}

TEST_CASE("grade: strict replay aborts on a miss, lenient replay routes to review") {
  TempDir t;
  fs::create_directories(t / "empty");
  const auto strict = invoke({"--config", cfg("grade.json"), "--out", (t / "a").string(), "--replay",
                           (t / "empty").string(), "--replay-strict", "grade"});
  CHECK(strict.code == cli::kExitFatal);
  CHECK(json::parse(strict.err)["error"] == "ReplayMiss");

  const auto lenient =
      invoke({"--config", cfg("grade.json"), "--out", (t / "b").string(), "--replay", (t / "empty").string(), "grade"});
  REQUIRE(lenient.code == cli::kExitOk);
  for (const auto& j : jsonl(t / "b/results.jsonl")) {
    const auto p = pipeline_result_from_json(j);
    if (p.route == Route::AutoFull) continue;
    CHECK(p.route == Route::NeedsHuman);
    REQUIRE(p.review_flag.has_value());
    CHECK(p.review_flag->reason == ReviewReason::GatewayError);
  }
}

TEST_CASE("evaluate and report") {
  TempDir t;
  REQUIRE(invoke({"--config", cfg("grade.json"), "--out", t.path().string(), "grade"}).code == 0);
  const auto e1 = invoke({"--config", cfg("grade.json"), "--out", t.path().string(), "evaluate"});
  REQUIRE_MESSAGE(e1.code == cli::kExitOk, e1.err);
  CHECK(e1.out.find("Average Scores Across Methods") != std::string::npos);
  const auto first = io::read_file(t / "report.csv");
  const auto first_json = io::read_file(t / "report.json");
  const auto e2 = invoke({"--config", cfg("grade.json"), "--out", t.path().string(), "evaluate"});
  CHECK(e2.out == e1.out);
  CHECK(io::read_file(t / "report.csv") == first);
  CHECK(io::read_file(t / "report.json") == first_json);

  const auto missing =
      invoke({"--config", cfg("grade.json"), "--out", t.path().string(), "evaluate", "--baseline", (t / "nope.csv").string()});
  CHECK(missing.code == cli::kExitFatal);
  CHECK(json::parse(missing.err)["command"] == "evaluate");

  const auto rep = invoke({"--config", cfg("grade.json"), "--out", t.path().string(), "report"});
  REQUIRE(rep.code == cli::kExitOk);
  const auto queue = json::parse(io::read_file(t / "review_queue.json"));
  REQUIRE(queue.size() >= 1);
  for (std::size_t i = 1; i < queue.size(); ++i) {
    CHECK(queue[i - 1].value("magnitude", 0.0) >= queue[i].value("magnitude", 0.0));
  }
  CHECK(rep.out.rfind("Review queue:", 0) == 0);
}

TEST_CASE("evaluate with a baseline that shares no ids explains itself") {
  TempDir t;
  REQUIRE(invoke({"--config", cfg("grade.json"), "--out", t.path().string(), "grade"}).code == 0);
  io::write_file(t / "other.csv", "submission_id,grader_id,scale,total\nsomeone-else,ta1,10,5\n");
  const auto r =
      invoke({"--config", cfg("grade.json"), "--out", t.path().string(), "evaluate", "--baseline", (t / "other.csv").string()});
  CHECK(r.code == cli::kExitFatal);
}

TEST_CASE("usage errors") {
  CHECK(invoke({}).code == cli::kExitFatal);
  CHECK(invoke({"frobnicate"}).code == cli::kExitFatal);
  CHECK(invoke({"--help"}).code == cli::kExitOk);
  CHECK(invoke({"--config", "/definitely/not/here.json", "grade"}).code == cli::kExitFatal);
  CHECK(invoke({"generate", "--mode", "sideways"}).code == cli::kExitFatal);
}

TEST_CASE("config parsing") {
  const auto c = cli::parse_run_config(json::parse(R"({"corpus":"c/manifest.json","scale":100,
      "gateway":{"mode":"record","transcripts":"t","endpoint":{"base_url":"http://x"},"retry":{"max_attempts":5}},
      "runner":{"kind":"command","command":"true","timeout_s":3}})"),
                                       "/base");
  CHECK(c.corpus == fs::path("/base/c/manifest.json"));
  CHECK(c.scales == std::vector<int>{100});
  CHECK(c.gateway.mode == GatewayMode::Record);
  CHECK(c.gateway.transcripts == fs::path("/base/t"));
  CHECK(c.gateway.retry.max_attempts == 5);
  CHECK(c.runner.timeout_s == 3);
  CHECK_NOTHROW(cli::validate(c, true));

  CHECK(config_error(json{{"colour", "blue"}}) == Errc::InvalidConfig);
  CHECK(config_error(json{{"scale", 10}, {"scales", {10}}}) == Errc::InvalidConfig);
  CHECK(config_error(json{{"scales", {50}}, {"gateway", {{"transcripts", "t"}}}}) == Errc::InvalidConfig);
  CHECK(config_error(json{{"strategies", {"sideways"}}}) == Errc::InvalidConfig);
  CHECK(config_error(json{{"gateway", {{"mode", "live"}}}}) == Errc::InvalidConfig);
  CHECK(config_error(json{{"runner", {{"kind", "command"}}}, {"gateway", {{"transcripts", "t"}}}}) ==
        Errc::InvalidConfig);
  CHECK(config_error(json{{"workers", "four"}}) == Errc::InvalidConfig);
}
