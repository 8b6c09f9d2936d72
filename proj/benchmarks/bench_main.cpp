#include <benchmark/benchmark.h>

#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gradepipe/evaluation.hpp"
#include "gradepipe/graders.hpp"
#include "gradepipe/rubric.hpp"
#include "gradepipe/synthgen.hpp"

using namespace gradepipe;
using nlohmann::json;

namespace {

std::string direct_reply() {
  json cats = json::array();
  for (const char* n : {"Syntax", "Logic", "Output Correctness", "Style"}) {
    cats.push_back({{"name", n}, {"score", 2.0}, {"rationale", "mostly fine"}});
  }
  return "Some preamble.\n```json\n" + json{{"categories", cats}, {"total", 8.0}, {"summary", "ok"}}.dump(2) + "\n```\n";
}

std::string reverse_reply(int fixes) {
  json list = json::array();
  for (int i = 0; i < fixes; ++i) {
    list.push_back({{"category", "Logic"}, {"severity", "minor"}, {"deduction", 0.1}, {"description", "tighten the bound"}});
  }
  return "```java\nclass Solution {}\n```\n```json\n" + json{{"fixes", list}, {"claimed_total", 10 - 0.1 * fixes}}.dump() +
         "\n```\n";
}

ScoreSeries series(std::size_t n, const char* method, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0, 10);
  ScoreSeries s{method, {}};
  for (std::size_t i = 0; i < n; ++i) s.pairs.emplace_back(fmt::format("s{:06}", i), d(rng));
  return s;
}

const std::string kSolution =
    "public class Solution {\n"
    "    public static int sumEvens(int[] values) {\n"
    "        int total = 0;\n"
    "        for (int i = 0; i < values.length; i++) {\n"
    "            if (values[i] % 2 == 0) {\n"
    "                total += values[i];\n"
    "            }\n"
    "        }\n"
    "        return total;\n"
    "    }\n"
    "}\n";

}  // namespace

static void BM_ParseDirect(benchmark::State& state) {
  const auto text = direct_reply();
  const auto rubric = default_rubric();
  for (auto _ : state) benchmark::DoNotOptimize(parse_direct_response(text, rubric));
}
BENCHMARK(BM_ParseDirect);

static void BM_ParseReverse(benchmark::State& state) {
  const auto text = reverse_reply(int(state.range(0)));
  const auto rubric = default_rubric();
  for (auto _ : state) benchmark::DoNotOptimize(parse_reverse_response(text, rubric));
}
BENCHMARK(BM_ParseReverse)->Arg(1)->Arg(8)->Arg(20);

static void BM_RenderTemplate(benchmark::State& state) {
  const auto& tpl = builtin_templates().direct;
  TemplateVars vars;
  for (const char* k : {"language", "title", "statement", "rubric", "source", "scale_total", "contract"}) {
    vars[k] = std::string(200, 'x');
  }
  for (auto _ : state) {
    try {
      benchmark::DoNotOptimize(render_template(tpl, vars));
    } catch (const std::exception& e) {
      state.SkipWithError(e.what());
      break;
    }
  }
}
BENCHMARK(BM_RenderTemplate);

static void BM_DistributionStats(benchmark::State& state) {
  const auto s = series(std::size_t(state.range(0)), "x", 1);
  for (auto _ : state) benchmark::DoNotOptimize(distribution_stats(s));
}
BENCHMARK(BM_DistributionStats)->Range(16, 1 << 14);

static void BM_MeanAbsDiff(benchmark::State& state) {
  const auto a = series(std::size_t(state.range(0)), kDirect10, 1);
  const auto h = series(std::size_t(state.range(0)), kHumanTA, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mean_abs_diff(a, h));
}
BENCHMARK(BM_MeanAbsDiff)->Range(16, 1 << 14);

static void BM_InjectErrors(benchmark::State& state) {
  const auto profile = default_profile(QualityBand::Poor);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(inject_errors(kSolution, profile, seed++));
}
BENCHMARK(BM_InjectErrors);
BENCHMARK_MAIN();
