#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gradepipe/error.hpp"
#include "gradepipe/evaluation.hpp"
#include "gradepipe/io.hpp"
#include "gradepipe/pipeline.hpp"
#include "gradepipe/rubric.hpp"
#include "gradepipe/test_runner.hpp"

namespace gradepipe::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad_config(const std::string& what) { throw Error(Errc::InvalidConfig, what); }

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!obj.is_object()) bad_config(fmt::format("{} must be an object", where));
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      bad_config(fmt::format("unknown key '{}' in {}", key, where));
    }
  }
}

fs::path resolve_path(const json& value, const fs::path& base, std::string_view key) {
  if (!value.is_string()) bad_config(fmt::format("'{}' must be a string path", key));
  fs::path p = value.get<std::string>();
  return p.is_absolute() || base.empty() ? p : base / p;
}

template <typename T>
T get_as(const json& obj, std::string_view key, std::string_view where) {
  try {
    return obj.at(std::string(key)).get<T>();
  } catch (const json::exception&) {
    bad_config(fmt::format("'{}' in {} has the wrong type", key, where));
  }
}

QualityBand band_or_throw(const std::string& text) {
  const auto band = parse_band(text);
  if (!band || *band == QualityBand::Unknown) bad_config(fmt::format("'{}' is not a labelled band", text));
  return *band;
}

void emit_error(std::ostream& err, std::string_view command, std::string_view code, std::string_view detail,
                json extra = json::object()) {
  extra["command"] = command;
  extra["error"] = code;
  extra["detail"] = detail;
  err << extra.dump() << '\n';
}

}  // namespace

RunConfig parse_run_config(const json& doc, const fs::path& base) {
  check_keys(doc,
             {"corpus", "problems", "rubric", "baseline", "scale", "scales", "strategies", "gateway", "runner",
              "review_threshold", "out", "seed", "workers", "max_repairs", "strict_replay", "generate"},
             "config");
  RunConfig c;
  if (doc.contains("corpus")) c.corpus = resolve_path(doc["corpus"], base, "corpus");
  if (doc.contains("problems")) c.problems = resolve_path(doc["problems"], base, "problems");
  if (doc.contains("rubric")) c.rubric = resolve_path(doc["rubric"], base, "rubric");
  if (doc.contains("baseline")) c.baseline = resolve_path(doc["baseline"], base, "baseline");
  if (doc.contains("out")) c.out = resolve_path(doc["out"], base, "out");
  if (doc.contains("scale") && doc.contains("scales")) bad_config("give either 'scale' or 'scales', not both");
  if (doc.contains("scale")) c.scales = {get_as<int>(doc, "scale", "config")};
  if (doc.contains("scales")) c.scales = get_as<std::vector<int>>(doc, "scales", "config");
  if (doc.contains("strategies")) {
    c.strategies.clear();
    for (const auto& name : get_as<std::vector<std::string>>(doc, "strategies", "config")) {
      const auto s = parse_strategy(name);
      if (!s || *s == Strategy::Generate) bad_config(fmt::format("'{}' is not a grading strategy", name));
      c.strategies.push_back(*s);
    }
  }
  if (doc.contains("review_threshold")) c.review_threshold = get_as<double>(doc, "review_threshold", "config");
  if (doc.contains("seed")) c.seed = get_as<std::uint64_t>(doc, "seed", "config");
  if (doc.contains("workers")) c.workers = get_as<std::size_t>(doc, "workers", "config");
  if (doc.contains("max_repairs")) c.max_repairs = get_as<int>(doc, "max_repairs", "config");
  if (doc.contains("strict_replay")) c.strict_replay = get_as<bool>(doc, "strict_replay", "config");

  if (doc.contains("gateway")) {
    const auto& g = doc["gateway"];
    check_keys(g, {"mode", "transcripts", "endpoint", "max_in_flight", "call_budget", "retry"}, "gateway");
    if (g.contains("mode")) {
      const auto mode = parse_gateway_mode(get_as<std::string>(g, "mode", "gateway"));
      if (!mode) bad_config("gateway.mode must be live, record or replay");
      c.gateway.mode = *mode;
    }
    if (g.contains("transcripts")) c.gateway.transcripts = resolve_path(g["transcripts"], base, "transcripts");
    if (g.contains("max_in_flight")) c.gateway.max_in_flight = get_as<std::size_t>(g, "max_in_flight", "gateway");
    if (g.contains("call_budget") && !g["call_budget"].is_null()) {
      c.gateway.call_budget = get_as<std::size_t>(g, "call_budget", "gateway");
    }
    if (g.contains("endpoint")) {
      const auto& e = g["endpoint"];
      check_keys(e, {"base_url", "path", "model", "token_env", "timeout_s"}, "gateway.endpoint");
      auto& ep = c.gateway.endpoint;
      if (e.contains("base_url")) ep.base_url = get_as<std::string>(e, "base_url", "gateway.endpoint");
      if (e.contains("path")) ep.path = get_as<std::string>(e, "path", "gateway.endpoint");
      if (e.contains("model")) ep.model = get_as<std::string>(e, "model", "gateway.endpoint");
      if (e.contains("token_env")) ep.token_env = get_as<std::string>(e, "token_env", "gateway.endpoint");
      if (e.contains("timeout_s")) ep.timeout_s = get_as<int>(e, "timeout_s", "gateway.endpoint");
    }
    if (g.contains("retry")) {
      const auto& r = g["retry"];
      check_keys(r, {"max_attempts", "initial_backoff_ms", "multiplier", "max_backoff_ms"}, "gateway.retry");
      auto& p = c.gateway.retry;
      if (r.contains("max_attempts")) p.max_attempts = get_as<int>(r, "max_attempts", "gateway.retry");
      if (r.contains("initial_backoff_ms")) {
        p.initial_backoff = std::chrono::milliseconds(get_as<long>(r, "initial_backoff_ms", "gateway.retry"));
      }
      if (r.contains("multiplier")) p.multiplier = get_as<double>(r, "multiplier", "gateway.retry");
      if (r.contains("max_backoff_ms")) {
        p.max_backoff = std::chrono::milliseconds(get_as<long>(r, "max_backoff_ms", "gateway.retry"));
      }
    }
  }

  if (doc.contains("runner")) {
    const auto& r = doc["runner"];
    check_keys(r, {"kind", "command", "timeout_s", "source_name"}, "runner");
    if (r.contains("kind")) c.runner.kind = get_as<std::string>(r, "kind", "runner");
    if (r.contains("command")) c.runner.command = get_as<std::string>(r, "command", "runner");
    if (r.contains("timeout_s")) c.runner.timeout_s = get_as<int>(r, "timeout_s", "runner");
    if (r.contains("source_name")) c.runner.source_name = get_as<std::string>(r, "source_name", "runner");
  }

  if (doc.contains("generate")) {
    const auto& g = doc["generate"];
    check_keys(g, {"mode", "count_per_cell", "bands"}, "generate");
    if (g.contains("mode")) {
      const auto mode = io::to_lower(get_as<std::string>(g, "mode", "generate"));
      if (mode == "offline") c.generation_mode = GenerationMode::Offline;
      else if (mode == "live") c.generation_mode = GenerationMode::Live;
      else bad_config("generate.mode must be offline or live");
    }
    if (g.contains("count_per_cell")) c.count_per_cell = get_as<int>(g, "count_per_cell", "generate");
    if (g.contains("bands")) {
      c.bands.clear();
      for (const auto& b : get_as<std::vector<std::string>>(g, "bands", "generate")) c.bands.push_back(band_or_throw(b));
    }
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  const auto text = io::read_file(path);
  const auto doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) bad_config(fmt::format("{} is not valid JSON", path.string()));
  return parse_run_config(doc, path.parent_path());
}

void validate(const RunConfig& c, bool for_grade) {
  if (c.scales.empty()) bad_config("at least one scale is required");
  for (int s : c.scales) {
    if (s != 10 && s != 100) bad_config(fmt::format("scale must be 10 or 100, got {}", s));
  }
  if (for_grade && c.strategies.empty()) bad_config("grade needs at least one strategy");
  if (c.review_threshold < 0.0) bad_config("review_threshold must be non-negative");
  if (c.workers == 0) bad_config("workers must be at least 1");
  if (c.max_repairs < 0) bad_config("max_repairs must be non-negative");
  if (c.runner.kind != "reference" && c.runner.kind != "command" && c.runner.kind != "none") {
    bad_config(fmt::format("unknown runner kind '{}'", c.runner.kind));
  }
  if (c.runner.kind == "command" && c.runner.command.empty()) bad_config("runner.command is empty");
  if (c.runner.timeout_s <= 0) bad_config("runner.timeout_s must be positive");
  if (for_grade && c.gateway.mode != GatewayMode::Live && c.gateway.transcripts.empty()) {
    bad_config("replay and record modes need gateway.transcripts");
  }
  if (c.gateway.mode != GatewayMode::Replay && c.gateway.endpoint.base_url.empty()) {
    bad_config("live and record modes need gateway.endpoint.base_url");
  }
}

namespace {

struct Globals {
  std::string config;
  std::string replay;
  bool replay_strict = false;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig effective_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (!g.replay.empty()) {
    c.gateway.mode = GatewayMode::Replay;
    c.gateway.transcripts = g.replay;
  }
  if (g.replay_strict) {
    c.gateway.mode = GatewayMode::Replay;
    c.strict_replay = true;
  }
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.out = g.out;
  return c;
}

std::unique_ptr<Gateway> make_gateway(const RunConfig& c) {
  std::shared_ptr<TranscriptStore> store;
  if (!c.gateway.transcripts.empty()) store = std::make_shared<TranscriptStore>(c.gateway.transcripts);
  std::shared_ptr<Endpoint> endpoint;
  if (c.gateway.mode != GatewayMode::Replay) endpoint = make_http_endpoint(c.gateway.endpoint);
  GatewayOptions options{c.gateway.mode, c.gateway.max_in_flight, c.gateway.call_budget};
  Gateway base(options, endpoint, store);
  return std::make_unique<Gateway>(base.with_retry(c.gateway.retry));
}

std::unique_ptr<TestRunner> make_runner(const RunConfig& c) {
  if (c.runner.kind == "reference") return std::make_unique<ReferenceRunner>();
  if (c.runner.kind == "command") {
    CommandRunnerConfig rc;
    rc.command = c.runner.command;
    rc.timeout = std::chrono::seconds(c.runner.timeout_s);
    rc.source_name = c.runner.source_name;
    return std::make_unique<CommandRunner>(rc);
  }
  return nullptr;
}

std::vector<PipelineResult> load_results(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<PipelineResult> results;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (io::trim(line).empty()) continue;
    const auto doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      throw Error(Errc::MalformedRecord, fmt::format("{}:{}: not JSON", path.string(), lineno));
    }
    try {
      results.push_back(pipeline_result_from_json(doc));
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("{}:{}: {}", path.string(), lineno, e.detail()));
    } catch (const json::exception& e) {
      throw Error(Errc::MalformedRecord, fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return results;
}

int cmd_generate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  validate(c, false);
  const auto source = c.problems.empty() ? c.corpus : c.problems;
  if (source.empty()) bad_config("generate needs 'problems' (or 'corpus') in the config");
  const auto problems = load_manifest(source);

  std::unique_ptr<Gateway> gateway;
  if (c.generation_mode == GenerationMode::Live) gateway = make_gateway(c);

  GenerationOptions options;
  options.mode = c.generation_mode;
  options.seed = c.seed;
  options.count_per_cell = c.count_per_cell;
  options.client = gateway.get();
  options.workers = c.workers;
  auto batch = generate_batch(problems.problems, c.bands, options);
  batch.corpus.root = problems.root;

  for (const auto& f : batch.failures) {
    emit_error(err, "generate", "CellFailed", f.error,
               {{"problem_id", f.problem_id}, {"band", to_string(f.band)}, {"index", f.index}});
  }
  if (batch.corpus.submissions.empty() && !batch.failures.empty()) {
    emit_error(err, "generate", "GenerationFailed", "every cell failed");
    return kExitFatal;
  }
  write_manifest(batch.corpus, c.out);
  out << fmt::format("generated {} submissions, {} failed cells -> {}\n", batch.corpus.submissions.size(),
                     batch.failures.size(), (c.out / "manifest.json").string());
  return batch.failures.empty() ? kExitOk : kExitPartial;
}

int cmd_grade(const RunConfig& c, std::ostream& out) {
  validate(c, true);
  if (c.corpus.empty()) bad_config("grade needs 'corpus' in the config");
  const auto corpus = load_manifest(c.corpus);
  auto gateway = make_gateway(c);
  auto runner = make_runner(c);

  PipelineConfig pc;
  pc.strategies = c.strategies;
  if (!c.rubric.empty()) pc.rubric = load_rubric(c.rubric);
  pc.scales = c.scales;
  pc.client = gateway.get();
  pc.runner = runner.get();
  pc.review_threshold = c.review_threshold;
  pc.workers = c.workers;
  pc.grade_options.max_repairs = c.max_repairs;
  pc.strict_replay = c.strict_replay;

  const auto results = run_batch(corpus, pc);

  std::string lines;
  std::map<std::string, int> routes{{"AutoFull", 0}, {"LlmGraded", 0}, {"NeedsHuman", 0}};
  std::map<std::string, int> reasons;
  for (const auto& r : results) {
    lines += to_json(r).dump();
    lines += '\n';
    ++routes[std::string(to_string(r.route))];
    if (r.review_flag) ++reasons[std::string(to_string(r.review_flag->reason))];
  }
  json strategies = json::array();
  for (auto s : c.strategies) strategies.push_back(to_string(s));
  json summary = {{"submissions", results.size()},
                  {"routes", routes},
                  {"review_flags", reasons},
                  {"strategies", strategies},
                  {"scales", c.scales},
                  {"review_threshold", c.review_threshold},
                  {"gateway_mode", to_string(c.gateway.mode)}};
  io::write_file(c.out / "results.jsonl", lines);
  io::write_file(c.out / "summary.json", summary.dump(2) + "\n");
  out << fmt::format("graded {} submissions: {} auto, {} model-graded, {} for human review -> {}\n", results.size(),
                     routes["AutoFull"], routes["LlmGraded"], routes["NeedsHuman"],
                     (c.out / "results.jsonl").string());
  return kExitOk;
}

int cmd_evaluate(const RunConfig& c, const fs::path& results_path, const fs::path& baseline_path, std::ostream& out) {
  validate(c, false);
  if (c.corpus.empty()) bad_config("evaluate needs 'corpus' in the config");
  if (baseline_path.empty()) bad_config("evaluate needs a baseline (--baseline or 'baseline')");
  const auto corpus = load_manifest(c.corpus);
  const auto results = load_results(results_path.empty() ? c.out / "results.jsonl" : results_path);
  const auto baseline = load_baseline(baseline_path);
  const auto report = build_report(results, baseline, corpus);
  const auto text = render_text(report);
  io::write_file(c.out / "report.txt", text);
  io::write_file(c.out / "report.csv", render_csv(report));
  io::write_file(c.out / "report.json", render_json(report).dump(2) + "\n");
  out << text;
  return kExitOk;
}

int cmd_report(const RunConfig& c, const fs::path& results_path, std::ostream& out) {
  const auto results = load_results(results_path.empty() ? c.out / "results.jsonl" : results_path);
  std::vector<const PipelineResult*> queue;
  for (const auto& r : results) {
    if (r.route == Route::NeedsHuman || r.review_flag) queue.push_back(&r);
  }
  // Biggest disagreements first, infrastructure problems after, ids break ties.
  std::stable_sort(queue.begin(), queue.end(), [](const PipelineResult* a, const PipelineResult* b) {
    const double ma = a->review_flag ? a->review_flag->magnitude : 0.0;
    const double mb = b->review_flag ? b->review_flag->magnitude : 0.0;
    if (ma != mb) return ma > mb;
    return a->submission_id < b->submission_id;
  });

  json entries = json::array();
  std::string text = fmt::format("Review queue: {} of {} submissions\n", queue.size(), results.size());
  for (const auto* r : queue) {
    json scores = json::object();
    for (const auto& g : r->results) {
      scores[fmt::format("{}@{}", to_string(g.strategy), g.scale)] = g.normalized_total;
    }
    json entry = {{"submission_id", r->submission_id}, {"route", to_string(r->route)}, {"scores", scores}};
    std::string why = "-";
    if (r->review_flag) {
      entry["reason"] = to_string(r->review_flag->reason);
      entry["magnitude"] = r->review_flag->magnitude;
      entry["detail"] = r->review_flag->detail;
      why = fmt::format("{} {}", to_string(r->review_flag->reason), io::format_2dp(r->review_flag->magnitude));
    }
    text += fmt::format("  {:<28} {:<11} {}\n", r->submission_id, to_string(r->route), why);
    entries.push_back(std::move(entry));
  }
  io::write_file(c.out / "review_queue.json", entries.dump(2) + "\n");
  io::write_file(c.out / "review_queue.txt", text);
  out << text;
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rubric-driven grading of student code with a language model", "gradepipe"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--replay", g.replay, "Replay transcripts from this directory");
  app.add_flag("--replay-strict", g.replay_strict, "Abort the batch on the first replay miss");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output directory");

  auto* generate = app.add_subcommand("generate", "Create a labelled synthetic corpus");
  std::optional<int> count;
  std::string mode;
  generate->add_option("--count", count, "Submissions per (problem, band) cell");
  generate->add_option("--mode", mode, "offline or live")->check(CLI::IsMember({"offline", "live"}));

  auto* grade = app.add_subcommand("grade", "Grade every submission of the corpus");

  auto* evaluate = app.add_subcommand("evaluate", "Compare grading results with human scores");
  std::string results_path;
  std::string baseline_path;
  evaluate->add_option("--results", results_path, "results.jsonl from grade");
  evaluate->add_option("--baseline", baseline_path, "Human scores CSV");

  auto* report = app.add_subcommand("report", "List submissions that need human review");
  report->add_option("--results", results_path, "results.jsonl from grade");

  for (auto* sub : {generate, grade, evaluate, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    emit_error(err, "parse", "UsageError", e.what());
    return kExitFatal;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    auto config = effective_config(g);
    if (command == "generate") {
      if (count) config.count_per_cell = *count;
      if (mode == "offline") config.generation_mode = GenerationMode::Offline;
      if (mode == "live") config.generation_mode = GenerationMode::Live;
      return cmd_generate(config, out, err);
    }
    if (command == "grade") return cmd_grade(config, out);
    if (command == "evaluate") {
      const fs::path baseline = baseline_path.empty() ? config.baseline : fs::path(baseline_path);
      return cmd_evaluate(config, results_path, baseline, out);
    }
    return cmd_report(config, results_path, out);
  } catch (const Error& e) {
    std::string detail = e.detail();
    if (e.code() == Errc::EmptyIntersection) {
      detail += " (no graded submission has a human score; check that the baseline ids match the corpus)";
    }
    emit_error(err, command, to_string(e.code()), detail);
  } catch (const std::exception& e) {
    emit_error(err, command, "Internal", e.what());
  }
  return kExitFatal;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("gradepipe");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace gradepipe::cli
