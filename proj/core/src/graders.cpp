#include "gradepipe/graders.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "gradepipe/error.hpp"
#include "gradepipe/io.hpp"

namespace gradepipe {

using nlohmann::json;

namespace {

constexpr double kBoundTolerance = 1e-9;

std::string strip_one_trailing_newline(std::string s) {
  if (!s.empty() && s.back() == '\n') s.pop_back();
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::string category_names(const Rubric& rubric) {
  std::string out;
  for (std::size_t i = 0; i < rubric.categories.size(); ++i) {
    if (i > 0) out += ", ";
    out += rubric.categories[i].name;
  }
  return out;
}

TemplateVars prompt_vars(const Problem& problem, const Submission& submission, const Rubric& rubric) {
  return {{"language", problem.language_tag.empty() ? std::string("java") : problem.language_tag},
          {"title", problem.title.empty() ? problem.id : problem.title},
          {"statement", problem.statement},
          {"rubric", render_rubric(rubric)},
          {"category_names", category_names(rubric)},
          {"scale_total", format_points(rubric.scale_total)},
          {"source", strip_one_trailing_newline(submission.source)}};
}

void check_inputs(const Submission& submission, const Rubric& rubric) {
  validate(rubric);
  if (submission.source.empty()) {
    throw Error(Errc::PreconditionViolation, fmt::format("submission '{}' has empty source", submission.id));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Templates

std::string render_template(std::string_view tpl, const TemplateVars& vars) {
  std::string out;
  out.reserve(tpl.size() * 2);
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    const auto open = tpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tpl.substr(pos));
      break;
    }
    const auto close = tpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(tpl.substr(pos));
      break;
    }
    out.append(tpl.substr(pos, open - pos));
    const auto name = tpl.substr(open + 2, close - open - 2);
    const auto it = vars.find(name);
    if (it == vars.end()) throw Error(Errc::InvalidConfig, fmt::format("template placeholder '{{{{{}}}}}' has no value", name));
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

TemplateSet load_templates(const std::filesystem::path& dir, const std::string& version) {
  const auto read = [&](const char* name) {
    return strip_one_trailing_newline(io::read_file(dir / fmt::format("{}_{}.txt", name, version)));
  };
  TemplateSet set;
  set.version = version;
  set.direct = read("direct");
  set.direct_contract = read("direct_contract");
  set.reverse = read("reverse");
  set.reverse_contract = read("reverse_contract");
  set.repair = read("repair");
  set.generate = read("generate");
  return set;
}

// ---------------------------------------------------------------------------
// Fenced blocks

std::vector<FencedBlock> extract_fenced_blocks(std::string_view text) {
  std::vector<FencedBlock> blocks;
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }

  const auto fence_run = [](std::string_view trimmed) {
    std::size_t n = 0;
    while (n < trimmed.size() && trimmed[n] == '`') ++n;
    return n;
  };

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto open = io::trim(lines[i]);
    const auto ticks = fence_run(open);
    if (ticks < 3) continue;
    const auto info = io::trim(open.substr(ticks));
    if (info.find('`') != std::string_view::npos) continue;  // inline code span, not a fence
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      const auto close = io::trim(lines[j]);
      const auto close_ticks = fence_run(close);
      if (close_ticks >= ticks && close_ticks == close.size()) {
        FencedBlock block;
        const auto space = info.find_first_of(" \t");
        block.tag = io::to_lower(info.substr(0, space));
        for (std::size_t k = i + 1; k < j; ++k) {
          if (k > i + 1) block.body += '\n';
          block.body.append(lines[k]);
        }
        blocks.push_back(std::move(block));
        i = j;
        break;
      }
    }
  }
  return blocks;
}

namespace {

// The first fenced block whose body is a JSON object holding `required_key`.
std::optional<json> find_structured_block(const std::vector<FencedBlock>& blocks, const char* required_key,
                                          std::string& why) {
  std::optional<json> fallback;
  for (const auto& b : blocks) {
    if (b.tag != "json" && !b.tag.empty()) continue;
    auto doc = json::parse(b.body, nullptr, false);
    if (doc.is_discarded()) {
      if (why.empty()) why = "fenced block is not valid JSON";
      continue;
    }
    if (!doc.is_object()) {
      if (why.empty()) why = "fenced JSON is not an object";
      continue;
    }
    if (doc.contains(required_key)) return doc;
    if (!fallback) fallback = std::move(doc);
  }
  if (fallback) why = fmt::format("JSON block lacks \"{}\"", required_key);
  if (why.empty()) why = blocks.empty() ? "no fenced block in response" : "no fenced JSON block in response";
  return std::nullopt;
}

double parse_number(const json& value, const std::string& what) {
  if (value.is_number()) {
    const double v = value.get<double>();
    if (!std::isfinite(v)) throw Error(Errc::UnparseableNumber, what);
    return v;
  }
  if (value.is_string()) {
    const std::string s(io::trim(value.get_ref<const std::string&>()));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw Error(Errc::UnparseableNumber, fmt::format("{}: '{}'", what, s));
    }
    if (used != s.size() || !std::isfinite(v)) throw Error(Errc::UnparseableNumber, fmt::format("{}: '{}'", what, s));
    return v;
  }
  throw Error(Errc::UnparseableNumber, fmt::format("{}: expected a number", what));
}

std::string optional_text(const json& obj, const char* key) {
  if (!obj.is_object()) return {};
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Direct

bool DirectGrade::total_mismatch() const {
  return stated_total.has_value() && std::fabs(*stated_total - total) > 1e-6;
}

DirectGrade parse_direct_response(std::string_view text, const Rubric& rubric) {
  if (io::trim(text).empty()) throw Error(Errc::NoStructuredBlock, "empty response");
  std::string why;
  const auto doc = find_structured_block(extract_fenced_blocks(text), "categories", why);
  if (!doc) throw Error(Errc::NoStructuredBlock, why);

  struct Entry {
    std::string name;
    json score;
    std::string rationale;
  };
  std::vector<Entry> entries;
  const auto& cats = (*doc)["categories"];
  if (cats.is_array()) {
    for (const auto& c : cats) {
      if (!c.is_object() || !c.contains("name") || !c["name"].is_string()) {
        throw Error(Errc::NoStructuredBlock, "each category entry needs a string \"name\"");
      }
      if (!c.contains("score")) {
        throw Error(Errc::UnparseableNumber, fmt::format("{}: score missing", c["name"].get<std::string>()));
      }
      entries.push_back({c["name"].get<std::string>(), c["score"], optional_text(c, "rationale")});
    }
  } else if (cats.is_object()) {
    for (const auto& [name, value] : cats.items()) {
      if (value.is_object()) {
        if (!value.contains("score")) throw Error(Errc::UnparseableNumber, fmt::format("{}: score missing", name));
        entries.push_back({name, value["score"], optional_text(value, "rationale")});
      } else {
        entries.push_back({name, value, {}});
      }
    }
  } else {
    throw Error(Errc::NoStructuredBlock, "\"categories\" must be an array or object");
  }

  std::map<std::string, CategoryScore> by_name;
  for (auto& e : entries) {
    const auto* cat = rubric.find(e.name);
    if (cat == nullptr) throw Error(Errc::UnknownCategory, e.name);
    if (by_name.count(cat->name) != 0) throw Error(Errc::DuplicateCategory, cat->name);
    double score = parse_number(e.score, cat->name);
    if (score < -kBoundTolerance || score > cat->max_points + kBoundTolerance) {
      throw Error(Errc::ScoreOutOfBounds,
                  fmt::format("{}: {} not in [0, {}]", cat->name, score, format_points(cat->max_points)));
    }
    score = std::clamp(score, 0.0, cat->max_points);
    by_name.emplace(cat->name, CategoryScore{cat->name, score, std::move(e.rationale)});
  }

  DirectGrade grade;
  for (const auto& cat : rubric.categories) {
    auto it = by_name.find(cat.name);
    if (it == by_name.end()) throw Error(Errc::MissingCategory, cat.name);
    grade.per_category.push_back(it->second);
    grade.total += it->second.score;
  }
  grade.total = std::min(grade.total, rubric.scale_total);
  if (auto it = doc->find("total"); it != doc->end() && !it->is_null()) {
    grade.stated_total = parse_number(*it, "total");
  }
  grade.summary = optional_text(*doc, "summary");
  return grade;
}

// ---------------------------------------------------------------------------
// Reverse

std::string_view to_string(Severity severity) noexcept { return severity == Severity::Major ? "major" : "minor"; }

double reverse_total(const std::vector<FixRecord>& fixes, double scale_total) {
  double deducted = 0.0;
  for (const auto& f : fixes) deducted += f.deduction;
  return std::clamp(scale_total - deducted, 0.0, scale_total);
}

bool consistency_mismatch(const ReverseGrade& grade, double scale_total) {
  return normalize_score(grade.consistency_delta, scale_total, 10.0) > kConsistencyTolerance10;
}

ReverseGrade parse_reverse_response(std::string_view text, const Rubric& rubric) {
  if (io::trim(text).empty()) throw Error(Errc::NoStructuredBlock, "empty response");
  const auto blocks = extract_fenced_blocks(text);
  std::string why;
  const auto doc = find_structured_block(blocks, "fixes", why);
  if (!doc) throw Error(Errc::NoStructuredBlock, why);

  ReverseGrade grade;
  const auto& fixes = (*doc)["fixes"];
  if (!fixes.is_array()) throw Error(Errc::NoStructuredBlock, "\"fixes\" must be an array");
  for (const auto& f : fixes) {
    if (!f.is_object()) throw Error(Errc::NoStructuredBlock, "each fix must be an object");
    if (!f.contains("category") || !f["category"].is_string()) {
      throw Error(Errc::UnknownCategory, "fix without a category");
    }
    const auto* cat = rubric.find(f["category"].get<std::string>());
    if (cat == nullptr) throw Error(Errc::UnknownCategory, f["category"].get<std::string>());
    FixRecord rec;
    rec.category = cat->name;
    rec.description = optional_text(f, "description");
    const auto severity = io::to_lower(io::trim(optional_text(f, "severity")));
    if (severity == "minor") {
      rec.severity = Severity::Minor;
    } else if (severity == "major") {
      rec.severity = Severity::Major;
    } else {
      throw Error(Errc::InvalidSeverity, fmt::format("'{}'", severity));
    }
    if (!f.contains("deduction")) throw Error(Errc::UnparseableNumber, "deduction missing");
    rec.deduction = parse_number(f["deduction"], "deduction");
    if (rec.deduction < 0.0) throw Error(Errc::NegativeDeduction, fmt::format("{}: {}", cat->name, rec.deduction));
    if (rec.deduction > cat->max_points + kBoundTolerance) {
      throw Error(Errc::ScoreOutOfBounds, fmt::format("{}: deduction {} exceeds cap {}", cat->name, rec.deduction,
                                                       format_points(cat->max_points)));
    }
    rec.deduction = std::min(rec.deduction, cat->max_points);
    grade.fixes.push_back(std::move(rec));
  }

  if (!doc->contains("claimed_total") || (*doc)["claimed_total"].is_null()) {
    throw Error(Errc::UnparseableNumber, "claimed_total missing");
  }
  grade.claimed_total = parse_number((*doc)["claimed_total"], "claimed_total");
  if (grade.claimed_total < -kBoundTolerance || grade.claimed_total > rubric.scale_total + kBoundTolerance) {
    throw Error(Errc::ScoreOutOfBounds, fmt::format("claimed_total {} not in [0, {}]", grade.claimed_total,
                                                     format_points(rubric.scale_total)));
  }
  grade.claimed_total = std::clamp(grade.claimed_total, 0.0, rubric.scale_total);
  grade.reason = optional_text(*doc, "reason");

  const FencedBlock* code = nullptr;
  for (const auto& b : blocks) {
    if (b.tag == "corrected") {
      code = &b;
      break;
    }
  }
  if (code == nullptr) {
    for (const auto& b : blocks) {
      if (b.tag != "json" && !b.tag.empty()) {
        code = &b;
        break;
      }
    }
  }
  if (code != nullptr && !io::trim(code->body).empty()) {
    grade.corrected_source = code->body;
  } else if (auto it = doc->find("corrected_code"); it != doc->end() && it->is_string() && !it->get<std::string>().empty()) {
    grade.corrected_source = it->get<std::string>();
  } else {
    throw Error(Errc::MissingCorrectedCode, "no fenced block tagged \"corrected\"");
  }

  grade.computed_total = reverse_total(grade.fixes, rubric.scale_total);
  grade.consistency_delta = std::fabs(grade.claimed_total - grade.computed_total);
  return grade;
}

// ---------------------------------------------------------------------------
// Prompts

PromptRequest build_direct_prompt(const Problem& problem, const Submission& submission, const Rubric& rubric,
                                  const TemplateSet& templates) {
  check_inputs(submission, rubric);
  auto vars = prompt_vars(problem, submission, rubric);
  vars["contract"] = render_template(templates.direct_contract, vars);
  return make_request(render_template(templates.direct, vars), Strategy::Direct, "direct/" + templates.version);
}

PromptRequest build_reverse_prompt(const Problem& problem, const Submission& submission, const Rubric& rubric,
                                   const TemplateSet& templates) {
  check_inputs(submission, rubric);
  auto vars = prompt_vars(problem, submission, rubric);
  vars["contract"] = render_template(templates.reverse_contract, vars);
  return make_request(render_template(templates.reverse, vars), Strategy::Reverse, "reverse/" + templates.version);
}

PromptRequest build_repair_prompt(const PromptRequest& original, const Rubric& rubric, const Error& parse_error,
                                  int repair_round, int max_repairs, const TemplateSet& templates) {
  TemplateVars vars = {{"category_names", category_names(rubric)}, {"scale_total", format_points(rubric.scale_total)}};
  const auto& contract = original.strategy == Strategy::Reverse ? templates.reverse_contract : templates.direct_contract;
  vars["contract"] = render_template(contract, vars);
  vars["attempt"] = std::to_string(repair_round);
  vars["max_repairs"] = std::to_string(max_repairs);
  vars["error"] = parse_error.what();
  auto req = make_request(original.text + render_template(templates.repair, vars), original.strategy,
                          original.template_version + "+repair");
  req.temperature = original.temperature;
  req.max_output = original.max_output;
  return req;
}

// ---------------------------------------------------------------------------
// Results

std::string_view to_string(GradeStrategy strategy) noexcept {
  switch (strategy) {
    case GradeStrategy::Direct: return "Direct";
    case GradeStrategy::Reverse: return "Reverse";
    case GradeStrategy::AutoPass: return "AutoPass";
  }
  return "Direct";
}

std::string_view to_string(GradeFlag flag) noexcept {
  return flag == GradeFlag::TotalMismatch ? "TotalMismatch" : "ConsistencyMismatch";
}

bool GradeResult::has_flag(GradeFlag flag) const {
  return std::find(flags.begin(), flags.end(), flag) != flags.end();
}

json to_json(const GradeResult& r) {
  json payload = nullptr;
  if (const auto* d = std::get_if<DirectGrade>(&r.payload)) {
    json cats = json::array();
    for (const auto& c : d->per_category) cats.push_back({{"name", c.name}, {"score", c.score}, {"rationale", c.rationale}});
    payload = {{"kind", "direct"},
               {"per_category", std::move(cats)},
               {"total", d->total},
               {"summary", d->summary},
               {"stated_total", d->stated_total ? json(*d->stated_total) : json(nullptr)}};
  } else if (const auto* v = std::get_if<ReverseGrade>(&r.payload)) {
    json fixes = json::array();
    for (const auto& f : v->fixes) {
      fixes.push_back({{"description", f.description},
                       {"category", f.category},
                       {"severity", to_string(f.severity)},
                       {"deduction", f.deduction}});
    }
    payload = {{"kind", "reverse"},
               {"corrected_source", v->corrected_source},
               {"fixes", std::move(fixes)},
               {"claimed_total", v->claimed_total},
               {"computed_total", v->computed_total},
               {"consistency_delta", v->consistency_delta},
               {"reason", v->reason}};
  }
  json flags = json::array();
  for (auto f : r.flags) flags.push_back(to_string(f));
  return {{"submission_id", r.submission_id},
          {"strategy", to_string(r.strategy)},
          {"scale", r.scale},
          {"raw_total", r.raw_total},
          {"normalized_total", r.normalized_total},
          {"parse_attempts", r.parse_attempts},
          {"flags", std::move(flags)},
          {"payload", std::move(payload)}};
}

GradeResult grade_result_from_json(const json& doc) {
  GradeResult r;
  try {
    r.submission_id = doc.at("submission_id").get<std::string>();
    const auto strategy = doc.at("strategy").get<std::string>();
    if (strategy == "Direct") {
      r.strategy = GradeStrategy::Direct;
    } else if (strategy == "Reverse") {
      r.strategy = GradeStrategy::Reverse;
    } else if (strategy == "AutoPass") {
      r.strategy = GradeStrategy::AutoPass;
    } else {
      throw Error(Errc::MalformedRecord, fmt::format("unknown strategy '{}'", strategy));
    }
    r.scale = doc.at("scale").get<int>();
    r.raw_total = doc.at("raw_total").get<double>();
    r.normalized_total = doc.at("normalized_total").get<double>();
    r.parse_attempts = doc.value("parse_attempts", 0);
    for (const auto& f : doc.value("flags", json::array())) {
      r.flags.push_back(f.get<std::string>() == "TotalMismatch" ? GradeFlag::TotalMismatch
                                                                 : GradeFlag::ConsistencyMismatch);
    }
    const auto& payload = doc.at("payload");
    if (payload.is_object() && payload.value("kind", "") == "direct") {
      DirectGrade d;
      for (const auto& c : payload.at("per_category")) {
        d.per_category.push_back({c.at("name").get<std::string>(), c.at("score").get<double>(),
                                  c.value("rationale", std::string{})});
      }
      d.total = payload.at("total").get<double>();
      d.summary = payload.value("summary", std::string{});
      if (payload.contains("stated_total") && payload["stated_total"].is_number()) {
        d.stated_total = payload["stated_total"].get<double>();
      }
      r.payload = std::move(d);
    } else if (payload.is_object() && payload.value("kind", "") == "reverse") {
      ReverseGrade v;
      v.corrected_source = payload.value("corrected_source", std::string{});
      for (const auto& f : payload.at("fixes")) {
        v.fixes.push_back({f.value("description", std::string{}), f.at("category").get<std::string>(),
                           f.value("severity", std::string{"minor"}) == "major" ? Severity::Major : Severity::Minor,
                           f.at("deduction").get<double>()});
      }
      v.claimed_total = payload.at("claimed_total").get<double>();
      v.computed_total = payload.at("computed_total").get<double>();
      v.consistency_delta = payload.at("consistency_delta").get<double>();
      v.reason = payload.value("reason", std::string{});
      r.payload = std::move(v);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedRecord, e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Grading loops

namespace {

int scale_of(const Rubric& rubric) {
  const double rounded = std::round(rubric.scale_total);
  if (std::fabs(rounded - rubric.scale_total) > kRubricTolerance) {
    throw Error(Errc::InvalidRubric, "grading needs an integral scale_total");
  }
  return static_cast<int>(rounded);
}

template <typename Parse, typename Assemble>
GradeResult run_grading(const PromptRequest& first, const Rubric& rubric, CompletionClient& client,
                        const GradeOptions& options, Parse parse, Assemble assemble) {
  const auto& templates = options.templates ? *options.templates : builtin_templates();
  PromptRequest request = first;
  std::string last_error;
  for (int attempt = 1; attempt <= options.max_repairs + 1; ++attempt) {
    const auto response = client.complete(request);
    try {
      auto parsed = parse(response.text, rubric);
      return assemble(std::move(parsed), attempt);
    } catch (const Error& e) {
      if (!is_parse_error(e.code())) throw;
      last_error = e.what();
      if (attempt <= options.max_repairs) {
        request = build_repair_prompt(first, rubric, e, attempt, options.max_repairs, templates);
      }
    }
  }
  throw Error(Errc::GradingFailed,
              fmt::format("{} attempts exhausted; last error: {}", options.max_repairs + 1, last_error));
}

}  // namespace

GradeResult grade_direct(const Problem& problem, const Submission& submission, const Rubric& rubric,
                         CompletionClient& client, const GradeOptions& options) {
  const int scale = scale_of(rubric);
  const auto& templates = options.templates ? *options.templates : builtin_templates();
  const auto request = build_direct_prompt(problem, submission, rubric, templates);
  return run_grading(request, rubric, client, options, parse_direct_response,
                     [&](DirectGrade grade, int attempts) {
                       GradeResult r;
                       r.submission_id = submission.id;
                       r.strategy = GradeStrategy::Direct;
                       r.scale = scale;
                       r.raw_total = grade.total;
                       r.normalized_total = normalize_score(r.raw_total, scale, 10.0);
                       r.parse_attempts = attempts;
                       if (grade.total_mismatch()) r.flags.push_back(GradeFlag::TotalMismatch);
                       r.payload = std::move(grade);
                       return r;
                     });
}

GradeResult grade_reverse(const Problem& problem, const Submission& submission, const Rubric& rubric,
                          CompletionClient& client, const GradeOptions& options) {
  const int scale = scale_of(rubric);
  const auto& templates = options.templates ? *options.templates : builtin_templates();
  const auto request = build_reverse_prompt(problem, submission, rubric, templates);
  return run_grading(request, rubric, client, options, parse_reverse_response,
                     [&](ReverseGrade grade, int attempts) {
                       GradeResult r;
                       r.submission_id = submission.id;
                       r.strategy = GradeStrategy::Reverse;
                       r.scale = scale;
                       r.raw_total = grade.computed_total;
                       r.normalized_total = normalize_score(r.raw_total, scale, 10.0);
                       r.parse_attempts = attempts;
                       if (consistency_mismatch(grade, scale)) r.flags.push_back(GradeFlag::ConsistencyMismatch);
                       r.payload = std::move(grade);
                       return r;
                     });
}

}  // namespace gradepipe
