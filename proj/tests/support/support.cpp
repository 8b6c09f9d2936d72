#include "support.hpp"

#include <cmath>
#include <cstdlib>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gradepipe/error.hpp"
#include "gradepipe/io.hpp"
#include "gradepipe/synthgen.hpp"

namespace gradepipe::testing {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path fixture_dir() { return GRADEPIPE_FIXTURE_DIR; }
fs::path source_dir() { return GRADEPIPE_SOURCE_DIR; }

TempDir::TempDir() {
  std::string pattern = (fs::temp_directory_path() / "gradepipe-test-XXXXXX").string();
  if (::mkdtemp(pattern.data()) == nullptr) throw Error(Errc::Io, "mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

ModelResponse ScriptedClient::complete(const PromptRequest& request) {
  std::lock_guard lock(mu_);
  requests_.push_back(request);
  std::string text;
  if (!replies_.empty()) {
    text = std::move(replies_.front());
    replies_.pop_front();
  } else if (default_) {
    text = *default_;
  } else {
    throw TransportFailure("scripted client ran out of replies", false);
  }
  return {std::move(text), 0.0, 1, ResponseSource::Live};
}

std::vector<PromptRequest> ScriptedClient::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::string embedded_source(std::string_view prompt) {
  const auto marker = prompt.find("Student submission:\n```");
  if (marker == std::string_view::npos) return {};
  const auto start = prompt.find('\n', marker + 20);
  const auto end = prompt.find("\n```\n", start + 1);
  if (start == std::string_view::npos || end == std::string_view::npos) return {};
  return std::string(prompt.substr(start + 1, end - start - 1));
}

namespace {

std::string chomp(std::string s) {
  if (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

struct Damage {
  int syntax = 0;
  int flips = 0;
  int bounds = 0;
  int returns = 0;
  int style = 0;
};

Damage damage_of(const Submission& s) {
  Damage d;
  for (const auto& note : s.error_notes) {
    switch (mutation_from_note(note).kind) {
      case MutationKind::DeleteSemicolon: ++d.syntax; break;
      case MutationKind::FlipComparison: ++d.flips; break;
      case MutationKind::OffByOneLoopBound: ++d.bounds; break;
      case MutationKind::RemoveReturn: ++d.returns; break;
      case MutationKind::Reindent: ++d.style; break;
    }
  }
  return d;
}

double at_least_zero(double v) { return v < 0 ? 0.0 : v; }

std::string direct_reply(const Submission& s, double scale) {
  const auto d = damage_of(s);
  const int logic = d.flips + d.bounds + d.returns;
  // A lenient grader that thinks in half points on the small scale and in whole points on the large one.
  const double u = scale / 10.0;
  const double cap = 2.5 * u;
  const double syntax = at_least_zero(cap - d.syntax * (scale == 10 ? 1.5 : 13.0));
  const double logic_pts = at_least_zero(cap - logic * (scale == 10 ? 1.0 : 9.0));
  const double output = at_least_zero(cap - logic * (scale == 10 ? 1.0 : 8.0) - d.syntax * (scale == 10 ? 0.5 : 4.0));
  const double style = at_least_zero(cap - d.style * 0.5 * u - (scale == 10 ? 0.0 : 2.0 * d.syntax));
  json categories = json::array({
      {{"name", "Syntax"}, {"score", syntax}, {"rationale", d.syntax ? "Missing semicolon stops compilation." : "Compiles."}},
      {{"name", "Logic"}, {"score", logic_pts}, {"rationale", logic ? "Control flow does not match the task." : "Approach is sound."}},
      {{"name", "Output Correctness"}, {"score", output}, {"rationale", logic ? "Some inputs give wrong results." : "Expected output."}},
      {{"name", "Style"}, {"score", style}, {"rationale", "Readable."}},
  });
  const double total = syntax + logic_pts + output + style;
  json body = {{"categories", categories}, {"total", total}, {"summary", fmt::format("{} issues found.", d.syntax + logic)}};
  return "Here is my assessment.\n\n```json\n" + body.dump(2) + "\n```\n";
}

std::string reverse_reply(const Submission& s, const Problem& p, double scale, bool inflate_claim) {
  const auto d = damage_of(s);
  const bool big = scale == 100;
  json fixes = json::array();
  double sum = 0;
  const auto add = [&](int n, const char* what, const char* category, const char* severity, double small, double large) {
    for (int i = 0; i < n; ++i) {
      const double ded = big ? large : small;
      fixes.push_back({{"description", what}, {"category", category}, {"severity", severity}, {"deduction", ded}});
      sum += ded;
    }
  };
  add(d.syntax, "Added the missing semicolon.", "Syntax", "minor", 1.0, 8.0);
  add(d.flips, "Restored the intended comparison.", "Logic", "major", 2.0, 18.0);
  add(d.bounds, "Corrected the loop bound.", "Logic", "major", 1.5, 14.0);
  add(d.returns, "Put back the missing return statement.", "Output Correctness", "major", 2.0, 21.0);
  add(d.style, "Fixed indentation.", "Style", "minor", 0.5, 3.0);
  double claimed = scale - sum;
  if (claimed < 0) claimed = 0;
  if (inflate_claim) claimed = std::min(scale, claimed + (big ? 15.0 : 1.5));
  json body = {{"fixes", fixes}, {"claimed_total", claimed}, {"reason", fixes.empty() ? "No fixes needed." : "Deducted per fix."}};
  return "```corrected\n" + chomp(p.reference_solution) + "\n```\n\n```json\n" + body.dump(2) + "\n```\n";
}

}  // namespace

std::string HeuristicEndpoint::send(const PromptRequest& request) {
  const auto source = embedded_source(request.text);
  const Submission* sub = nullptr;
  for (const auto& s : corpus_.submissions) {
    if (chomp(s.source) == source) {
      sub = &s;
      break;
    }
  }
  if (sub == nullptr) throw TransportFailure("heuristic model: unknown submission", false);
  const auto* problem = corpus_.find_problem(sub->problem_id);
  const bool repair = request.text.find("(repair ") != std::string::npos;
  const double scale = request.text.find("Rubric (total 100 points)") != std::string::npos ? 100.0 : 10.0;

  if (request.strategy == Strategy::Direct) {
    if (!repair && sub->id == "sum-evens-moderate-01" && scale == 10) {
      return "This submission looks mostly fine, I would give it about 8 out of 10.";
    }
    return direct_reply(*sub, scale);
  }
  return reverse_reply(*sub, *problem, scale, sub->id == "reverse-words-poor-01" && scale == 10);
}

}  // namespace gradepipe::testing
