#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradepipe/corpus.hpp"
#include "gradepipe/llm_gateway.hpp"
#include "gradepipe/rubric.hpp"

namespace gradepipe {

// Prompt templates with {{name}} placeholders. Built-in copies are compiled from core/templates/.
struct TemplateSet {
  std::string version = "v1";
  std::string direct;
  std::string direct_contract;
  std::string reverse;
  std::string reverse_contract;
  std::string repair;
  std::string generate;
};

const TemplateSet& builtin_templates();
// Reads <dir>/{direct,direct_contract,reverse,reverse_contract,repair,generate}_<version>.txt.
TemplateSet load_templates(const std::filesystem::path& dir, const std::string& version = "v1");

using TemplateVars = std::map<std::string, std::string, std::less<>>;

// Single pass: substituted values are never rescanned. Unknown placeholders throw InvalidConfig.
std::string render_template(std::string_view tpl, const TemplateVars& vars);

struct FencedBlock {
  std::string tag;  // lower-cased info string, may be empty
  std::string body;
};

// Closed ``` fences in document order; an unterminated fence is ignored.
std::vector<FencedBlock> extract_fenced_blocks(std::string_view text);

// --- Direct --------------------------------------------------------------

struct CategoryScore {
  std::string name;
  double score = 0.0;
  std::string rationale;
};

struct DirectGrade {
  // Rubric order.
  std::vector<CategoryScore> per_category;
  // Always the category sum.
  double total = 0.0;
  std::string summary;
  // The model's own total, kept only for the mismatch check.
  std::optional<double> stated_total;

  bool total_mismatch() const;
};

// --- Reverse -------------------------------------------------------------

enum class Severity { Minor, Major };
std::string_view to_string(Severity severity) noexcept;

struct FixRecord {
  std::string description;
  std::string category;
  Severity severity = Severity::Minor;
  double deduction = 0.0;
};

struct ReverseGrade {
  std::string corrected_source;
  std::vector<FixRecord> fixes;
  double claimed_total = 0.0;
  double computed_total = 0.0;
  double consistency_delta = 0.0;
  std::string reason;
};

// clamp(scale_total - sum of deductions, 0, scale_total), summed in list order.
double reverse_total(const std::vector<FixRecord>& fixes, double scale_total);

// Claimed and computed totals differ by more than this many points on the 10-point scale.
inline constexpr double kConsistencyTolerance10 = 0.5;
bool consistency_mismatch(const ReverseGrade& grade, double scale_total);

// --- Results -------------------------------------------------------------

enum class GradeStrategy { Direct, Reverse, AutoPass };
enum class GradeFlag { TotalMismatch, ConsistencyMismatch };

std::string_view to_string(GradeStrategy strategy) noexcept;
std::string_view to_string(GradeFlag flag) noexcept;

struct GradeResult {
  std::string submission_id;
  GradeStrategy strategy = GradeStrategy::Direct;
  int scale = 10;
  double raw_total = 0.0;
  double normalized_total = 0.0;
  std::variant<std::monostate, DirectGrade, ReverseGrade> payload;
  int parse_attempts = 0;
  std::vector<GradeFlag> flags;

  bool has_flag(GradeFlag flag) const;
};

nlohmann::json to_json(const GradeResult& result);
GradeResult grade_result_from_json(const nlohmann::json& doc);

// --- Operations ----------------------------------------------------------

PromptRequest build_direct_prompt(const Problem& problem, const Submission& submission, const Rubric& rubric,
                                  const TemplateSet& templates = builtin_templates());
PromptRequest build_reverse_prompt(const Problem& problem, const Submission& submission, const Rubric& rubric,
                                   const TemplateSet& templates = builtin_templates());

// Appends the parser error and the output contract to `original`.
PromptRequest build_repair_prompt(const PromptRequest& original, const Rubric& rubric, const Error& parse_error,
                                  int repair_round, int max_repairs,
                                  const TemplateSet& templates = builtin_templates());

DirectGrade parse_direct_response(std::string_view text, const Rubric& rubric);
ReverseGrade parse_reverse_response(std::string_view text, const Rubric& rubric);

struct GradeOptions {
  int max_repairs = 2;
  const TemplateSet* templates = nullptr;  // null: built-ins
};

// Build, complete, parse; parser errors trigger up to max_repairs re-prompts before GradingFailed.
// Gateway errors propagate unchanged.
GradeResult grade_direct(const Problem& problem, const Submission& submission, const Rubric& rubric,
                         CompletionClient& client, const GradeOptions& options = {});
GradeResult grade_reverse(const Problem& problem, const Submission& submission, const Rubric& rubric,
                          CompletionClient& client, const GradeOptions& options = {});

}  // namespace gradepipe
