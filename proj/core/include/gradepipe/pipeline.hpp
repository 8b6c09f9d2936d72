#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradepipe/corpus.hpp"
#include "gradepipe/graders.hpp"
#include "gradepipe/llm_gateway.hpp"
#include "gradepipe/rubric.hpp"
#include "gradepipe/test_runner.hpp"

namespace gradepipe {

enum class Route { AutoFull, LlmGraded, NeedsHuman };
enum class ReviewReason { StrategyDisagreement, ConsistencyMismatch, RunnerError, ParseFailure, GatewayError };

std::string_view to_string(Route route) noexcept;
std::string_view to_string(ReviewReason reason) noexcept;

struct ReviewFlag {
  ReviewReason reason = ReviewReason::StrategyDisagreement;
  // |direct - reverse| on the 10-point scale; 0 for infrastructure reasons.
  double magnitude = 0.0;
  std::string detail;
};

struct PipelineResult {
  std::string submission_id;
  Route route = Route::NeedsHuman;
  // Scale-major, then strategy in configured order.
  std::vector<GradeResult> results;
  std::optional<ReviewFlag> review_flag;
  TestStatus test_status = TestStatus::RunnerError;
  int tests_passed = 0;
  int tests_failed = 0;
};

nlohmann::json to_json(const PipelineResult& result);
PipelineResult pipeline_result_from_json(const nlohmann::json& doc);

inline constexpr double kDefaultReviewThreshold = 2.0;

struct PipelineConfig {
  std::vector<Strategy> strategies{Strategy::Direct, Strategy::Reverse};
  // Base rubric; each entry of `scales` grades against expand_scale(rubric, scale / rubric.scale_total).
  Rubric rubric = default_rubric();
  std::vector<int> scales{10};
  std::map<std::string, Rubric, std::less<>> rubric_overrides;  // by problem id
  CompletionClient* client = nullptr;
  // Null disables the unit-test gate: every submission goes to the model.
  TestRunner* runner = nullptr;
  double review_threshold = kDefaultReviewThreshold;
  std::size_t workers = 4;
  GradeOptions grade_options;
  // ReplayMiss aborts the batch instead of routing the submission to a human.
  bool strict_replay = false;
};

// Throws InvalidConfig.
void validate(const PipelineConfig& config);

// The rubric used for a problem at a given scale.
Rubric rubric_for(const PipelineConfig& config, std::string_view problem_id, int scale);

// Fires when |direct - reverse| >= threshold or either result carries ConsistencyMismatch.
// Throws ScaleMismatch when a result is not a consistent 10-scale normalization.
std::optional<ReviewFlag> flag_for_review(const GradeResult& direct, const GradeResult& reverse, double threshold);

PipelineResult grade_submission(const Problem& problem, const Submission& submission, const PipelineConfig& config,
                                const std::filesystem::path& suite = {});

// Grades every submission on a bounded worker pool; output is in submission id order.
std::vector<PipelineResult> run_batch(const Corpus& corpus, const PipelineConfig& config);

}  // namespace gradepipe
