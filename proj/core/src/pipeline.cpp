#include "gradepipe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "gradepipe/error.hpp"

namespace gradepipe {

using nlohmann::json;

std::string_view to_string(Route route) noexcept {
  switch (route) {
    case Route::AutoFull: return "AutoFull";
    case Route::LlmGraded: return "LlmGraded";
    case Route::NeedsHuman: return "NeedsHuman";
  }
  return "NeedsHuman";
}

std::string_view to_string(ReviewReason reason) noexcept {
  switch (reason) {
    case ReviewReason::StrategyDisagreement: return "StrategyDisagreement";
    case ReviewReason::ConsistencyMismatch: return "ConsistencyMismatch";
    case ReviewReason::RunnerError: return "RunnerError";
    case ReviewReason::ParseFailure: return "ParseFailure";
    case ReviewReason::GatewayError: return "GatewayError";
  }
  return "GatewayError";
}

json to_json(const PipelineResult& r) {
  json results = json::array();
  for (const auto& g : r.results) results.push_back(to_json(g));
  json flag = nullptr;
  if (r.review_flag) {
    flag = {{"reason", to_string(r.review_flag->reason)},
            {"magnitude", r.review_flag->magnitude},
            {"detail", r.review_flag->detail}};
  }
  return {{"submission_id", r.submission_id},
          {"route", to_string(r.route)},
          {"tests", {{"status", to_string(r.test_status)}, {"passed", r.tests_passed}, {"failed", r.tests_failed}}},
          {"results", std::move(results)},
          {"review_flag", std::move(flag)}};
}

PipelineResult pipeline_result_from_json(const json& doc) {
  PipelineResult r;
  try {
    r.submission_id = doc.at("submission_id").get<std::string>();
    const auto route = doc.at("route").get<std::string>();
    if (route == "AutoFull") {
      r.route = Route::AutoFull;
    } else if (route == "LlmGraded") {
      r.route = Route::LlmGraded;
    } else if (route == "NeedsHuman") {
      r.route = Route::NeedsHuman;
    } else {
      throw Error(Errc::MalformedRecord, fmt::format("unknown route '{}'", route));
    }
    if (doc.contains("tests")) {
      const auto& t = doc["tests"];
      const auto status = t.value("status", std::string{"RunnerError"});
      r.test_status = status == "Pass" ? TestStatus::Pass : status == "Fail" ? TestStatus::Fail : TestStatus::RunnerError;
      r.tests_passed = t.value("passed", 0);
      r.tests_failed = t.value("failed", 0);
    }
    for (const auto& g : doc.at("results")) r.results.push_back(grade_result_from_json(g));
    if (doc.contains("review_flag") && doc["review_flag"].is_object()) {
      const auto& f = doc["review_flag"];
      ReviewFlag flag;
      const auto reason = f.at("reason").get<std::string>();
      static const std::pair<const char*, ReviewReason> kReasons[] = {
          {"StrategyDisagreement", ReviewReason::StrategyDisagreement},
          {"ConsistencyMismatch", ReviewReason::ConsistencyMismatch},
          {"RunnerError", ReviewReason::RunnerError},
          {"ParseFailure", ReviewReason::ParseFailure},
          {"GatewayError", ReviewReason::GatewayError}};
      bool known = false;
      for (const auto& [name, value] : kReasons) {
        if (reason == name) {
          flag.reason = value;
          known = true;
        }
      }
      if (!known) throw Error(Errc::MalformedRecord, fmt::format("unknown review reason '{}'", reason));
      flag.magnitude = f.value("magnitude", 0.0);
      flag.detail = f.value("detail", std::string{});
      r.review_flag = std::move(flag);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedRecord, e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------

void validate(const PipelineConfig& config) {
  validate(config.rubric);
  for (const auto& [id, rubric] : config.rubric_overrides) validate(rubric);
  if (config.client == nullptr && !config.strategies.empty()) {
    throw Error(Errc::InvalidConfig, "pipeline needs a completion client");
  }
  if (config.scales.empty()) throw Error(Errc::InvalidConfig, "no grading scales configured");
  for (int s : config.scales) {
    if (s != 10 && s != 100) throw Error(Errc::InvalidConfig, fmt::format("scale must be 10 or 100, got {}", s));
  }
  for (auto s : config.strategies) {
    if (s == Strategy::Generate) throw Error(Errc::InvalidConfig, "Generate is not a grading strategy");
  }
  if (!(config.review_threshold >= 0.0)) throw Error(Errc::InvalidConfig, "review threshold must be >= 0");
  if (config.grade_options.max_repairs < 0) throw Error(Errc::InvalidConfig, "max_repairs must be >= 0");
}

Rubric rubric_for(const PipelineConfig& config, std::string_view problem_id, int scale) {
  auto it = config.rubric_overrides.find(problem_id);
  const Rubric& base = it == config.rubric_overrides.end() ? config.rubric : it->second;
  const double factor = scale / base.scale_total;
  const double rounded = std::round(factor);
  if (rounded < 1.0 || std::fabs(rounded - factor) > 1e-9) {
    throw Error(Errc::InvalidConfig,
                fmt::format("scale {} is not a whole multiple of the rubric total {}", scale, base.scale_total));
  }
  return expand_scale(base, static_cast<int>(rounded));
}

namespace {

void check_normalized(const GradeResult& r) {
  if (r.scale <= 0 || !std::isfinite(r.normalized_total) || r.normalized_total < 0.0 || r.normalized_total > 10.0 + 1e-9) {
    throw Error(Errc::ScaleMismatch, fmt::format("{} result for '{}' is not on the 10-point scale",
                                                 to_string(r.strategy), r.submission_id));
  }
  const double expected = r.raw_total * 10.0 / r.scale;
  if (std::fabs(expected - r.normalized_total) > 1e-9) {
    throw Error(Errc::ScaleMismatch, fmt::format("{} result for '{}': normalized {} but raw {} / {}",
                                                 to_string(r.strategy), r.submission_id, r.normalized_total,
                                                 r.raw_total, r.scale));
  }
}

// Comparisons against the threshold tolerate representation error in the difference.
constexpr double kThresholdSlack = 1e-9;

}  // namespace

std::optional<ReviewFlag> flag_for_review(const GradeResult& direct, const GradeResult& reverse, double threshold) {
  check_normalized(direct);
  check_normalized(reverse);
  const double magnitude = std::fabs(direct.normalized_total - reverse.normalized_total);
  if (magnitude >= threshold - kThresholdSlack) {
    return ReviewFlag{ReviewReason::StrategyDisagreement, magnitude,
                      fmt::format("direct {:.2f} vs reverse {:.2f} at scale {}", direct.normalized_total,
                                  reverse.normalized_total, reverse.scale)};
  }
  const bool inconsistent =
      direct.has_flag(GradeFlag::ConsistencyMismatch) || reverse.has_flag(GradeFlag::ConsistencyMismatch);
  if (inconsistent) {
    return ReviewFlag{ReviewReason::ConsistencyMismatch, magnitude,
                      fmt::format("claimed and computed reverse totals disagree at scale {}", reverse.scale)};
  }
  return std::nullopt;
}

namespace {

void keep_strongest(std::optional<ReviewFlag>& current, std::optional<ReviewFlag> candidate) {
  if (candidate && (!current || candidate->magnitude > current->magnitude)) current = std::move(candidate);
}

}  // namespace

PipelineResult grade_submission(const Problem& problem, const Submission& submission, const PipelineConfig& config,
                                const std::filesystem::path& suite) {
  PipelineResult out;
  out.submission_id = submission.id;

  if (config.runner != nullptr) {
    const auto outcome = run_unit_tests(submission, problem, *config.runner, suite);
    out.test_status = outcome.status;
    out.tests_passed = outcome.passed;
    out.tests_failed = outcome.failed;
    if (outcome.status == TestStatus::Pass) {
      auto it = config.rubric_overrides.find(problem.id);
      const double base = it == config.rubric_overrides.end() ? config.rubric.scale_total : it->second.scale_total;
      GradeResult full;
      full.submission_id = submission.id;
      full.strategy = GradeStrategy::AutoPass;
      full.scale = static_cast<int>(std::lround(base));
      full.raw_total = base;
      full.normalized_total = 10.0;
      out.route = Route::AutoFull;
      out.results.push_back(std::move(full));
      return out;
    }
    if (outcome.status == TestStatus::RunnerError) {
      out.route = Route::NeedsHuman;
      out.review_flag = ReviewFlag{ReviewReason::RunnerError, 0.0, outcome.log.substr(0, 500)};
      return out;
    }
  } else {
    out.test_status = TestStatus::Fail;
  }

  for (int scale : config.scales) {
    const auto rubric = rubric_for(config, problem.id, scale);
    const GradeResult* direct = nullptr;
    const GradeResult* reverse = nullptr;
    for (auto strategy : config.strategies) {
      try {
        if (strategy == Strategy::Direct) {
          out.results.push_back(grade_direct(problem, submission, rubric, *config.client, config.grade_options));
        } else {
          out.results.push_back(grade_reverse(problem, submission, rubric, *config.client, config.grade_options));
        }
      } catch (const Error& e) {
        if (e.code() == Errc::ReplayMiss && config.strict_replay) throw;
        const auto reason = e.code() == Errc::GradingFailed ? ReviewReason::ParseFailure : ReviewReason::GatewayError;
        if (e.code() != Errc::GradingFailed && e.code() != Errc::ReplayMiss && e.code() != Errc::TransportError &&
            e.code() != Errc::BudgetExceeded) {
          throw;
        }
        out.route = Route::NeedsHuman;
        out.review_flag = ReviewFlag{reason, 0.0,
                                     fmt::format("{} at scale {}: {}", to_string(strategy), scale, e.what())};
        return out;
      }
    }
    // Pointers taken after all pushes for this scale.
    for (const auto& g : out.results) {
      if (g.scale != scale) continue;
      if (g.strategy == GradeStrategy::Direct) direct = &g;
      if (g.strategy == GradeStrategy::Reverse) reverse = &g;
    }
    if (direct != nullptr && reverse != nullptr) {
      keep_strongest(out.review_flag, flag_for_review(*direct, *reverse, config.review_threshold));
    } else if (reverse != nullptr && reverse->has_flag(GradeFlag::ConsistencyMismatch)) {
      keep_strongest(out.review_flag, ReviewFlag{ReviewReason::ConsistencyMismatch, 0.0,
                                                 fmt::format("claimed and computed reverse totals disagree at scale {}",
                                                             scale)});
    }
  }
  out.route = Route::LlmGraded;
  return out;
}

std::vector<PipelineResult> run_batch(const Corpus& corpus, const PipelineConfig& config) {
  validate(config);
  std::vector<PipelineResult> results(corpus.submissions.size());
  if (results.empty()) return results;

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;
  std::mutex fatal_mu;

  const auto work = [&] {
    for (;;) {
      if (abort.load()) return;
      const auto i = next.fetch_add(1);
      if (i >= corpus.submissions.size()) return;
      const auto& submission = corpus.submissions[i];
      const auto* problem = corpus.find_problem(submission.problem_id);
      try {
        if (problem == nullptr) throw Error(Errc::DanglingReference, submission.problem_id);
        const auto suite = problem->test_suite_ref.empty() ? std::filesystem::path{} : corpus.resolve(problem->test_suite_ref);
        results[i] = grade_submission(*problem, submission, config, suite);
      } catch (const Error& e) {
        if (e.code() == Errc::ReplayMiss && config.strict_replay) {
          std::lock_guard lock(fatal_mu);
          if (!fatal) fatal = std::current_exception();
          abort.store(true);
          return;
        }
        results[i] = PipelineResult{};
        results[i].submission_id = submission.id;
        results[i].route = Route::NeedsHuman;
        results[i].review_flag = ReviewFlag{ReviewReason::GatewayError, 0.0, e.what()};
      } catch (const std::exception& e) {
        results[i] = PipelineResult{};
        results[i].submission_id = submission.id;
        results[i].route = Route::NeedsHuman;
        results[i].review_flag = ReviewFlag{ReviewReason::GatewayError, 0.0, e.what()};
      }
    }
  };

  const auto n_workers = std::clamp<std::size_t>(config.workers, 1, corpus.submissions.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
  }
  if (fatal) std::rethrow_exception(fatal);
  return results;
}

}  // namespace gradepipe
