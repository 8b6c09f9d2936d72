#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gradepipe/corpus.hpp"

namespace gradepipe {

enum class TestStatus { Pass, Fail, RunnerError };
std::string_view to_string(TestStatus status) noexcept;

struct TestOutcome {
  TestStatus status = TestStatus::RunnerError;
  int passed = 0;
  int failed = 0;
  std::string log;
  bool timed_out = false;
};

// Runs a problem's unit tests against one submission. `suite` is the resolved test_suite_ref
// (empty when the problem has none). Infrastructure faults come back as RunnerError outcomes.
class TestRunner {
 public:
  virtual ~TestRunner() = default;
  virtual TestOutcome run(const Problem& problem, const Submission& submission, const std::filesystem::path& suite) = 0;
};

// Outcomes scripted per submission id; unknown ids get `fallback`.
class ScriptedRunner final : public TestRunner {
 public:
  explicit ScriptedRunner(TestOutcome fallback = {TestStatus::Pass, 1, 0, "scripted pass", false})
      : fallback_(std::move(fallback)) {}
  void script(std::string submission_id, TestOutcome outcome) { outcomes_[std::move(submission_id)] = std::move(outcome); }
  TestOutcome run(const Problem& problem, const Submission& submission, const std::filesystem::path& suite) override;

 private:
  TestOutcome fallback_;
  std::map<std::string, TestOutcome, std::less<>> outcomes_;
};

// Splits source into tokens, dropping whitespace and // or /* */ comments.
std::vector<std::string> lex_tokens(std::string_view source);

// Mock suite: a submission passes iff it is token-for-token identical to the problem's
// reference solution, so formatting-only edits pass and any code change fails.
class ReferenceRunner final : public TestRunner {
 public:
  TestOutcome run(const Problem& problem, const Submission& submission, const std::filesystem::path& suite) override;
};

struct CommandRunnerConfig {
  // Shell command; {{workdir}}, {{source}}, {{tests}} and {{problem_id}} are substituted.
  std::string command;
  std::chrono::seconds timeout{30};
  // File name the submission is written to inside the scratch directory. Empty: "Solution.<ext>".
  std::string source_name;
  // Parent for scratch directories; empty means the system temp directory.
  std::filesystem::path scratch_root;
};

// Runs the command in a fresh scratch directory under /bin/sh and reads the line protocol
// documented in docs/runner-protocol.md.
class CommandRunner final : public TestRunner {
 public:
  explicit CommandRunner(CommandRunnerConfig config);
  TestOutcome run(const Problem& problem, const Submission& submission, const std::filesystem::path& suite) override;

 private:
  CommandRunnerConfig config_;
};

// Reads "RESULT passed=<n> failed=<m>" and the exit code into an outcome.
TestOutcome interpret_runner_output(int exit_code, bool timed_out, std::string log);

TestOutcome run_unit_tests(const Submission& submission, const Problem& problem, TestRunner& runner,
                           const std::filesystem::path& suite);

}  // namespace gradepipe
