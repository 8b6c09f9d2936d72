#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradepipe/corpus.hpp"
#include "gradepipe/llm_gateway.hpp"
#include "gradepipe/synthgen.hpp"

namespace gradepipe::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;

struct RunnerSettings {
  std::string kind = "reference";  // reference | command | none
  std::string command;
  int timeout_s = 30;
  std::string source_name;
};

struct GatewaySettings {
  GatewayMode mode = GatewayMode::Replay;
  std::filesystem::path transcripts;
  EndpointConfig endpoint;
  std::size_t max_in_flight = 4;
  std::optional<std::size_t> call_budget;
  RetryPolicy retry;
};

// One JSON document; relative paths resolve against the file's directory.
struct RunConfig {
  std::filesystem::path corpus;    // manifest graded/evaluated
  std::filesystem::path problems;  // manifest holding problems for generate
  std::filesystem::path rubric;    // empty: built-in rubric
  std::filesystem::path baseline;  // human scores CSV for evaluate
  std::vector<int> scales{10};
  std::vector<Strategy> strategies{Strategy::Direct, Strategy::Reverse};
  GatewaySettings gateway;
  RunnerSettings runner;
  double review_threshold = 2.0;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  std::size_t workers = 4;
  int max_repairs = 2;
  bool strict_replay = false;
  // generate
  GenerationMode generation_mode = GenerationMode::Offline;
  int count_per_cell = 1;
  std::vector<QualityBand> bands{kLabelledBands[0], kLabelledBands[1], kLabelledBands[2]};
};

// Throws InvalidConfig.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
void validate(const RunConfig& config, bool for_grade);

// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gradepipe::cli
