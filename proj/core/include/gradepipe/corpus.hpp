#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace gradepipe {

enum class QualityBand { Poor, Moderate, Good, Unknown };
enum class Provenance { Synthetic, Human };

std::string_view to_string(QualityBand band) noexcept;
std::string_view to_string(Provenance provenance) noexcept;
// Case-insensitive.
std::optional<QualityBand> parse_band(std::string_view text);
std::optional<Provenance> parse_provenance(std::string_view text);

// The labelled bands, in report column order.
inline constexpr QualityBand kLabelledBands[] = {QualityBand::Poor, QualityBand::Moderate, QualityBand::Good};

struct Problem {
  std::string id;
  std::string title;
  std::string statement;
  std::string reference_solution;
  // Manifest-relative locator handed to the test runner; empty when the problem has no suite.
  std::string test_suite_ref;
  std::string language_tag = "java";
  // Manifest-relative path of the reference solution.
  std::string solution_path;

  bool operator==(const Problem&) const = default;
};

struct Submission {
  std::string id;
  std::string problem_id;
  std::string source;
  QualityBand band = QualityBand::Unknown;
  Provenance provenance = Provenance::Human;
  std::vector<std::string> error_notes;
  std::string source_path;

  bool operator==(const Submission&) const = default;
};

// Problems and submissions sorted by id, all submission->problem references resolved.
struct Corpus {
  std::vector<Problem> problems;
  std::vector<Submission> submissions;
  nlohmann::json metadata = nlohmann::json::object();
  // Directory the manifest was loaded from; not part of the data model.
  std::filesystem::path root;

  const Problem* find_problem(std::string_view id) const;
  const Submission* find_submission(std::string_view id) const;
  std::filesystem::path resolve(std::string_view relative) const;

  bool operator==(const Corpus& other) const {
    return problems == other.problems && submissions == other.submissions && metadata == other.metadata;
  }
};

// Sorts, checks id uniqueness and cross references. Throws MalformedManifest / DanglingReference.
void finalize(Corpus& corpus);

Corpus load_manifest(const std::filesystem::path& manifest_path);

// Writes <dir>/manifest.json plus every source file at its relative path. Missing paths get
// defaults derived from ids; test suites found under corpus.root are copied alongside.
void write_manifest(const Corpus& corpus, const std::filesystem::path& dir);

nlohmann::json manifest_json(const Corpus& corpus);

Corpus filter_by_band(const Corpus& corpus, QualityBand band);

std::string default_extension(std::string_view language_tag);

struct BaselineScore {
  std::string submission_id;
  std::string grader_id;
  int scale = 10;
  double total = 0.0;
  std::optional<std::map<std::string, double>> per_category;
};

std::vector<BaselineScore> parse_baseline(std::istream& in, std::string_view origin = "<baseline>");
std::vector<BaselineScore> load_baseline(const std::filesystem::path& path);

}  // namespace gradepipe
