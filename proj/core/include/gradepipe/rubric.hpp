#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace gradepipe {

struct RubricCategory {
  std::string name;
  double max_points = 0.0;
  std::string descriptor;

  bool operator==(const RubricCategory&) const = default;
};

// Immutable once validated: categories are unique by name and their caps sum to scale_total.
struct Rubric {
  double scale_total = 10.0;
  std::vector<RubricCategory> categories;

  bool operator==(const Rubric&) const = default;

  // Case-insensitive lookup.
  const RubricCategory* find(std::string_view name) const;
  double total_max() const;
};

inline constexpr double kRubricTolerance = 1e-9;

// Throws Error{InvalidRubric}.
void validate(const Rubric& rubric);

// Ten points split equally over Syntax, Logic, Output Correctness and Style.
Rubric default_rubric();

// Multiplies every cap and the total by `factor`. For factor > 1 descriptors gain a note
// asking for integer steps on the finer scale.
Rubric expand_scale(const Rubric& rubric, int factor);

// score * to_scale / from_scale at full precision. Throws ScoreOutOfRange when score is
// outside [0, from_scale].
double normalize_score(double score, double from_scale, double to_scale);

// Renders the rubric block embedded in grading prompts.
std::string render_rubric(const Rubric& rubric);

// Caps rendered without trailing zeros: 2.5 -> "2.5", 25 -> "25".
std::string format_points(double value);

nlohmann::json to_json(const Rubric& rubric);
Rubric rubric_from_json(const nlohmann::json& doc);
Rubric load_rubric(const std::filesystem::path& path);

}  // namespace gradepipe
