#include "gradepipe/rubric.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "gradepipe/error.hpp"
#include "gradepipe/io.hpp"

namespace gradepipe {

const RubricCategory* Rubric::find(std::string_view name) const {
  const auto key = io::to_lower(io::trim(name));
  for (const auto& c : categories) {
    if (io::to_lower(c.name) == key) return &c;
  }
  return nullptr;
}

double Rubric::total_max() const {
  double sum = 0.0;
  for (const auto& c : categories) sum += c.max_points;
  return sum;
}

void validate(const Rubric& rubric) {
  if (!(rubric.scale_total > 0.0) || !std::isfinite(rubric.scale_total)) {
    throw Error(Errc::InvalidRubric, "scale_total must be positive");
  }
  if (rubric.categories.empty()) throw Error(Errc::InvalidRubric, "rubric needs at least one category");
  std::set<std::string> names;
  for (const auto& c : rubric.categories) {
    if (io::trim(c.name).empty()) throw Error(Errc::InvalidRubric, "category with empty name");
    if (!names.insert(io::to_lower(c.name)).second) {
      throw Error(Errc::InvalidRubric, fmt::format("duplicate category '{}'", c.name));
    }
    if (!(c.max_points > 0.0) || !std::isfinite(c.max_points)) {
      throw Error(Errc::InvalidRubric, fmt::format("category '{}': max_points must be positive", c.name));
    }
  }
  if (std::fabs(rubric.total_max() - rubric.scale_total) > kRubricTolerance) {
    throw Error(Errc::InvalidRubric,
                fmt::format("category caps sum to {} but scale_total is {}", rubric.total_max(), rubric.scale_total));
  }
}

Rubric default_rubric() {
  return Rubric{
      10.0,
      {
          {"Syntax", 2.5, "The code compiles: statements are terminated, brackets balance, names and types are declared correctly."},
          {"Logic", 2.5, "The algorithm is correct: conditions, loop bounds and control flow implement the intended behaviour."},
          {"Output Correctness", 2.5, "The program returns or prints the expected result for typical and edge-case inputs."},
          {"Style", 2.5, "Readable naming, consistent indentation, no dead code, sensible decomposition."},
      }};
}

Rubric expand_scale(const Rubric& rubric, int factor) {
  if (factor < 1) throw Error(Errc::InvalidRubric, fmt::format("expansion factor must be >= 1, got {}", factor));
  Rubric out = rubric;
  if (factor == 1) return out;
  out.scale_total = rubric.scale_total * factor;
  for (auto& c : out.categories) {
    c.max_points *= factor;
    c.descriptor += fmt::format(
        " Use whole-point steps from 0 to {} so that partial credit can be expressed finely.",
        format_points(c.max_points));
  }
  return out;
}

double normalize_score(double score, double from_scale, double to_scale) {
  if (!(from_scale > 0.0) || !(to_scale > 0.0)) {
    throw Error(Errc::ScoreOutOfRange, fmt::format("scales must be positive ({} -> {})", from_scale, to_scale));
  }
  if (!std::isfinite(score) || score < 0.0 || score > from_scale * (1.0 + 1e-12)) {
    throw Error(Errc::ScoreOutOfRange, fmt::format("score {} outside [0, {}]", score, from_scale));
  }
  if (from_scale == to_scale) return score;
  return score * to_scale / from_scale;
}

std::string format_points(double value) {
  auto text = fmt::format("{:.6f}", value);
  while (!text.empty() && text.back() == '0') text.pop_back();
  if (!text.empty() && text.back() == '.') text.pop_back();
  return text;
}

std::string render_rubric(const Rubric& rubric) {
  std::string out;
  for (const auto& c : rubric.categories) {
    out += fmt::format("- {} (max {} points): {}\n", c.name, format_points(c.max_points), c.descriptor);
  }
  return out;
}

nlohmann::json to_json(const Rubric& rubric) {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : rubric.categories) {
    cats.push_back({{"name", c.name}, {"max_points", c.max_points}, {"descriptor", c.descriptor}});
  }
  return {{"scale_total", rubric.scale_total}, {"categories", std::move(cats)}};
}

Rubric rubric_from_json(const nlohmann::json& doc) {
  Rubric r;
  try {
    r.scale_total = doc.at("scale_total").get<double>();
    for (const auto& c : doc.at("categories")) {
      r.categories.push_back({c.at("name").get<std::string>(), c.at("max_points").get<double>(),
                              c.value("descriptor", std::string{})});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidRubric, e.what());
  }
  validate(r);
  return r;
}

Rubric load_rubric(const std::filesystem::path& path) {
  const auto text = io::read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::InvalidRubric, fmt::format("{}: {}", path.string(), e.what()));
  }
  return rubric_from_json(doc);
}

}  // namespace gradepipe
