#include "gradepipe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <fmt/format.h>

#include "gradepipe/error.hpp"
#include "gradepipe/io.hpp"

namespace gradepipe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(QualityBand band) noexcept {
  switch (band) {
    case QualityBand::Poor: return "Poor";
    case QualityBand::Moderate: return "Moderate";
    case QualityBand::Good: return "Good";
    case QualityBand::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string_view to_string(Provenance provenance) noexcept {
  return provenance == Provenance::Synthetic ? "Synthetic" : "Human";
}

std::optional<QualityBand> parse_band(std::string_view text) {
  const auto lower = io::to_lower(io::trim(text));
  if (lower == "poor") return QualityBand::Poor;
  if (lower == "moderate") return QualityBand::Moderate;
  if (lower == "good") return QualityBand::Good;
  if (lower == "unknown" || lower.empty()) return QualityBand::Unknown;
  return std::nullopt;
}

std::optional<Provenance> parse_provenance(std::string_view text) {
  const auto lower = io::to_lower(io::trim(text));
  if (lower == "synthetic") return Provenance::Synthetic;
  if (lower == "human") return Provenance::Human;
  return std::nullopt;
}

std::string default_extension(std::string_view language_tag) {
  const auto lang = io::to_lower(language_tag);
  if (lang == "java") return "java";
  if (lang == "python" || lang == "py") return "py";
  if (lang == "c++" || lang == "cpp") return "cpp";
  if (lang == "c") return "c";
  if (lang == "javascript" || lang == "js") return "js";
  return "txt";
}

const Problem* Corpus::find_problem(std::string_view id) const {
  auto it = std::lower_bound(problems.begin(), problems.end(), id,
                             [](const Problem& p, std::string_view key) { return p.id < key; });
  return (it != problems.end() && it->id == id) ? &*it : nullptr;
}

const Submission* Corpus::find_submission(std::string_view id) const {
  auto it = std::lower_bound(submissions.begin(), submissions.end(), id,
                             [](const Submission& s, std::string_view key) { return s.id < key; });
  return (it != submissions.end() && it->id == id) ? &*it : nullptr;
}

fs::path Corpus::resolve(std::string_view relative) const {
  fs::path p{std::string(relative)};
  return p.is_absolute() ? p : root / p;
}

void finalize(Corpus& corpus) {
  std::sort(corpus.problems.begin(), corpus.problems.end(),
            [](const Problem& a, const Problem& b) { return a.id < b.id; });
  std::sort(corpus.submissions.begin(), corpus.submissions.end(),
            [](const Submission& a, const Submission& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < corpus.problems.size(); ++i) {
    const auto& p = corpus.problems[i];
    if (p.id.empty()) throw Error(Errc::MalformedManifest, "problem with empty id");
    if (i > 0 && corpus.problems[i - 1].id == p.id) {
      throw Error(Errc::MalformedManifest, fmt::format("duplicate problem id '{}'", p.id));
    }
    if (p.statement.empty()) {
      throw Error(Errc::MalformedManifest, fmt::format("problem '{}': empty statement", p.id));
    }
  }
  for (std::size_t i = 0; i < corpus.submissions.size(); ++i) {
    const auto& s = corpus.submissions[i];
    if (s.id.empty()) throw Error(Errc::MalformedManifest, "submission with empty id");
    if (i > 0 && corpus.submissions[i - 1].id == s.id) {
      throw Error(Errc::MalformedManifest, fmt::format("duplicate submission id '{}'", s.id));
    }
    if (corpus.find_problem(s.problem_id) == nullptr) {
      throw Error(Errc::DanglingReference,
                  fmt::format("submission '{}' references unknown problem '{}'", s.id, s.problem_id));
    }
    if (s.source.empty()) {
      throw Error(Errc::MalformedManifest, fmt::format("submission '{}': empty source", s.id));
    }
  }
}

namespace {

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

std::string require_string(const json& obj, const char* key, const std::string& where, bool required = true) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) throw Error(Errc::MalformedManifest, fmt::format("{}.{}: missing", where, key));
    return {};
  }
  if (!it->is_string()) throw Error(Errc::MalformedManifest, fmt::format("{}.{}: expected string", where, key));
  return it->get<std::string>();
}

}  // namespace

Corpus load_manifest(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw Error(Errc::MissingFile, manifest_path.string());
  const auto text = io::read_file(manifest_path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::MalformedManifest,
                fmt::format("{}:{}: {}", manifest_path.string(), line_of_offset(text, e.byte), e.what()));
  }
  if (!doc.is_object()) throw Error(Errc::MalformedManifest, "manifest root must be an object");

  Corpus corpus;
  corpus.root = manifest_path.parent_path();
  if (auto it = doc.find("metadata"); it != doc.end() && it->is_object()) corpus.metadata = *it;

  const auto array_field = [&](const char* key) -> const json& {
    static const json empty = json::array();
    auto it = doc.find(key);
    if (it == doc.end()) return empty;
    if (!it->is_array()) throw Error(Errc::MalformedManifest, fmt::format("{}: expected array", key));
    return *it;
  };

  std::size_t idx = 0;
  for (const auto& entry : array_field("problems")) {
    const auto where = fmt::format("problems[{}]", idx++);
    if (!entry.is_object()) throw Error(Errc::MalformedManifest, where + ": expected object");
    Problem p;
    p.id = require_string(entry, "id", where);
    p.title = require_string(entry, "title", where, false);
    p.statement = require_string(entry, "statement", where);
    p.solution_path = require_string(entry, "solution_path", where, false);
    p.test_suite_ref = require_string(entry, "tests_path", where, false);
    if (auto lang = require_string(entry, "language", where, false); !lang.empty()) p.language_tag = lang;
    if (!p.solution_path.empty()) p.reference_solution = io::read_file(corpus.resolve(p.solution_path));
    corpus.problems.push_back(std::move(p));
  }

  idx = 0;
  for (const auto& entry : array_field("submissions")) {
    const auto where = fmt::format("submissions[{}]", idx++);
    if (!entry.is_object()) throw Error(Errc::MalformedManifest, where + ": expected object");
    Submission s;
    s.id = require_string(entry, "id", where);
    s.problem_id = require_string(entry, "problem_id", where);
    s.source_path = require_string(entry, "source_path", where);
    const auto band_text = require_string(entry, "band", where, false);
    const auto band = parse_band(band_text);
    if (!band) throw Error(Errc::MalformedManifest, fmt::format("{}.band: unknown band '{}'", where, band_text));
    s.band = *band;
    const auto prov_text = require_string(entry, "provenance", where, false);
    if (prov_text.empty()) {
      s.provenance = Provenance::Human;
    } else {
      const auto prov = parse_provenance(prov_text);
      if (!prov) throw Error(Errc::MalformedManifest, fmt::format("{}.provenance: unknown value '{}'", where, prov_text));
      s.provenance = *prov;
    }
    if (s.provenance == Provenance::Synthetic && s.band == QualityBand::Unknown) {
      throw Error(Errc::MalformedManifest, fmt::format("{}.band: synthetic submissions must be labelled", where));
    }
    if (auto it = entry.find("error_notes"); it != entry.end()) {
      if (!it->is_array()) throw Error(Errc::MalformedManifest, where + ".error_notes: expected array");
      for (const auto& note : *it) {
        if (!note.is_string()) throw Error(Errc::MalformedManifest, where + ".error_notes: expected strings");
        s.error_notes.push_back(note.get<std::string>());
      }
    }
    s.source = io::read_file(corpus.resolve(s.source_path));
    corpus.submissions.push_back(std::move(s));
  }

  finalize(corpus);
  return corpus;
}

json manifest_json(const Corpus& corpus) {
  json problems = json::array();
  for (const auto& p : corpus.problems) {
    json entry = {{"id", p.id}, {"title", p.title}, {"statement", p.statement}, {"language", p.language_tag}};
    if (!p.solution_path.empty()) entry["solution_path"] = p.solution_path;
    if (!p.test_suite_ref.empty()) entry["tests_path"] = p.test_suite_ref;
    problems.push_back(std::move(entry));
  }
  json submissions = json::array();
  for (const auto& s : corpus.submissions) {
    json entry = {{"id", s.id},
                  {"problem_id", s.problem_id},
                  {"source_path", s.source_path},
                  {"band", to_string(s.band)},
                  {"provenance", to_string(s.provenance)}};
    if (!s.error_notes.empty()) entry["error_notes"] = s.error_notes;
    submissions.push_back(std::move(entry));
  }
  json doc = {{"problems", std::move(problems)}, {"submissions", std::move(submissions)}};
  if (!corpus.metadata.empty()) doc["metadata"] = corpus.metadata;
  return doc;
}

void write_manifest(const Corpus& input, const fs::path& dir) {
  Corpus corpus = input;
  for (auto& p : corpus.problems) {
    if (p.solution_path.empty() && !p.reference_solution.empty()) {
      p.solution_path = fmt::format("problems/{}/Solution.{}", p.id, default_extension(p.language_tag));
    }
  }
  for (auto& s : corpus.submissions) {
    if (s.source_path.empty()) {
      const auto* problem = corpus.find_problem(s.problem_id);
      s.source_path = fmt::format("submissions/{}.{}", s.id,
                                  default_extension(problem ? problem->language_tag : "java"));
    }
  }
  finalize(corpus);

  for (const auto& p : corpus.problems) {
    if (!p.solution_path.empty()) io::write_file(dir / p.solution_path, p.reference_solution);
    if (!p.test_suite_ref.empty() && !input.root.empty()) {
      const auto from = input.resolve(p.test_suite_ref);
      const auto to = dir / p.test_suite_ref;
      std::error_code ec;
      if (fs::exists(from) && !fs::equivalent(from, to, ec)) io::write_file(to, io::read_file(from));
    }
  }
  for (const auto& s : corpus.submissions) io::write_file(dir / s.source_path, s.source);
  io::write_file(dir / "manifest.json", manifest_json(corpus).dump(2) + "\n");
}

Corpus filter_by_band(const Corpus& corpus, QualityBand band) {
  Corpus out;
  out.metadata = corpus.metadata;
  out.root = corpus.root;
  std::set<std::string> referenced;
  for (const auto& s : corpus.submissions) {
    if (s.band == band) {
      out.submissions.push_back(s);
      referenced.insert(s.problem_id);
    }
  }
  for (const auto& p : corpus.problems) {
    if (referenced.count(p.id) != 0) out.problems.push_back(p);
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::optional<double> parse_number(std::string_view text) {
  const std::string s(io::trim(text));
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(s, &used);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (used != s.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

std::vector<BaselineScore> parse_baseline(std::istream& in, std::string_view origin) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!io::trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  const std::vector<std::string> required = {"submission_id", "grader_id", "scale", "total"};
  if (header.size() < required.size()) {
    throw Error(Errc::MalformedRecord, fmt::format("{}:{}: missing header", origin, line_no));
  }
  for (std::size_t i = 0; i < required.size(); ++i) {
    if (io::trim(header[i]) != required[i]) {
      throw Error(Errc::MalformedRecord,
                  fmt::format("{}:{}: header column {} must be '{}'", origin, line_no, i + 1, required[i]));
    }
  }
  std::vector<std::string> categories;
  for (std::size_t i = required.size(); i < header.size(); ++i) {
    const auto col = std::string(io::trim(header[i]));
    if (col.rfind("category:", 0) != 0 || col.size() == 9) {
      throw Error(Errc::MalformedRecord, fmt::format("{}:{}: bad column '{}'", origin, line_no, col));
    }
    categories.push_back(col.substr(9));
  }

  std::vector<BaselineScore> records;
  std::set<std::pair<std::string, std::string>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (io::trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(Errc::MalformedRecord,
                  fmt::format("{}:{}: expected {} fields, got {}", origin, line_no, header.size(), fields.size()));
    }
    BaselineScore rec;
    rec.submission_id = std::string(io::trim(fields[0]));
    rec.grader_id = std::string(io::trim(fields[1]));
    if (rec.submission_id.empty() || rec.grader_id.empty()) {
      throw Error(Errc::MalformedRecord, fmt::format("{}:{}: empty id", origin, line_no));
    }
    const auto scale = parse_number(fields[2]);
    if (!scale || (*scale != 10.0 && *scale != 100.0)) {
      throw Error(Errc::MalformedRecord, fmt::format("{}:{}: scale must be 10 or 100", origin, line_no));
    }
    rec.scale = static_cast<int>(*scale);
    const auto total = parse_number(fields[3]);
    if (!total) throw Error(Errc::MalformedRecord, fmt::format("{}:{}: unparseable total", origin, line_no));
    if (*total < 0.0 || *total > rec.scale) {
      throw Error(Errc::ScoreOutOfRange,
                  fmt::format("{}:{}: total {} outside [0, {}]", origin, line_no, *total, rec.scale));
    }
    rec.total = *total;

    std::map<std::string, double> per_category;
    std::size_t blanks = 0;
    for (std::size_t i = 0; i < categories.size(); ++i) {
      const auto& cell = fields[required.size() + i];
      if (io::trim(cell).empty()) {
        ++blanks;
        continue;
      }
      const auto v = parse_number(cell);
      if (!v) throw Error(Errc::MalformedRecord, fmt::format("{}:{}: unparseable '{}'", origin, line_no, categories[i]));
      per_category[categories[i]] = *v;
    }
    if (!per_category.empty()) {
      if (blanks != 0) {
        throw Error(Errc::MalformedRecord, fmt::format("{}:{}: partially filled category columns", origin, line_no));
      }
      double sum = 0.0;
      for (const auto& [name, v] : per_category) sum += v;
      if (std::fabs(sum - rec.total) > 1e-6) {
        throw Error(Errc::MalformedRecord,
                    fmt::format("{}:{}: category sum {} != total {}", origin, line_no, sum, rec.total));
      }
      rec.per_category = std::move(per_category);
    }
    if (!seen.emplace(rec.submission_id, rec.grader_id).second) {
      throw Error(Errc::DuplicateRecord,
                  fmt::format("{}:{}: duplicate ({}, {})", origin, line_no, rec.submission_id, rec.grader_id));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<BaselineScore> load_baseline(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, path.string());
  return parse_baseline(in, path.string());
}

}  // namespace gradepipe
