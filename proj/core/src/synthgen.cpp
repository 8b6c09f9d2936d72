#include "gradepipe/synthgen.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <random>
#include <span>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "gradepipe/error.hpp"
#include "gradepipe/io.hpp"

namespace gradepipe {

using nlohmann::json;

ErrorProfile default_profile(QualityBand band) {
  switch (band) {
    case QualityBand::Good: return {band, 0, 0, 1, {}};
    case QualityBand::Moderate: return {band, 1, 0, 0, {}};
    case QualityBand::Poor: return {band, 1, 2, 0, {}};
    case QualityBand::Unknown: break;
  }
  throw Error(Errc::PreconditionViolation, "no profile for band Unknown");
}

void validate(const ErrorProfile& p) {
  if (p.syntax_errors < 0 || p.logic_errors < 0 || p.style_tweaks < 0) {
    throw Error(Errc::PreconditionViolation, "error counts must be non-negative");
  }
  switch (p.band) {
    case QualityBand::Good:
      if (p.syntax_errors != 0 || p.logic_errors != 0) {
        throw Error(Errc::PreconditionViolation, "Good profiles allow small perturbations only (no syntax or logic errors)");
      }
      break;
    case QualityBand::Poor:
      if (p.logic_errors < 1) throw Error(Errc::PreconditionViolation, "Poor profiles need at least one logic error");
      break;
    case QualityBand::Moderate: break;
    case QualityBand::Unknown: throw Error(Errc::PreconditionViolation, "profile band must be labelled");
  }
}

std::string_view to_string(MutationKind kind) noexcept {
  switch (kind) {
    case MutationKind::DeleteSemicolon: return "delete-semicolon";
    case MutationKind::FlipComparison: return "flip-comparison";
    case MutationKind::OffByOneLoopBound: return "off-by-one-loop-bound";
    case MutationKind::RemoveReturn: return "remove-return";
    case MutationKind::Reindent: return "reindent";
  }
  return "delete-semicolon";
}

namespace {

std::optional<MutationKind> parse_kind(std::string_view s) {
  for (auto k : {MutationKind::DeleteSemicolon, MutationKind::FlipComparison, MutationKind::OffByOneLoopBound,
                 MutationKind::RemoveReturn, MutationKind::Reindent}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

std::string_view class_of(MutationKind kind) {
  switch (kind) {
    case MutationKind::DeleteSemicolon: return "syntax";
    case MutationKind::Reindent: return "style";
    default: return "logic";
  }
}

struct Lines {
  std::vector<std::string> lines;
  bool trailing_newline = false;
};

Lines split_lines(std::string_view text) {
  Lines out;
  out.trailing_newline = !text.empty() && text.back() == '\n';
  if (out.trailing_newline) text.remove_suffix(1);
  std::size_t start = 0;
  for (;;) {
    const auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      out.lines.emplace_back(text.substr(start));
      break;
    }
    out.lines.emplace_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

std::string join_lines(const Lines& l) {
  std::string out;
  for (std::size_t i = 0; i < l.lines.size(); ++i) {
    if (i > 0) out += '\n';
    out += l.lines[i];
  }
  if (l.trailing_newline) out += '\n';
  return out;
}

bool is_comment(std::string_view trimmed) {
  return trimmed.rfind("//", 0) == 0 || trimmed.rfind("/*", 0) == 0 || trimmed.rfind("*", 0) == 0;
}

bool starts_with_word(std::string_view trimmed, std::string_view word) {
  if (trimmed.rfind(word, 0) != 0) return false;
  if (trimmed.size() == word.size()) return true;
  const char next = trimmed[word.size()];
  return !(std::isalnum(static_cast<unsigned char>(next)) || next == '_');
}

constexpr std::pair<std::string_view, std::string_view> kFlips[] = {
    {" <= ", " > "}, {" >= ", " < "}, {" == ", " != "}, {" != ", " == "}, {" < ", " >= "}, {" > ", " <= "}};
constexpr std::pair<std::string_view, std::string_view> kBoundShifts[] = {
    {" <= ", " < "}, {" >= ", " > "}, {" < ", " <= "}, {" > ", " >= "}};

// Position and replacement of the first operator from `table` inside [from, to).
std::optional<std::string> replace_first_op(const std::string& line, std::size_t from, std::size_t to,
                                            std::span<const std::pair<std::string_view, std::string_view>> table) {
  std::size_t best = std::string::npos;
  std::pair<std::string_view, std::string_view> chosen;
  for (const auto& entry : table) {
    const auto pos = line.find(entry.first, from);
    if (pos == std::string::npos || pos + entry.first.size() > to) continue;
    // Longer operators are listed first, so only a strictly earlier match wins.
    if (pos < best) {
      best = pos;
      chosen = entry;
    }
  }
  if (best == std::string::npos) return std::nullopt;
  return line.substr(0, best) + std::string(chosen.second) + line.substr(best + chosen.first.size());
}

// The edited line when `kind` applies to `line`.
std::optional<std::optional<std::string>> try_mutate(MutationKind kind, const std::string& line) {
  const auto trimmed = io::trim(line);
  if (trimmed.empty() || is_comment(trimmed)) return std::nullopt;
  const bool for_header = starts_with_word(trimmed, "for");
  switch (kind) {
    case MutationKind::DeleteSemicolon: {
      if (for_header || starts_with_word(trimmed, "import") || starts_with_word(trimmed, "package")) return std::nullopt;
      if (trimmed.back() != ';') return std::nullopt;
      const auto pos = line.find_last_of(';');
      return std::optional<std::string>(line.substr(0, pos) + line.substr(pos + 1));
    }
    case MutationKind::FlipComparison: {
      if (for_header) return std::nullopt;
      if (auto edited = replace_first_op(line, 0, line.size(), kFlips)) return std::optional<std::string>(*edited);
      return std::nullopt;
    }
    case MutationKind::OffByOneLoopBound: {
      if (!for_header) return std::nullopt;
      const auto first = line.find(';');
      const auto second = first == std::string::npos ? std::string::npos : line.find(';', first + 1);
      if (second == std::string::npos) return std::nullopt;
      if (auto edited = replace_first_op(line, first, second, kBoundShifts)) return std::optional<std::string>(*edited);
      return std::nullopt;
    }
    case MutationKind::RemoveReturn: {
      if (!starts_with_word(trimmed, "return") || trimmed.back() != ';') return std::nullopt;
      return std::optional<std::string>(std::nullopt);
    }
    case MutationKind::Reindent: {
      const auto indent = line.find_first_not_of(" \t");
      if (indent == 0 || indent == std::string::npos) return std::nullopt;
      return std::optional<std::string>(line.substr(indent));
    }
  }
  return std::nullopt;
}

struct Site {
  MutationKind kind;
  std::size_t line;
  std::optional<std::string> after;
};

}  // namespace

std::string to_note(const Mutation& m) {
  json doc = {{"kind", to_string(m.kind)},
              {"class", class_of(m.kind)},
              {"line", m.line},
              {"before", m.before},
              {"after", m.after ? json(*m.after) : json(nullptr)}};
  return doc.dump();
}

Mutation mutation_from_note(std::string_view note) {
  const auto doc = json::parse(note, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw Error(Errc::PreconditionViolation, "mutation note is not JSON");
  try {
    Mutation m;
    const auto kind = parse_kind(doc.at("kind").get<std::string>());
    if (!kind) throw Error(Errc::PreconditionViolation, "unknown mutation kind");
    m.kind = *kind;
    m.line = doc.at("line").get<std::size_t>();
    m.before = doc.at("before").get<std::string>();
    if (!doc.at("after").is_null()) m.after = doc.at("after").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::PreconditionViolation, fmt::format("bad mutation note: {}", e.what()));
  }
}

Submission inject_errors(std::string_view reference_solution, const ErrorProfile& profile, std::uint64_t seed) {
  validate(profile);
  if (io::trim(reference_solution).empty()) throw Error(Errc::PreconditionViolation, "empty reference solution");

  Lines text = split_lines(reference_solution);
  // origin[i] is the original line number of current line i; touched lines never mutate twice.
  std::vector<std::size_t> origin(text.lines.size());
  for (std::size_t i = 0; i < origin.size(); ++i) origin[i] = i;
  std::vector<bool> touched(text.lines.size(), false);
  std::mt19937_64 rng(seed);

  Submission out;
  out.band = profile.band;
  out.provenance = Provenance::Synthetic;

  const auto apply = [&](std::initializer_list<MutationKind> kinds, const char* what) {
    std::vector<Site> sites;
    for (auto kind : kinds) {
      for (std::size_t i = 0; i < text.lines.size(); ++i) {
        if (touched[origin[i]]) continue;
        if (auto edited = try_mutate(kind, text.lines[i])) sites.push_back({kind, i, std::move(*edited)});
      }
    }
    if (sites.empty()) {
      throw Error(Errc::InsufficientMutationSites, fmt::format("no site left for another {} mutation", what));
    }
    const auto& site = sites[rng() % sites.size()];
    Mutation m{site.kind, site.line, text.lines[site.line], site.after};
    touched[origin[site.line]] = true;
    if (site.after) {
      text.lines[site.line] = *site.after;
    } else {
      text.lines.erase(text.lines.begin() + static_cast<std::ptrdiff_t>(site.line));
      origin.erase(origin.begin() + static_cast<std::ptrdiff_t>(site.line));
    }
    out.error_notes.push_back(to_note(m));
  };

  for (int i = 0; i < profile.logic_errors; ++i) {
    apply({MutationKind::FlipComparison, MutationKind::OffByOneLoopBound, MutationKind::RemoveReturn}, "logic");
  }
  for (int i = 0; i < profile.syntax_errors; ++i) apply({MutationKind::DeleteSemicolon}, "syntax");
  for (int i = 0; i < profile.style_tweaks; ++i) apply({MutationKind::Reindent}, "style");

  out.source = out.error_notes.empty() ? std::string(reference_solution) : join_lines(text);
  return out;
}

std::string revert_mutations(std::string_view mutated, const std::vector<std::string>& notes) {
  Lines text = split_lines(mutated);
  for (auto it = notes.rbegin(); it != notes.rend(); ++it) {
    const auto m = mutation_from_note(*it);
    if (m.after) {
      if (m.line >= text.lines.size() || text.lines[m.line] != *m.after) {
        throw Error(Errc::PreconditionViolation, fmt::format("line {} does not match note", m.line + 1));
      }
      text.lines[m.line] = m.before;
    } else {
      if (m.line > text.lines.size()) throw Error(Errc::PreconditionViolation, "deleted line index out of range");
      text.lines.insert(text.lines.begin() + static_cast<std::ptrdiff_t>(m.line), m.before);
    }
  }
  return join_lines(text);
}

// ---------------------------------------------------------------------------

PromptRequest build_generation_prompt(const Problem& problem, const ErrorProfile& profile,
                                      const TemplateSet& templates) {
  validate(profile);
  std::string band_description;
  std::string band_rules;
  switch (profile.band) {
    case QualityBand::Good:
      band_description = "strong";
      band_rules = "- Do not introduce any semantic errors: the program must compile and behave correctly. "
                   "Small stylistic imperfections are allowed.";
      break;
    case QualityBand::Moderate:
      band_description = "reasonably competent but careless";
      band_rules = "- Keep the overall approach correct; every mistake should be small and local.";
      break;
    default:
      band_description = "struggling";
      band_rules = "- At least one logic error must be major: it should make the program give wrong results "
                   "for typical inputs.";
      break;
  }
  const TemplateVars vars = {
      {"language", problem.language_tag.empty() ? std::string("java") : problem.language_tag},
      {"title", problem.title.empty() ? problem.id : problem.title},
      {"statement", problem.statement},
      {"band_description", band_description},
      {"syntax_errors", std::to_string(profile.syntax_errors)},
      {"logic_errors", std::to_string(profile.logic_errors)},
      {"band_rules", band_rules},
      {"notes", profile.notes.empty() ? std::string{} : " " + profile.notes},
  };
  return make_request(render_template(templates.generate, vars), Strategy::Generate, "generate/" + templates.version);
}

std::uint64_t cell_seed(std::uint64_t master, std::string_view problem_id, QualityBand band, int index) {
  const auto tag = fmt::format("{}/{}/{}", problem_id, to_string(band), index);
  return io::splitmix64(master ^ io::fnv1a64(tag));
}

GenerationBatch generate_batch(const std::vector<Problem>& problems, const std::vector<QualityBand>& bands,
                               const GenerationOptions& options) {
  if (options.count_per_cell < 1) {
    throw Error(Errc::PreconditionViolation, fmt::format("count_per_cell must be >= 1, got {}", options.count_per_cell));
  }
  if (options.mode == GenerationMode::Live && options.client == nullptr) {
    throw Error(Errc::InvalidConfig, "live generation needs a completion client");
  }
  const auto& templates = options.templates ? *options.templates : builtin_templates();

  struct Cell {
    const Problem* problem;
    QualityBand band;
    int index;
    std::optional<Submission> result;
    std::string error;
  };
  std::vector<Cell> cells;
  for (const auto& p : problems) {
    for (auto band : bands) {
      for (int k = 1; k <= options.count_per_cell; ++k) cells.push_back({&p, band, k, std::nullopt, {}});
    }
  }

  const auto make_one = [&](Cell& cell) {
    const auto& problem = *cell.problem;
    const auto profile = default_profile(cell.band);
    Submission sub;
    if (options.mode == GenerationMode::Offline) {
      if (problem.reference_solution.empty()) {
        throw Error(Errc::PreconditionViolation, fmt::format("problem '{}' has no reference solution", problem.id));
      }
      sub = inject_errors(problem.reference_solution, profile, cell_seed(options.seed, problem.id, cell.band, cell.index));
    } else {
      const auto request = build_generation_prompt(problem, profile, templates);
      const auto response = options.client->complete(request);
      const auto blocks = extract_fenced_blocks(response.text);
      const auto it = std::find_if(blocks.begin(), blocks.end(), [](const FencedBlock& b) { return b.tag != "json"; });
      if (it == blocks.end() || io::trim(it->body).empty()) {
        throw Error(Errc::GenerationFailed, "model reply has no fenced code block");
      }
      sub.source = it->body + "\n";
      sub.band = cell.band;
      sub.provenance = Provenance::Synthetic;
      sub.error_notes.push_back(fmt::format("generated: syntax={} logic={} template={}", profile.syntax_errors,
                                            profile.logic_errors, request.template_version));
    }
    sub.id = fmt::format("{}-{}-{:02}", problem.id, io::to_lower(to_string(cell.band)), cell.index);
    sub.problem_id = problem.id;
    sub.source_path = fmt::format("submissions/{}.{}", sub.id, default_extension(problem.language_tag));
    cell.result = std::move(sub);
  };

  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        make_one(cells[i]);
      } catch (const std::exception& e) {
        cells[i].error = e.what();
      }
    }
  };
  {
    const auto n = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(cells.size(), 1));
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work);
  }

  GenerationBatch batch;
  batch.corpus.problems = problems;
  batch.corpus.metadata = {{"generator", "gradepipe synthgen"},
                           {"mode", options.mode == GenerationMode::Offline ? "offline" : "live"},
                           {"seed", options.seed},
                           {"count_per_cell", options.count_per_cell}};
  for (auto& c : cells) {
    if (c.result) {
      batch.corpus.submissions.push_back(std::move(*c.result));
    } else {
      batch.failures.push_back({c.problem->id, c.band, c.index, c.error});
    }
  }
  finalize(batch.corpus);
  return batch;
}

}  // namespace gradepipe
