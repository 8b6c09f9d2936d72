#include "gradepipe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "gradepipe/error.hpp"
#include "gradepipe/io.hpp"
#include "gradepipe/rubric.hpp"

namespace gradepipe {

using nlohmann::json;

std::string method_display_name(const std::string& method) {
  if (method == kHumanTA) return "Human TA";
  if (method == kDirect10) return "Direct (10-pt)";
  if (method == kDirect100s) return "Direct (100-pt scaled)";
  if (method == kReverse10) return "Reverse (10-pt)";
  if (method == kReverse100s) return "Reverse (100-pt scaled)";
  return method;
}

void validate(const ScoreSeries& series) {
  std::set<std::string> ids;
  for (const auto& [id, score] : series.pairs) {
    if (!std::isfinite(score) || score < 0.0 || score > 10.0 + 1e-9) {
      throw Error(Errc::MalformedRecord, fmt::format("{}: score {} for '{}' outside [0, 10]", series.method, score, id));
    }
    if (!ids.insert(id).second) {
      throw Error(Errc::MalformedRecord, fmt::format("{}: duplicate submission '{}'", series.method, id));
    }
  }
}

double mean_abs_diff(const ScoreSeries& ai, const ScoreSeries& human) {
  std::map<std::string_view, double> human_by_id;
  for (const auto& [id, score] : human.pairs) human_by_id.emplace(id, score);
  // Sum in id order so the value does not depend on input order.
  std::map<std::string_view, double> diffs;
  for (const auto& [id, score] : ai.pairs) {
    auto it = human_by_id.find(id);
    if (it != human_by_id.end()) diffs.emplace(id, std::fabs(score - it->second));
  }
  if (diffs.empty()) {
    throw Error(Errc::EmptyIntersection, fmt::format("{} and {} share no submissions", ai.method, human.method));
  }
  double sum = 0.0;
  for (const auto& [id, d] : diffs) sum += d;
  return sum / static_cast<double>(diffs.size());
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> sorted_scores(const ScoreSeries& series) {
  if (series.pairs.empty()) throw Error(Errc::EmptySeries, series.method);
  std::vector<double> v;
  v.reserve(series.pairs.size());
  for (const auto& [id, s] : series.pairs) v.push_back(s);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

DistributionStats distribution_stats(const ScoreSeries& series) {
  const auto v = sorted_scores(series);
  return {v.front(), quantile_sorted(v, 0.25), quantile_sorted(v, 0.5), quantile_sorted(v, 0.75), v.back(), v.size()};
}

double round_clustering_index(const ScoreSeries& series) {
  if (series.pairs.empty()) throw Error(Errc::EmptySeries, series.method);
  std::size_t integral = 0;
  for (const auto& [id, s] : series.pairs) {
    if (std::fabs(s - std::round(s)) <= 1e-9) ++integral;
  }
  return static_cast<double>(integral) / static_cast<double>(series.pairs.size());
}

BandMeans band_averages(const std::vector<ScoreSeries>& series, const Corpus& corpus) {
  BandMeans out;
  for (const auto& s : series) {
    std::map<QualityBand, std::map<std::string_view, double>> by_band;
    for (const auto& [id, score] : s.pairs) {
      const auto* sub = corpus.find_submission(id);
      if (sub == nullptr) throw Error(Errc::MissingBand, fmt::format("{}: submission '{}' not in corpus", s.method, id));
      by_band[sub->band].emplace(id, score);
    }
    auto& row = out[s.method];
    for (auto band : kLabelledBands) row[band] = std::nullopt;
    for (const auto& [band, scores] : by_band) {
      double sum = 0.0;
      for (const auto& [id, v] : scores) sum += v;
      row[band] = sum / static_cast<double>(scores.size());
    }
  }
  return out;
}

ScoreSeries baseline_series(const std::vector<BaselineScore>& baseline) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& b : baseline) {
    auto& [sum, n] = acc[b.submission_id];
    sum += normalize_score(b.total, b.scale, 10.0);
    ++n;
  }
  ScoreSeries s{kHumanTA, {}};
  for (const auto& [id, v] : acc) s.pairs.emplace_back(id, v.first / v.second);
  return s;
}

namespace {

std::string method_for(GradeStrategy strategy, int scale) {
  const bool direct = strategy == GradeStrategy::Direct;
  if (scale == 10) return direct ? kDirect10 : kReverse10;
  return direct ? kDirect100s : kReverse100s;
}

}  // namespace

std::vector<ScoreSeries> ai_series(const std::vector<PipelineResult>& results) {
  std::map<std::string, ScoreSeries> by_method;
  for (const auto& r : results) {
    for (const auto& g : r.results) {
      if (g.strategy == GradeStrategy::AutoPass) continue;
      const auto method = method_for(g.strategy, g.scale);
      auto& s = by_method[method];
      s.method = method;
      s.pairs.emplace_back(r.submission_id, g.normalized_total);
    }
  }
  for (const auto& r : results) {
    if (r.route != Route::AutoFull) continue;
    for (auto& [method, s] : by_method) s.pairs.emplace_back(r.submission_id, r.results.front().normalized_total);
  }
  std::vector<ScoreSeries> out;
  for (const char* method : kMethodOrder) {
    auto it = by_method.find(method);
    if (it == by_method.end()) continue;
    std::sort(it->second.pairs.begin(), it->second.pairs.end());
    out.push_back(std::move(it->second));
  }
  return out;
}

EvaluationReport build_report(const std::vector<PipelineResult>& results, const std::vector<BaselineScore>& baseline,
                              const Corpus& corpus) {
  EvaluationReport report;
  for (const char* m : kMethodOrder) report.methods.emplace_back(m);
  report.bands.assign(std::begin(kLabelledBands), std::end(kLabelledBands));

  const auto human = baseline_series(baseline);
  auto series = ai_series(results);
  series.insert(series.begin(), human);
  for (const auto& s : series) validate(s);

  bool any_unknown = false;
  for (const auto& s : series) {
    for (const auto& [id, v] : s.pairs) {
      const auto* sub = corpus.find_submission(id);
      if (sub != nullptr && sub->band == QualityBand::Unknown) any_unknown = true;
    }
  }
  if (any_unknown) report.bands.push_back(QualityBand::Unknown);

  report.band_means = band_averages(series, corpus);
  for (const auto& m : report.methods) {
    auto& row = report.band_means[m];
    for (auto band : report.bands) row.try_emplace(band, std::nullopt);
  }

  std::set<std::string> human_ids;
  for (const auto& [id, v] : human.pairs) human_ids.insert(id);

  for (const auto& s : series) {
    if (s.method != kHumanTA) {
      try {
        report.mad[s.method] = mean_abs_diff(s, human);
      } catch (const Error& e) {
        throw Error(e.code(), fmt::format("MAD for {}: {}", s.method, e.detail()));
      }
      std::vector<std::string> excluded;
      for (const auto& [id, v] : s.pairs) {
        if (human_ids.count(id) == 0) excluded.push_back(id);
      }
      if (!excluded.empty()) {
        std::string list;
        for (const auto& id : excluded) list += (list.empty() ? "" : ", ") + id;
        report.notes.push_back(
            fmt::format("{}: {} submission(s) without a human baseline excluded from MAD: {}", s.method,
                        excluded.size(), list));
        report.mad_excluded[s.method] = std::move(excluded);
      }
    }
    if (s.pairs.empty()) continue;
    report.distributions[s.method]["All"] = distribution_stats(s);
    for (auto band : report.bands) {
      ScoreSeries part{s.method, {}};
      for (const auto& p : s.pairs) {
        const auto* sub = corpus.find_submission(p.first);
        if (sub != nullptr && sub->band == band) part.pairs.push_back(p);
      }
      if (!part.pairs.empty()) report.distributions[s.method][std::string(to_string(band))] = distribution_stats(part);
    }
    report.clustering[s.method] = round_clustering_index(s);
  }
  return report;
}

// ---------------------------------------------------------------------------

std::string render_text(const EvaluationReport& report) {
  std::size_t label_width = std::string("Method").size();
  for (const auto& m : report.methods) label_width = std::max(label_width, method_display_name(m).size());
  std::size_t cell_width = 5;
  for (auto b : report.bands) cell_width = std::max(cell_width, to_string(b).size());

  std::string out = "Average Scores Across Methods (out of 10)\n";
  std::string header = fmt::format("{:<{}}", "Method", label_width);
  for (auto b : report.bands) header += fmt::format("  {:>{}}", to_string(b), cell_width);
  out += header + "\n" + std::string(header.size(), '-') + "\n";
  for (const auto& m : report.methods) {
    std::string line = fmt::format("{:<{}}", method_display_name(m), label_width);
    const auto row = report.band_means.find(m);
    for (auto b : report.bands) {
      std::string cell = "-";
      if (row != report.band_means.end()) {
        auto it = row->second.find(b);
        if (it != row->second.end() && it->second) cell = io::format_2dp(*it->second);
      }
      line += fmt::format("  {:>{}}", cell, cell_width);
    }
    out += line + "\n";
  }

  out += "\nMean absolute difference vs Human TA\n";
  for (const auto& m : report.methods) {
    if (auto it = report.mad.find(m); it != report.mad.end()) {
      out += fmt::format("{:<{}}  {:>{}}\n", method_display_name(m), label_width, io::format_2dp(it->second), cell_width);
    }
  }
  out += "\nRound-number clustering (fraction of integer scores)\n";
  for (const auto& m : report.methods) {
    if (auto it = report.clustering.find(m); it != report.clustering.end()) {
      out += fmt::format("{:<{}}  {:>{}}\n", method_display_name(m), label_width, io::format_2dp(it->second), cell_width);
    }
  }
  if (!report.notes.empty()) {
    out += "\nNotes\n";
    for (const auto& n : report.notes) out += "- " + n + "\n";
  }
  return out;
}

std::string render_csv(const EvaluationReport& report) {
  std::string out = "section,method,band,statistic,value\n";
  for (const auto& m : report.methods) {
    const auto row = report.band_means.find(m);
    for (auto b : report.bands) {
      std::string cell;
      if (row != report.band_means.end()) {
        auto it = row->second.find(b);
        if (it != row->second.end() && it->second) cell = io::format_2dp(*it->second);
      }
      out += fmt::format("band_mean,{},{},mean,{}\n", m, to_string(b), cell);
    }
  }
  for (const auto& m : report.methods) {
    if (auto it = report.mad.find(m); it != report.mad.end()) {
      out += fmt::format("mad,{},All,mad,{}\n", m, io::format_2dp(it->second));
    }
  }
  std::vector<std::string> band_labels{"All"};
  for (auto b : report.bands) band_labels.emplace_back(to_string(b));
  for (const auto& m : report.methods) {
    auto it = report.distributions.find(m);
    if (it == report.distributions.end()) continue;
    for (const auto& label : band_labels) {
      auto d = it->second.find(label);
      if (d == it->second.end()) continue;
      const auto& s = d->second;
      out += fmt::format("distribution,{},{},min,{}\n", m, label, io::format_2dp(s.min));
      out += fmt::format("distribution,{},{},q1,{}\n", m, label, io::format_2dp(s.q1));
      out += fmt::format("distribution,{},{},median,{}\n", m, label, io::format_2dp(s.median));
      out += fmt::format("distribution,{},{},q3,{}\n", m, label, io::format_2dp(s.q3));
      out += fmt::format("distribution,{},{},max,{}\n", m, label, io::format_2dp(s.max));
      out += fmt::format("distribution,{},{},count,{}\n", m, label, s.count);
    }
  }
  for (const auto& m : report.methods) {
    if (auto it = report.clustering.find(m); it != report.clustering.end()) {
      out += fmt::format("clustering,{},All,integer_fraction,{}\n", m, io::format_2dp(it->second));
    }
  }
  return out;
}

json render_json(const EvaluationReport& report) {
  json bands = json::array();
  for (auto b : report.bands) bands.push_back(to_string(b));
  json methods = json::array();
  for (const auto& m : report.methods) {
    json means = json::object();
    const auto row = report.band_means.find(m);
    for (auto b : report.bands) {
      json v = nullptr;
      if (row != report.band_means.end()) {
        auto it = row->second.find(b);
        if (it != row->second.end() && it->second) v = *it->second;
      }
      means[std::string(to_string(b))] = v;
    }
    json dists = json::object();
    if (auto it = report.distributions.find(m); it != report.distributions.end()) {
      for (const auto& [label, s] : it->second) {
        dists[label] = {{"min", s.min}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"max", s.max}, {"count", s.count}};
      }
    }
    json entry = {{"method", m}, {"label", method_display_name(m)}, {"band_means", std::move(means)},
                  {"distributions", std::move(dists)}};
    entry["mad"] = report.mad.count(m) ? json(report.mad.at(m)) : json(nullptr);
    entry["clustering"] = report.clustering.count(m) ? json(report.clustering.at(m)) : json(nullptr);
    methods.push_back(std::move(entry));
  }
  return {{"quartile_method", "linear interpolation between closest ranks; whiskers at min/max"},
          {"bands", std::move(bands)},
          {"methods", std::move(methods)},
          {"notes", report.notes}};
}

}  // namespace gradepipe
