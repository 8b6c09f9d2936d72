#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradepipe/corpus.hpp"
#include "gradepipe/pipeline.hpp"

namespace gradepipe {

// Method labels, in report row order.
inline constexpr const char* kHumanTA = "HumanTA";
inline constexpr const char* kDirect10 = "Direct10";
inline constexpr const char* kDirect100s = "Direct100s";
inline constexpr const char* kReverse10 = "Reverse10";
inline constexpr const char* kReverse100s = "Reverse100s";
inline constexpr const char* kMethodOrder[] = {kHumanTA, kDirect10, kDirect100s, kReverse10, kReverse100s};

// Row label as printed in the score table, e.g. "Reverse (100-pt scaled)".
std::string method_display_name(const std::string& method);

struct ScoreSeries {
  std::string method;
  // (submission id, score on the 10-point scale)
  std::vector<std::pair<std::string, double>> pairs;
};

// Throws EmptySeries / MalformedRecord for out-of-range scores or duplicate ids.
void validate(const ScoreSeries& series);

struct DistributionStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

// Mean of |ai - human| over the ids present in both series. Throws EmptyIntersection.
double mean_abs_diff(const ScoreSeries& ai, const ScoreSeries& human);

// Quartiles by linear interpolation between closest ranks: for sorted x[0..n-1] the p-quantile is
// x[floor(h)] + (h - floor(h)) * (x[floor(h)+1] - x[floor(h)]) with h = (n-1)p. Whiskers are min/max.
DistributionStats distribution_stats(const ScoreSeries& series);

// Fraction of scores within 1e-9 of an integer.
double round_clustering_index(const ScoreSeries& series);

using BandMeans = std::map<std::string, std::map<QualityBand, std::optional<double>>>;

// Per-method per-band arithmetic means; a band with no scores for a method is nullopt.
// Throws MissingBand when a scored id is not in the corpus.
BandMeans band_averages(const std::vector<ScoreSeries>& series, const Corpus& corpus);

// Human baseline as a series: per submission, the mean over graders after scaling to 10.
ScoreSeries baseline_series(const std::vector<BaselineScore>& baseline);

// One series per (strategy, scale) found in the results. AutoFull submissions contribute their
// full mark to every AI method; NeedsHuman submissions contribute nothing.
std::vector<ScoreSeries> ai_series(const std::vector<PipelineResult>& results);

struct EvaluationReport {
  std::vector<std::string> methods;       // row order
  std::vector<QualityBand> bands;         // column order
  BandMeans band_means;
  std::map<std::string, double> mad;      // AI methods only
  std::map<std::string, std::vector<std::string>> mad_excluded;  // ids lacking a baseline
  // method -> band label ("All", "Poor", ...) -> stats
  std::map<std::string, std::map<std::string, DistributionStats>> distributions;
  std::map<std::string, double> clustering;
  std::vector<std::string> notes;
};

EvaluationReport build_report(const std::vector<PipelineResult>& results, const std::vector<BaselineScore>& baseline,
                              const Corpus& corpus);

// Aligned text grid shaped like the classic "average scores across methods" table, followed by
// MAD and clustering sections. All numbers have two decimals.
std::string render_text(const EvaluationReport& report);
// section,method,band,statistic,value
std::string render_csv(const EvaluationReport& report);
nlohmann::json render_json(const EvaluationReport& report);

}  // namespace gradepipe
