#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dtm::evaluate {

struct PredictionRecord {
  int split = 0;
  std::int64_t id = 0;
  int true_class = 1;          // 1..K
  std::vector<double> probs;   // K predicted class probabilities
};

// Per-observation proper-score contributions.
std::vector<double> nll_contributions(const std::vector<PredictionRecord>& records);
std::vector<double> brier_contributions(const std::vector<PredictionRecord>& records,
                                        int collapse_class);
std::vector<double> rps_contributions(const std::vector<PredictionRecord>& records);

using RecordView = std::vector<const PredictionRecord*>;
/// Per-split metric; nullopt when undefined (e.g. single-class AUC).
using SplitMetric = std::function<std::optional<double>(const RecordView&)>;

SplitMetric mean_nll_metric();
SplitMetric mean_brier_metric(int collapse_class);
SplitMetric mean_rps_metric();
/// Midrank AUC of p(unfavorable); undefined for single-class splits.
SplitMetric auc_metric(int collapse_class);
/// Binary accuracy at threshold 0.5 on p(unfavorable).
SplitMetric binary_accuracy_metric(int collapse_class);
/// Argmax-class accuracy.
SplitMetric argmax_accuracy_metric();
/// Quadratic weighted Cohen's kappa of argmax class vs truth.
SplitMetric qwk_metric();

struct MetricResult {
  std::string metric;
  std::vector<int> splits;
  std::vector<std::optional<double>> per_split;
  std::optional<double> pooled;  // mean over splits with defined values
  // Bootstrap percentiles 2.5/50/97.5; missing when the metric was undefined
  // in every draw (e.g. single-class AUC).
  std::optional<double> lo, med, hi;
};

/// The published recipe: B resamples of size n_test within each split,
/// metric per split, averaged over splits, percentiles over the B averages.
MetricResult bootstrap_metric(const std::string& name,
                              const std::vector<PredictionRecord>& records,
                              const SplitMetric& metric, std::size_t B = 1000,
                              std::uint64_t seed = 1);

/// Within-split difference model - benchmark with paired resampling: each
/// bootstrap draw uses the same resampled observations for both record sets.
MetricResult relative_to_benchmark(const std::string& name,
                                   const std::vector<PredictionRecord>& model,
                                   const std::vector<PredictionRecord>& benchmark,
                                   const SplitMetric& metric, std::size_t B = 1000,
                                   std::uint64_t seed = 1);

struct CalibrationBin {
  double mean_predicted = 0.0;
  double observed = 0.0;
  std::size_t count = 0;
};

struct CalibrationCurve {
  std::vector<CalibrationBin> bins;  // four, fewer when edges merge
  std::string note;                  // records merged duplicate edges
};

struct CalibrationTable {
  std::vector<int> splits;
  std::vector<CalibrationCurve> per_split;
  CalibrationCurve pooled;  // bin-wise mean across splits
};

/// Quantile-binned (0.25/0.5/0.75) reliability of p(unfavorable).
CalibrationTable calibration_binary(const std::vector<PredictionRecord>& records,
                                    int collapse_class);
/// Ordinal version: per-class one-vs-rest curves averaged across classes.
CalibrationTable calibration_ordinal(const std::vector<PredictionRecord>& records);

struct CoefficientSummary {
  std::vector<std::string> names;
  std::vector<double> estimate;  // pool mean
  std::vector<double> lo, med, hi;
};

/// Bootstrap percentile intervals over a member-by-split coefficient pool.
CoefficientSummary pool_coefficients(const std::vector<std::string>& names,
                                     const std::vector<std::vector<double>>& pool,
                                     std::size_t B = 1000, std::uint64_t seed = 1);

/// Type-7 (linear interpolation) quantile of a copy of `values`.
double quantile(std::vector<double> values, double p);

}  // namespace dtm::evaluate
