#include "dtm/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dtm/common.hpp"
#include "dtm/latent.hpp"
#include "dtm/rng.hpp"

namespace dtm::evaluate {

namespace {

double p_unfavorable(const PredictionRecord& r, int collapse_class) {
  const int K = static_cast<int>(r.probs.size());
  if (collapse_class < 1 || collapse_class >= K)
    throw ConfigError(cat("collapse class ", collapse_class, " outside 1..", K - 1));
  double u = 0.0;
  for (int k = collapse_class; k < K; ++k) u += r.probs[k];
  return u;
}

bool is_unfavorable(const PredictionRecord& r, int collapse_class) {
  return r.true_class > collapse_class;
}

int argmax_class(const PredictionRecord& r) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(r.probs.size()); ++k)
    if (r.probs[k] > r.probs[best]) best = k;
  return best + 1;
}

std::map<int, RecordView> by_split(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw ConfigError("evaluate: no prediction records");
  std::map<int, RecordView> groups;
  for (const auto& r : records) groups[r.split].push_back(&r);
  return groups;
}

}  // namespace

std::vector<double> nll_contributions(const std::vector<PredictionRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records)
    out.push_back(-std::log(latent::clamp_prob(r.probs.at(r.true_class - 1))));
  return out;
}

std::vector<double> brier_contributions(const std::vector<PredictionRecord>& records,
                                        int collapse_class) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const double u = p_unfavorable(r, collapse_class);
    const double truth = is_unfavorable(r, collapse_class) ? 1.0 : 0.0;
    out.push_back((u - truth) * (u - truth));
  }
  return out;
}

std::vector<double> rps_contributions(const std::vector<PredictionRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const int K = static_cast<int>(r.probs.size());
    double cum = 0.0;
    double rps = 0.0;
    for (int k = 1; k <= K - 1; ++k) {
      cum += r.probs[k - 1];
      const double ind = r.true_class <= k ? 1.0 : 0.0;
      rps += (cum - ind) * (cum - ind);
    }
    // Normalized by K-1 so the binary case coincides with the Brier score.
    out.push_back(rps / static_cast<double>(K - 1));
  }
  return out;
}

namespace {

SplitMetric contribution_mean(std::function<double(const PredictionRecord&)> f) {
  return [f](const RecordView& view) -> std::optional<double> {
    if (view.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto* r : view) s += f(*r);
    return s / static_cast<double>(view.size());
  };
}

}  // namespace

SplitMetric mean_nll_metric() {
  return contribution_mean([](const PredictionRecord& r) {
    return -std::log(latent::clamp_prob(r.probs.at(r.true_class - 1)));
  });
}

SplitMetric mean_brier_metric(int collapse_class) {
  return contribution_mean([collapse_class](const PredictionRecord& r) {
    const double u = p_unfavorable(r, collapse_class);
    const double truth = is_unfavorable(r, collapse_class) ? 1.0 : 0.0;
    return (u - truth) * (u - truth);
  });
}

SplitMetric mean_rps_metric() {
  return contribution_mean([](const PredictionRecord& r) {
    const int K = static_cast<int>(r.probs.size());
    double cum = 0.0, rps = 0.0;
    for (int k = 1; k <= K - 1; ++k) {
      cum += r.probs[k - 1];
      const double ind = r.true_class <= k ? 1.0 : 0.0;
      rps += (cum - ind) * (cum - ind);
    }
    return rps / static_cast<double>(K - 1);
  });
}

SplitMetric auc_metric(int collapse_class) {
  return [collapse_class](const RecordView& view) -> std::optional<double> {
    std::vector<std::pair<double, bool>> scored;
    std::size_t n_pos = 0;
    for (const auto* r : view) {
      const bool pos = is_unfavorable(*r, collapse_class);
      scored.push_back({p_unfavorable(*r, collapse_class), pos});
      n_pos += pos;
    }
    const std::size_t n_neg = scored.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;  // missing, not 0.5
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    // Midranks over tied scores.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < scored.size()) {
      std::size_t j = i;
      while (j < scored.size() && scored[j].first == scored[i].first) ++j;
      const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
      for (std::size_t k = i; k < j; ++k)
        if (scored[k].second) rank_sum_pos += midrank;
      i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
  };
}

SplitMetric binary_accuracy_metric(int collapse_class) {
  return contribution_mean([collapse_class](const PredictionRecord& r) {
    const bool predicted = p_unfavorable(r, collapse_class) > 0.5;
    return predicted == is_unfavorable(r, collapse_class) ? 1.0 : 0.0;
  });
}

SplitMetric argmax_accuracy_metric() {
  return contribution_mean([](const PredictionRecord& r) {
    return argmax_class(r) == r.true_class ? 1.0 : 0.0;
  });
}

SplitMetric qwk_metric() {
  return [](const RecordView& view) -> std::optional<double> {
    if (view.empty()) return std::nullopt;
    const int K = static_cast<int>(view.front()->probs.size());
    std::vector<double> obs(K * K, 0.0);
    std::vector<double> row(K, 0.0), col(K, 0.0);
    for (const auto* r : view) {
      const int a = r->true_class - 1;
      const int b = argmax_class(*r) - 1;
      obs[a * K + b] += 1.0;
      row[a] += 1.0;
      col[b] += 1.0;
    }
    const double n = static_cast<double>(view.size());
    const double denom_scale = static_cast<double>((K - 1) * (K - 1));
    double num = 0.0, den = 0.0;
    for (int a = 0; a < K; ++a)
      for (int b = 0; b < K; ++b) {
        const double w = static_cast<double>((a - b) * (a - b)) / denom_scale;
        num += w * obs[a * K + b];
        den += w * row[a] * col[b] / n;
      }
    if (den == 0.0) return std::nullopt;  // both raters constant
    return 1.0 - num / den;
  };
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

namespace {

struct SplitGroups {
  std::vector<int> ids;
  std::vector<RecordView> views;
};

SplitGroups grouped(const std::vector<PredictionRecord>& records) {
  SplitGroups g;
  for (auto& [sid, view] : by_split(records)) {
    g.ids.push_back(sid);
    g.views.push_back(std::move(view));
  }
  return g;
}

std::optional<double> average_over_splits(const std::vector<std::optional<double>>& vals) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& v : vals)
    if (v) {
      s += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

}  // namespace

MetricResult bootstrap_metric(const std::string& name,
                              const std::vector<PredictionRecord>& records,
                              const SplitMetric& metric, std::size_t B,
                              std::uint64_t seed) {
  if (B < 1) throw ConfigError("bootstrap: B must be >= 1");
  SplitGroups groups = grouped(records);
  MetricResult res;
  res.metric = name;
  res.splits = groups.ids;
  for (const auto& view : groups.views) res.per_split.push_back(metric(view));
  res.pooled = average_over_splits(res.per_split);

  std::vector<double> averages;
  averages.reserve(B);
  RecordView resampled;
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, 0xB007, b));
    std::vector<std::optional<double>> vals;
    for (const auto& view : groups.views) {
      resampled.clear();
      for (std::size_t i = 0; i < view.size(); ++i)
        resampled.push_back(view[rng.below(view.size())]);
      vals.push_back(metric(resampled));
    }
    if (auto avg = average_over_splits(vals)) averages.push_back(*avg);
  }
  if (!averages.empty()) {
    res.lo = quantile(averages, 0.025);
    res.med = quantile(averages, 0.5);
    res.hi = quantile(averages, 0.975);
  }
  return res;
}

MetricResult relative_to_benchmark(const std::string& name,
                                   const std::vector<PredictionRecord>& model,
                                   const std::vector<PredictionRecord>& benchmark,
                                   const SplitMetric& metric, std::size_t B,
                                   std::uint64_t seed) {
  SplitGroups mg = grouped(model);
  SplitGroups bg = grouped(benchmark);
  if (mg.ids != bg.ids)
    throw ConfigError("relative: model and benchmark cover different splits");
  for (std::size_t s = 0; s < mg.views.size(); ++s) {
    if (mg.views[s].size() != bg.views[s].size())
      throw ConfigError(cat("relative: split ", mg.ids[s],
                            " has mismatched record counts"));
    for (std::size_t i = 0; i < mg.views[s].size(); ++i)
      if (mg.views[s][i]->id != bg.views[s][i]->id)
        throw ConfigError(cat("relative: split ", mg.ids[s],
                              " has mismatched observation ids"));
  }

  MetricResult res;
  res.metric = name;
  res.splits = mg.ids;
  for (std::size_t s = 0; s < mg.views.size(); ++s) {
    auto a = metric(mg.views[s]);
    auto b = metric(bg.views[s]);
    if (a && b)
      res.per_split.push_back(*a - *b);
    else
      res.per_split.push_back(std::nullopt);
  }
  res.pooled = average_over_splits(res.per_split);

  // Paired resampling: the same bootstrap indices evaluate both record sets,
  // so identical records give exactly zero-width intervals.
  std::vector<double> averages;
  RecordView ra, rb;
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, 0x12E1, b));
    std::vector<std::optional<double>> vals;
    for (std::size_t s = 0; s < mg.views.size(); ++s) {
      ra.clear();
      rb.clear();
      for (std::size_t i = 0; i < mg.views[s].size(); ++i) {
        const std::size_t pick = rng.below(mg.views[s].size());
        ra.push_back(mg.views[s][pick]);
        rb.push_back(bg.views[s][pick]);
      }
      auto va = metric(ra);
      auto vb = metric(rb);
      if (va && vb)
        vals.push_back(*va - *vb);
      else
        vals.push_back(std::nullopt);
    }
    if (auto avg = average_over_splits(vals)) averages.push_back(*avg);
  }
  if (!averages.empty()) {
    res.lo = quantile(averages, 0.025);
    res.med = quantile(averages, 0.5);
    res.hi = quantile(averages, 0.975);
  }
  return res;
}

namespace {

CalibrationCurve curve_from_scores(const std::vector<double>& scores,
                                   const std::vector<double>& outcomes) {
  std::vector<double> edges{quantile(scores, 0.25), quantile(scores, 0.5),
                            quantile(scores, 0.75)};
  std::string note;
  std::vector<double> unique_edges;
  for (double e : edges)
    if (unique_edges.empty() || e > unique_edges.back()) unique_edges.push_back(e);
  if (unique_edges.size() != edges.size())
    note = cat("merged ", edges.size() - unique_edges.size(), " duplicate bin edges");

  CalibrationCurve curve;
  curve.note = note;
  curve.bins.assign(unique_edges.size() + 1, CalibrationBin{});
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::size_t bin = 0;
    while (bin < unique_edges.size() && scores[i] > unique_edges[bin]) ++bin;
    curve.bins[bin].mean_predicted += scores[i];
    curve.bins[bin].observed += outcomes[i];
    curve.bins[bin].count += 1;
  }
  for (auto& b : curve.bins) {
    if (b.count > 0) {
      b.mean_predicted /= static_cast<double>(b.count);
      b.observed /= static_cast<double>(b.count);
    }
  }
  return curve;
}

CalibrationCurve average_curves(const std::vector<CalibrationCurve>& curves) {
  CalibrationCurve pooled;
  std::size_t max_bins = 0;
  for (const auto& c : curves) max_bins = std::max(max_bins, c.bins.size());
  pooled.bins.assign(max_bins, CalibrationBin{});
  std::vector<std::size_t> contributors(max_bins, 0);
  for (const auto& c : curves)
    for (std::size_t b = 0; b < c.bins.size(); ++b) {
      if (c.bins[b].count == 0) continue;
      pooled.bins[b].mean_predicted += c.bins[b].mean_predicted;
      pooled.bins[b].observed += c.bins[b].observed;
      pooled.bins[b].count += c.bins[b].count;
      ++contributors[b];
    }
  for (std::size_t b = 0; b < max_bins; ++b)
    if (contributors[b] > 0) {
      pooled.bins[b].mean_predicted /= static_cast<double>(contributors[b]);
      pooled.bins[b].observed /= static_cast<double>(contributors[b]);
    }
  return pooled;
}

}  // namespace

CalibrationTable calibration_binary(const std::vector<PredictionRecord>& records,
                                    int collapse_class) {
  SplitGroups groups = grouped(records);
  CalibrationTable table;
  table.splits = groups.ids;
  for (const auto& view : groups.views) {
    if (view.size() < 8)
      throw ConfigError(cat("calibration: needs at least 8 observations per split, "
                            "got ", view.size()));
    std::vector<double> scores, outcomes;
    for (const auto* r : view) {
      scores.push_back(p_unfavorable(*r, collapse_class));
      outcomes.push_back(is_unfavorable(*r, collapse_class) ? 1.0 : 0.0);
    }
    table.per_split.push_back(curve_from_scores(scores, outcomes));
  }
  table.pooled = average_curves(table.per_split);
  return table;
}

CalibrationTable calibration_ordinal(const std::vector<PredictionRecord>& records) {
  SplitGroups groups = grouped(records);
  CalibrationTable table;
  table.splits = groups.ids;
  for (const auto& view : groups.views) {
    if (view.size() < 8)
      throw ConfigError(cat("calibration: needs at least 8 observations per split, "
                            "got ", view.size()));
    const int K = static_cast<int>(view.front()->probs.size());
    std::vector<CalibrationCurve> class_curves;
    for (int k = 1; k <= K; ++k) {
      std::vector<double> scores, outcomes;
      for (const auto* r : view) {
        scores.push_back(r->probs[k - 1]);  // one-vs-rest probability
        outcomes.push_back(r->true_class == k ? 1.0 : 0.0);
      }
      class_curves.push_back(curve_from_scores(scores, outcomes));
    }
    table.per_split.push_back(average_curves(class_curves));
  }
  table.pooled = average_curves(table.per_split);
  return table;
}

CoefficientSummary pool_coefficients(const std::vector<std::string>& names,
                                     const std::vector<std::vector<double>>& pool,
                                     std::size_t B, std::uint64_t seed) {
  if (pool.empty()) throw ConfigError("pool_coefficients: empty pool");
  for (const auto& row : pool)
    if (row.size() != names.size())
      throw ConfigError("pool_coefficients: row width does not match names");
  CoefficientSummary s;
  s.names = names;
  const std::size_t p = names.size(), n = pool.size();
  for (std::size_t j = 0; j < p; ++j) {
    double m = 0.0;
    for (const auto& row : pool) m += row[j];
    s.estimate.push_back(m / static_cast<double>(n));
  }
  std::vector<std::vector<double>> draws(p);
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng(derive_seed(seed, 0xC0EF, b));
    std::vector<double> mean(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = pool[rng.below(n)];
      for (std::size_t j = 0; j < p; ++j) mean[j] += row[j];
    }
    for (std::size_t j = 0; j < p; ++j)
      draws[j].push_back(mean[j] / static_cast<double>(n));
  }
  for (std::size_t j = 0; j < p; ++j) {
    s.lo.push_back(quantile(draws[j], 0.025));
    s.med.push_back(quantile(draws[j], 0.5));
    s.hi.push_back(quantile(draws[j], 0.975));
  }
  return s;
}

}  // namespace dtm::evaluate
