#include "dtm/ensemble.hpp"

#include <algorithm>

#include "dtm/common.hpp"
#include "dtm/trafo.hpp"

namespace dtm::ensemble {

using models::FittedModel;
using models::ModelSpec;
using models::TermSpec;

TransformationEnsemble::TransformationEnsemble(std::vector<FittedModel> m)
    : members(std::move(m)) {
  if (members.empty()) throw ConfigError("ensemble: no members");
  const FittedModel& ref = members.front();
  for (const FittedModel& fm : members) {
    if (fm.spec.name != ref.spec.name || fm.spec.class_count != ref.spec.class_count ||
        fm.spec.latent != ref.spec.latent)
      throw ConfigError(cat("ensemble: member spec '", fm.spec.name,
                            "' does not match '", ref.spec.name, "'"));
    if (fm.feature_names != ref.feature_names)
      throw ConfigError("ensemble: members trained on different feature layouts");
    if (fm.meta.split != ref.meta.split)
      throw ConfigError("ensemble: members come from different splits");
  }
}

std::vector<double> ensemble_shifted(const TransformationEnsemble& ens,
                                     const std::vector<double>& x_raw,
                                     const data::VoxelVolume* volume) {
  std::vector<double> h_bar;
  for (const FittedModel& fm : ens.members) {
    auto h = models::compose_h(fm, x_raw, volume);
    if (h_bar.empty())
      h_bar.assign(h.size(), 0.0);
    for (std::size_t k = 0; k < h.size(); ++k) h_bar[k] += h[k];
  }
  const double inv = 1.0 / static_cast<double>(ens.size());
  for (double& v : h_bar) v *= inv;
  return h_bar;
}

std::vector<double> ensemble_predict(const TransformationEnsemble& ens,
                                     const std::vector<double>& x_raw,
                                     const data::VoxelVolume* volume) {
  return trafo::ordinal_probs_from_shifted(ensemble_shifted(ens, x_raw, volume),
                                           ens.spec().latent);
}

std::vector<std::vector<double>> ensemble_predict_rows(
    const TransformationEnsemble& ens, const data::Dataset& ds,
    const std::vector<std::size_t>& rows) {
  const std::size_t m = static_cast<std::size_t>(ens.spec().class_count) - 1;
  std::vector<std::vector<double>> h_bar(rows.size(), std::vector<double>(m, 0.0));
  for (const FittedModel& fm : ens.members) {
    models::ModelGraph mg =
        models::build_graph(fm.spec, fm.feature_names, fm.volume_extents, 0);
    mg.graph.set_parameters(fm.params);
    mg.graph.set_mode(netcore::Mode::kInference);
    models::bind_batch(mg, ds, fm.standardizer, rows, nullptr,
                       /*with_labels=*/false);
    const netcore::Tensor& shifted = mg.graph.forward(mg.shifted);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t k = 0; k < m; ++k) h_bar[i][k] += shifted[i * m + k];
  }
  const double inv = 1.0 / static_cast<double>(ens.size());
  std::vector<std::vector<double>> probs(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (double& v : h_bar[i]) v *= inv;
    probs[i] = trafo::ordinal_probs_from_shifted(h_bar[i], ens.spec().latent);
  }
  return probs;
}

PooledCoefficients ensemble_coefficients(const TransformationEnsemble& ens) {
  PooledCoefficients pooled;
  for (const FittedModel& fm : ens.members) {
    auto c = models::shift_coefficients(fm);
    if (pooled.names.empty()) {
      pooled.names = c.names;
      pooled.interpretation = c.interpretation;
      pooled.mean.assign(c.values.size(), 0.0);
    }
    for (std::size_t j = 0; j < c.values.size(); ++j) pooled.mean[j] += c.values[j];
    pooled.per_member.push_back(std::move(c.values));
  }
  for (double& v : pooled.mean) v /= static_cast<double>(ens.size());
  return pooled;
}

netcore::GradientMap warm_start(const ModelSpec& member_spec,
                                const std::vector<std::string>& feature_names,
                                const FittedModel& reference) {
  netcore::GradientMap init;

  const bool member_si =
      std::any_of(member_spec.terms.begin(), member_spec.terms.end(),
                  [](const TermSpec& t) {
                    return t.role == models::TermRole::kIntercept &&
                           t.complexity == models::TermComplexity::kSimple;
                  });
  if (member_si) {
    auto it = reference.params.find("si.dense1.w");
    if (it == reference.params.end())
      throw ConfigError(cat("warm start: reference '", reference.spec.name,
                            "' has no simple intercept"));
    if (it->second.size() !=
        static_cast<std::size_t>(member_spec.class_count) - 1)
      throw ConfigError("warm start: intercept shapes are incompatible");
    init["si.dense1.w"] = it->second;
  }

  if (const TermSpec* ls = member_spec.linear_shift()) {
    auto ref_coef = models::shift_coefficients(reference);
    const auto cols = models::linear_shift_columns(member_spec, feature_names);
    netcore::Tensor beta({cols.size(), 1});
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const std::string& f = feature_names[cols[j]];
      auto it = std::find(ref_coef.names.begin(), ref_coef.names.end(), f);
      if (it == ref_coef.names.end())
        throw ConfigError(cat("warm start: reference '", reference.spec.name,
                              "' has no coefficient for feature '", f, "'"));
      beta[j] = ref_coef.values[static_cast<std::size_t>(
          it - ref_coef.names.begin())];
    }
    init[ls->name + ".dense1.w"] = std::move(beta);
  }
  return init;
}

}  // namespace dtm::ensemble
