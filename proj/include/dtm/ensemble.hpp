#pragma once

#include <vector>

#include "dtm/models.hpp"

namespace dtm::ensemble {

/// Members share spec, split and standardization statistics; prediction
/// averages the members' transformation functions, h_bar = (1/M) sum h_m,
/// before F_Z is applied, so the ensemble of shift models is itself a shift
/// model and coefficients stay interpretable.
struct TransformationEnsemble {
  std::vector<models::FittedModel> members;

  explicit TransformationEnsemble(std::vector<models::FittedModel> m);
  std::size_t size() const { return members.size(); }
  const models::ModelSpec& spec() const { return members.front().spec; }
};

/// Averaged shifted cutpoints h_bar for one observation.
std::vector<double> ensemble_shifted(const TransformationEnsemble& ens,
                                     const std::vector<double>& x_raw,
                                     const data::VoxelVolume* volume);

/// p_k = F_Z(h_bar_k) - F_Z(h_bar_{k-1}).
std::vector<double> ensemble_predict(const TransformationEnsemble& ens,
                                     const std::vector<double>& x_raw,
                                     const data::VoxelVolume* volume);

/// Batch version over dataset rows.
std::vector<std::vector<double>> ensemble_predict_rows(
    const TransformationEnsemble& ens, const data::Dataset& ds,
    const std::vector<std::size_t>& rows);

struct PooledCoefficients {
  std::vector<std::string> names;
  std::vector<double> mean;                       // effective ensemble coefficient
  std::vector<std::vector<double>> per_member;    // [member][feature]
  std::string interpretation;
};

/// Member-mean linear-shift coefficients; under transformation averaging the
/// mean is exactly the ensemble's effective coefficient.
PooledCoefficients ensemble_coefficients(const TransformationEnsemble& ens);

/// Initial parameters for an ensemble member: SI and LS terms copied from
/// the reference fit (feature-matched for LS subsets); everything else is
/// left to the member's own random initialization.
netcore::GradientMap warm_start(const models::ModelSpec& member_spec,
                                const std::vector<std::string>& feature_names,
                                const models::FittedModel& reference);

}  // namespace dtm::ensemble
