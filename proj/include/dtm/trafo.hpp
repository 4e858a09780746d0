#pragma once

#include <functional>
#include <vector>

#include "dtm/latent.hpp"
#include "dtm/netcore/graph.hpp"

namespace dtm::trafo {

/// K-1 ordered cutpoints derived from unconstrained reals:
/// theta_1 = gamma_1, theta_k = theta_{k-1} + exp(gamma_k). The map keeps
/// theta strictly increasing for any gamma, so optimization stays
/// unconstrained. Boundary values theta_0 = -inf, theta_K = +inf are
/// implicit.
struct CutpointVector {
  std::vector<double> gammas;
  std::vector<double> thetas;

  static CutpointVector from_gammas(std::vector<double> gammas);
  static CutpointVector from_thetas(const std::vector<double>& thetas);
  std::size_t class_count() const { return thetas.size() + 1; }
};

/// Monotone Bernstein expansion of a continuous transformation h on
/// [lower, upper]. Coefficients derive from unconstrained parameters as
/// first-raw plus exp-increments, so h is strictly increasing.
struct BernsteinBasis {
  std::size_t order = 6;
  std::vector<double> raw;   // order+1 unconstrained parameters
  double lower = 0.0, upper = 1.0;

  static BernsteinBasis create(std::size_t order, std::vector<double> raw,
                               double lower, double upper);
  /// Support from observed outcomes, expanded by 1% on each side.
  static BernsteinBasis for_sample(std::size_t order, const std::vector<double>& y);

  std::vector<double> coefficients() const;
  double value(double y) const;
  double derivative(double y) const;
};

struct OrdinalObservation {
  int class_index = 1;  // 1..K
  int class_count = 2;
};

struct CensoredObservation {
  double lower;  // may be -inf
  double upper;  // may be +inf
};

/// Class probabilities p_k = F_Z(theta_k - shift) - F_Z(theta_{k-1} - shift),
/// clamped away from 0/1; sums to 1 before clamping.
std::vector<double> ordinal_class_probs(const CutpointVector& cutpoints,
                                        double shift, latent::Kind dist);

/// Same, but from pre-shifted cutpoints (theta_k - shift already applied).
std::vector<double> ordinal_probs_from_shifted(const std::vector<double>& shifted,
                                               latent::Kind dist);

/// -(1/n) sum of log-likelihood contributions. Errors on empty input.
double nll(const std::vector<double>& log_likelihoods);

/// log f_Y(y) = log f_Z(h(y) - shift) + log h'(y) for an exact continuous
/// observation. Outcomes outside the support are clamped to it; the optional
/// counter records how often that happened.
double exact_log_density(const BernsteinBasis& basis, double shift, double y,
                         latent::Kind dist, std::size_t* clamp_warnings = nullptr);

/// log of the probability mass F_Z(h_upper) - F_Z(h_lower) of an interval
/// observation, with +-inf boundaries allowed.
double censored_log_prob(double h_at_upper, double h_at_lower, latent::Kind dist);

/// Splits a probability vector after class `cut_after` (1-based) into
/// (favorable, unfavorable) sums.
std::pair<double, double> collapse_to_binary(const std::vector<double>& probs,
                                             int cut_after);

// Graph nodes shared with netcore so the full model NLL is differentiable
// end to end.

/// gamma (n,m) -> theta (n,m) via the monotone first-raw/exp-increment map.
netcore::NodeId cutpoint_map(netcore::Graph& g, netcore::NodeId gamma);

/// Mean negative log-likelihood of ordinal observations. `shifted` holds the
/// already-shifted cutpoints (n, K-1); `labels` is an (n) tensor of class
/// indices 1..K.
netcore::NodeId ordinal_nll(netcore::Graph& g, netcore::NodeId shifted,
                            netcore::NodeId labels, latent::Kind dist);

}  // namespace dtm::trafo
