#pragma once

#include <string>
#include <string_view>

namespace dtm::latent {

/// Reference distributions F_Z. All are parameter-free with log-concave
/// densities; the choice fixes the interpretation scale of shift terms.
enum class Kind { kLogistic, kNormal, kMinExtreme };

/// Shared clamp applied to probabilities before taking logarithms inside
/// likelihoods, keeping every NLL finite.
inline constexpr double kProbFloor = 1e-12;
inline constexpr double kProbCeil = 1.0 - 1e-12;

double cdf(Kind k, double z);
double pdf(Kind k, double z);
/// Numerically stable log density (no overflow for |z| <= 700).
double log_pdf(Kind k, double z);
/// Inverse cdf; p must lie in (0,1). The normal branch uses a rational
/// approximation refined to |error| well below 1e-9.
double quantile(Kind k, double p);

std::string_view interpretation(Kind k);
std::string_view name(Kind k);
Kind from_name(std::string_view n);

inline double clamp_prob(double p) {
  if (p < kProbFloor) return kProbFloor;
  if (p > kProbCeil) return kProbCeil;
  return p;
}

}  // namespace dtm::latent
