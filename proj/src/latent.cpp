#include "dtm/latent.hpp"

#include <cmath>

#include "dtm/common.hpp"

namespace dtm::latent {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kSqrt2 = 1.4142135623730950488016887242097;

// Acklam's rational approximation to the standard normal quantile,
// refined below with one Halley step against the erfc-based cdf.
double norm_quantile_approx(double p) {
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

double norm_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

double norm_pdf(double z) { return std::exp(-0.5 * z * z - 0.5 * kLog2Pi); }

}  // namespace

double cdf(Kind k, double z) {
  switch (k) {
    case Kind::kLogistic:
      return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                      : std::exp(z) / (1.0 + std::exp(z));
    case Kind::kNormal:
      return norm_cdf(z);
    case Kind::kMinExtreme:
      return -std::expm1(-std::exp(z));
  }
  return 0.0;
}

double pdf(Kind k, double z) {
  switch (k) {
    case Kind::kLogistic: {
      const double e = std::exp(-std::fabs(z));
      const double d = 1.0 + e;
      return e / (d * d);
    }
    case Kind::kNormal:
      return norm_pdf(z);
    case Kind::kMinExtreme:
      return std::exp(z - std::exp(z));
  }
  return 0.0;
}

double log_pdf(Kind k, double z) {
  switch (k) {
    case Kind::kLogistic: {
      // Density is symmetric; evaluate at -|z| to avoid overflow.
      const double a = std::fabs(z);
      return -a - 2.0 * std::log1p(std::exp(-a));
    }
    case Kind::kNormal:
      return -0.5 * z * z - 0.5 * kLog2Pi;
    case Kind::kMinExtreme:
      return z - std::exp(z);
  }
  return 0.0;
}

double quantile(Kind k, double p) {
  if (!(p > 0.0 && p < 1.0))
    throw NumericError(cat("quantile: p = ", p, " outside (0,1)"));
  switch (k) {
    case Kind::kLogistic:
      return std::log(p) - std::log1p(-p);
    case Kind::kNormal: {
      double x = norm_quantile_approx(p);
      // One Halley step; skip where exp(x^2/2) would overflow (unreachable
      // for p produced by clamped probabilities).
      if (0.5 * x * x < 700.0) {
        const double e = norm_cdf(x) - p;
        const double u = e * std::sqrt(2.0 * 3.14159265358979323846) *
                         std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
      }
      return x;
    }
    case Kind::kMinExtreme:
      return std::log(-std::log1p(-p));
  }
  return 0.0;
}

std::string_view interpretation(Kind k) {
  switch (k) {
    case Kind::kLogistic: return "log-odds-ratio";
    case Kind::kNormal: return "probit-shift";
    case Kind::kMinExtreme: return "log-hazard-ratio";
  }
  return "";
}

std::string_view name(Kind k) {
  switch (k) {
    case Kind::kLogistic: return "logistic";
    case Kind::kNormal: return "normal";
    case Kind::kMinExtreme: return "mev";
  }
  return "";
}

Kind from_name(std::string_view n) {
  if (n == "logistic") return Kind::kLogistic;
  if (n == "normal") return Kind::kNormal;
  if (n == "mev") return Kind::kMinExtreme;
  throw ConfigError(cat("unknown latent distribution '", std::string(n), "'"));
}

}  // namespace dtm::latent
