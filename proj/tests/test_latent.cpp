#include <cmath>

#include "doctest.h"
#include "dtm/common.hpp"
#include "dtm/latent.hpp"
#include "test_util.hpp"

using namespace dtm;
using latent::Kind;

namespace {
const Kind kAll[] = {Kind::kLogistic, Kind::kNormal, Kind::kMinExtreme};
}

TEST_CASE("cdf reference values") {
  CHECK(latent::cdf(Kind::kLogistic, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(latent::cdf(Kind::kMinExtreme, 0.0) ==
        doctest::Approx(0.6321205588285577).epsilon(1e-12));
  CHECK(latent::cdf(Kind::kLogistic, std::log(3.0)) ==
        doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("log_pdf reference values and stable tails") {
  CHECK(latent::log_pdf(Kind::kLogistic, 0.0) ==
        doctest::Approx(std::log(0.25)).epsilon(1e-12));
  CHECK(latent::log_pdf(Kind::kNormal, 0.0) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  // High-precision evaluation of log f(z) = -z - 2 log(1 + e^{-z}) at z = 50.
  CHECK(latent::log_pdf(Kind::kLogistic, 50.0) == doctest::Approx(-50.0).epsilon(1e-10));
  CHECK(std::isfinite(latent::log_pdf(Kind::kLogistic, 700.0)));
  CHECK(std::isfinite(latent::log_pdf(Kind::kLogistic, -700.0)));
  CHECK(std::isfinite(latent::log_pdf(Kind::kMinExtreme, 700.0)));
  CHECK(std::isfinite(latent::log_pdf(Kind::kNormal, -700.0)));
}

TEST_CASE("quantile reference values") {
  CHECK(latent::quantile(Kind::kLogistic, 0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(latent::quantile(Kind::kLogistic, 0.75) ==
        doctest::Approx(1.0986122886681098).epsilon(1e-12));
  // Against a high-precision inverse-erf evaluation.
  CHECK(latent::quantile(Kind::kNormal, 0.975) ==
        doctest::Approx(1.959963984540054).epsilon(1e-9));
  CHECK_THROWS_AS(latent::quantile(Kind::kLogistic, 0.0), NumericError);
  CHECK_THROWS_AS(latent::quantile(Kind::kNormal, 1.0), NumericError);
  CHECK_THROWS_AS(latent::quantile(Kind::kMinExtreme, -0.5), NumericError);
}

TEST_CASE("cdf is strictly increasing onto (0,1)") {
  // Grids stop where the upper tail is no longer representable in doubles
  // (values would round to exactly 1.0).
  auto check_grid = [](Kind k, double lo, double hi) {
    double prev = -1.0;
    for (double z = lo; z <= hi; z += 0.0625) {
      const double c = latent::cdf(k, z);
      CHECK(c > 0.0);
      CHECK(c < 1.0);
      CHECK(c > prev);
      prev = c;
    }
  };
  check_grid(Kind::kLogistic, -10.0, 10.0);
  check_grid(Kind::kNormal, -8.0, 8.0);
  check_grid(Kind::kMinExtreme, -10.0, 3.0);
}

TEST_CASE("pdf matches the cdf derivative by finite differences") {
  const double h = 1e-5;
  for (Kind k : kAll) {
    for (double z = -8.0; z <= 8.0; z += 0.25) {
      const double fd = (latent::cdf(k, z + h) - latent::cdf(k, z - h)) / (2.0 * h);
      CHECK_NEAR(latent::pdf(k, z), fd, 1e-6);
    }
  }
}

TEST_CASE("quantile inverts the cdf on |z| <= 10") {
  // Near p = 1 the round trip is limited by the double spacing of p itself
  // (error ~ eps/pdf(z)), so the strict check applies while p <= 1 - 1e-6.
  for (Kind k : kAll) {
    for (double z = -10.0; z <= 10.0; z += 0.25) {
      const double p = latent::cdf(k, z);
      if (p <= 0.0 || p > 1.0 - 1e-6) continue;
      CHECK_NEAR(latent::quantile(k, p), z, 1e-8);
    }
    for (double z = -3.0; z <= 3.0; z += 0.125) {
      const double p = latent::cdf(k, z);
      if (p > 1.0 - 1e-4) continue;  // spacing of p dominates beyond this
      CHECK_NEAR(latent::quantile(k, p), z, 1e-10);
    }
  }
}

TEST_CASE("interpretation scale is fixed per distribution") {
  CHECK(latent::interpretation(Kind::kLogistic) == "log-odds-ratio");
  CHECK(latent::interpretation(Kind::kMinExtreme) == "log-hazard-ratio");
  CHECK(latent::interpretation(Kind::kNormal) == "probit-shift");
}

TEST_CASE("distributions are selected by name") {
  CHECK(latent::from_name("logistic") == Kind::kLogistic);
  CHECK(latent::from_name("normal") == Kind::kNormal);
  CHECK(latent::from_name("mev") == Kind::kMinExtreme);
  CHECK_THROWS_AS(latent::from_name("cauchy"), ConfigError);
}
