#include <cmath>
#include <limits>

#include "doctest.h"
#include "dtm/netcore/ops.hpp"
#include "dtm/trafo.hpp"
#include "test_util.hpp"

using namespace dtm;
using namespace dtm::trafo;
using latent::Kind;
using netcore::Graph;
using netcore::NodeId;
using netcore::Tensor;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("cutpoints stay strictly increasing for any gammas") {
  Rng rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> gammas(6);
    for (double& g : gammas) g = 2.0 * rng.normal();
    auto cv = CutpointVector::from_gammas(gammas);
    for (std::size_t k = 1; k < cv.thetas.size(); ++k)
      CHECK(cv.thetas[k] > cv.thetas[k - 1]);
  }
}

TEST_CASE("cutpoints round-trip through thetas") {
  auto cv = CutpointVector::from_thetas({-1.0, 0.25, 2.5});
  auto back = CutpointVector::from_gammas(cv.gammas);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(back.thetas[k] == doctest::Approx(cv.thetas[k]).epsilon(1e-14));
  CHECK_THROWS_AS(CutpointVector::from_thetas({0.0, 0.0}), NumericError);
}

TEST_CASE("ordinal class probabilities") {
  SUBCASE("symmetric binary case") {
    auto p = ordinal_class_probs(CutpointVector::from_thetas({0.0}), 0.0,
                                 Kind::kLogistic);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("cutpoints at the cohort's cumulative frequencies reproduce them") {
    const std::vector<double> cum{0.452, 0.668, 0.815, 0.876, 0.925, 0.937};
    std::vector<double> thetas;
    for (double c : cum) thetas.push_back(latent::quantile(Kind::kLogistic, c));
    auto p = ordinal_class_probs(CutpointVector::from_thetas(thetas), 0.0,
                                 Kind::kLogistic);
    const std::vector<double> prev{0.452, 0.216, 0.147, 0.061, 0.049, 0.012, 0.061};
    REQUIRE(p.size() == 7);
    for (std::size_t k = 0; k < 7; ++k)
      CHECK_NEAR(p[k], prev[k], 2.5e-3);
    double s = 0.0;
    for (double v : p) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("shifted three-class case") {
    auto p = ordinal_class_probs(CutpointVector::from_thetas({-1.0, 1.0}), 1.0,
                                 Kind::kLogistic);
    CHECK(p[0] == doctest::Approx(0.11920292202211755).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.3807970779778824).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("probabilities sum to one for random parameters") {
    Rng rng(7);
    for (int rep = 0; rep < 100; ++rep) {
      // Construction keeps every shifted cutpoint within +-5, where no
      // latent tail falls below the clamp floor.
      std::vector<double> gammas(6);
      gammas[0] = rng.uniform(-3.0, -2.0);
      for (std::size_t j = 1; j < 6; ++j) gammas[j] = rng.uniform(-1.0, 0.0);
      const double shift = rng.uniform(-2.0, 2.0);
      for (Kind k : {Kind::kLogistic, Kind::kNormal, Kind::kMinExtreme}) {
        auto p = ordinal_class_probs(CutpointVector::from_gammas(gammas), shift, k);
        double s = 0.0;
        for (double v : p) {
          CHECK(v > 0.0);
          s += v;
        }
        CHECK_NEAR(s, 1.0, 1e-12);
      }
    }
  }

  SUBCASE("sum stays within the clamp budget for extreme parameters") {
    Rng rng(8);
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> gammas(6);
      for (double& g : gammas) g = 2.0 * rng.normal();
      const double shift = 8.0 * rng.normal();
      for (Kind k : {Kind::kLogistic, Kind::kNormal, Kind::kMinExtreme}) {
        auto p = ordinal_class_probs(CutpointVector::from_gammas(gammas), shift, k);
        double s = 0.0;
        for (double v : p) {
          CHECK(v >= latent::kProbFloor);
          s += v;
        }
        CHECK_NEAR(s, 1.0, 8.0 * latent::kProbFloor);
      }
    }
  }

  SUBCASE("larger shifts push mass to higher classes") {
    auto cv = CutpointVector::from_thetas({-1.0, 0.0, 1.0});
    for (double s1 = -2.0; s1 < 2.0; s1 += 0.5) {
      auto lo = ordinal_class_probs(cv, s1, Kind::kLogistic);
      auto hi = ordinal_class_probs(cv, s1 + 0.5, Kind::kLogistic);
      double cum_lo = 0.0, cum_hi = 0.0;
      for (std::size_t k = 0; k + 1 < lo.size(); ++k) {
        cum_lo += lo[k];
        cum_hi += hi[k];
        CHECK(cum_hi < cum_lo);
      }
    }
  }
}

TEST_CASE("nll aggregation") {
  CHECK(nll(std::vector<double>(5, std::log(1.0 / 7.0))) ==
        doctest::Approx(std::log(7.0)).epsilon(1e-12));
  // A clamped perfect prediction keeps the NLL finite and ~0.
  const double perfect = std::log(latent::clamp_prob(1.0));
  CHECK(nll({perfect}) >= 0.0);
  CHECK(nll({perfect}) < 1e-9);
  CHECK(nll({std::log(0.5), std::log(0.25)}) ==
        doctest::Approx(1.0397207708399179).epsilon(1e-12));
  CHECK_THROWS_AS(nll({}), NumericError);
}

TEST_CASE("bernstein transformation") {
  SUBCASE("linear precision: coefficients j/P give h(y) = y") {
    const std::size_t P = 6;
    std::vector<double> raw(P + 1);
    raw[0] = 0.0;
    for (std::size_t j = 1; j <= P; ++j) raw[j] = std::log(1.0 / P);
    auto basis = BernsteinBasis::create(P, raw, 0.0, 1.0);
    for (double y = 0.0; y <= 1.0; y += 0.125) {
      CHECK_NEAR(basis.value(y), y, 1e-12);
      CHECK(basis.derivative(y) == doctest::Approx(1.0).epsilon(1e-12));
    }
    // log density of the latent itself, since h is the identity: the exact
    // value is log(expit(0.5) * (1 - expit(0.5))).
    CHECK(exact_log_density(basis, 0.0, 0.5, Kind::kLogistic) ==
          doctest::Approx(-1.4481539683602134).epsilon(1e-12));
  }

  SUBCASE("h is non-decreasing for random parameters") {
    Rng rng(19);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> raw(7);
      for (double& r : raw) r = rng.normal();
      auto basis = BernsteinBasis::create(6, raw, -2.0, 3.0);
      double prev = -kInf;
      for (double y = -2.0; y <= 3.0; y += 0.05) {
        const double h = basis.value(y);
        CHECK(h >= prev);
        CHECK(basis.derivative(y) > 0.0);
        prev = h;
      }
      // exp-increments exclude the degenerate constant-h region
      auto c = basis.coefficients();
      for (std::size_t j = 1; j < c.size(); ++j) CHECK(c[j] > c[j - 1]);
    }
  }

  SUBCASE("boundary values equal the first and last coefficients") {
    auto basis = BernsteinBasis::create(4, {0.3, -1.0, 0.2, -0.5, 1.1}, -1.0, 2.0);
    auto c = basis.coefficients();
    CHECK(basis.value(-1.0) == doctest::Approx(c.front()).epsilon(1e-12));
    CHECK(basis.value(2.0) == doctest::Approx(c.back()).epsilon(1e-12));
  }

  SUBCASE("shift enters through the latent density only") {
    auto basis = BernsteinBasis::create(6, {0.1, -0.3, 0.4, 0.0, -0.2, 0.3, 0.1},
                                        0.0, 4.0);
    for (double s : {-2.0, 0.0, 2.0}) {
      const double y = 1.7;
      const double direct = latent::log_pdf(Kind::kLogistic, basis.value(y) - s) +
                            std::log(basis.derivative(y));
      CHECK(exact_log_density(basis, s, y, Kind::kLogistic) ==
            doctest::Approx(direct).epsilon(1e-12));
    }
  }

  SUBCASE("outcomes outside the support are clamped with a warning") {
    auto basis = BernsteinBasis::create(3, {0.0, 0.0, 0.0, 0.0}, 0.0, 1.0);
    std::size_t warnings = 0;
    const double inside = exact_log_density(basis, 0.0, 1.0, Kind::kLogistic, &warnings);
    CHECK(warnings == 0);
    const double outside = exact_log_density(basis, 0.0, 1.5, Kind::kLogistic, &warnings);
    CHECK(warnings == 1);
    CHECK(outside == inside);
  }

  SUBCASE("support from a sample expands by one percent per side") {
    auto basis = BernsteinBasis::for_sample(6, {1.0, 3.0, 2.0});
    CHECK(basis.lower == doctest::Approx(0.98));
    CHECK(basis.upper == doctest::Approx(3.02));
  }
}

TEST_CASE("censored log probabilities") {
  CHECK(censored_log_prob(kInf, -kInf, Kind::kLogistic) == doctest::Approx(0.0));
  CHECK(censored_log_prob(0.0, -kInf, Kind::kLogistic) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(censored_log_prob(1.0, -1.0, Kind::kLogistic) ==
        doctest::Approx(-0.7719368329053047).epsilon(1e-12));
  CHECK_THROWS_AS(censored_log_prob(-1.0, 1.0, Kind::kLogistic), NumericError);
}

TEST_CASE("binary collapse") {
  SUBCASE("sums across the cut") {
    auto [fav, unfav] =
        collapse_to_binary({0.4, 0.3, 0.1, 0.1, 0.05, 0.03, 0.02}, 3);
    CHECK(fav == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(unfav == doctest::Approx(0.2).epsilon(1e-12));
  }

  SUBCASE("uniform distribution") {
    auto [fav, unfav] = collapse_to_binary(std::vector<double>(7, 1.0 / 7.0), 3);
    CHECK(fav == doctest::Approx(3.0 / 7.0).epsilon(1e-12));
    CHECK(unfav == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  }

  SUBCASE("cut class must be interior") {
    std::vector<double> p(7, 1.0 / 7.0);
    CHECK_THROWS_AS(collapse_to_binary(p, 0), ConfigError);
    CHECK_THROWS_AS(collapse_to_binary(p, 7), ConfigError);
  }

  SUBCASE("matches the censored likelihood at the cutpoint") {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> gammas(6);
      for (double& g : gammas) g = rng.normal();
      const double shift = rng.normal();
      auto cv = CutpointVector::from_gammas(gammas);
      auto probs = ordinal_class_probs(cv, shift, Kind::kLogistic);
      for (int c = 1; c <= 6; ++c) {
        auto [fav, unfav] = collapse_to_binary(probs, c);
        const double log_fav =
            censored_log_prob(cv.thetas[c - 1] - shift, -kInf, Kind::kLogistic);
        CHECK_NEAR(fav, std::exp(log_fav), 1e-12);
        const double F = latent::cdf(Kind::kLogistic, cv.thetas[c - 1] - shift);
        CHECK_NEAR(unfav, 1.0 - F, 1e-12);
      }
    }
  }
}

TEST_CASE("ordinal NLL graph node") {
  SUBCASE("values agree with the pure likelihood path") {
    Graph g;
    NodeId gamma = g.parameter("gamma", Tensor({1, 6}, {0.1, -0.5, 0.3, 0.0, -1.0, 0.4}));
    // broadcast the single gamma row across a 3-row batch via dense on ones
    Graph g2;
    NodeId ones = g2.input("ones");
    NodeId gw = g2.parameter("gamma", Tensor({1, 6}, {0.1, -0.5, 0.3, 0.0, -1.0, 0.4}));
    NodeId gm = netcore::dense(g2, ones, gw);
    NodeId theta = cutpoint_map(g2, gm);
    NodeId labels = g2.input("labels");
    NodeId loss = ordinal_nll(g2, theta, labels, Kind::kLogistic);
    g2.bind("ones", Tensor::full({3, 1}, 1.0));
    g2.bind("labels", Tensor({3}, {1.0, 4.0, 7.0}));
    const double node_nll = g2.forward(loss)[0];

    auto cv = CutpointVector::from_gammas({0.1, -0.5, 0.3, 0.0, -1.0, 0.4});
    auto probs = ordinal_class_probs(cv, 0.0, Kind::kLogistic);
    const double direct =
        nll({std::log(probs[0]), std::log(probs[3]), std::log(probs[6])});
    CHECK(node_nll == doctest::Approx(direct).epsilon(1e-14));
    (void)gamma;
  }

  SUBCASE("gradients of the NLL match finite differences") {
    Graph g(3);
    NodeId ones = g.input("ones");
    NodeId x = g.input("x");
    Rng init(12);
    NodeId gw = g.parameter("si.w", testutil::random_tensor({1, 6}, init, 0.5));
    NodeId beta = g.parameter("ls.w", testutil::random_tensor({3, 1}, init, 0.5));
    NodeId gamma = netcore::dense(g, ones, gw);
    NodeId theta = cutpoint_map(g, gamma);
    NodeId shift = netcore::dense(g, x, beta);
    NodeId shifted = netcore::rowwise_sub(g, theta, shift);
    NodeId labels = g.input("labels");
    NodeId loss = ordinal_nll(g, shifted, labels, Kind::kLogistic);

    Rng data(77);
    Tensor xv = testutil::random_tensor({8, 3}, data);
    Tensor lv({8});
    for (std::size_t i = 0; i < 8; ++i) lv[i] = 1.0 + static_cast<double>(data.below(7));
    auto rebind = [&] {
      g.bind("ones", Tensor::full({8, 1}, 1.0));
      g.bind("x", xv);
      g.bind("labels", lv);
    };
    auto res = testutil::fd_gradcheck(g, loss, rebind, 24);
    CHECK(res.checked > 0);
    CHECK(res.max_err < 1e-4);
  }

  SUBCASE("per-input cutpoint map supports complex intercepts") {
    Graph g;
    NodeId gamma_in = g.input("gamma");
    NodeId theta = cutpoint_map(g, gamma_in);
    g.bind("gamma", Tensor({2, 3}, {0.0, 0.0, 0.0, 1.0, -1.0, 0.5}));
    const Tensor& th = g.forward(theta);
    CHECK(th.at({0, 0}) == doctest::Approx(0.0));
    CHECK(th.at({0, 1}) == doctest::Approx(1.0));
    CHECK(th.at({0, 2}) == doctest::Approx(2.0));
    CHECK(th.at({1, 0}) == doctest::Approx(1.0));
    CHECK(th.at({1, 1}) == doctest::Approx(1.0 + std::exp(-1.0)));
    CHECK(th.at({1, 2}) == doctest::Approx(1.0 + std::exp(-1.0) + std::exp(0.5)));
  }
}
