#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "dtm/netcore/adam.hpp"
#include "dtm/train.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dtm;
using namespace dtm::train;
using models::ModelSpec;

namespace {

SplitIndices trivial_split(std::size_t n) {
  SplitIndices s;
  for (std::size_t i = 0; i < n; ++i) s.train.push_back(i);
  s.val = s.train;
  return s;
}

}  // namespace

TEST_CASE("make_splits") {
  SUBCASE("sizes follow the floor arithmetic") {
    SplitPlan plan;
    plan.count = 1;
    auto s10 = make_splits(10, plan);
    CHECK(s10[0].train.size() == 8);
    CHECK(s10[0].val.size() == 1);
    CHECK(s10[0].test.size() == 1);

    auto s407 = make_splits(407, plan);
    CHECK(s407[0].train.size() == 325);
    CHECK(s407[0].val.size() == 40);
    CHECK(s407[0].test.size() == 42);
  }

  SUBCASE("index lists partition the dataset") {
    SplitPlan plan;
    plan.count = 6;
    for (const auto& s : make_splits(101, plan)) {
      std::set<std::size_t> seen;
      for (const auto* part : {&s.train, &s.val, &s.test})
        for (std::size_t i : *part) {
          CHECK(i < 101);
          CHECK(seen.insert(i).second);
        }
      CHECK(seen.size() == 101);
    }
  }

  SUBCASE("same seed reproduces identical splits") {
    SplitPlan plan;
    plan.count = 3;
    plan.master_seed = 42;
    auto a = make_splits(50, plan);
    auto b = make_splits(50, plan);
    for (int s = 0; s < 3; ++s) {
      CHECK(a[s].train == b[s].train);
      CHECK(a[s].test == b[s].test);
    }
  }

  SUBCASE("too small a dataset is rejected") {
    CHECK_THROWS_AS(make_splits(9, SplitPlan{}), ConfigError);
  }
}

TEST_CASE("augmentation") {
  data::VoxelVolume v;
  v.extents = {8, 8, 3};
  Rng fill(5);
  for (std::size_t i = 0; i < v.size(); ++i)
    v.voxels.push_back(static_cast<float>(fill.normal()));

  SUBCASE("all-zero parameters reproduce the volume bit for bit") {
    AugmentationParams none;
    none.rotation_deg = 0.0;
    none.width_shift = 0.0;
    none.height_shift = 0.0;
    none.shear = 0.0;
    none.zoom = 0.0;
    Rng rng(1);
    auto out = augment(v, none, rng);
    CHECK(out.voxels == v.voxels);
  }

  SUBCASE("constant volumes are invariant under any transform") {
    data::VoxelVolume c;
    c.extents = {6, 5, 2};
    c.voxels.assign(c.size(), 3.25f);
    AugmentationParams params;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      auto out = augment(c, params, rng);
      CHECK(out.voxels == c.voxels);
    }
  }

  SUBCASE("fixed seed gives identical output; slices transform identically") {
    AugmentationParams params;
    Rng r1(17), r2(17);
    auto a = augment(v, params, r1);
    auto b = augment(v, params, r2);
    CHECK(a.voxels == b.voxels);

    // A second volume whose slice 2 equals slice 0 of v must map that way too.
    data::VoxelVolume w = v;
    for (std::size_t p = 0; p < 64; ++p) w.voxels[p * 3 + 2] = w.voxels[p * 3];
    Rng r3(17);
    auto c = augment(w, params, r3);
    for (std::size_t p = 0; p < 64; ++p) CHECK(c.voxels[p * 3 + 2] == c.voxels[p * 3]);
  }
}

TEST_CASE("one optimizer step on a single observation decreases its NLL") {
  data::SyntheticSpec sgen;
  sgen.n = 4;
  sgen.beta = {1.0, -0.5};
  sgen.seed = 3;
  auto ds = data::generate_synthetic(sgen);

  auto spec = ModelSpec::preset("SI-LS_x");
  models::ModelGraph mg = models::build_graph(spec, ds.table.feature_names,
                                              {0, 0, 0}, 2);
  auto st = data::Standardizer::fit(ds.table, {0, 1, 2, 3});
  models::bind_batch(mg, ds, st, {0});
  const double before = mg.graph.forward(mg.loss)[0];
  auto grads = mg.graph.backward(mg.loss);
  netcore::Adam opt(1e-3);
  opt.step(mg.graph, grads);
  models::bind_batch(mg, ds, st, {0});
  const double after = mg.graph.forward(mg.loss)[0];
  CHECK(after < before);
}

TEST_CASE("SI fit reproduces training class frequencies (multinomial MLE)") {
  data::SyntheticSpec sgen;
  sgen.n = 407;
  sgen.class_count = 7;
  sgen.class_freqs = {0.452, 0.216, 0.147, 0.061, 0.049, 0.012, 0.063};
  sgen.beta = {0.5};
  sgen.seed = 8;
  auto ds = data::generate_synthetic(sgen);

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 407;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.seed = 4;
  cfg.augment = false;
  auto fitted = train::fit(ModelSpec::preset("SI"), ds, trivial_split(ds.size()), cfg);

  auto mle = testutil::multinomial_mle(ds.table.y, 7);
  auto probs = models::predict_probs(fitted, ds, {0});
  for (int k = 0; k < 7; ++k) CHECK_NEAR(probs[0][k], mle[k], 1e-3);
}

TEST_CASE("early stopping returns the epoch with minimum validation NLL") {
  data::SyntheticSpec sgen;
  sgen.n = 60;
  sgen.beta = {1.0};
  sgen.seed = 15;
  auto ds = data::generate_synthetic(sgen);

  SplitPlan plan;
  plan.count = 1;
  plan.master_seed = 2;
  auto split = make_splits(ds.size(), plan)[0];

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 8;
  cfg.max_epochs = 40;
  cfg.patience = 10;
  cfg.seed = 5;
  cfg.augment = false;
  auto fitted = train::fit(ModelSpec::preset("SI-LS_x"), ds, split, cfg, nullptr, 0);

  REQUIRE(!fitted.meta.history.empty());
  double min_val = std::numeric_limits<double>::infinity();
  for (const auto& h : fitted.meta.history) min_val = std::min(min_val, h.val_nll);
  CHECK_NEAR(fitted.meta.best_val_nll, min_val, 1e-12);

  // The restored parameters actually achieve that validation NLL.
  auto probs = models::predict_probs(fitted, ds, split.val);
  double nll = 0.0;
  for (std::size_t i = 0; i < split.val.size(); ++i)
    nll -= std::log(probs[i][ds.table.y[split.val[i]] - 1]);
  nll /= static_cast<double>(split.val.size());
  CHECK_NEAR(nll, fitted.meta.best_val_nll, 1e-9);
}

TEST_CASE("SI-LS_x recovers proportional-odds coefficients on synthetic data") {
  data::SyntheticSpec sgen;
  sgen.n = 2000;
  sgen.class_count = 7;
  sgen.class_freqs = {0.452, 0.216, 0.147, 0.061, 0.049, 0.012, 0.063};
  sgen.beta = {1.0, -0.5, 0.0};
  sgen.seed = 2024;
  auto ds = data::generate_synthetic(sgen);

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 250;
  cfg.max_epochs = 400;
  cfg.patience = 400;
  cfg.seed = 1;
  cfg.augment = false;
  auto fitted = train::fit(ModelSpec::preset("SI-LS_x"), ds, trivial_split(ds.size()),
                           cfg);
  auto coef = models::log_odds_ratios(fitted);
  // Covariates are standardized before fitting, so coefficients live on the
  // sd scale of the training data; rescale back for the comparison.
  for (std::size_t j = 0; j < coef.values.size(); ++j) {
    const double beta_raw = coef.values[j] / fitted.standardizer.sd[j];
    CHECK_NEAR(beta_raw, sgen.beta[j], 0.1);
  }
}

TEST_CASE("divergent training aborts with a diagnostic") {
  data::SyntheticSpec sgen;
  sgen.n = 20;
  sgen.beta = {1.0};
  sgen.seed = 7;
  auto ds = data::generate_synthetic(sgen);
  TrainConfig cfg;
  cfg.learning_rate = 1e150;
  cfg.batch_size = 4;
  cfg.max_epochs = 5;
  cfg.patience = 5;
  cfg.augment = false;
  try {
    train::fit(ModelSpec::preset("SI-LS_x"), ds, trivial_split(ds.size()), cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.patience = cfg.max_epochs + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(TrainConfig{}.learning_rate == 5e-5);
  CHECK(TrainConfig{}.batch_size == 6);
}
