#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dtm/data.hpp"
#include "dtm/trafo.hpp"
#include "test_util.hpp"

using namespace dtm;
using namespace dtm::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("dtm_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

TabularSchema simple_schema() {
  TabularSchema s;
  ColumnSpec age;
  age.name = "age";
  ColumnSpec sex;
  sex.name = "sex";
  sex.kind = ColumnSpec::Kind::kCategorical;
  ColumnSpec y;
  y.name = "y";
  y.role = ColumnSpec::Role::kOutcome;
  s.columns = {age, sex, y};
  return s;
}

}  // namespace

TEST_CASE("binary factor encodes to a single dummy column") {
  auto dir = temp_dir("encode");
  write_file(dir / "t.csv", "age,sex,y\n61,no,0\n72,yes,1\n55,no,2\n80,yes,1\n");
  auto table = ingest_tabular(dir / "t.csv", simple_schema());
  CHECK(table.p == 2);
  CHECK(table.feature_names == std::vector<std::string>{"age", "sex_yes"});
  CHECK(table.row(0)[1] == 0.0);
  CHECK(table.row(1)[1] == 1.0);
  CHECK(table.class_count == 3);
  CHECK(table.y == std::vector<int>{1, 2, 3, 2});
}

TEST_CASE("multi-level factor gets levels-minus-one dummies, reference all zero") {
  auto dir = temp_dir("mrs");
  std::string csv = "mrs_bl,y\n";
  for (int i = 0; i < 10; ++i)
    csv += std::to_string(i % 5) + "," + std::to_string(i % 3) + "\n";
  write_file(dir / "t.csv", csv);
  TabularSchema s;
  ColumnSpec mrs;
  mrs.name = "mrs_bl";
  mrs.kind = ColumnSpec::Kind::kCategorical;
  ColumnSpec y;
  y.name = "y";
  y.role = ColumnSpec::Role::kOutcome;
  s.columns = {mrs, y};
  auto table = ingest_tabular(dir / "t.csv", s);
  // five observed levels 0..4 -> 4 dummy columns
  CHECK(table.p == 4);
  for (std::size_t i = 0; i < table.n; ++i) {
    int ones = 0;
    for (std::size_t j = 0; j < table.p; ++j) {
      CHECK((table.row(i)[j] == 0.0 || table.row(i)[j] == 1.0));
      ones += table.row(i)[j] == 1.0;
    }
    CHECK(ones <= 1);
  }
  CHECK(table.row(0)[0] == 0.0);  // level "0" is the reference
}

TEST_CASE("ingestion errors") {
  auto dir = temp_dir("errs");
  SUBCASE("missing value is a hard error") {
    write_file(dir / "t.csv", "age,sex,y\n61,,0\n");
    CHECK_THROWS_AS(ingest_tabular(dir / "t.csv", simple_schema()), DataError);
  }
  SUBCASE("unknown level at prediction time") {
    write_file(dir / "t.csv", "age,sex,y\n61,no,0\n72,yes,1\n");
    auto table = ingest_tabular(dir / "t.csv", simple_schema());
    CHECK_THROWS_AS(
        encode_row(table.schema, {"age", "sex", "y"}, {"50", "maybe", "0"}),
        DataError);
  }
  SUBCASE("non-integer outcome") {
    write_file(dir / "t.csv", "age,sex,y\n61,no,0.5\n");
    CHECK_THROWS_AS(ingest_tabular(dir / "t.csv", simple_schema()), DataError);
  }
}

TEST_CASE("standardization") {
  auto dir = temp_dir("std");
  write_file(dir / "t.csv",
             "age,sex,y\n60,no,0\n70,yes,1\n80,no,2\n90,yes,0\n40,no,1\n");
  auto table = ingest_tabular(dir / "t.csv", simple_schema());

  SUBCASE("train-only statistics, dummies untouched") {
    std::vector<std::size_t> train{0, 1, 2};
    auto st = Standardizer::fit(table, train);
    // mean/sd computed from rows 0..2 only
    CHECK(st.mean[0] == doctest::Approx(70.0));
    CHECK(st.sd[0] == doctest::Approx(10.0));
    CHECK(st.active[1] == 0);
    auto full = Standardizer::fit(table, {0, 1, 2, 3, 4});
    CHECK(full.mean[0] != st.mean[0]);

    auto row = st.apply({80.0, 1.0});
    CHECK(row[0] == doctest::Approx(1.0));
    CHECK(row[1] == 1.0);
  }

  SUBCASE("round trip recovers raw values") {
    auto st = Standardizer::fit(table, {0, 1, 2, 3, 4});
    for (std::size_t i = 0; i < table.n; ++i) {
      auto z = st.apply({table.row(i)[0], table.row(i)[1]});
      CHECK_NEAR(st.destandardize(0, z[0]), table.row(i)[0], 1e-10);
    }
  }

  SUBCASE("constant column demands exclusion") {
    write_file(dir / "c.csv", "age,sex,y\n60,no,0\n60,yes,1\n60,no,2\n");
    auto bad = ingest_tabular(dir / "c.csv", simple_schema());
    try {
      Standardizer::fit(bad, {0, 1, 2});
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("age") != std::string::npos);
    }
  }
}

TEST_CASE("vox binary format") {
  auto dir = temp_dir("vox");

  SUBCASE("2x2x2 zero volume is 48 bytes") {
    VoxelVolume v;
    v.extents = {2, 2, 2};
    v.voxels.assign(8, 0.0f);
    write_vox(dir / "z.vox", v);
    CHECK(fs::file_size(dir / "z.vox") == 48);
  }

  SUBCASE("cohort-scale header implies a 1,835,008-byte payload") {
    VoxelVolume v;
    v.extents = {128, 128, 28};
    v.voxels.assign(v.size(), 0.0f);
    write_vox(dir / "big.vox", v);
    CHECK(fs::file_size(dir / "big.vox") == 16 + 1835008);
  }

  SUBCASE("round trip is bit exact") {
    Rng rng(3);
    VoxelVolume v;
    v.extents = {3, 4, 5};
    for (std::size_t i = 0; i < 60; ++i)
      v.voxels.push_back(static_cast<float>(rng.normal()));
    write_vox(dir / "r.vox", v);
    auto back = read_vox(dir / "r.vox");
    CHECK(back.extents == v.extents);
    REQUIRE(back.voxels.size() == v.voxels.size());
    for (std::size_t i = 0; i < 60; ++i)
      CHECK(std::memcmp(&back.voxels[i], &v.voxels[i], 4) == 0);
  }

  SUBCASE("distinct errors for magic, truncation and overflow") {
    write_file(dir / "bad.vox", "NOPE....");
    try {
      read_vox(dir / "bad.vox");
      FAIL("");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }

    VoxelVolume v;
    v.extents = {2, 2, 2};
    v.voxels.assign(8, 1.0f);
    write_vox(dir / "t.vox", v);
    {
      std::ifstream in(dir / "t.vox", std::ios::binary);
      std::string buf(30, '\0');
      in.read(buf.data(), 30);
      std::ofstream out(dir / "trunc.vox", std::ios::binary);
      out.write(buf.data(), 30);
    }
    try {
      read_vox(dir / "trunc.vox");
      FAIL("");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    {
      std::ofstream out(dir / "huge.vox", std::ios::binary);
      out.write("VOX1", 4);
      std::uint32_t ext[3] = {70000, 70000, 70000};
      out.write(reinterpret_cast<char*>(ext), 12);
    }
    try {
      read_vox(dir / "huge.vox");
      FAIL("");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("overflow") != std::string::npos);
    }
  }
}

TEST_CASE("synthetic generator") {
  SUBCASE("fixed seed reproduces the dataset exactly") {
    SyntheticSpec spec;
    spec.n = 50;
    spec.beta = {1.0, -0.5};
    spec.w_img = 0.5;
    spec.extents = {6, 6, 4};
    spec.seed = 99;
    auto a = generate_synthetic(spec);
    auto b = generate_synthetic(spec);
    CHECK(a.table.x == b.table.x);
    CHECK(a.table.y == b.table.y);
    for (std::size_t i = 0; i < a.volumes.size(); ++i)
      CHECK(a.volumes[i].voxels == b.volumes[i].voxels);
  }

  SUBCASE("volumes are normalized to zero mean unit variance") {
    SyntheticSpec spec;
    spec.n = 8;
    spec.beta = {0.5};
    spec.w_img = 1.0;
    spec.extents = {8, 8, 4};
    auto ds = generate_synthetic(spec);
    for (const auto& v : ds.volumes) {
      double m = 0.0;
      for (float x : v.voxels) m += x;
      m /= static_cast<double>(v.size());
      double ss = 0.0;
      for (float x : v.voxels) ss += (x - m) * (x - m);
      const double sd = std::sqrt(ss / static_cast<double>(v.size()));
      CHECK(std::fabs(m) < 1e-3);
      CHECK(std::fabs(sd - 1.0) < 1e-2);
    }
  }

  SUBCASE("null model frequencies match the target law (chi-squared)") {
    SyntheticSpec spec;
    spec.n = 100000;
    spec.class_count = 7;
    spec.class_freqs = {0.452, 0.216, 0.147, 0.061, 0.049, 0.012, 0.063};
    spec.seed = 4;
    auto ds = generate_synthetic(spec);
    std::vector<double> counts(7, 0.0);
    for (int y : ds.table.y) counts[y - 1] += 1.0;
    double chi2 = 0.0;
    for (int k = 0; k < 7; ++k) {
      const double expect = spec.class_freqs[k] * static_cast<double>(spec.n);
      chi2 += (counts[k] - expect) * (counts[k] - expect) / expect;
    }
    CHECK(chi2 < 22.458);  // chi-squared df=6 upper 0.001 quantile
  }

  SUBCASE("stored true probabilities match conditional frequencies") {
    SyntheticSpec spec;
    spec.n = 20000;
    spec.class_count = 4;
    spec.beta = {1.0};
    spec.seed = 11;
    auto ds = generate_synthetic(spec);
    // Stratify on the single covariate; within each stratum the observed
    // class-1 share must sit within 4 binomial sd of the mean true p1.
    const double edges[5] = {-10.0, -0.7, 0.0, 0.7, 10.0};
    for (int b = 0; b < 4; ++b) {
      double p_sum = 0.0, hits = 0.0, count = 0.0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const double x = ds.table.row(i)[0];
        if (x <= edges[b] || x > edges[b + 1]) continue;
        count += 1.0;
        p_sum += ds.true_probs[i][0];
        hits += ds.table.y[i] == 1;
      }
      REQUIRE(count > 100);
      const double expect = p_sum / count;
      const double se = std::sqrt(expect * (1.0 - expect) / count);
      CHECK(std::fabs(hits / count - expect) < 4.0 * se);
    }
  }
}

TEST_CASE("dataset files round trip through manifest loading") {
  SyntheticSpec spec;
  spec.n = 12;
  spec.beta = {1.0, -0.5};
  spec.w_img = 0.8;
  spec.extents = {4, 4, 2};
  spec.factor_levels = 3;
  spec.factor_beta = {0.4, -0.2};
  spec.seed = 21;
  auto ds = generate_synthetic(spec);

  auto dir = temp_dir("roundtrip");
  write_dataset(ds, dir);

  DatasetConfig cfg;
  cfg.manifest = dir / "manifest.csv";
  cfg.outcome = "y";
  cfg.id = "id";
  cfg.categorical = {{"f", {}}};
  cfg.class_count = 7;
  auto back = load_dataset(cfg);

  REQUIRE(back.size() == ds.size());
  CHECK(back.table.feature_names == ds.table.feature_names);
  CHECK(back.table.y == ds.table.y);
  CHECK(back.table.ids == ds.table.ids);
  for (std::size_t i = 0; i < ds.table.x.size(); ++i)
    CHECK(back.table.x[i] == ds.table.x[i]);
  REQUIRE(back.volumes.size() == ds.volumes.size());
  for (std::size_t i = 0; i < ds.volumes.size(); ++i)
    CHECK(back.volumes[i].voxels == ds.volumes[i].voxels);
}
