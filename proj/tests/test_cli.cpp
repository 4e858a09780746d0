#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "dtm/cli.hpp"
#include "test_util.hpp"

using namespace dtm;
namespace fs = std::filesystem;

#ifndef DTM_BINARY
#define DTM_BINARY "./dtm"
#endif

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DTM_BINARY) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("dtm_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A small tabular-only run: simulate, fit SI and SI-LS_x, evaluate both.
struct Workspace {
  fs::path dir;
  std::string data_cfg;
};

Workspace make_workspace(const std::string& tag, std::uint64_t seed) {
  Workspace ws;
  ws.dir = fresh_dir(tag);
  write_file(ws.dir / "sim.json", R"({
    "seed": )" + std::to_string(seed) + R"(,
    "out": ")" + (ws.dir / "run").string() + R"(",
    "generate": {"n": 160, "class_count": 7, "beta": [1.0, -0.5],
                 "class_freqs": [0.452, 0.216, 0.147, 0.061, 0.049, 0.012, 0.063],
                 "seed": )" + std::to_string(seed) + R"(}
  })");
  REQUIRE(run_cli("simulate --config " + (ws.dir / "sim.json").string()) == 0);
  ws.data_cfg = R"("dataset": {"manifest": ")" +
                (ws.dir / "run" / "data" / "manifest.csv").string() +
                R"(", "outcome": "y", "id": "id", "class_count": 7})";
  return ws;
}

}  // namespace

TEST_CASE("cli pipeline: simulate, fit, evaluate") {
  auto ws = make_workspace("pipe", 3);

  write_file(ws.dir / "fit_si.json", R"({
    "seed": 3,
    "out": ")" + (ws.dir / "run").string() + R"(",
    )" + ws.data_cfg + R"(,
    "model": {"name": "SI"},
    "train": {"learning_rate": 0.05, "batch_size": 64, "max_epochs": 60,
              "patience": 60, "augment": false},
    "splits": {"count": 2}
  })");
  REQUIRE(run_cli("fit --config " + (ws.dir / "fit_si.json").string()) == 0);
  CHECK(fs::exists(ws.dir / "run" / "models" / "SI_split0.dtm"));
  CHECK(fs::exists(ws.dir / "run" / "models" / "SI_split1.dtm"));
  CHECK(fs::exists(ws.dir / "run" / "history" / "SI_split0.csv"));

  write_file(ws.dir / "fit_ls.json", R"({
    "seed": 3,
    "out": ")" + (ws.dir / "run").string() + R"(",
    )" + ws.data_cfg + R"(,
    "model": {"name": "SI-LS_x"},
    "train": {"learning_rate": 0.05, "batch_size": 64, "max_epochs": 60,
              "patience": 60, "augment": false},
    "splits": {"count": 2}
  })");
  REQUIRE(run_cli("fit --config " + (ws.dir / "fit_ls.json").string()) == 0);

  write_file(ws.dir / "eval.json", R"({
    "seed": 3,
    "out": ")" + (ws.dir / "run" / "eval").string() + R"(",
    )" + ws.data_cfg + R"(,
    "splits": {"count": 2},
    "evaluate": {"models": [")" + (ws.dir / "run" / "models" / "SI_split0.dtm").string() +
              R"(", ")" + (ws.dir / "run" / "models" / "SI_split1.dtm").string() +
              R"(", ")" + (ws.dir / "run" / "models" / "SI-LS_x_split0.dtm").string() +
              R"(", ")" + (ws.dir / "run" / "models" / "SI-LS_x_split1.dtm").string() +
              R"("], "benchmark": "SI-LS_x"}
  })");
  REQUIRE(run_cli("evaluate --config " + (ws.dir / "eval.json").string()) == 0);

  const std::string metrics = slurp(ws.dir / "run" / "eval" / "metrics_binary.csv");
  CHECK(metrics.find("SI,auc") != std::string::npos);

  // The unconditional model predicts a constant: AUC is exactly one half.
  std::istringstream lines(metrics);
  std::string line;
  bool found = false;
  while (std::getline(lines, line)) {
    if (line.rfind("SI,auc,", 0) == 0) {
      const auto pos = line.rfind(',');
      const std::string value = line.substr(pos + 1);
      if (value == "NA") continue;  // single-class test split: missing, not 0.5
      found = true;
      CHECK(std::stod(value) == 0.5);
    }
  }
  CHECK(found);
  CHECK(fs::exists(ws.dir / "run" / "eval" / "summary_ordinal.csv"));
  CHECK(fs::exists(ws.dir / "run" / "eval" / "calibration_binary.csv"));
  CHECK(fs::exists(ws.dir / "run" / "eval" / "coefficients.csv"));
  CHECK(fs::exists(ws.dir / "run" / "eval" / "summary.json"));

  SUBCASE("reports parse back losslessly") {
    std::istringstream again(metrics);
    std::getline(again, line);  // header
    while (std::getline(again, line)) {
      const auto pos = line.rfind(',');
      const std::string field = line.substr(pos + 1);
      if (field == "NA") continue;
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", std::stod(field));
      CHECK(field == buf);
    }
  }
}

TEST_CASE("cli determinism: same config and seed give byte-identical reports") {
  auto ws = make_workspace("det", 11);
  for (const char* run : {"a", "b"}) {
    write_file(ws.dir / (std::string("fit_") + run + ".json"), R"({
      "seed": 11,
      "out": ")" + (ws.dir / run).string() + R"(",
      )" + ws.data_cfg + R"(,
      "model": {"name": "SI-LS_x"},
      "train": {"learning_rate": 0.05, "batch_size": 16, "max_epochs": 30,
                "patience": 30, "augment": false},
      "splits": {"count": 2}
    })");
    REQUIRE(run_cli(std::string("fit --config ") +
                    (ws.dir / (std::string("fit_") + run + ".json")).string()) == 0);
    write_file(ws.dir / (std::string("eval_") + run + ".json"), R"({
      "seed": 11,
      "out": ")" + (ws.dir / run / "eval").string() + R"(",
      )" + ws.data_cfg + R"(,
      "splits": {"count": 2},
      "evaluate": {"models": [")" +
                   (ws.dir / run / "models" / "SI-LS_x_split0.dtm").string() + R"(", ")" +
                   (ws.dir / run / "models" / "SI-LS_x_split1.dtm").string() + R"("]}
    })");
    REQUIRE(run_cli(std::string("evaluate --config ") +
                    (ws.dir / (std::string("eval_") + run + ".json")).string()) == 0);
  }
  for (const char* f : {"metrics_ordinal.csv", "summary_ordinal.csv",
                        "metrics_binary.csv", "summary_binary.csv",
                        "calibration_binary.csv", "coefficients.csv",
                        "summary.json"}) {
    CHECK(slurp(ws.dir / "a" / "eval" / f) == slurp(ws.dir / "b" / "eval" / f));
  }
  CHECK(slurp(ws.dir / "a" / "models" / "SI-LS_x_split0.dtm") ==
        slurp(ws.dir / "b" / "models" / "SI-LS_x_split0.dtm"));
}

TEST_CASE("cli exit codes") {
  auto dir = fresh_dir("exit");

  SUBCASE("unknown config keys exit with 2") {
    write_file(dir / "bad.json", R"({"seed": 1, "typo_key": true})");
    CHECK(run_cli("fit --config " + (dir / "bad.json").string()) == 2);
  }

  SUBCASE("missing files exit with 2") {
    write_file(dir / "miss.json", R"({
      "seed": 1, "out": ")" + (dir / "out").string() + R"(",
      "dataset": {"manifest": ")" + (dir / "nope.csv").string() + R"("},
      "model": {"name": "SI"}
    })");
    CHECK(run_cli("fit --config " + (dir / "miss.json").string()) == 2);
    CHECK(run_cli("fit --config " + (dir / "not_there.json").string()) == 2);
  }

  SUBCASE("malformed json exits with 2") {
    write_file(dir / "syntax.json", "{nope");
    CHECK(run_cli("fit --config " + (dir / "syntax.json").string()) == 2);
  }

  SUBCASE("training divergence exits with 3") {
    auto ws = make_workspace("diverge", 5);
    write_file(ws.dir / "fit.json", R"({
      "seed": 5,
      "out": ")" + (ws.dir / "run2").string() + R"(",
      )" + ws.data_cfg + R"(,
      "model": {"name": "SI-LS_x"},
      "train": {"learning_rate": 1e150, "batch_size": 16, "max_epochs": 5,
                "patience": 5, "augment": false},
      "splits": {"count": 1}
    })");
    CHECK(run_cli("fit --config " + (ws.dir / "fit.json").string()) == 3);
  }
}

TEST_CASE("cli subsample driver emits the sample-size table") {
  auto ws = make_workspace("subs", 17);
  write_file(ws.dir / "sub.json", R"({
    "seed": 17,
    "out": ")" + (ws.dir / "sub").string() + R"(",
    )" + ws.data_cfg + R"(,
    "train": {"learning_rate": 0.05, "batch_size": 32, "max_epochs": 20,
              "patience": 20, "augment": false},
    "subsample": {"model_a": "SI", "model_b": "SI", "repeats": 2,
                  "sizes": [20, 26, 34, 45, 60, 90, 160]}
  })");
  REQUIRE(run_cli("subsample --config " + (ws.dir / "sub.json").string()) == 0);
  std::ifstream in(ws.dir / "sub" / "subsample.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "size,split,nll_SI,nll_SI,nllr");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    // identical model pair: the NLLR column is exactly zero
    CHECK(line.substr(line.rfind(',') + 1) == "0");
  }
  CHECK(rows == 7 * 2);
}

TEST_CASE("cli effect-curve exports grid data") {
  auto ws = make_workspace("curve", 23);
  write_file(ws.dir / "fit.json", R"({
    "seed": 23,
    "out": ")" + (ws.dir / "run").string() + R"(",
    )" + ws.data_cfg + R"(,
    "model": {"name": "SI-CS_age-LS_x~", "cs_feature": "x1"},
    "train": {"learning_rate": 0.02, "batch_size": 16, "max_epochs": 15,
              "patience": 15, "augment": false},
    "splits": {"count": 1}
  })");
  REQUIRE(run_cli("fit --config " + (ws.dir / "fit.json").string()) == 0);

  write_file(ws.dir / "lin.json", R"({
    "seed": 23,
    "out": ")" + (ws.dir / "run").string() + R"(",
    )" + ws.data_cfg + R"(,
    "model": {"name": "SI-LS_x"},
    "train": {"learning_rate": 0.05, "batch_size": 16, "max_epochs": 15,
              "patience": 15, "augment": false},
    "splits": {"count": 1}
  })");
  REQUIRE(run_cli("fit --config " + (ws.dir / "lin.json").string()) == 0);

  write_file(ws.dir / "curve.json", R"({
    "seed": 23,
    "out": ")" + (ws.dir / "curve_out").string() + R"(",
    )" + ws.data_cfg + R"(,
    "train": {"learning_rate": 0.02, "batch_size": 16, "max_epochs": 10,
              "patience": 10, "augment": false},
    "effect_curve": {"model": ")" +
                 (ws.dir / "run" / "models" / "SI-CS_age-LS_x__split0.dtm").string() +
                 R"(", "feature": "x1", "grid_min": -2, "grid_max": 2,
                 "grid_points": 21, "bootstrap": 3,
                 "linear_model": ")" +
                 (ws.dir / "run" / "models" / "SI-LS_x_split0.dtm").string() + R"("}
  })");
  REQUIRE(run_cli("effect-curve --config " + (ws.dir / "curve.json").string()) == 0);

  std::ifstream in(ws.dir / "curve_out" / "effect_curve.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "curve,grid,value");
  std::size_t effect_rows = 0, linear_rows = 0, boot_rows = 0;
  double effect_mean = 0.0;
  while (std::getline(in, line)) {
    if (line.rfind("effect,", 0) == 0) {
      ++effect_rows;
      effect_mean += std::stod(line.substr(line.rfind(',') + 1));
    }
    if (line.rfind("linear,", 0) == 0) ++linear_rows;
    if (line.rfind("boot", 0) == 0) ++boot_rows;
  }
  CHECK(effect_rows == 21);
  CHECK(linear_rows == 21);
  CHECK(boot_rows == 3 * 21);
  CHECK_NEAR(effect_mean / 21.0, 0.0, 1e-9);  // mean-centered
}
