#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtm/data.hpp"
#include "dtm/ensemble.hpp"
#include "dtm/evaluate.hpp"
#include "dtm/models.hpp"
#include "dtm/train.hpp"

namespace dtm::cli {

/// Parsed run configuration. Unknown keys anywhere in the document are
/// rejected; all referenced paths are checked when a command needs them.
struct RunConfig {
  std::uint64_t seed = 1;
  unsigned workers = 0;  // 0: DTM_WORKERS env var, else hardware
  std::filesystem::path out = "runs/out";

  data::DatasetConfig dataset;
  bool has_dataset = false;

  models::ModelSpec::Options model_options;
  std::string model_name;

  train::TrainConfig train;
  train::SplitPlan splits;

  std::size_t ensemble_members = 5;
  bool warm_start = true;

  data::SyntheticSpec generate;
  bool has_generate = false;

  std::vector<std::filesystem::path> evaluate_models;
  std::string benchmark;  // model name for relative tables

  std::string subsample_model_a, subsample_model_b;
  std::vector<std::size_t> subsample_sizes;  // empty: geometric default
  int subsample_repeats = 30;

  std::filesystem::path curve_model;
  std::string curve_feature = "age";
  double curve_min = -2.0, curve_max = 2.0;
  std::size_t curve_points = 41;
  std::size_t curve_bootstrap = 0;
  std::filesystem::path curve_linear_model;

  std::filesystem::path config_dir;  // directory of the config file
};

RunConfig load_config(const std::filesystem::path& path);

/// Resolved worker count: explicit > DTM_WORKERS > hardware concurrency.
unsigned resolve_workers(const RunConfig& cfg);

/// Runs fn(0..count-1) on a fixed-size thread pool. Results must not depend
/// on scheduling; exceptions are rethrown (first by task index).
void parallel_tasks(std::size_t count, unsigned workers,
                    const std::function<void(std::size_t)>& fn);

// Subcommands. Each writes its reports under cfg.out and throws on error
// (ConfigError/DataError -> exit 2, NumericError -> exit 3 in the binary).
void cmd_simulate(const RunConfig& cfg);
void cmd_fit(const RunConfig& cfg);
void cmd_ensemble(const RunConfig& cfg);
void cmd_evaluate(const RunConfig& cfg);
void cmd_subsample(const RunConfig& cfg);
void cmd_effect_curve(const RunConfig& cfg);

// Reusable pieces (the acceptance suite drives the same code paths).

models::ModelSpec spec_from_config(const RunConfig& cfg, const std::string& name);

std::uint64_t model_train_seed(std::uint64_t master, const std::string& model,
                               int split, int member);

struct SplitFit {
  int split = 0;
  std::vector<models::FittedModel> members;  // size 1 for single fits
};

/// Fits `name` on every split: a single fit, or a warm-started M-member
/// ensemble when `members` > 1 and the model has image terms. The reference
/// SI-LS_x fits (one per split) are reused across models via `references`.
std::vector<SplitFit> fit_model_over_splits(
    const RunConfig& cfg, const data::Dataset& ds,
    const std::vector<train::SplitIndices>& splits, const std::string& name,
    std::vector<models::FittedModel>* references);

/// Ordinal test-set prediction records for fitted models/ensembles.
std::vector<evaluate::PredictionRecord> test_records(
    const data::Dataset& ds, const std::vector<train::SplitIndices>& splits,
    const std::vector<SplitFit>& fits);

struct ProtocolResult {
  std::string model;
  std::vector<SplitFit> fits;
  std::vector<evaluate::PredictionRecord> records;
  double mean_test_nll = 0.0;
  std::vector<double> per_split_nll;
};

/// The published training protocol: every model in `names` on every split,
/// image models as warm-started ensembles. Deterministic for a fixed seed.
std::vector<ProtocolResult> run_protocol(const RunConfig& cfg,
                                         const data::Dataset& ds,
                                         const std::vector<std::string>& names);

/// Writes metric/calibration/coefficient reports for named record sets.
void write_reports(const RunConfig& cfg,
                   const std::vector<ProtocolResult>& results,
                   const std::filesystem::path& out_dir);

std::string sanitize_filename(const std::string& name);

}  // namespace dtm::cli
