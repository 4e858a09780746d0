#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dtm/data.hpp"
#include "dtm/latent.hpp"
#include "dtm/netcore/graph.hpp"

namespace dtm::models {

enum class TermRole { kIntercept, kShift };
enum class TermComplexity { kSimple, kLinear, kComplex };
enum class TermInput { kNone, kTabular, kImage };

struct TermSpec {
  std::string name;  // parameter prefix: si, ls, cs_age, cs_B, ci_B
  TermRole role = TermRole::kShift;
  TermComplexity complexity = TermComplexity::kLinear;
  TermInput input = TermInput::kTabular;
  std::vector<std::string> features;  // tabular subset; empty = all predictors
  std::vector<std::string> exclude;   // removed from "all"
};

/// One row of the model zoo. `name` uses the published vocabulary
/// (SI, SI-LS_x, SI-CS_age-LS_x~, SI-CS_B, SI-CS_B-LS_x, CI_B, CI_B-LS_mRS,
/// CI_B-LS_x, CI_B-Binary).
struct ModelSpec {
  std::string name;
  int class_count = 7;
  latent::Kind latent = latent::Kind::kLogistic;
  std::vector<TermSpec> terms;
  double l2 = 1e-3;          // complex tabular shift hidden-weight penalty
  int collapse_class = 3;    // favorable outcome = classes 1..collapse_class
  std::string cs_feature = "age";

  struct Options {
    int class_count = 7;
    latent::Kind latent = latent::Kind::kLogistic;
    std::string cs_feature = "age";
    std::vector<std::string> ls_features;        // override for LS terms
    std::vector<std::string> baseline_features;  // CI_B-LS_mRS subset
    double l2 = 1e-3;
    int collapse_class = 3;
  };
  static ModelSpec preset(const std::string& name, const Options& opts);
  static ModelSpec preset(const std::string& name) {
    return preset(name, Options());
  }
  static const std::vector<std::string>& preset_names();

  const TermSpec& intercept() const;
  const TermSpec* linear_shift() const;
  const TermSpec* complex_tabular_shift() const;
  bool uses_images() const;
};

struct HistoryRow {
  int epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
};

struct TrainMeta {
  int split = -1;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double best_val_nll = 0.0;
  std::vector<HistoryRow> history;
};

struct FittedModel {
  ModelSpec spec;
  std::vector<std::string> feature_names;   // encoded training columns
  data::Standardizer standardizer;
  netcore::GradientMap params;
  TrainMeta meta;
  std::array<std::size_t, 3> volume_extents{0, 0, 0};
};

/// The spec compiled against a dataset's feature layout: one graph holding
/// every term, the monotone cutpoint map and the NLL, so training
/// backpropagates through the whole composition.
struct ModelGraph {
  netcore::Graph graph;
  netcore::NodeId gamma = 0;      // intercept network output (n, K-1)
  netcore::NodeId shifted = 0;    // theta minus all shifts (n, K-1)
  netcore::NodeId cs_out = 0;     // complex tabular shift output, if present
  netcore::NodeId nll = 0;        // data NLL
  netcore::NodeId loss = 0;       // nll plus L2 penalties
  bool needs_tabular = false;
  bool needs_image = false;
  bool has_cs = false;
  std::vector<std::size_t> ls_cols;
  std::size_t cs_col = 0;
  std::array<std::size_t, 3> volume_extents{0, 0, 0};
  int class_count = 0;
  int collapse_class = 0;
};

ModelGraph build_graph(const ModelSpec& spec,
                       const std::vector<std::string>& feature_names,
                       std::array<std::size_t, 3> volume_extents,
                       std::uint64_t init_seed);

/// Maps a dataset label to the label the model trains on (identity unless
/// the model is binary while the data is ordinal; then classes up to
/// `collapse_class` become 1 and the rest 2).
int training_label(const ModelGraph& mg, int k_data, int data_classes);

/// Binds standardized inputs (and labels unless `with_labels` is false) for
/// the given rows. `volumes` overrides the dataset volumes (augmentation).
void bind_batch(ModelGraph& mg, const data::Dataset& ds,
                const data::Standardizer& st, const std::vector<std::size_t>& rows,
                const std::vector<const data::VoxelVolume*>* volumes = nullptr,
                bool with_labels = true);

/// Class probabilities for the given rows under the fitted model.
std::vector<std::vector<double>> predict_probs(const FittedModel& fitted,
                                               const data::Dataset& ds,
                                               const std::vector<std::size_t>& rows);

/// Shifted cutpoints h(y_k|inputs) for one observation; `x_raw` is the
/// unstandardized encoded predictor row.
std::vector<double> compose_h(const FittedModel& fitted,
                              const std::vector<double>& x_raw,
                              const data::VoxelVolume* volume);

struct Coefficients {
  std::vector<std::string> names;
  std::vector<double> values;
  std::string interpretation;
};

/// Encoded-column indices feeding the linear shift term.
std::vector<std::size_t> linear_shift_columns(
    const ModelSpec& spec, const std::vector<std::string>& feature_names);

/// Linear-shift coefficients with their interpretation scale tag.
Coefficients shift_coefficients(const FittedModel& fitted);
/// Same, but insists on the logistic latent (log odds-ratios).
Coefficients log_odds_ratios(const FittedModel& fitted);

/// Complex-shift effect on a feature over a raw-unit grid, mean-centered.
std::vector<double> effect_curve(const FittedModel& fitted, const std::string& feature,
                                 const std::vector<double>& grid);

// Serialization: "DTM1" containers for models, "DTME" for ensembles.
void save_model(const FittedModel& fitted, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);
void save_ensemble(const std::vector<FittedModel>& members,
                   const std::filesystem::path& path);
std::vector<FittedModel> load_ensemble(const std::filesystem::path& path);

/// Loads either container: a model file becomes a one-member vector.
std::vector<FittedModel> load_any(const std::filesystem::path& path);

}  // namespace dtm::models
