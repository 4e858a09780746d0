#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dtm/latent.hpp"
#include "dtm/netcore/tensor.hpp"

namespace dtm::data {

struct ColumnSpec {
  enum class Kind { kContinuous, kCategorical, kOrdinalScore };
  enum class Role { kPredictor, kOutcome, kId };
  std::string name;
  Kind kind = Kind::kContinuous;
  Role role = Role::kPredictor;
  std::vector<std::string> levels;  // categorical; fixed at ingestion
};

struct TabularSchema {
  std::vector<ColumnSpec> columns;
  const ColumnSpec* find(const std::string& name) const;
  std::size_t outcome_index() const;  // throws unless exactly one outcome
  void validate() const;
};

/// Dummy-encoded predictor matrix plus outcome classes. Categorical columns
/// expand to one 0/1 column per non-reference level; the first observed (or
/// declared) level is the reference and encodes as all zeros.
struct EncodedTable {
  std::size_t n = 0, p = 0;
  std::vector<double> x;                    // n*p, row-major, unstandardized
  std::vector<int> y;                       // 1..K
  std::vector<std::int64_t> ids;
  std::vector<std::string> feature_names;
  std::vector<std::uint8_t> standardizable;  // per encoded column
  TabularSchema schema;                      // with levels resolved
  int class_count = 0;
  int outcome_offset = 0;                    // raw outcome value of class 1

  const double* row(std::size_t i) const { return x.data() + i * p; }
};

/// Train-split standardization statistics, frozen into fitted models.
struct Standardizer {
  std::vector<double> mean, sd;
  std::vector<std::uint8_t> active;

  static Standardizer fit(const EncodedTable& table,
                          const std::vector<std::size_t>& rows);
  static Standardizer identity(std::size_t p);
  bool empty() const { return mean.empty(); }
  void apply_row(const double* in, double* out) const;
  std::vector<double> apply(const std::vector<double>& row) const;
  double destandardize(std::size_t col, double value) const;
};

struct VoxelVolume {
  std::array<std::uint32_t, 3> extents{0, 0, 0};  // (d, h, w)
  std::vector<float> voxels;                      // row-major, d*h*w

  std::size_t size() const {
    return static_cast<std::size_t>(extents[0]) * extents[1] * extents[2];
  }
  /// Shifts/scales to zero mean, unit variance in place.
  void normalize();
};

VoxelVolume read_vox(const std::filesystem::path& path);
void write_vox(const std::filesystem::path& path, const VoxelVolume& volume);

struct Dataset {
  EncodedTable table;
  std::vector<VoxelVolume> volumes;             // empty, or one per row
  std::vector<std::vector<double>> true_probs;  // synthetic ground truth
  bool has_volumes() const { return !volumes.empty(); }
  std::size_t size() const { return table.n; }
};

/// Ground-truth generator for the proportional-odds law
/// p_k = F_Z(theta_k - x'beta - w_img * s(B)); s(B) is the amplitude of a
/// centered blob added to unit Gaussian voxel noise.
struct SyntheticSpec {
  std::size_t n = 400;
  int class_count = 7;
  std::vector<double> beta;               // continuous covariates x1..xp
  std::vector<double> class_freqs;        // optional; uniform when empty
  latent::Kind latent = latent::Kind::kLogistic;
  double w_img = 0.0;
  bool with_volumes = false;
  std::array<std::uint32_t, 3> extents{16, 16, 8};
  int factor_levels = 0;                  // optional categorical covariate
  std::vector<double> factor_beta;        // one per non-reference level
  std::uint64_t seed = 1;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

/// Cutpoints at the latent quantiles of cumulative class frequencies.
std::vector<double> thetas_from_freqs(const std::vector<double>& freqs,
                                      latent::Kind kind);

/// Loader configuration: which columns mean what in the tabular file.
struct DatasetConfig {
  std::filesystem::path manifest;
  std::string outcome;
  std::string id;                                   // optional
  std::vector<std::pair<std::string, std::vector<std::string>>> categorical;
  std::vector<std::string> drop;
  int class_count = 0;                              // 0 = infer
};

Dataset load_dataset(const DatasetConfig& config);
/// Writes tabular.csv, manifest.csv, volumes/*.vox (and true_probs.csv for
/// synthetic data) under `dir`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Encodes one raw row (strings as in the CSV) against a frozen schema.
std::vector<double> encode_row(const TabularSchema& schema,
                               const std::vector<std::string>& header,
                               const std::vector<std::string>& fields);

EncodedTable ingest_tabular(const std::filesystem::path& path, TabularSchema schema,
                            int class_count = 0);

}  // namespace dtm::data
