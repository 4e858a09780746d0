#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dtm/data.hpp"
#include "dtm/models.hpp"
#include "dtm/rng.hpp"

namespace dtm::train {

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t batch_size = 6;
  int max_epochs = 200;
  int patience = 20;  // epochs without validation improvement
  std::uint64_t seed = 1;
  bool augment = true;
  void validate() const;
};

struct SplitPlan {
  int count = 6;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  std::uint64_t master_seed = 1;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Disjoint covering train/val/test index sets, sizes floor(f_train*n),
/// floor(f_val*n) and the remainder. Reproducible from the master seed.
std::vector<SplitIndices> make_splits(std::size_t n, const SplitPlan& plan);

/// Appendix-style in-plane augmentation: rotation, shifts, shear and zoom in
/// the (d,h) plane, identical across the third axis, nearest-neighbor
/// resampling with nearest-edge fill.
struct AugmentationParams {
  double rotation_deg = 20.0;
  double width_shift = 0.2;
  double height_shift = 0.2;
  double shear = 0.15;
  double zoom = 0.15;
};

data::VoxelVolume augment(const data::VoxelVolume& volume,
                          const AugmentationParams& params, Rng& rng);

/// Maximum-likelihood training with minibatched Adam and early stopping on
/// validation NLL (best weights restored). `warm_start` overrides matching
/// initial parameters. Throws NumericError naming epoch/batch on divergence.
models::FittedModel fit(const models::ModelSpec& spec, const data::Dataset& ds,
                        const SplitIndices& split, const TrainConfig& cfg,
                        const netcore::GradientMap* warm_start = nullptr,
                        int split_id = -1);

}  // namespace dtm::train
