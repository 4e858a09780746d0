#include "dtm/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dtm/common.hpp"
#include "dtm/netcore/adam.hpp"
#include "dtm/trafo.hpp"

namespace dtm::train {

using models::FittedModel;
using models::ModelGraph;
using models::ModelSpec;
using netcore::GradientMap;
using netcore::Tensor;

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (max_epochs <= 0) throw ConfigError("train: max epochs must be positive");
  if (patience <= 0) throw ConfigError("train: patience must be positive");
  if (patience > max_epochs)
    throw ConfigError("train: patience must not exceed max epochs");
}

std::vector<SplitIndices> make_splits(std::size_t n, const SplitPlan& plan) {
  if (n < 10) throw ConfigError(cat("splits: need at least 10 observations, got ", n));
  if (plan.count < 1) throw ConfigError("splits: count must be positive");
  const double fsum = plan.fractions[0] + plan.fractions[1] + plan.fractions[2];
  if (std::fabs(fsum - 1.0) > 1e-9)
    throw ConfigError("splits: fractions must sum to 1");
  std::vector<SplitIndices> splits;
  const std::size_t n_train = static_cast<std::size_t>(plan.fractions[0] * n);
  const std::size_t n_val = static_cast<std::size_t>(plan.fractions[1] * n);
  for (int s = 0; s < plan.count; ++s) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(plan.master_seed, 0x5713, static_cast<std::uint64_t>(s)));
    rng.shuffle(idx);
    SplitIndices si;
    si.train.assign(idx.begin(), idx.begin() + n_train);
    si.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    si.test.assign(idx.begin() + n_train + n_val, idx.end());
    splits.push_back(std::move(si));
  }
  return splits;
}

data::VoxelVolume augment(const data::VoxelVolume& volume,
                          const AugmentationParams& params, Rng& rng) {
  if (volume.extents[0] == 0 || volume.extents[1] == 0 || volume.extents[2] == 0)
    throw DataError("augment: empty volume");
  const double deg2rad = 0.017453292519943295;
  const double theta = rng.uniform(-params.rotation_deg, params.rotation_deg) * deg2rad;
  const double t0 = rng.uniform(-params.width_shift, params.width_shift) *
                    static_cast<double>(volume.extents[0]);
  const double t1 = rng.uniform(-params.height_shift, params.height_shift) *
                    static_cast<double>(volume.extents[1]);
  const double sh = rng.uniform(-params.shear, params.shear);
  const double z = rng.uniform(1.0 - params.zoom, 1.0 + params.zoom);

  // M = R(theta) * Shear(sh) * Zoom(z) about the plane center, then shift.
  const double c = std::cos(theta), s = std::sin(theta);
  const double m00 = c * z, m01 = (c * sh - s) * z;
  const double m10 = s * z, m11 = (s * sh + c) * z;
  const double det = m00 * m11 - m01 * m10;
  const double i00 = m11 / det, i01 = -m01 / det;
  const double i10 = -m10 / det, i11 = m00 / det;

  const std::size_t d0 = volume.extents[0], d1 = volume.extents[1],
                    d2 = volume.extents[2];
  const double c0 = (static_cast<double>(d0) - 1.0) / 2.0;
  const double c1 = (static_cast<double>(d1) - 1.0) / 2.0;

  data::VoxelVolume out;
  out.extents = volume.extents;
  out.voxels.resize(volume.voxels.size());
  for (std::size_t o0 = 0; o0 < d0; ++o0) {
    for (std::size_t o1 = 0; o1 < d1; ++o1) {
      const double r0 = static_cast<double>(o0) - c0 - t0;
      const double r1 = static_cast<double>(o1) - c1 - t1;
      const double s0 = i00 * r0 + i01 * r1 + c0;
      const double s1 = i10 * r0 + i11 * r1 + c1;
      // Nearest-neighbor sample with nearest-edge fill.
      long k0 = std::lround(s0);
      long k1 = std::lround(s1);
      k0 = std::clamp<long>(k0, 0, static_cast<long>(d0) - 1);
      k1 = std::clamp<long>(k1, 0, static_cast<long>(d1) - 1);
      const float* src =
          volume.voxels.data() + (static_cast<std::size_t>(k0) * d1 +
                                  static_cast<std::size_t>(k1)) * d2;
      float* dst = out.voxels.data() + (o0 * d1 + o1) * d2;
      std::copy(src, src + d2, dst);
    }
  }
  return out;
}

namespace {

// Cutpoints start at the smoothed empirical class frequencies of the
// training labels, via the latent quantiles.
Tensor empirical_gamma_init(const std::vector<int>& labels, int class_count,
                            latent::Kind kind) {
  std::vector<double> counts(class_count, 0.5);
  for (int y : labels) counts[y - 1] += 1.0;
  double total = 0.0;
  for (double cnt : counts) total += cnt;
  std::vector<double> freqs;
  for (double cnt : counts) freqs.push_back(cnt / total);
  auto thetas = data::thetas_from_freqs(freqs, kind);
  auto cv = trafo::CutpointVector::from_thetas(thetas);
  Tensor t({1, cv.gammas.size()});
  for (std::size_t k = 0; k < cv.gammas.size(); ++k) t[k] = cv.gammas[k];
  return t;
}

double validation_nll(ModelGraph& mg, const data::Dataset& ds,
                      const data::Standardizer& st,
                      const std::vector<std::size_t>& rows) {
  mg.graph.set_mode(netcore::Mode::kInference);
  models::bind_batch(mg, ds, st, rows);
  const double nll = mg.graph.forward(mg.nll)[0];
  mg.graph.set_mode(netcore::Mode::kTraining);
  return nll;
}

}  // namespace

FittedModel fit(const ModelSpec& spec, const data::Dataset& ds,
                const SplitIndices& split, const TrainConfig& cfg,
                const GradientMap* warm_start, int split_id) {
  cfg.validate();
  if (split.train.empty() || split.val.empty())
    throw ConfigError("fit: train and validation splits must be non-empty");
  for (const auto* part : {&split.train, &split.val, &split.test})
    for (std::size_t i : *part)
      if (i >= ds.size()) throw ConfigError(cat("fit: split index ", i, " out of range"));
  if (spec.uses_images() && !ds.has_volumes())
    throw DataError(cat("model '", spec.name, "' needs image volumes (term input "
                        "'B') but the dataset has none"));

  std::array<std::size_t, 3> extents{0, 0, 0};
  if (spec.uses_images())
    extents = {ds.volumes[0].extents[0], ds.volumes[0].extents[1],
               ds.volumes[0].extents[2]};

  ModelGraph mg = models::build_graph(spec, ds.table.feature_names, extents,
                                      derive_seed(cfg.seed, 0x1A17));
  data::Standardizer st = data::Standardizer::fit(ds.table, split.train);

  if (spec.intercept().complexity == models::TermComplexity::kSimple) {
    std::vector<int> train_labels;
    for (std::size_t i : split.train)
      train_labels.push_back(
          models::training_label(mg, ds.table.y[i], ds.table.class_count));
    mg.graph.set_parameters(
        {{"si.dense1.w",
          empirical_gamma_init(train_labels, spec.class_count, spec.latent)}});
  }
  if (warm_start) mg.graph.set_parameters(*warm_start);

  netcore::Adam opt(cfg.learning_rate);
  const bool image_aug = cfg.augment && spec.uses_images();
  AugmentationParams aug_params;

  models::TrainMeta meta;
  meta.split = split_id;
  meta.seed = cfg.seed;
  GradientMap best_params = mg.graph.parameters();
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  std::vector<std::size_t> order(split.train);
  std::vector<data::VoxelVolume> aug_store;
  std::vector<const data::VoxelVolume*> volume_ptrs;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const std::uint64_t epoch_seed =
        derive_seed(cfg.seed, 0xE90C, static_cast<std::uint64_t>(epoch));
    mg.graph.reseed(derive_seed(epoch_seed, 0xD809));

    const std::vector<const data::VoxelVolume*>* volumes = nullptr;
    if (image_aug) {
      // Augmented afresh prior to every epoch; validation and test rows keep
      // the original volumes.
      aug_store.resize(ds.size());
      volume_ptrs.assign(ds.size(), nullptr);
      for (std::size_t i = 0; i < ds.size(); ++i) volume_ptrs[i] = &ds.volumes[i];
      for (std::size_t i : split.train) {
        Rng vol_rng(derive_seed(epoch_seed, 0xA06, i));
        aug_store[i] = augment(ds.volumes[i], aug_params, vol_rng);
        volume_ptrs[i] = &aug_store[i];
      }
      volumes = &volume_ptrs;
    }

    Rng shuffle_rng(derive_seed(epoch_seed, 0x5F));
    shuffle_rng.shuffle(order);

    double train_nll_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size, ++batch_index) {
      const std::size_t stop = std::min(start + cfg.batch_size, order.size());
      std::vector<std::size_t> rows(order.begin() + start, order.begin() + stop);
      models::bind_batch(mg, ds, st, rows, volumes);
      try {
        const double loss = mg.graph.forward(mg.loss)[0];
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        train_nll_sum +=
            mg.graph.value(mg.nll)[0] * static_cast<double>(rows.size());
        GradientMap grads = mg.graph.backward(mg.loss);
        opt.step(mg.graph, grads);
      } catch (const NumericError& e) {
        throw NumericError(cat("fit('", spec.name, "') diverged at epoch ", epoch,
                               ", batch ", batch_index, ": ", e.what()));
      }
    }

    const double val_nll = validation_nll(mg, ds, st, split.val);
    meta.history.push_back({epoch,
                            train_nll_sum / static_cast<double>(order.size()),
                            val_nll});
    if (val_nll < best_val) {
      best_val = val_nll;
      best_epoch = epoch;
      best_params = mg.graph.parameters();
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }

  FittedModel fitted;
  fitted.spec = spec;
  fitted.feature_names = ds.table.feature_names;
  fitted.standardizer = std::move(st);
  fitted.params = std::move(best_params);
  fitted.volume_extents = extents;
  meta.best_epoch = best_epoch;
  meta.best_val_nll = best_val;
  fitted.meta = std::move(meta);
  return fitted;
}

}  // namespace dtm::train
