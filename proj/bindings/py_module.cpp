#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "dtm/data.hpp"
#include "dtm/ensemble.hpp"
#include "dtm/evaluate.hpp"
#include "dtm/latent.hpp"
#include "dtm/models.hpp"
#include "dtm/train.hpp"

namespace py = pybind11;
using namespace dtm;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<long, py::array::c_style | py::array::forcecast>;

data::Dataset dataset_from_arrays(const DoubleArray& x, const IntArray& y,
                                  const std::optional<DoubleArray>& volumes,
                                  std::vector<std::string> feature_names,
                                  int class_count) {
  if (x.ndim() != 2) throw ConfigError("x must be a 2-d array (n, p)");
  const std::size_t n = static_cast<std::size_t>(x.shape(0));
  const std::size_t p = static_cast<std::size_t>(x.shape(1));
  if (static_cast<std::size_t>(y.size()) != n)
    throw ConfigError("y must have one entry per row of x");
  if (feature_names.empty())
    for (std::size_t j = 0; j < p; ++j)
      feature_names.push_back("x" + std::to_string(j + 1));
  if (feature_names.size() != p)
    throw ConfigError("feature_names length must match x columns");

  data::Dataset ds;
  data::EncodedTable& t = ds.table;
  t.n = n;
  t.p = p;
  t.feature_names = std::move(feature_names);
  t.standardizable.assign(p, 1);
  t.x.assign(x.data(), x.data() + n * p);
  t.y.resize(n);
  t.ids.resize(n);
  int y_min = std::numeric_limits<int>::max(), y_max = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long v = y.data()[i];
    y_min = std::min<int>(y_min, static_cast<int>(v));
    y_max = std::max<int>(y_max, static_cast<int>(v));
  }
  t.outcome_offset = y_min;
  t.class_count = class_count > 0 ? class_count : y_max - y_min + 1;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(y.data()[i]) - y_min + 1;
    if (k < 1 || k > t.class_count)
      throw ConfigError(cat("label ", y.data()[i], " outside the class range"));
    t.y[i] = k;
    t.ids[i] = static_cast<std::int64_t>(i);
  }
  if (volumes) {
    if (volumes->ndim() != 4 ||
        static_cast<std::size_t>(volumes->shape(0)) != n)
      throw ConfigError("volumes must be a 4-d array (n, d0, d1, d2)");
    const std::size_t d0 = volumes->shape(1), d1 = volumes->shape(2),
                      d2 = volumes->shape(3);
    const double* src = volumes->data();
    ds.volumes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& v = ds.volumes[i];
      v.extents = {static_cast<std::uint32_t>(d0), static_cast<std::uint32_t>(d1),
                   static_cast<std::uint32_t>(d2)};
      v.voxels.resize(d0 * d1 * d2);
      for (std::size_t q = 0; q < v.voxels.size(); ++q)
        v.voxels[q] = static_cast<float>(src[i * v.voxels.size() + q]);
    }
  }
  return ds;
}

DoubleArray probs_to_array(const std::vector<std::vector<double>>& probs) {
  const std::size_t n = probs.size();
  const std::size_t k = n ? probs[0].size() : 0;
  DoubleArray out({n, k});
  double* dst = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) dst[i * k + j] = probs[i][j];
  return out;
}

std::vector<evaluate::PredictionRecord> records_from_arrays(const DoubleArray& probs,
                                                            const IntArray& y) {
  if (probs.ndim() != 2) throw ConfigError("probs must be a 2-d array (n, K)");
  const std::size_t n = probs.shape(0), k = probs.shape(1);
  if (static_cast<std::size_t>(y.size()) != n)
    throw ConfigError("y must have one entry per probs row");
  long y_min = std::numeric_limits<long>::max();
  for (std::size_t i = 0; i < n; ++i) y_min = std::min(y_min, y.data()[i]);
  std::vector<evaluate::PredictionRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    records[i].split = 0;
    records[i].id = static_cast<std::int64_t>(i);
    records[i].true_class = static_cast<int>(y.data()[i] - y_min) + 1;
    records[i].probs.assign(probs.data() + i * k, probs.data() + (i + 1) * k);
  }
  return records;
}

struct PyModel {
  models::FittedModel fitted;

  DoubleArray predict_proba(const DoubleArray& x,
                            const std::optional<DoubleArray>& volumes) const {
    IntArray y(static_cast<std::size_t>(x.shape(0)));
    for (py::ssize_t i = 0; i < x.shape(0); ++i) y.mutable_data()[i] = 1;
    auto ds = dataset_from_arrays(x, y, volumes, fitted.feature_names,
                                  fitted.spec.class_count);
    std::vector<std::size_t> rows(ds.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return probs_to_array(models::predict_probs(fitted, ds, rows));
  }

  py::dict coefficients() const {
    auto c = models::shift_coefficients(fitted);
    py::dict values;
    for (std::size_t j = 0; j < c.names.size(); ++j)
      values[py::str(c.names[j])] = c.values[j];
    py::dict out;
    out["values"] = values;
    out["interpretation"] = std::string(c.interpretation);
    return out;
  }

  std::vector<double> effect_curve(const std::string& feature,
                                   const std::vector<double>& grid) const {
    return models::effect_curve(fitted, feature, grid);
  }

  py::list history() const {
    py::list rows;
    for (const auto& h : fitted.meta.history)
      rows.append(py::make_tuple(h.epoch, h.train_nll, h.val_nll));
    return rows;
  }
};

PyModel fit_model(const std::string& name, const DoubleArray& x, const IntArray& y,
                  const std::optional<DoubleArray>& volumes,
                  std::vector<std::string> feature_names, int class_count,
                  const std::string& latent_name, double learning_rate,
                  std::size_t batch_size, int max_epochs, int patience,
                  bool augment, std::uint64_t seed, double val_fraction,
                  const std::string& cs_feature) {
  auto ds = dataset_from_arrays(x, y, volumes, std::move(feature_names),
                                class_count);
  models::ModelSpec::Options opts;
  opts.class_count = ds.table.class_count;
  opts.latent = latent::from_name(latent_name);
  opts.cs_feature = cs_feature;
  auto spec = models::ModelSpec::preset(name, opts);

  train::SplitIndices split;
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x9E11));
  rng.shuffle(order);
  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(val_fraction * static_cast<double>(order.size())));
  split.val.assign(order.begin(), order.begin() + n_val);
  split.train.assign(order.begin() + n_val, order.end());
  if (val_fraction <= 0.0) split.val = split.train;

  train::TrainConfig cfg;
  cfg.learning_rate = learning_rate;
  cfg.batch_size = batch_size;
  cfg.max_epochs = max_epochs;
  cfg.patience = patience;
  cfg.augment = augment;
  cfg.seed = seed;
  return PyModel{train::fit(spec, ds, split, cfg, nullptr, 0)};
}

DoubleArray ensemble_predict_py(const std::vector<PyModel>& members,
                                const DoubleArray& x,
                                const std::optional<DoubleArray>& volumes) {
  if (members.empty()) throw ConfigError("ensemble: no members");
  std::vector<models::FittedModel> fms;
  for (const auto& m : members) fms.push_back(m.fitted);
  ensemble::TransformationEnsemble ens(std::move(fms));
  IntArray y(static_cast<std::size_t>(x.shape(0)));
  for (py::ssize_t i = 0; i < x.shape(0); ++i) y.mutable_data()[i] = 1;
  auto ds = dataset_from_arrays(x, y, volumes, members[0].fitted.feature_names,
                                members[0].fitted.spec.class_count);
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return probs_to_array(ensemble::ensemble_predict_rows(ens, ds, rows));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deep transformation models for semi-structured distributional "
            "regression: ordinal outcomes from tabular covariates and 3-d "
            "volumes, trained by maximum likelihood.";

  py::register_exception<ConfigError>(m, "DtmConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DtmDataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "DtmNumericError", PyExc_ArithmeticError);
  py::register_exception<ShapeError>(m, "DtmShapeError", PyExc_ValueError);

  py::class_<PyModel>(m, "Model")
      .def_property_readonly("name",
                             [](const PyModel& s) { return s.fitted.spec.name; })
      .def_property_readonly(
          "class_count", [](const PyModel& s) { return s.fitted.spec.class_count; })
      .def_property_readonly(
          "feature_names", [](const PyModel& s) { return s.fitted.feature_names; })
      .def_property_readonly(
          "best_epoch", [](const PyModel& s) { return s.fitted.meta.best_epoch; })
      .def_property_readonly(
          "best_val_nll", [](const PyModel& s) { return s.fitted.meta.best_val_nll; })
      .def("predict_proba", &PyModel::predict_proba, py::arg("x"),
           py::arg("volumes") = std::nullopt)
      .def("coefficients", &PyModel::coefficients)
      .def("effect_curve", &PyModel::effect_curve, py::arg("feature"),
           py::arg("grid"))
      .def("history", &PyModel::history)
      .def("save",
           [](const PyModel& s, const std::string& path) {
             models::save_model(s.fitted, path);
           })
      .def_static("load", [](const std::string& path) {
        return PyModel{models::load_model(path)};
      });

  m.def("model_names", [] { return models::ModelSpec::preset_names(); });

  m.def("fit", &fit_model, py::arg("name"), py::arg("x"), py::arg("y"),
        py::arg("volumes") = std::nullopt,
        py::arg("feature_names") = std::vector<std::string>{},
        py::arg("class_count") = 0, py::arg("latent") = "logistic",
        py::arg("learning_rate") = 5e-5, py::arg("batch_size") = 6,
        py::arg("max_epochs") = 200, py::arg("patience") = 20,
        py::arg("augment") = true, py::arg("seed") = 1,
        py::arg("val_fraction") = 0.1, py::arg("cs_feature") = "age",
        "Fit a named model variant by minibatch maximum likelihood with "
        "early stopping on a held-out validation fraction.");

  m.def("ensemble_predict", &ensemble_predict_py, py::arg("members"), py::arg("x"),
        py::arg("volumes") = std::nullopt,
        "Averages the members' transformation functions before applying the "
        "latent cdf.");

  m.def("generate_synthetic",
        [](std::size_t n, int class_count, std::vector<double> beta,
           std::vector<double> class_freqs, double w_img,
           std::vector<std::uint32_t> extents, std::uint64_t seed) {
          data::SyntheticSpec spec;
          spec.n = n;
          spec.class_count = class_count;
          spec.beta = std::move(beta);
          spec.class_freqs = std::move(class_freqs);
          spec.w_img = w_img;
          if (extents.size() == 3) spec.extents = {extents[0], extents[1], extents[2]};
          spec.with_volumes = w_img != 0.0;
          spec.seed = seed;
          auto ds = data::generate_synthetic(spec);

          py::dict out;
          const std::size_t p = ds.table.p;
          DoubleArray x({ds.table.n, p});
          std::copy(ds.table.x.begin(), ds.table.x.end(), x.mutable_data());
          out["x"] = x;
          IntArray y(ds.table.n);
          for (std::size_t i = 0; i < ds.table.n; ++i)
            y.mutable_data()[i] = ds.table.y[i] - 1;
          out["y"] = y;
          out["feature_names"] = ds.table.feature_names;
          const std::size_t K = static_cast<std::size_t>(ds.table.class_count);
          DoubleArray tp({ds.table.n, K});
          for (std::size_t i = 0; i < ds.table.n; ++i)
            for (std::size_t k = 0; k < K; ++k)
              tp.mutable_data()[i * K + k] = ds.true_probs[i][k];
          out["true_probs"] = tp;
          if (ds.has_volumes()) {
            const auto& e = ds.volumes[0].extents;
            DoubleArray vols({ds.table.n, static_cast<std::size_t>(e[0]),
                              static_cast<std::size_t>(e[1]),
                              static_cast<std::size_t>(e[2])});
            double* dst = vols.mutable_data();
            for (std::size_t i = 0; i < ds.table.n; ++i)
              for (std::size_t q = 0; q < ds.volumes[i].voxels.size(); ++q)
                *dst++ = ds.volumes[i].voxels[q];
            out["volumes"] = vols;
          }
          return out;
        },
        py::arg("n"), py::arg("class_count") = 7,
        py::arg("beta") = std::vector<double>{},
        py::arg("class_freqs") = std::vector<double>{}, py::arg("w_img") = 0.0,
        py::arg("extents") = std::vector<std::uint32_t>{16, 16, 8},
        py::arg("seed") = 1,
        "Proportional-odds synthetic data with known ground truth.");

  m.def("nll",
        [](const DoubleArray& probs, const IntArray& y) {
          return mean_of(evaluate::nll_contributions(records_from_arrays(probs, y)));
        },
        py::arg("probs"), py::arg("y"));
  m.def("brier",
        [](const DoubleArray& probs, const IntArray& y, int collapse_class) {
          return mean_of(evaluate::brier_contributions(
              records_from_arrays(probs, y), collapse_class));
        },
        py::arg("probs"), py::arg("y"), py::arg("collapse_class") = 3);
  m.def("rps",
        [](const DoubleArray& probs, const IntArray& y) {
          return mean_of(evaluate::rps_contributions(records_from_arrays(probs, y)));
        },
        py::arg("probs"), py::arg("y"));
  m.def("auc",
        [](const DoubleArray& probs, const IntArray& y,
           int collapse_class) -> py::object {
          auto records = records_from_arrays(probs, y);
          evaluate::RecordView view;
          for (const auto& r : records) view.push_back(&r);
          auto v = evaluate::auc_metric(collapse_class)(view);
          if (!v) return py::none();
          return py::float_(*v);
        },
        py::arg("probs"), py::arg("y"), py::arg("collapse_class") = 3);
  m.def("accuracy",
        [](const DoubleArray& probs, const IntArray& y, int collapse_class) {
          auto records = records_from_arrays(probs, y);
          evaluate::RecordView view;
          for (const auto& r : records) view.push_back(&r);
          return *evaluate::binary_accuracy_metric(collapse_class)(view);
        },
        py::arg("probs"), py::arg("y"), py::arg("collapse_class") = 3);
  m.def("qwk",
        [](const DoubleArray& probs, const IntArray& y) -> py::object {
          auto records = records_from_arrays(probs, y);
          evaluate::RecordView view;
          for (const auto& r : records) view.push_back(&r);
          auto v = evaluate::qwk_metric()(view);
          if (!v) return py::none();
          return py::float_(*v);
        },
        py::arg("probs"), py::arg("y"));

  m.def("latent_cdf",
        [](const std::string& kind, double z) {
          return latent::cdf(latent::from_name(kind), z);
        },
        py::arg("kind"), py::arg("z"));
  m.def("latent_quantile",
        [](const std::string& kind, double p) {
          return latent::quantile(latent::from_name(kind), p);
        },
        py::arg("kind"), py::arg("p"));
}
