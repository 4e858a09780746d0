#include "dtm/models.hpp"

#include <algorithm>
#include <cmath>

#include "dtm/common.hpp"
#include "dtm/netcore/ops.hpp"
#include "dtm/netcore/presets.hpp"
#include "dtm/trafo.hpp"

namespace dtm::models {

using netcore::Graph;
using netcore::NodeId;
using netcore::Tensor;

namespace {

TermSpec si_term() {
  TermSpec t;
  t.name = "si";
  t.role = TermRole::kIntercept;
  t.complexity = TermComplexity::kSimple;
  t.input = TermInput::kNone;
  return t;
}

TermSpec ci_term() {
  TermSpec t;
  t.name = "ci_B";
  t.role = TermRole::kIntercept;
  t.complexity = TermComplexity::kComplex;
  t.input = TermInput::kImage;
  return t;
}

TermSpec ls_term(std::vector<std::string> features,
                 std::vector<std::string> exclude = {}) {
  TermSpec t;
  t.name = "ls";
  t.role = TermRole::kShift;
  t.complexity = TermComplexity::kLinear;
  t.input = TermInput::kTabular;
  t.features = std::move(features);
  t.exclude = std::move(exclude);
  return t;
}

TermSpec cs_age_term() {
  TermSpec t;
  t.name = "cs_age";
  t.role = TermRole::kShift;
  t.complexity = TermComplexity::kComplex;
  t.input = TermInput::kTabular;
  return t;
}

TermSpec cs_image_term() {
  TermSpec t;
  t.name = "cs_B";
  t.role = TermRole::kShift;
  t.complexity = TermComplexity::kComplex;
  t.input = TermInput::kImage;
  return t;
}

}  // namespace

const std::vector<std::string>& ModelSpec::preset_names() {
  static const std::vector<std::string> names{
      "SI",      "SI-LS_x",    "SI-CS_age-LS_x~", "SI-CS_B",    "SI-CS_B-LS_x",
      "CI_B",    "CI_B-LS_mRS", "CI_B-LS_x",       "CI_B-Binary"};
  return names;
}

ModelSpec ModelSpec::preset(const std::string& name, const Options& opts) {
  ModelSpec m;
  m.name = name;
  m.class_count = opts.class_count;
  m.latent = opts.latent;
  m.l2 = opts.l2;
  m.collapse_class = opts.collapse_class;
  m.cs_feature = opts.cs_feature;

  const auto& ls_feats = opts.ls_features;
  std::string canonical = name;
  if (canonical == "SI-CS_age-LS_xt") canonical = "SI-CS_age-LS_x~";

  if (canonical == "SI") {
    m.terms = {si_term()};
  } else if (canonical == "SI-LS_x") {
    m.terms = {si_term(), ls_term(ls_feats)};
  } else if (canonical == "SI-CS_age-LS_x~") {
    // x~ is the tabular vector without the complex-shift feature.
    m.terms = {si_term(), cs_age_term(), ls_term(ls_feats, {opts.cs_feature})};
  } else if (canonical == "SI-CS_B") {
    m.terms = {si_term(), cs_image_term()};
  } else if (canonical == "SI-CS_B-LS_x") {
    m.terms = {si_term(), cs_image_term(), ls_term(ls_feats)};
  } else if (canonical == "CI_B") {
    m.terms = {ci_term()};
  } else if (canonical == "CI_B-LS_mRS") {
    if (opts.baseline_features.empty() && !ls_feats.empty()) {
      m.terms = {ci_term(), ls_term(ls_feats)};
    } else {
      TermSpec ls = ls_term(opts.baseline_features);
      if (ls.features.empty()) ls.features = {"@prefix:mrs"};
      m.terms = {ci_term(), ls};
    }
  } else if (canonical == "CI_B-LS_x") {
    m.terms = {ci_term(), ls_term(ls_feats)};
  } else if (canonical == "CI_B-Binary") {
    m.class_count = 2;
    m.terms = {ci_term()};
  } else {
    throw ConfigError(cat("unknown model '", name, "'"));
  }
  m.name = canonical;
  return m;
}

const TermSpec& ModelSpec::intercept() const {
  const TermSpec* found = nullptr;
  for (const auto& t : terms)
    if (t.role == TermRole::kIntercept) {
      if (found) throw ConfigError(cat("model '", name, "': multiple intercepts"));
      found = &t;
    }
  if (!found) throw ConfigError(cat("model '", name, "': no intercept term"));
  return *found;
}

const TermSpec* ModelSpec::linear_shift() const {
  for (const auto& t : terms)
    if (t.role == TermRole::kShift && t.complexity == TermComplexity::kLinear)
      return &t;
  return nullptr;
}

const TermSpec* ModelSpec::complex_tabular_shift() const {
  for (const auto& t : terms)
    if (t.role == TermRole::kShift && t.complexity == TermComplexity::kComplex &&
        t.input == TermInput::kTabular)
      return &t;
  return nullptr;
}

bool ModelSpec::uses_images() const {
  for (const auto& t : terms)
    if (t.input == TermInput::kImage) return true;
  return false;
}

namespace {

std::vector<std::size_t> resolve_features(
    const TermSpec& term, const std::vector<std::string>& feature_names,
    const std::string& model_name) {
  std::vector<std::size_t> cols;
  auto index_of = [&](const std::string& f) {
    auto it = std::find(feature_names.begin(), feature_names.end(), f);
    if (it == feature_names.end())
      throw ConfigError(cat("model '", model_name, "': feature '", f,
                            "' not present in the data"));
    return static_cast<std::size_t>(it - feature_names.begin());
  };
  if (term.features.empty()) {
    for (std::size_t j = 0; j < feature_names.size(); ++j) {
      if (std::find(term.exclude.begin(), term.exclude.end(), feature_names[j]) !=
          term.exclude.end())
        continue;
      cols.push_back(j);
    }
  } else if (term.features.size() == 1 && term.features[0].rfind("@prefix:", 0) == 0) {
    const std::string prefix = term.features[0].substr(8);
    for (std::size_t j = 0; j < feature_names.size(); ++j)
      if (feature_names[j].rfind(prefix, 0) == 0) cols.push_back(j);
    if (cols.empty())
      throw ConfigError(cat("model '", model_name, "': no feature starts with '",
                            prefix, "'; set model.ls_features explicitly"));
  } else {
    for (const auto& f : term.features) cols.push_back(index_of(f));
  }
  if (cols.empty())
    throw ConfigError(cat("model '", model_name, "': linear shift has no features"));
  return cols;
}

}  // namespace

std::vector<std::size_t> linear_shift_columns(
    const ModelSpec& spec, const std::vector<std::string>& feature_names) {
  const TermSpec* ls = spec.linear_shift();
  if (!ls)
    throw ConfigError(cat("model '", spec.name, "' has no linear shift term"));
  return resolve_features(*ls, feature_names, spec.name);
}

ModelGraph build_graph(const ModelSpec& spec,
                       const std::vector<std::string>& feature_names,
                       std::array<std::size_t, 3> volume_extents,
                       std::uint64_t init_seed) {
  if (spec.class_count < 2)
    throw ConfigError(cat("model '", spec.name, "': need at least 2 classes"));
  ModelGraph mg;
  mg.graph = Graph(derive_seed(init_seed, 0xD0));
  mg.volume_extents = volume_extents;
  mg.class_count = spec.class_count;
  mg.collapse_class = spec.collapse_class;
  Graph& g = mg.graph;
  Rng init(derive_seed(init_seed, 0x11717));
  const std::size_t m = static_cast<std::size_t>(spec.class_count) - 1;

  const TermSpec& icpt = spec.intercept();

  // The complex tabular shift and its input come first: evaluation stops at
  // any node id, so effect curves can run the CS stack without binding the
  // unrelated inputs (which are all created later).
  std::optional<NodeId> x_cs, x_ls, image, ones;
  if (spec.complex_tabular_shift()) x_cs = g.input("x_cs");

  std::vector<std::string> l2_names;
  std::vector<double> l2_coefs;
  std::optional<NodeId> total_shift;
  auto accumulate = [&](NodeId term_out) {
    total_shift = total_shift ? netcore::add(g, *total_shift, term_out) : term_out;
  };

  if (const TermSpec* cs = spec.complex_tabular_shift()) {
    auto cs_feature_idx = std::find(feature_names.begin(), feature_names.end(),
                                    spec.cs_feature);
    if (cs_feature_idx == feature_names.end())
      throw ConfigError(cat("model '", spec.name, "': complex-shift feature '",
                            spec.cs_feature, "' not in the data"));
    mg.cs_col = static_cast<std::size_t>(cs_feature_idx - feature_names.begin());
    mg.needs_tabular = true;
    mg.has_cs = true;
    auto stack = netcore::append_layers(g, *x_cs, {1},
                                        netcore::cs_age_mlp_layers(spec.l2),
                                        cs->name, init);
    mg.cs_out = stack.output;
    accumulate(stack.output);
    l2_names.insert(l2_names.end(), stack.weight_names.begin(),
                    stack.weight_names.end());
    l2_coefs.insert(l2_coefs.end(), stack.weight_l2.begin(), stack.weight_l2.end());
  }

  for (const auto& t : spec.terms)
    if (t.role == TermRole::kShift && t.complexity == TermComplexity::kLinear) {
      x_ls = g.input("x_ls");
      mg.ls_cols = resolve_features(t, feature_names, spec.name);
      mg.needs_tabular = true;
    }
  if (spec.uses_images()) {
    image = g.input("B");
    mg.needs_image = true;
  }
  if (icpt.complexity == TermComplexity::kSimple) ones = g.input("ones");

  // Intercept term: gamma either from the SI head or from the image CNN.
  if (icpt.complexity == TermComplexity::kSimple) {
    auto stack = netcore::append_layers(g, *ones, {1}, netcore::si_head_layers(
                                            static_cast<std::size_t>(spec.class_count)),
                                        icpt.name, init);
    mg.gamma = stack.output;
  } else {
    auto stack = netcore::append_layers(
        g, *image, {volume_extents[0], volume_extents[1], volume_extents[2], 1},
        netcore::cnn3d_layers(m), icpt.name, init);
    mg.gamma = stack.output;
  }
  NodeId theta = trafo::cutpoint_map(g, mg.gamma);

  // Remaining shifts: linear tabular and complex image.
  for (const auto& t : spec.terms) {
    if (t.role != TermRole::kShift) continue;
    if (t.complexity == TermComplexity::kLinear) {
      auto stack = netcore::append_layers(g, *x_ls, {mg.ls_cols.size()},
                                          netcore::ls_head_layers(), t.name, init);
      accumulate(stack.output);
    } else if (t.input == TermInput::kImage) {
      auto stack = netcore::append_layers(
          g, *image, {volume_extents[0], volume_extents[1], volume_extents[2], 1},
          netcore::cnn3d_layers(1), t.name, init);
      accumulate(stack.output);
    }
  }

  mg.shifted = total_shift ? netcore::rowwise_sub(g, theta, *total_shift) : theta;

  NodeId labels = g.input("labels");
  mg.nll = trafo::ordinal_nll(g, mg.shifted, labels, spec.latent);
  mg.loss = mg.nll;
  for (std::size_t i = 0; i < l2_names.size(); ++i) {
    NodeId w = g.parameter_id(l2_names[i]);
    NodeId pen = netcore::scale(g, netcore::sum(g, netcore::mul(g, w, w)),
                                l2_coefs[i]);
    mg.loss = netcore::add(g, mg.loss, pen);
  }
  return mg;
}

int training_label(const ModelGraph& mg, int k_data, int data_classes) {
  if (mg.class_count == data_classes) return k_data;
  if (mg.class_count == 2)
    return k_data <= mg.collapse_class ? 1 : 2;
  throw ConfigError(cat("model expects ", mg.class_count, " classes but data has ",
                        data_classes));
}

void bind_batch(ModelGraph& mg, const data::Dataset& ds,
                const data::Standardizer& st, const std::vector<std::size_t>& rows,
                const std::vector<const data::VoxelVolume*>* volumes,
                bool with_labels) {
  Graph& g = mg.graph;
  const std::size_t n = rows.size();
  if (n == 0) throw DataError("bind_batch: empty batch");

  std::vector<double> std_row(ds.table.p);
  if (g.has_input("ones")) g.bind("ones", Tensor::full({n, 1}, 1.0));
  if (g.has_input("x_ls") || g.has_input("x_cs")) {
    Tensor xls({n, mg.ls_cols.size()});
    Tensor xcs({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      st.apply_row(ds.table.row(rows[i]), std_row.data());
      for (std::size_t j = 0; j < mg.ls_cols.size(); ++j)
        xls[i * mg.ls_cols.size() + j] = std_row[mg.ls_cols[j]];
      if (mg.has_cs) xcs[i] = std_row[mg.cs_col];
    }
    if (g.has_input("x_ls")) g.bind("x_ls", std::move(xls));
    if (g.has_input("x_cs")) g.bind("x_cs", std::move(xcs));
  }
  if (g.has_input("B")) {
    if (!ds.has_volumes() && !volumes)
      throw DataError(cat("model requires image volumes (term input 'B') but the "
                          "dataset has none"));
    const auto& e = mg.volume_extents;
    Tensor b({n, e[0], e[1], e[2], 1});
    const std::size_t vol_size = e[0] * e[1] * e[2];
    for (std::size_t i = 0; i < n; ++i) {
      const data::VoxelVolume& v =
          volumes ? *(*volumes)[rows[i]] : ds.volumes[rows[i]];
      if (v.size() != vol_size)
        throw ShapeError(cat("volume ", rows[i], " has ", v.size(),
                             " voxels, expected ", vol_size));
      double* dst = b.data() + i * vol_size;
      for (std::size_t q = 0; q < vol_size; ++q) dst[q] = v.voxels[q];
    }
    g.bind("B", std::move(b));
  }
  if (with_labels) {
    Tensor lab({n});
    for (std::size_t i = 0; i < n; ++i)
      lab[i] = training_label(mg, ds.table.y[rows[i]], ds.table.class_count);
    g.bind("labels", std::move(lab));
  }
}

namespace {

ModelGraph graph_for(const FittedModel& fitted) {
  ModelGraph mg = build_graph(fitted.spec, fitted.feature_names,
                              fitted.volume_extents, 0);
  mg.graph.set_parameters(fitted.params);
  mg.graph.set_mode(netcore::Mode::kInference);
  return mg;
}

}  // namespace

std::vector<std::vector<double>> predict_probs(const FittedModel& fitted,
                                               const data::Dataset& ds,
                                               const std::vector<std::size_t>& rows) {
  ModelGraph mg = graph_for(fitted);
  bind_batch(mg, ds, fitted.standardizer, rows, nullptr, /*with_labels=*/false);
  const Tensor& shifted = mg.graph.forward(mg.shifted);
  const std::size_t m = shifted.extent(1);
  std::vector<std::vector<double>> probs(rows.size());
  std::vector<double> row(m);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < m; ++k) row[k] = shifted[i * m + k];
    probs[i] = trafo::ordinal_probs_from_shifted(row, fitted.spec.latent);
  }
  return probs;
}

std::vector<double> compose_h(const FittedModel& fitted,
                              const std::vector<double>& x_raw,
                              const data::VoxelVolume* volume) {
  ModelGraph mg = graph_for(fitted);
  Graph& g = mg.graph;
  const std::size_t m = static_cast<std::size_t>(fitted.spec.class_count) - 1;
  std::vector<double> std_row(x_raw.size());
  if (!x_raw.empty()) fitted.standardizer.apply_row(x_raw.data(), std_row.data());
  if (g.has_input("ones")) g.bind("ones", Tensor::full({1, 1}, 1.0));
  if (g.has_input("x_ls")) {
    Tensor xls({1, mg.ls_cols.size()});
    for (std::size_t j = 0; j < mg.ls_cols.size(); ++j) {
      if (mg.ls_cols[j] >= std_row.size())
        throw ShapeError("compose_h: predictor row shorter than the model needs");
      xls[j] = std_row[mg.ls_cols[j]];
    }
    g.bind("x_ls", std::move(xls));
  }
  if (g.has_input("x_cs")) g.bind("x_cs", Tensor({1, 1}, {std_row.at(mg.cs_col)}));
  if (g.has_input("B")) {
    if (!volume)
      throw DataError(cat("model '", fitted.spec.name,
                          "' requires an image volume for term input 'B'"));
    const auto& e = mg.volume_extents;
    Tensor b({1, e[0], e[1], e[2], 1});
    for (std::size_t q = 0; q < volume->size(); ++q) b[q] = volume->voxels[q];
    g.bind("B", std::move(b));
  }
  const Tensor& shifted = g.forward(mg.shifted);
  return std::vector<double>(shifted.data(), shifted.data() + m);
}

Coefficients shift_coefficients(const FittedModel& fitted) {
  const TermSpec* ls = fitted.spec.linear_shift();
  if (!ls)
    throw ConfigError(cat("model '", fitted.spec.name, "' has no linear shift term"));
  const auto cols = linear_shift_columns(fitted.spec, fitted.feature_names);
  const auto it = fitted.params.find(ls->name + ".dense1.w");
  if (it == fitted.params.end())
    throw ConfigError(cat("model '", fitted.spec.name, "': missing parameters for '",
                          ls->name, "'"));
  Coefficients c;
  c.interpretation = std::string(latent::interpretation(fitted.spec.latent));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    c.names.push_back(fitted.feature_names[cols[j]]);
    c.values.push_back(it->second[j]);
  }
  return c;
}

Coefficients log_odds_ratios(const FittedModel& fitted) {
  if (fitted.spec.latent != latent::Kind::kLogistic)
    throw ConfigError(cat("model '", fitted.spec.name, "' uses the ",
                          std::string(latent::name(fitted.spec.latent)),
                          " latent; coefficients are ",
                          std::string(latent::interpretation(fitted.spec.latent)),
                          "s, not log odds-ratios"));
  return shift_coefficients(fitted);
}

std::vector<double> effect_curve(const FittedModel& fitted, const std::string& feature,
                                 const std::vector<double>& grid) {
  const TermSpec* cs = fitted.spec.complex_tabular_shift();
  if (!cs || fitted.spec.cs_feature != feature)
    throw ConfigError(cat("model '", fitted.spec.name,
                          "' has no complex shift on feature '", feature, "'"));
  if (grid.empty()) throw ConfigError("effect_curve: empty grid");
  ModelGraph mg = graph_for(fitted);
  Graph& g = mg.graph;
  Tensor xcs({grid.size(), 1});
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid[i];
    xcs[i] = fitted.standardizer.active.empty()
                 ? v
                 : (fitted.standardizer.active[mg.cs_col]
                        ? (v - fitted.standardizer.mean[mg.cs_col]) /
                              fitted.standardizer.sd[mg.cs_col]
                        : v);
  }
  g.bind("x_cs", std::move(xcs));
  const Tensor& out = g.forward(mg.cs_out);
  std::vector<double> curve(out.data(), out.data() + grid.size());
  double mean = 0.0;
  for (double v : curve) mean += v;
  mean /= static_cast<double>(curve.size());
  for (double& v : curve) v -= mean;  // levels are absorbed by the intercept
  return curve;
}

}  // namespace dtm::models
