#include "dtm/netcore/presets.hpp"

#include <algorithm>
#include <cmath>

#include "dtm/common.hpp"

namespace dtm::netcore {

std::vector<LayerSpec> si_head_layers(std::size_t class_count) {
  if (class_count < 2) throw ConfigError("si_head: need at least two classes");
  LayerSpec l;
  l.kind = LayerSpec::Kind::kDense;
  l.units = class_count - 1;
  l.bias = false;
  return {l};
}

std::vector<LayerSpec> ls_head_layers() {
  LayerSpec l;
  l.kind = LayerSpec::Kind::kDense;
  l.units = 1;
  l.bias = false;
  return {l};
}

std::vector<LayerSpec> cs_age_mlp_layers(double l2) {
  std::vector<LayerSpec> layers;
  for (int i = 0; i < 2; ++i) {
    LayerSpec h;
    h.kind = LayerSpec::Kind::kDense;
    h.units = 16;
    h.l2 = l2;
    layers.push_back(h);
    LayerSpec r;
    r.kind = LayerSpec::Kind::kRelu;
    layers.push_back(r);
  }
  LayerSpec out;
  out.kind = LayerSpec::Kind::kDense;
  out.units = 1;
  out.bias = false;
  out.init_scale = 0.01;  // complex terms start near a zero shift
  layers.push_back(out);
  return layers;
}

std::vector<LayerSpec> cnn3d_layers(std::size_t out_units, double dropout_rate) {
  std::vector<LayerSpec> layers;
  const std::size_t filters[4] = {32, 32, 64, 64};
  for (std::size_t f : filters) {
    LayerSpec c;
    c.kind = LayerSpec::Kind::kConv3d;
    c.filters = f;
    layers.push_back(c);
    LayerSpec r;
    r.kind = LayerSpec::Kind::kRelu;
    layers.push_back(r);
    LayerSpec p;
    p.kind = LayerSpec::Kind::kMaxPool3d;
    layers.push_back(p);
  }
  LayerSpec fl;
  fl.kind = LayerSpec::Kind::kFlatten;
  layers.push_back(fl);

  LayerSpec d1;
  d1.kind = LayerSpec::Kind::kDense;
  d1.units = 128;
  layers.push_back(d1);
  LayerSpec r1;
  r1.kind = LayerSpec::Kind::kRelu;
  layers.push_back(r1);
  LayerSpec dr;
  dr.kind = LayerSpec::Kind::kDropout;
  dr.rate = dropout_rate;
  layers.push_back(dr);
  LayerSpec d2;
  d2.kind = LayerSpec::Kind::kDense;
  d2.units = 128;
  layers.push_back(d2);
  LayerSpec r2;
  r2.kind = LayerSpec::Kind::kRelu;
  layers.push_back(r2);
  LayerSpec out;
  out.kind = LayerSpec::Kind::kDense;
  out.units = out_units;
  out.bias = false;
  out.init_scale = 0.01;  // keep the gamma head off the clamp at init
  layers.push_back(out);
  return layers;
}

Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                      std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

StackResult append_layers(Graph& g, NodeId in, std::vector<std::size_t> shape,
                          const std::vector<LayerSpec>& layers,
                          const std::string& prefix, Rng& init_rng) {
  StackResult res;
  res.output = in;
  std::size_t dense_idx = 0, conv_idx = 0;
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerSpec::Kind::kDense: {
        if (shape.size() != 1)
          throw ShapeError(cat(prefix, ": dense layer needs a flat input, got rank ",
                               shape.size() + 1));
        const std::string name = prefix + ".dense" + std::to_string(++dense_idx);
        const std::size_t p = shape[0], u = l.units;
        Tensor wt = glorot_uniform({p, u}, p, u, init_rng);
        if (l.init_scale != 1.0)
          for (std::size_t i = 0; i < wt.size(); ++i) wt[i] *= l.init_scale;
        NodeId w = g.parameter(name + ".w", std::move(wt));
        std::optional<NodeId> b;
        if (l.bias) b = g.parameter(name + ".b", Tensor({u}));
        res.output = dense(g, res.output, w, b, name);
        if (l.l2 > 0.0) {
          res.weight_names.push_back(name + ".w");
          res.weight_l2.push_back(l.l2);
        }
        shape = {u};
        break;
      }
      case LayerSpec::Kind::kRelu:
        res.output = relu(g, res.output);
        break;
      case LayerSpec::Kind::kDropout:
        res.output = dropout(g, res.output, l.rate);
        break;
      case LayerSpec::Kind::kConv3d: {
        if (shape.size() != 4)
          throw ShapeError(cat(prefix, ": conv3d needs (d0,d1,d2,c) input, got rank ",
                               shape.size() + 1));
        const std::string name = prefix + ".conv" + std::to_string(++conv_idx);
        const std::size_t ci = shape[3], co = l.filters;
        const std::size_t k = l.kernel[0] * l.kernel[1] * l.kernel[2];
        NodeId w = g.parameter(
            name + ".w",
            glorot_uniform({l.kernel[0], l.kernel[1], l.kernel[2], ci, co}, k * ci,
                           k * co, init_rng));
        std::optional<NodeId> b;
        if (l.bias) b = g.parameter(name + ".b", Tensor({co}));
        res.output = conv3d(g, res.output, w, b, name);
        if (l.l2 > 0.0) {
          res.weight_names.push_back(name + ".w");
          res.weight_l2.push_back(l.l2);
        }
        shape[3] = co;
        break;
      }
      case LayerSpec::Kind::kMaxPool3d: {
        if (shape.size() != 4)
          throw ShapeError(cat(prefix, ": maxpool3d needs (d0,d1,d2,c) input"));
        res.output = maxpool3d(g, res.output, l.pool);
        for (int a = 0; a < 3; ++a)
          shape[a] = std::max<std::size_t>(shape[a] / l.pool[a], 1);
        break;
      }
      case LayerSpec::Kind::kFlatten: {
        res.output = flatten(g, res.output);
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        shape = {n};
        break;
      }
    }
  }
  res.out_shape = std::move(shape);
  return res;
}

namespace {

bool parse_preset(const std::string& name, std::string& head, long& arg) {
  auto open = name.find('(');
  if (open == std::string::npos) {
    head = name;
    arg = -1;
    return true;
  }
  if (name.back() != ')') return false;
  head = name.substr(0, open);
  try {
    arg = std::stol(name.substr(open + 1, name.size() - open - 2));
  } catch (const std::exception&) {
    return false;
  }
  return arg > 0;
}

}  // namespace

PresetGraph build_preset(const std::string& name, std::uint64_t seed,
                         std::array<std::size_t, 3> volume_extents) {
  std::string head;
  long arg = -1;
  if (!parse_preset(name, head, arg))
    throw ConfigError(cat("unknown preset '", name, "'"));

  PresetGraph pg{Graph(seed), 0, 0};
  Rng init(derive_seed(seed, 0xABCD));
  pg.input = pg.graph.input("x");
  if (head == "si_head") {
    if (arg < 2) throw ConfigError(cat("preset '", name, "': class count required"));
    auto res = append_layers(pg.graph, pg.input, {1},
                             si_head_layers(static_cast<std::size_t>(arg)), "si", init);
    pg.output = res.output;
  } else if (head == "ls_head") {
    if (arg < 1) throw ConfigError(cat("preset '", name, "': feature count required"));
    auto res = append_layers(pg.graph, pg.input, {static_cast<std::size_t>(arg)},
                             ls_head_layers(), "ls", init);
    pg.output = res.output;
  } else if (head == "cs_age_mlp") {
    auto res = append_layers(pg.graph, pg.input, {1}, cs_age_mlp_layers(), "cs_age", init);
    pg.output = res.output;
  } else if (head == "cnn3d") {
    if (arg < 1) throw ConfigError(cat("preset '", name, "': output units required"));
    auto res = append_layers(
        pg.graph, pg.input,
        {volume_extents[0], volume_extents[1], volume_extents[2], 1},
        cnn3d_layers(static_cast<std::size_t>(arg)), "cnn", init);
    pg.output = res.output;
  } else {
    throw ConfigError(cat("unknown preset '", name, "'"));
  }
  return pg;
}

}  // namespace dtm::netcore
