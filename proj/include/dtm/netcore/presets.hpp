#pragma once

#include <array>
#include <string>
#include <vector>

#include "dtm/netcore/graph.hpp"
#include "dtm/netcore/ops.hpp"
#include "dtm/rng.hpp"

namespace dtm::netcore {

/// Declarative layer description used by the fixed architecture presets.
struct LayerSpec {
  enum class Kind { kDense, kRelu, kDropout, kConv3d, kMaxPool3d, kFlatten };
  Kind kind = Kind::kDense;
  std::size_t units = 0;                   // dense
  bool bias = true;                        // dense / conv3d
  std::size_t filters = 0;                 // conv3d
  std::array<std::size_t, 3> kernel{3, 3, 3};
  std::array<std::size_t, 3> pool{2, 2, 2};
  double rate = 0.0;                       // dropout
  double l2 = 0.0;                         // L2 penalty on this layer's weights
  double init_scale = 1.0;                 // multiplier on the Glorot limit
};

// Architecture presets.
//   si_head(K):  one linear layer, no bias, K-1 outputs, fed by a constant 1
//   ls_head(p):  one linear layer, no bias, 1 output
//   cs_age_mlp:  dense(16)+relu -> dense(16)+relu -> dense(1, no bias),
//                L2 on the hidden weights
//   cnn3d(u):    conv(32)-pool, conv(32)-pool, conv(64)-pool, conv(64)-pool,
//                flatten, dense(128)+relu, dropout(0.3), dense(128)+relu,
//                dense(u, linear, no bias)
std::vector<LayerSpec> si_head_layers(std::size_t class_count);
std::vector<LayerSpec> ls_head_layers();
std::vector<LayerSpec> cs_age_mlp_layers(double l2 = 1e-3);
std::vector<LayerSpec> cnn3d_layers(std::size_t out_units, double dropout_rate = 0.3);

struct StackResult {
  NodeId output;
  std::vector<std::size_t> out_shape;       // per-sample shape after the stack
  std::vector<std::string> weight_names;    // parameters carrying an L2 term
  std::vector<double> weight_l2;            // matching coefficients
};

/// Appends a layer stack to `g` starting at node `in` whose per-sample shape
/// is `in_shape` (features for dense stacks, (d0,d1,d2,c) for conv stacks).
/// Parameters are named `<prefix>.<layer>.w|b` and Glorot-initialized from
/// `init_rng`; biases start at zero.
StackResult append_layers(Graph& g, NodeId in, std::vector<std::size_t> in_shape,
                          const std::vector<LayerSpec>& layers,
                          const std::string& prefix, Rng& init_rng);

/// Builds a standalone graph for a named preset: "si_head(K)", "ls_head(p)",
/// "cs_age_mlp", "cnn3d(out_units)". The graph has one input "x"; conv
/// presets assume desk-scale volumes unless `volume_extents` is given.
struct PresetGraph {
  Graph graph;
  NodeId input;
  NodeId output;
};
PresetGraph build_preset(const std::string& name, std::uint64_t seed = 0,
                         std::array<std::size_t, 3> volume_extents = {16, 16, 8});

Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                      std::size_t fan_out, Rng& rng);

}  // namespace dtm::netcore
