#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dtm/netcore/tensor.hpp"
#include "dtm/rng.hpp"

namespace dtm::netcore {

class Graph;

using NodeId = std::uint32_t;
using GradientMap = std::map<std::string, Tensor>;

enum class Mode { kTraining, kInference };

/// One operation record. Nodes are created in topological order; forward
/// caches the value, backward reads this node's gradient and accumulates
/// into the gradients of its inputs.
class Node {
 public:
  virtual ~Node() = default;
  virtual std::string_view kind() const = 0;
  virtual void forward(Graph& g) = 0;
  virtual void backward(Graph& g) = 0;

  const std::vector<NodeId>& inputs() const { return inputs_; }
  const std::string& label() const { return label_; }
  const Tensor& value() const { return value_; }
  const Tensor& grad() const { return grad_; }

  std::string describe() const {
    std::string s(kind());
    if (!label_.empty()) s += "(" + label_ + ")";
    return s;
  }

  // Build-time wiring; not used after the node joins a graph.
  void set_inputs(std::vector<NodeId> ids) { inputs_ = std::move(ids); }
  void set_label(std::string l) { label_ = std::move(l); }

 protected:
  friend class Graph;
  std::vector<NodeId> inputs_;
  std::string label_;
  Tensor value_;
  Tensor grad_;
};

/// Static computation graph with re-bindable inputs and named trainable
/// parameters. Node creation order is the evaluation order; `forward(out)`
/// evaluates nodes 0..out, so nodes appended after `out` (e.g. the loss)
/// need not have their inputs bound for a prediction pass.
class Graph {
 public:
  explicit Graph(std::uint64_t seed = 0) : rng_(seed) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId input(const std::string& name);
  NodeId parameter(const std::string& name, Tensor init);
  NodeId append(std::unique_ptr<Node> node);

  /// Binds an input value for the next forward pass.
  void bind(const std::string& name, Tensor value);

  const Tensor& forward(NodeId out);

  /// Gradients of the scalar node `loss` with respect to every parameter.
  /// Parameters not reachable from `loss` get zero gradients.
  GradientMap backward(NodeId loss);

  Node& node(NodeId id) { return *nodes_[id]; }
  const Node& node(NodeId id) const { return *nodes_[id]; }
  Tensor& value(NodeId id) { return nodes_[id]->value_; }
  Tensor& grad(NodeId id) { return nodes_[id]->grad_; }
  std::size_t node_count() const { return nodes_.size(); }

  GradientMap parameters() const;
  std::vector<std::string> parameter_names() const;
  Tensor& parameter_value(const std::string& name);
  NodeId parameter_id(const std::string& name) const;
  /// Overwrites matching parameters; unknown names are an error.
  void set_parameters(const GradientMap& values);
  bool has_parameter(const std::string& name) const;
  bool has_input(const std::string& name) const { return inputs_.count(name) != 0; }

  void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }
  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
  Rng& rng() { return rng_; }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::map<std::string, NodeId> inputs_;
  std::map<std::string, NodeId> params_;
  Mode mode_ = Mode::kTraining;
  Rng rng_;
  bool forward_valid_ = false;
  NodeId forward_extent_ = 0;
};

}  // namespace dtm::netcore
