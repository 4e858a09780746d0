#include "dtm/netcore/graph.hpp"

#include "dtm/common.hpp"

namespace dtm::netcore {

namespace {

class InputNode final : public Node {
 public:
  std::string_view kind() const override { return "input"; }
  void forward(Graph&) override {
    if (!bound) throw ShapeError(cat("input(", label(), "): no value bound"));
  }
  void backward(Graph&) override {}
  bool bound = false;
};

class ParameterNode final : public Node {
 public:
  std::string_view kind() const override { return "parameter"; }
  void forward(Graph&) override {}
  void backward(Graph&) override {}
};

}  // namespace

NodeId Graph::input(const std::string& name) {
  if (inputs_.count(name)) throw ShapeError(cat("input '", name, "' already exists"));
  auto node = std::make_unique<InputNode>();
  node->label_ = name;
  NodeId id = append(std::move(node));
  inputs_[name] = id;
  return id;
}

NodeId Graph::parameter(const std::string& name, Tensor init) {
  if (params_.count(name)) throw ShapeError(cat("parameter '", name, "' already exists"));
  auto node = std::make_unique<ParameterNode>();
  node->label_ = name;
  node->value_ = std::move(init);
  NodeId id = append(std::move(node));
  params_[name] = id;
  return id;
}

NodeId Graph::append(std::unique_ptr<Node> node) {
  nodes_.push_back(std::move(node));
  forward_valid_ = false;
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::bind(const std::string& name, Tensor value) {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw ShapeError(cat("unknown input '", name, "'"));
  auto& n = static_cast<InputNode&>(*nodes_[it->second]);
  n.value_ = std::move(value);
  n.bound = true;
  forward_valid_ = false;
}

const Tensor& Graph::forward(NodeId out) {
  if (out >= nodes_.size()) throw ShapeError("forward: node id out of range");
  for (NodeId id = 0; id <= out; ++id) nodes_[id]->forward(*this);
  forward_valid_ = true;
  forward_extent_ = out;
  return nodes_[out]->value_;
}

GradientMap Graph::backward(NodeId loss) {
  if (!forward_valid_ || loss > forward_extent_)
    throw ShapeError("backward: forward has not been run for this node");
  if (nodes_[loss]->value_.size() != 1)
    throw ShapeError(cat("backward: loss node ", nodes_[loss]->describe(),
                         " is not scalar, shape ", shape_str(nodes_[loss]->value_)));
  for (NodeId id = 0; id <= forward_extent_; ++id) {
    Node& n = *nodes_[id];
    n.grad_ = Tensor(n.value_.shape());
  }
  nodes_[loss]->grad_[0] = 1.0;
  for (NodeId id = loss + 1; id-- > 0;) nodes_[id]->backward(*this);

  GradientMap grads;
  for (const auto& [name, id] : params_) {
    if (id <= forward_extent_ && nodes_[id]->grad_.size() == nodes_[id]->value_.size())
      grads[name] = nodes_[id]->grad_;
    else
      grads[name] = Tensor(nodes_[id]->value_.shape());
  }
  return grads;
}

GradientMap Graph::parameters() const {
  GradientMap out;
  for (const auto& [name, id] : params_) out[name] = nodes_[id]->value_;
  return out;
}

std::vector<std::string> Graph::parameter_names() const {
  std::vector<std::string> names;
  names.reserve(params_.size());
  for (const auto& [name, id] : params_) names.push_back(name);
  return names;
}

Tensor& Graph::parameter_value(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError(cat("unknown parameter '", name, "'"));
  return nodes_[it->second]->value_;
}

NodeId Graph::parameter_id(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError(cat("unknown parameter '", name, "'"));
  return it->second;
}

void Graph::set_parameters(const GradientMap& values) {
  for (const auto& [name, v] : values) {
    Tensor& dst = parameter_value(name);
    if (!dst.same_shape(v))
      throw ShapeError(cat("parameter '", name, "': shape ", shape_str(v),
                           " does not match ", shape_str(dst)));
    dst = v;
    forward_valid_ = false;
  }
}

bool Graph::has_parameter(const std::string& name) const {
  return params_.count(name) != 0;
}

}  // namespace dtm::netcore
