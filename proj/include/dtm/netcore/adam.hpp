#pragma once

#include <map>
#include <string>

#include "dtm/netcore/graph.hpp"

namespace dtm::netcore {

/// Adam with bias correction. Moment tensors are lazily allocated per
/// parameter name on first update and always match the parameter's shape.
class Adam {
 public:
  explicit Adam(double learning_rate = 5e-5, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-7);

  /// One update over all entries of `grads`; parameters are modified in
  /// place through the graph. Throws NumericError on non-finite gradients,
  /// naming the parameter.
  void step(Graph& g, const GradientMap& grads);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::uint64_t step_count() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace dtm::netcore
