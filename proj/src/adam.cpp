#include "dtm/netcore/adam.hpp"

#include <cmath>

#include "dtm/common.hpp"

namespace dtm::netcore {

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  if (lr_ <= 0.0) throw ConfigError("adam: learning rate must be positive");
  if (beta1_ <= 0.0 || beta1_ >= 1.0 || beta2_ <= 0.0 || beta2_ >= 1.0)
    throw ConfigError("adam: betas must lie in (0,1)");
  if (eps_ <= 0.0) throw ConfigError("adam: epsilon must be positive");
}

void Adam::step(Graph& g, const GradientMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, grad] : grads) {
    Tensor& p = g.parameter_value(name);
    if (!p.same_shape(grad))
      throw ShapeError(cat("adam: gradient shape ", shape_str(grad),
                           " does not match parameter '", name, "' ",
                           shape_str(p)));
    if (!grad.all_finite())
      throw NumericError(cat("adam: non-finite gradient for parameter '", name, "'"));
    Tensor& m = m_.try_emplace(name, Tensor(p.shape())).first->second;
    Tensor& v = v_.try_emplace(name, Tensor(p.shape())).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace dtm::netcore
