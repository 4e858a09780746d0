#include "dtm/netcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtm/common.hpp"

namespace dtm::netcore {

namespace {

const Tensor& in_val(Graph& g, const Node& self, std::size_t i) {
  return g.value(self.inputs()[i]);
}

Tensor& in_grad(Graph& g, const Node& self, std::size_t i) {
  return g.grad(self.inputs()[i]);
}

class DenseNode final : public Node {
 public:
  std::string_view kind() const override { return "dense"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    const Tensor& w = in_val(g, *this, 1);
    if (x.rank() != 2 || w.rank() != 2 || x.extent(1) != w.extent(0))
      throw ShapeError(cat(describe(), ": cannot multiply x", shape_str(x), " by w",
                           shape_str(w)));
    const std::size_t n = x.extent(0), p = x.extent(1), u = w.extent(1);
    const bool biased = inputs_.size() == 3;
    const double* bp = nullptr;
    if (biased) {
      const Tensor& b = in_val(g, *this, 2);
      if (b.size() != u)
        throw ShapeError(cat(describe(), ": bias size ", b.size(), " != units ", u));
      bp = b.data();
    }
    value_ = Tensor({n, u});
    for (std::size_t i = 0; i < n; ++i) {
      const double* xr = x.data() + i * p;
      double* yr = value_.data() + i * u;
      if (biased)
        for (std::size_t j = 0; j < u; ++j) yr[j] = bp[j];
      for (std::size_t k = 0; k < p; ++k) {
        const double xv = xr[k];
        const double* wr = w.data() + k * u;
        for (std::size_t j = 0; j < u; ++j) yr[j] += xv * wr[j];
      }
    }
  }

  void backward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    const Tensor& w = in_val(g, *this, 1);
    Tensor& gx = in_grad(g, *this, 0);
    Tensor& gw = in_grad(g, *this, 1);
    const std::size_t n = x.extent(0), p = x.extent(1), u = w.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
      const double* gy = grad_.data() + i * u;
      const double* xr = x.data() + i * p;
      double* gxr = gx.data() + i * p;
      for (std::size_t k = 0; k < p; ++k) {
        const double* wr = w.data() + k * u;
        double* gwr = gw.data() + k * u;
        const double xv = xr[k];
        double s = 0.0;
        for (std::size_t j = 0; j < u; ++j) {
          s += wr[j] * gy[j];
          gwr[j] += xv * gy[j];
        }
        gxr[k] += s;
      }
      if (inputs_.size() == 3) {
        double* gb = in_grad(g, *this, 2).data();
        for (std::size_t j = 0; j < u; ++j) gb[j] += gy[j];
      }
    }
  }
};

class ReluNode final : public Node {
 public:
  std::string_view kind() const override { return "relu"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    value_ = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) value_[i] = x[i] > 0.0 ? x[i] : 0.0;
  }

  void backward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    Tensor& gx = in_grad(g, *this, 0);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) gx[i] += grad_[i];
  }
};

class DropoutNode final : public Node {
 public:
  explicit DropoutNode(double rate) : rate_(rate) {}
  std::string_view kind() const override { return "dropout"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    value_ = Tensor(x.shape());
    if (g.mode() == Mode::kInference || rate_ <= 0.0) {
      mask_.clear();
      for (std::size_t i = 0; i < x.size(); ++i) value_[i] = x[i];
      return;
    }
    // Inverted scaling: survivors are multiplied by 1/(1-rate) during
    // training so inference is the plain identity pathway.
    const double inv_keep = 1.0 / (1.0 - rate_);
    mask_.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (g.rng().uniform01() >= rate_) {
        mask_[i] = inv_keep;
        value_[i] = x[i] * inv_keep;
      }
    }
  }

  void backward(Graph& g) override {
    Tensor& gx = in_grad(g, *this, 0);
    if (mask_.empty()) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad_[i];
    } else {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad_[i] * mask_[i];
    }
  }

 private:
  double rate_;
  std::vector<double> mask_;
};

class Conv3dNode final : public Node {
 public:
  std::string_view kind() const override { return "conv3d"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    const Tensor& w = in_val(g, *this, 1);
    if (x.rank() != 5)
      throw ShapeError(cat(describe(), ": expected input (n,d0,d1,d2,c), got ",
                           shape_str(x)));
    if (w.rank() != 5 || w.extent(0) % 2 == 0 || w.extent(1) % 2 == 0 ||
        w.extent(2) % 2 == 0)
      throw ShapeError(cat(describe(), ": kernel must be (k0,k1,k2,ci,co) with odd "
                           "spatial extents, got ", shape_str(w)));
    if (x.extent(4) != w.extent(3))
      throw ShapeError(cat(describe(), ": input channels ", x.extent(4),
                           " != kernel channels ", w.extent(3)));
    const double* bp = nullptr;
    if (inputs_.size() == 3) {
      const Tensor& b = in_val(g, *this, 2);
      if (b.size() != w.extent(4))
        throw ShapeError(cat(describe(), ": bias size ", b.size(), " != filters ",
                             w.extent(4)));
      bp = b.data();
    }
    const auto [n, d0, d1, d2, ci] = dims(x);
    const std::size_t k0 = w.extent(0), k1 = w.extent(1), k2 = w.extent(2),
                      co = w.extent(4);
    value_ = Tensor({n, d0, d1, d2, co});
    acc_.assign(co, 0.0);
    const std::size_t h0 = k0 / 2, h1 = k1 / 2, h2 = k2 / 2;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t o0 = 0; o0 < d0; ++o0)
        for (std::size_t o1 = 0; o1 < d1; ++o1)
          for (std::size_t o2 = 0; o2 < d2; ++o2) {
            if (bp)
              for (std::size_t c = 0; c < co; ++c) acc_[c] = bp[c];
            else
              std::fill(acc_.begin(), acc_.end(), 0.0);
            for (std::size_t q0 = 0; q0 < k0; ++q0) {
              const std::ptrdiff_t i0 = static_cast<std::ptrdiff_t>(o0 + q0) -
                                        static_cast<std::ptrdiff_t>(h0);
              if (i0 < 0 || i0 >= static_cast<std::ptrdiff_t>(d0)) continue;
              for (std::size_t q1 = 0; q1 < k1; ++q1) {
                const std::ptrdiff_t i1 = static_cast<std::ptrdiff_t>(o1 + q1) -
                                          static_cast<std::ptrdiff_t>(h1);
                if (i1 < 0 || i1 >= static_cast<std::ptrdiff_t>(d1)) continue;
                for (std::size_t q2 = 0; q2 < k2; ++q2) {
                  const std::ptrdiff_t i2 = static_cast<std::ptrdiff_t>(o2 + q2) -
                                            static_cast<std::ptrdiff_t>(h2);
                  if (i2 < 0 || i2 >= static_cast<std::ptrdiff_t>(d2)) continue;
                  const double* xp =
                      x.data() + (((b * d0 + i0) * d1 + i1) * d2 + i2) * ci;
                  const double* wp = w.data() + ((q0 * k1 + q1) * k2 + q2) * ci * co;
                  for (std::size_t c = 0; c < ci; ++c) {
                    const double xv = xp[c];
                    const double* wr = wp + c * co;
                    for (std::size_t f = 0; f < co; ++f) acc_[f] += xv * wr[f];
                  }
                }
              }
            }
            double* yp = value_.data() + (((b * d0 + o0) * d1 + o1) * d2 + o2) * co;
            for (std::size_t f = 0; f < co; ++f) yp[f] = acc_[f];
          }
    }
  }

  void backward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    const Tensor& w = in_val(g, *this, 1);
    Tensor& gx = in_grad(g, *this, 0);
    Tensor& gw = in_grad(g, *this, 1);
    const auto [n, d0, d1, d2, ci] = dims(x);
    const std::size_t k0 = w.extent(0), k1 = w.extent(1), k2 = w.extent(2),
                      co = w.extent(4);
    const std::size_t h0 = k0 / 2, h1 = k1 / 2, h2 = k2 / 2;
    double* gb = inputs_.size() == 3 ? in_grad(g, *this, 2).data() : nullptr;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t o0 = 0; o0 < d0; ++o0)
        for (std::size_t o1 = 0; o1 < d1; ++o1)
          for (std::size_t o2 = 0; o2 < d2; ++o2) {
            const double* gy = grad_.data() + (((b * d0 + o0) * d1 + o1) * d2 + o2) * co;
            if (gb)
              for (std::size_t f = 0; f < co; ++f) gb[f] += gy[f];
            for (std::size_t q0 = 0; q0 < k0; ++q0) {
              const std::ptrdiff_t i0 = static_cast<std::ptrdiff_t>(o0 + q0) -
                                        static_cast<std::ptrdiff_t>(h0);
              if (i0 < 0 || i0 >= static_cast<std::ptrdiff_t>(d0)) continue;
              for (std::size_t q1 = 0; q1 < k1; ++q1) {
                const std::ptrdiff_t i1 = static_cast<std::ptrdiff_t>(o1 + q1) -
                                          static_cast<std::ptrdiff_t>(h1);
                if (i1 < 0 || i1 >= static_cast<std::ptrdiff_t>(d1)) continue;
                for (std::size_t q2 = 0; q2 < k2; ++q2) {
                  const std::ptrdiff_t i2 = static_cast<std::ptrdiff_t>(o2 + q2) -
                                            static_cast<std::ptrdiff_t>(h2);
                  if (i2 < 0 || i2 >= static_cast<std::ptrdiff_t>(d2)) continue;
                  const std::size_t xoff = (((b * d0 + i0) * d1 + i1) * d2 + i2) * ci;
                  const double* xp = x.data() + xoff;
                  double* gxp = gx.data() + xoff;
                  const std::size_t woff = ((q0 * k1 + q1) * k2 + q2) * ci * co;
                  for (std::size_t c = 0; c < ci; ++c) {
                    const double* wr = w.data() + woff + c * co;
                    double* gwr = gw.data() + woff + c * co;
                    const double xv = xp[c];
                    double s = 0.0;
                    for (std::size_t f = 0; f < co; ++f) {
                      s += wr[f] * gy[f];
                      gwr[f] += xv * gy[f];
                    }
                    gxp[c] += s;
                  }
                }
              }
            }
          }
    }
  }

 private:
  struct Dims {
    std::size_t n, d0, d1, d2, ci;
  };
  static Dims dims(const Tensor& x) {
    return {x.extent(0), x.extent(1), x.extent(2), x.extent(3), x.extent(4)};
  }
  std::vector<double> acc_;
};

class MaxPool3dNode final : public Node {
 public:
  explicit MaxPool3dNode(std::array<std::size_t, 3> window) : window_(window) {}
  std::string_view kind() const override { return "maxpool3d"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    if (x.rank() != 5)
      throw ShapeError(cat(describe(), ": expected input (n,d0,d1,d2,c), got ",
                           shape_str(x)));
    const std::size_t n = x.extent(0), d0 = x.extent(1), d1 = x.extent(2),
                      d2 = x.extent(3), ch = x.extent(4);
    const std::size_t e0 = out_extent(d0, window_[0]);
    const std::size_t e1 = out_extent(d1, window_[1]);
    const std::size_t e2 = out_extent(d2, window_[2]);
    value_ = Tensor({n, e0, e1, e2, ch});
    argmax_.assign(value_.size(), 0);
    std::size_t out = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o0 = 0; o0 < e0; ++o0)
        for (std::size_t o1 = 0; o1 < e1; ++o1)
          for (std::size_t o2 = 0; o2 < e2; ++o2)
            for (std::size_t c = 0; c < ch; ++c, ++out) {
              const std::size_t s0 = o0 * window_[0], s1 = o1 * window_[1],
                                s2 = o2 * window_[2];
              const std::size_t l0 = std::min(s0 + window_[0], d0);
              const std::size_t l1 = std::min(s1 + window_[1], d1);
              const std::size_t l2 = std::min(s2 + window_[2], d2);
              double best = -std::numeric_limits<double>::infinity();
              std::size_t best_idx = 0;
              for (std::size_t i0 = s0; i0 < l0; ++i0)
                for (std::size_t i1 = s1; i1 < l1; ++i1)
                  for (std::size_t i2 = s2; i2 < l2; ++i2) {
                    const std::size_t idx =
                        (((b * d0 + i0) * d1 + i1) * d2 + i2) * ch + c;
                    if (x[idx] > best) {
                      best = x[idx];
                      best_idx = idx;
                    }
                  }
              value_[out] = best;
              argmax_[out] = best_idx;
            }
  }

  void backward(Graph& g) override {
    Tensor& gx = in_grad(g, *this, 0);
    for (std::size_t i = 0; i < grad_.size(); ++i) gx[argmax_[i]] += grad_[i];
  }

 private:
  static std::size_t out_extent(std::size_t e, std::size_t w) {
    return std::max<std::size_t>(e / w, 1);
  }
  std::array<std::size_t, 3> window_;
  std::vector<std::size_t> argmax_;
};

class FlattenNode final : public Node {
 public:
  std::string_view kind() const override { return "flatten"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    if (x.rank() < 1) throw ShapeError(cat(describe(), ": empty input"));
    std::size_t rest = 1;
    for (std::size_t a = 1; a < x.rank(); ++a) rest *= x.extent(a);
    value_ = Tensor({x.extent(0), rest});
    std::copy(x.data(), x.data() + x.size(), value_.data());
  }

  void backward(Graph& g) override {
    Tensor& gx = in_grad(g, *this, 0);
    for (std::size_t i = 0; i < grad_.size(); ++i) gx[i] += grad_[i];
  }
};

enum class BinOp { kAdd, kSub, kMul };

class BinaryNode final : public Node {
 public:
  explicit BinaryNode(BinOp op) : op_(op) {}
  std::string_view kind() const override {
    switch (op_) {
      case BinOp::kAdd: return "add";
      case BinOp::kSub: return "sub";
      default: return "mul";
    }
  }

  void forward(Graph& g) override {
    const Tensor& a = in_val(g, *this, 0);
    const Tensor& b = in_val(g, *this, 1);
    if (!a.same_shape(b))
      throw ShapeError(cat(describe(), ": shapes ", shape_str(a), " and ",
                           shape_str(b), " differ"));
    value_ = Tensor(a.shape());
    switch (op_) {
      case BinOp::kAdd:
        for (std::size_t i = 0; i < a.size(); ++i) value_[i] = a[i] + b[i];
        break;
      case BinOp::kSub:
        for (std::size_t i = 0; i < a.size(); ++i) value_[i] = a[i] - b[i];
        break;
      case BinOp::kMul:
        for (std::size_t i = 0; i < a.size(); ++i) value_[i] = a[i] * b[i];
        break;
    }
  }

  void backward(Graph& g) override {
    const Tensor& a = in_val(g, *this, 0);
    const Tensor& b = in_val(g, *this, 1);
    Tensor& ga = in_grad(g, *this, 0);
    Tensor& gb = in_grad(g, *this, 1);
    switch (op_) {
      case BinOp::kAdd:
        for (std::size_t i = 0; i < a.size(); ++i) {
          ga[i] += grad_[i];
          gb[i] += grad_[i];
        }
        break;
      case BinOp::kSub:
        for (std::size_t i = 0; i < a.size(); ++i) {
          ga[i] += grad_[i];
          gb[i] -= grad_[i];
        }
        break;
      case BinOp::kMul:
        for (std::size_t i = 0; i < a.size(); ++i) {
          ga[i] += grad_[i] * b[i];
          gb[i] += grad_[i] * a[i];
        }
        break;
    }
  }

 private:
  BinOp op_;
};

class ScaleNode final : public Node {
 public:
  explicit ScaleNode(double c) : c_(c) {}
  std::string_view kind() const override { return "scale"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    value_ = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) value_[i] = c_ * x[i];
  }

  void backward(Graph& g) override {
    Tensor& gx = in_grad(g, *this, 0);
    for (std::size_t i = 0; i < grad_.size(); ++i) gx[i] += c_ * grad_[i];
  }

 private:
  double c_;
};

class ExpNode final : public Node {
 public:
  std::string_view kind() const override { return "exp"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    value_ = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) value_[i] = std::exp(x[i]);
  }

  void backward(Graph& g) override {
    Tensor& gx = in_grad(g, *this, 0);
    for (std::size_t i = 0; i < grad_.size(); ++i) gx[i] += value_[i] * grad_[i];
  }
};

class LogNode final : public Node {
 public:
  std::string_view kind() const override { return "log"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    value_ = Tensor(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) value_[i] = std::log(x[i]);
  }

  void backward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    Tensor& gx = in_grad(g, *this, 0);
    for (std::size_t i = 0; i < grad_.size(); ++i) gx[i] += grad_[i] / x[i];
  }
};

class SumNode final : public Node {
 public:
  explicit SumNode(bool average) : average_(average) {}
  std::string_view kind() const override { return average_ ? "mean" : "sum"; }

  void forward(Graph& g) override {
    const Tensor& x = in_val(g, *this, 0);
    if (x.size() == 0) throw ShapeError(cat(describe(), ": empty input"));
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    value_ = Tensor::scalar(average_ ? s / static_cast<double>(x.size()) : s);
  }

  void backward(Graph& g) override {
    Tensor& gx = in_grad(g, *this, 0);
    const double go =
        average_ ? grad_[0] / static_cast<double>(gx.size()) : grad_[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
  }

 private:
  bool average_;
};

class RowwiseSubNode final : public Node {
 public:
  std::string_view kind() const override { return "rowwise_sub"; }

  void forward(Graph& g) override {
    const Tensor& a = in_val(g, *this, 0);
    const Tensor& b = in_val(g, *this, 1);
    if (a.rank() != 2 || b.rank() != 2 || b.extent(1) != 1 ||
        a.extent(0) != b.extent(0))
      throw ShapeError(cat(describe(), ": need a (n,m) and b (n,1), got ",
                           shape_str(a), " and ", shape_str(b)));
    const std::size_t n = a.extent(0), m = a.extent(1);
    value_ = Tensor({n, m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        value_[i * m + j] = a[i * m + j] - b[i];
  }

  void backward(Graph& g) override {
    const Tensor& a = in_val(g, *this, 0);
    Tensor& ga = in_grad(g, *this, 0);
    Tensor& gb = in_grad(g, *this, 1);
    const std::size_t n = a.extent(0), m = a.extent(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        ga[i * m + j] += grad_[i * m + j];
        gb[i] -= grad_[i * m + j];
      }
  }
};

}  // namespace

NodeId dense(Graph& g, NodeId x, NodeId w, std::optional<NodeId> b,
             const std::string& label) {
  auto node = std::make_unique<DenseNode>();
  std::vector<NodeId> ins{x, w};
  if (b) ins.push_back(*b);
  node->set_inputs(std::move(ins));
  node->set_label(label);
  return g.append(std::move(node));
}

NodeId relu(Graph& g, NodeId x) {
  auto node = std::make_unique<ReluNode>();
  node->set_inputs({x});
  return g.append(std::move(node));
}

NodeId dropout(Graph& g, NodeId x, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw ShapeError(cat("dropout: rate ", rate, " outside [0,1)"));
  auto node = std::make_unique<DropoutNode>(rate);
  node->set_inputs({x});
  return g.append(std::move(node));
}

NodeId conv3d(Graph& g, NodeId x, NodeId w, std::optional<NodeId> b,
              const std::string& label) {
  auto node = std::make_unique<Conv3dNode>();
  std::vector<NodeId> ins{x, w};
  if (b) ins.push_back(*b);
  node->set_inputs(std::move(ins));
  node->set_label(label);
  return g.append(std::move(node));
}

NodeId maxpool3d(Graph& g, NodeId x, std::array<std::size_t, 3> window) {
  for (std::size_t w : window)
    if (w == 0) throw ShapeError("maxpool3d: zero window extent");
  auto node = std::make_unique<MaxPool3dNode>(window);
  node->set_inputs({x});
  return g.append(std::move(node));
}

NodeId flatten(Graph& g, NodeId x) {
  auto node = std::make_unique<FlattenNode>();
  node->set_inputs({x});
  return g.append(std::move(node));
}

namespace {
NodeId binary(Graph& g, BinOp op, NodeId a, NodeId b) {
  auto node = std::make_unique<BinaryNode>(op);
  node->set_inputs({a, b});
  return g.append(std::move(node));
}
}  // namespace

NodeId add(Graph& g, NodeId a, NodeId b) { return binary(g, BinOp::kAdd, a, b); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return binary(g, BinOp::kSub, a, b); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return binary(g, BinOp::kMul, a, b); }

NodeId scale(Graph& g, NodeId x, double c) {
  auto node = std::make_unique<ScaleNode>(c);
  node->set_inputs({x});
  return g.append(std::move(node));
}

NodeId exp_op(Graph& g, NodeId x) {
  auto node = std::make_unique<ExpNode>();
  node->set_inputs({x});
  return g.append(std::move(node));
}

NodeId log_op(Graph& g, NodeId x) {
  auto node = std::make_unique<LogNode>();
  node->set_inputs({x});
  return g.append(std::move(node));
}

NodeId sum(Graph& g, NodeId x) {
  auto node = std::make_unique<SumNode>(false);
  node->set_inputs({x});
  return g.append(std::move(node));
}

NodeId mean(Graph& g, NodeId x) {
  auto node = std::make_unique<SumNode>(true);
  node->set_inputs({x});
  return g.append(std::move(node));
}

NodeId rowwise_sub(Graph& g, NodeId a, NodeId b) {
  auto node = std::make_unique<RowwiseSubNode>();
  node->set_inputs({a, b});
  return g.append(std::move(node));
}

}  // namespace dtm::netcore
