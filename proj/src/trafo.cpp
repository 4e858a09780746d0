#include "dtm/trafo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtm/common.hpp"

namespace dtm::trafo {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

CutpointVector CutpointVector::from_gammas(std::vector<double> gammas) {
  if (gammas.empty()) throw NumericError("cutpoints: need at least one gamma");
  CutpointVector cv;
  cv.thetas.resize(gammas.size());
  cv.thetas[0] = gammas[0];
  for (std::size_t k = 1; k < gammas.size(); ++k)
    cv.thetas[k] = cv.thetas[k - 1] + std::exp(gammas[k]);
  cv.gammas = std::move(gammas);
  return cv;
}

CutpointVector CutpointVector::from_thetas(const std::vector<double>& thetas) {
  if (thetas.empty()) throw NumericError("cutpoints: need at least one theta");
  std::vector<double> gammas(thetas.size());
  gammas[0] = thetas[0];
  for (std::size_t k = 1; k < thetas.size(); ++k) {
    const double inc = thetas[k] - thetas[k - 1];
    if (!(inc > 0.0))
      throw NumericError(cat("cutpoints: thetas not strictly increasing at k=", k + 1));
    gammas[k] = std::log(inc);
  }
  CutpointVector cv;
  cv.gammas = std::move(gammas);
  cv.thetas = thetas;
  return cv;
}

BernsteinBasis BernsteinBasis::create(std::size_t order, std::vector<double> raw,
                                      double lower, double upper) {
  if (order < 1) throw ConfigError("bernstein: order must be >= 1");
  if (raw.size() != order + 1)
    throw ConfigError(cat("bernstein: expected ", order + 1, " parameters, got ",
                          raw.size()));
  if (!(lower < upper)) throw ConfigError("bernstein: lower must be < upper");
  BernsteinBasis b;
  b.order = order;
  b.raw = std::move(raw);
  b.lower = lower;
  b.upper = upper;
  return b;
}

BernsteinBasis BernsteinBasis::for_sample(std::size_t order,
                                          const std::vector<double>& y) {
  if (y.empty()) throw ConfigError("bernstein: empty sample");
  auto [mn, mx] = std::minmax_element(y.begin(), y.end());
  double lo = *mn, hi = *mx;
  if (!(lo < hi)) throw ConfigError("bernstein: degenerate sample range");
  const double pad = 0.01 * (hi - lo);
  return create(order, std::vector<double>(order + 1, 0.0), lo - pad, hi + pad);
}

std::vector<double> BernsteinBasis::coefficients() const {
  std::vector<double> c(raw.size());
  c[0] = raw[0];
  for (std::size_t j = 1; j < raw.size(); ++j) c[j] = c[j - 1] + std::exp(raw[j]);
  return c;
}

namespace {

// Bernstein basis values b_{j,P}(t) for j = 0..P, iteratively (stable).
void bernstein_row(double t, std::size_t order, std::vector<double>& out) {
  out.assign(order + 1, 0.0);
  out[0] = 1.0;
  for (std::size_t d = 1; d <= order; ++d) {
    double carry = 0.0;
    for (std::size_t j = 0; j <= d; ++j) {
      const double prev = j <= d - 1 ? out[j] : 0.0;
      const double v = (1.0 - t) * prev + carry;
      carry = t * prev;
      out[j] = v;
    }
  }
}

}  // namespace

double BernsteinBasis::value(double y) const {
  const double t = std::clamp((y - lower) / (upper - lower), 0.0, 1.0);
  const auto c = coefficients();
  std::vector<double> b;
  bernstein_row(t, order, b);
  double h = 0.0;
  for (std::size_t j = 0; j <= order; ++j) h += c[j] * b[j];
  return h;
}

double BernsteinBasis::derivative(double y) const {
  const double t = std::clamp((y - lower) / (upper - lower), 0.0, 1.0);
  const auto c = coefficients();
  std::vector<double> b;
  bernstein_row(t, order - 1, b);
  double d = 0.0;
  for (std::size_t j = 0; j + 1 <= order; ++j) d += (c[j + 1] - c[j]) * b[j];
  return d * static_cast<double>(order) / (upper - lower);
}

std::vector<double> ordinal_class_probs(const CutpointVector& cutpoints,
                                        double shift, latent::Kind dist) {
  std::vector<double> shifted(cutpoints.thetas.size());
  for (std::size_t k = 0; k < shifted.size(); ++k)
    shifted[k] = cutpoints.thetas[k] - shift;
  return ordinal_probs_from_shifted(shifted, dist);
}

std::vector<double> ordinal_probs_from_shifted(const std::vector<double>& shifted,
                                               latent::Kind dist) {
  const std::size_t K = shifted.size() + 1;
  std::vector<double> probs(K);
  double prev = 0.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double F = latent::cdf(dist, shifted[k]);
    probs[k] = latent::clamp_prob(F - prev);
    prev = F;
  }
  probs[K - 1] = latent::clamp_prob(1.0 - prev);
  return probs;
}

double nll(const std::vector<double>& log_likelihoods) {
  if (log_likelihoods.empty()) throw NumericError("nll: no contributions");
  double s = 0.0;
  for (double l : log_likelihoods) s += l;
  return -s / static_cast<double>(log_likelihoods.size());
}

double exact_log_density(const BernsteinBasis& basis, double shift, double y,
                         latent::Kind dist, std::size_t* clamp_warnings) {
  if (y < basis.lower || y > basis.upper) {
    if (clamp_warnings) ++*clamp_warnings;
    y = std::clamp(y, basis.lower, basis.upper);
  }
  const double h = basis.value(y);
  const double dh = basis.derivative(y);
  return latent::log_pdf(dist, h - shift) + std::log(dh);
}

double censored_log_prob(double h_at_upper, double h_at_lower, latent::Kind dist) {
  if (!(h_at_lower < h_at_upper))
    throw NumericError(cat("censored interval inverted: lower ", h_at_lower,
                           " >= upper ", h_at_upper));
  const double fu = h_at_upper == kInf ? 1.0 : latent::cdf(dist, h_at_upper);
  const double fl = h_at_lower == -kInf ? 0.0 : latent::cdf(dist, h_at_lower);
  return std::log(latent::clamp_prob(fu - fl));
}

std::pair<double, double> collapse_to_binary(const std::vector<double>& probs,
                                             int cut_after) {
  const int K = static_cast<int>(probs.size());
  if (cut_after < 1 || cut_after > K - 1)
    throw ConfigError(cat("collapse: cut class ", cut_after, " outside 1..", K - 1));
  double fav = 0.0;
  for (int k = 0; k < cut_after; ++k) fav += probs[k];
  double unfav = 0.0;
  for (int k = cut_after; k < K; ++k) unfav += probs[k];
  return {fav, unfav};
}

namespace {

using netcore::Graph;
using netcore::Node;
using netcore::NodeId;
using netcore::Tensor;

class CutpointMapNode final : public Node {
 public:
  std::string_view kind() const override { return "cutpoint_map"; }

  void forward(Graph& g) override {
    const Tensor& gamma = g.value(inputs_[0]);
    if (gamma.rank() != 2)
      throw ShapeError(cat(describe(), ": expected (n,m) gammas, got ",
                           shape_str(gamma)));
    const std::size_t n = gamma.extent(0), m = gamma.extent(1);
    value_ = Tensor({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      const double* gr = gamma.data() + i * m;
      double* tr = value_.data() + i * m;
      tr[0] = gr[0];
      for (std::size_t k = 1; k < m; ++k) tr[k] = tr[k - 1] + std::exp(gr[k]);
    }
  }

  void backward(Graph& g) override {
    const Tensor& gamma = g.value(inputs_[0]);
    Tensor& gg = g.grad(inputs_[0]);
    const std::size_t n = gamma.extent(0), m = gamma.extent(1);
    for (std::size_t i = 0; i < n; ++i) {
      const double* gr = gamma.data() + i * m;
      const double* gt = grad_.data() + i * m;
      double* go = gg.data() + i * m;
      // dtheta_j/dgamma_k = exp(gamma_k) for j >= k >= 2, and 1 for k = 1;
      // accumulate suffix sums of upstream gradients.
      double suffix = 0.0;
      for (std::size_t k = m; k-- > 1;) {
        suffix += gt[k];
        go[k] += suffix * std::exp(gr[k]);
      }
      suffix += gt[0];
      go[0] += suffix;
    }
  }
};

class OrdinalNllNode final : public Node {
 public:
  explicit OrdinalNllNode(latent::Kind dist) : dist_(dist) {}
  std::string_view kind() const override { return "ordinal_nll"; }

  void forward(Graph& g) override {
    const Tensor& shifted = g.value(inputs_[0]);
    const Tensor& labels = g.value(inputs_[1]);
    if (shifted.rank() != 2)
      throw ShapeError(cat(describe(), ": expected (n,K-1) cutpoints, got ",
                           shape_str(shifted)));
    const std::size_t n = shifted.extent(0), m = shifted.extent(1);
    if (labels.size() != n)
      throw ShapeError(cat(describe(), ": ", n, " rows but ", labels.size(),
                           " labels"));
    probs_.assign(n, 0.0);
    clamped_.assign(n, false);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const int k = static_cast<int>(labels[i]);
      if (k < 1 || k > static_cast<int>(m) + 1)
        throw ShapeError(cat(describe(), ": label ", k, " outside 1..", m + 1));
      const double* th = shifted.data() + i * m;
      const double fu = k <= static_cast<int>(m)
                            ? latent::cdf(dist_, th[k - 1])
                            : 1.0;
      const double fl = k >= 2 ? latent::cdf(dist_, th[k - 2]) : 0.0;
      const double raw = fu - fl;
      const double p = latent::clamp_prob(raw);
      probs_[i] = p;
      clamped_[i] = p != raw;
      total += std::log(p);
    }
    value_ = Tensor::scalar(-total / static_cast<double>(n));
  }

  void backward(Graph& g) override {
    const Tensor& shifted = g.value(inputs_[0]);
    const Tensor& labels = g.value(inputs_[1]);
    Tensor& gs = g.grad(inputs_[0]);
    const std::size_t n = shifted.extent(0), m = shifted.extent(1);
    const double go = -grad_[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (clamped_[i]) continue;  // flat region of the clamp
      const int k = static_cast<int>(labels[i]);
      const double* th = shifted.data() + i * m;
      double* gr = gs.data() + i * m;
      const double inv_p = 1.0 / probs_[i];
      if (k <= static_cast<int>(m))
        gr[k - 1] += go * latent::pdf(dist_, th[k - 1]) * inv_p;
      if (k >= 2) gr[k - 2] -= go * latent::pdf(dist_, th[k - 2]) * inv_p;
    }
  }

 private:
  latent::Kind dist_;
  std::vector<double> probs_;
  std::vector<bool> clamped_;
};

}  // namespace

netcore::NodeId cutpoint_map(netcore::Graph& g, netcore::NodeId gamma) {
  auto node = std::make_unique<CutpointMapNode>();
  node->set_inputs({gamma});
  return g.append(std::move(node));
}

netcore::NodeId ordinal_nll(netcore::Graph& g, netcore::NodeId shifted,
                            netcore::NodeId labels, latent::Kind dist) {
  auto node = std::make_unique<OrdinalNllNode>(dist);
  node->set_inputs({shifted, labels});
  return g.append(std::move(node));
}

}  // namespace dtm::trafo
