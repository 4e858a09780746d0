#pragma once

// Absolute-tolerance comparison (the vendored doctest Approx has no margin()).
#define CHECK_NEAR(a, b, tol) CHECK(std::fabs((a) - (b)) <= (tol))

#include <cmath>
#include <functional>
#include <string>

#include "dtm/netcore/graph.hpp"
#include "dtm/rng.hpp"

namespace dtm::testutil {

struct GradCheck {
  double max_err = 0.0;   // |analytic - fd| / max(1e-4, |analytic| + |fd|)
  std::string worst;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // points where FD itself is unstable
};

/// Central finite differences against the analytic backward pass. Samples up
/// to `max_per_tensor` entries of each parameter. `rebind` must rebind all
/// inputs; the graph rng is reset before every forward so stochastic layers
/// (dropout) see identical masks across evaluations.
inline GradCheck fd_gradcheck(netcore::Graph& g, netcore::NodeId loss,
                              const std::function<void()>& rebind,
                              std::size_t max_per_tensor = 24,
                              std::uint64_t seed = 99, double step = 1e-5) {
  auto eval = [&]() {
    g.reseed(seed);
    rebind();
    return g.forward(loss)[0];
  };
  eval();
  netcore::GradientMap analytic = g.backward(loss);

  GradCheck res;
  Rng pick(derive_seed(seed, 0x6D0));
  for (const auto& [name, ga] : analytic) {
    netcore::Tensor& p = g.parameter_value(name);
    const std::size_t n = p.size();
    for (std::size_t s = 0; s < std::min(max_per_tensor, n); ++s) {
      const std::size_t i =
          n <= max_per_tensor ? s : static_cast<std::size_t>(pick.below(n));
      const double orig = p[i];
      auto fd_at = [&](double h) {
        p[i] = orig + h;
        const double up = eval();
        p[i] = orig - h;
        const double down = eval();
        p[i] = orig;
        return (up - down) / (2.0 * h);
      };
      const double fd = fd_at(step);
      const double fd_half = fd_at(step / 2.0);
      // Central differences are invalid across relu/maxpool kinks; two step
      // sizes disagreeing flags such points and they are excluded.
      if (std::fabs(fd - fd_half) >
          0.05 * std::max(1e-4, std::fabs(fd) + std::fabs(fd_half))) {
        ++res.skipped_kinks;
        continue;
      }
      ++res.checked;
      const double a = ga[i];
      const double err =
          std::fabs(a - fd) / std::max(1e-4, std::fabs(a) + std::fabs(fd));
      if (err > res.max_err) {
        res.max_err = err;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  eval();  // leave the graph in a consistent forward state
  return res;
}

inline netcore::Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                                     double scale = 1.0) {
  netcore::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

}  // namespace dtm::testutil
