#pragma once

#include <array>
#include <optional>

#include "dtm/netcore/graph.hpp"

namespace dtm::netcore {

// Layer ops. Shapes use a leading batch dimension n.
//   dense:     x (n,p) . w (p,u) [+ b (u)] -> (n,u)
//   conv3d:    x (n,d0,d1,d2,ci), w (k0,k1,k2,ci,co) [+ b (co)] -> same spatial
//              extents (zero-padded convolution, stride 1, odd kernels)
//   maxpool3d: window (p0,p1,p2), floor-divided extents; an axis shorter than
//              the window is pooled over its full extent (output extent 1)
NodeId dense(Graph& g, NodeId x, NodeId w, std::optional<NodeId> b = {},
             const std::string& label = {});
NodeId relu(Graph& g, NodeId x);
NodeId dropout(Graph& g, NodeId x, double rate);
NodeId conv3d(Graph& g, NodeId x, NodeId w, std::optional<NodeId> b = {},
              const std::string& label = {});
NodeId maxpool3d(Graph& g, NodeId x, std::array<std::size_t, 3> window);
NodeId flatten(Graph& g, NodeId x);

// Elementwise/reduction arithmetic.
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId x, double c);
NodeId exp_op(Graph& g, NodeId x);
NodeId log_op(Graph& g, NodeId x);
NodeId sum(Graph& g, NodeId x);
NodeId mean(Graph& g, NodeId x);
/// a (n,m) minus b (n,1), broadcast across columns.
NodeId rowwise_sub(Graph& g, NodeId a, NodeId b);

}  // namespace dtm::netcore
