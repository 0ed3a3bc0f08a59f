#pragma once

#include <cmath>
#include <string>

#include "meps/geometry/knn.hpp"
#include "meps/layers/linear.hpp"

namespace meps::layers {

/// Feature-steered graph convolution with M filters:
///   q_m(x_i, x_k) = softmax_m(u_m . x_i + v_m . x_k + c_m)
///   y_i = b + 1/|N(i)| sum_{k in N(i)} sum_m q_m(x_i, x_k) W_m x_k
struct FeastConvLayer {
  std::size_t in = 0, out = 0, filters = 0;
  Tensor W;  // [M x in x out]
  Tensor b;  // [out]
  Tensor u;  // [M x in]
  Tensor v;  // [M x in]
  Tensor c;  // [M]

  static FeastConvLayer init(std::size_t in, std::size_t out, std::size_t filters, num::Rng& rng) {
    if (in == 0 || out == 0 || filters == 0) throw ParameterError("FeastConvLayer: zero-sized dimension");
    FeastConvLayer l;
    l.in = in;
    l.out = out;
    l.filters = filters;
    l.W = normal_fill(rng, {filters, in, out}, std::sqrt(0.5 / static_cast<double>(in)));
    l.b = Tensor::zeros({out});
    l.u = uniform_fan_in(rng, {filters, in}, in);
    l.v = uniform_fan_in(rng, {filters, in}, in);
    l.c = uniform_fan_in(rng, {filters}, in);
    return l;
  }

  void register_params(num::ParameterSet& params, const std::string& prefix) {
    W = params.add(prefix + ".W", W);
    b = params.add(prefix + ".b", b);
    u = params.add(prefix + ".u", u);
    v = params.add(prefix + ".v", v);
    c = params.add(prefix + ".c", c);
  }
};

namespace detail {

inline void require_features(const Tensor& x, std::size_t channels, const char* op) {
  if (x.dim() != 2 || x.size(1) != channels) {
    throw DimensionError(std::string(op) + ": features " + num::shape_str(x.shape()) + " do not have " +
                         std::to_string(channels) + " channels");
  }
}

inline void require_graph(const geo::NeighborhoodGraph& g, std::size_t n, const char* op) {
  if (g.vertex_count() != n) {
    throw DimensionError(std::string(op) + ": graph has " + std::to_string(g.vertex_count()) +
                         " vertices, features have " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (g.offsets[i] == g.offsets[i + 1]) {
      throw ContractError(std::string(op) + ": vertex " + std::to_string(i) + " has no neighbors");
    }
  }
}

// [in x (M*out)] matrix whose column block m is W_m, so x * it = all filter responses.
inline Tensor stacked_filters(const Tensor& W) {
  const auto m = W.size(0), in = W.size(1), out = W.size(2);
  return num::reshape(num::permute(W, {1, 0, 2}), {in, m * out});
}

// Shared tail of both conv variants: mixture over filters, neighbor mean, bias.
inline Tensor aggregate(const Tensor& relation, const Tensor& x, const Tensor& W, const Tensor& b,
                        const geo::NeighborhoodGraph& g) {
  const auto filtered = num::matmul(x, stacked_filters(W));
  return num::add_bias(num::mixture_aggregate(relation, filtered, g.offsets, g.neighbors, W.size(2)), b);
}

}  // namespace detail

/// Relation weights for rows of (x_i, x_k) pairs: [P x in] each -> [P x M].
inline Tensor feast_relation(const FeastConvLayer& layer, const Tensor& xi, const Tensor& xk) {
  detail::require_features(xi, layer.in, "feast_relation");
  detail::require_features(xk, layer.in, "feast_relation");
  if (xi.size(0) != xk.size(0)) throw DimensionError("feast_relation: pair count mismatch");
  const auto logits = num::add(num::matmul(xi, num::transpose(layer.u)), num::matmul(xk, num::transpose(layer.v)));
  return num::softmax(num::add_bias(logits, layer.c), 1);
}

/// Relation weights for every edge of the graph, [E x M].
inline Tensor feast_edge_relation(const FeastConvLayer& layer, const Tensor& x, const geo::NeighborhoodGraph& g) {
  // u . x_i and v . x_k are computed once per vertex and gathered per edge.
  const auto su = num::matmul(x, num::transpose(layer.u));
  const auto sv = num::matmul(x, num::transpose(layer.v));
  const auto logits = num::add(num::gather_rows(su, g.centers()), num::gather_rows(sv, g.neighbors));
  return num::softmax(num::add_bias(logits, layer.c), 1);
}

inline Tensor feast_forward(const FeastConvLayer& layer, const Tensor& x, const geo::NeighborhoodGraph& g) {
  detail::require_features(x, layer.in, "feast_forward");
  detail::require_graph(g, x.size(0), "feast_forward");
  return detail::aggregate(feast_edge_relation(layer, x, g), x, layer.W, layer.b, g);
}

}  // namespace meps::layers
