#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

#include "meps/geometry/knn.hpp"
#include "meps/geometry/mesh.hpp"

namespace meps::geo {

/// Undirected weighted edge graph in compressed-row form.
struct EdgeGraph {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> targets;
  std::vector<double> lengths;
  bool from_knn = false;  // built from a kNN graph because the mesh had no faces

  std::size_t vertex_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

namespace detail {

inline EdgeGraph edge_graph_from_pairs(const std::vector<Vec3>& verts,
                                       std::vector<std::pair<std::size_t, std::size_t>> pairs) {
  for (auto& [a, b] : pairs)
    if (a > b) std::swap(a, b);
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  const auto n = verts.size();
  std::vector<std::size_t> degree(n, 0);
  for (const auto& [a, b] : pairs) {
    if (a == b) continue;
    ++degree[a];
    ++degree[b];
  }
  EdgeGraph g;
  g.offsets.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) g.offsets[i + 1] = g.offsets[i] + degree[i];
  g.targets.resize(g.offsets.back());
  g.lengths.resize(g.offsets.back());
  std::vector<std::size_t> fill(g.offsets.begin(), g.offsets.end() - 1);
  for (const auto& [a, b] : pairs) {
    if (a == b) continue;
    const double len = distance(verts[a], verts[b]);
    g.targets[fill[a]] = b;
    g.lengths[fill[a]++] = len;
    g.targets[fill[b]] = a;
    g.lengths[fill[b]++] = len;
  }
  return g;
}

}  // namespace detail

/// Edges of the triangles, or of the kNN graph (k = min(fallback_k, N-1),
/// symmetrized) when the mesh has no faces.
inline EdgeGraph build_edge_graph(const Mesh& mesh, std::size_t fallback_k = 20) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (mesh.has_faces()) {
    mesh.validate();
    for (const auto& f : mesh.faces) {
      pairs.emplace_back(f[0], f[1]);
      pairs.emplace_back(f[1], f[2]);
      pairs.emplace_back(f[2], f[0]);
    }
    return detail::edge_graph_from_pairs(mesh.vertices, std::move(pairs));
  }
  if (mesh.size() < 2) throw ContractError("geodesics need at least two vertices");
  const auto knn = knn_graph(mesh, std::min(fallback_k, mesh.size() - 1));
  for (std::size_t i = 0; i < knn.vertex_count(); ++i)
    for (auto j : knn.row(i)) pairs.emplace_back(i, j);
  auto g = detail::edge_graph_from_pairs(mesh.vertices, std::move(pairs));
  g.from_knn = true;
  return g;
}

struct GeodesicResult {
  std::vector<double> distance;  // +inf where unreachable
  bool all_reachable = true;
  bool from_knn = false;
};

/// Single-source shortest paths over the edge graph (Dijkstra). Each
/// distance is the left-to-right sum of edge lengths along the chosen path.
inline GeodesicResult geodesic_from(const EdgeGraph& graph, std::size_t source) {
  const auto n = graph.vertex_count();
  if (source >= n) throw IndexError("geodesic source " + std::to_string(source) + " out of range");
  GeodesicResult res;
  res.from_knn = graph.from_knn;
  res.distance.assign(n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  res.distance[source] = 0.0;
  queue.emplace(0.0, source);
  while (!queue.empty()) {
    const auto [d, u] = queue.top();
    queue.pop();
    if (d > res.distance[u]) continue;
    for (auto e = graph.offsets[u]; e < graph.offsets[u + 1]; ++e) {
      const auto v = graph.targets[e];
      const double nd = d + graph.lengths[e];
      if (nd < res.distance[v]) {
        res.distance[v] = nd;
        queue.emplace(nd, v);
      }
    }
  }
  res.all_reachable = std::all_of(res.distance.begin(), res.distance.end(),
                                  [](double x) { return std::isfinite(x); });
  return res;
}

inline GeodesicResult geodesic_from(const Mesh& mesh, std::size_t source) {
  return geodesic_from(build_edge_graph(mesh), source);
}

struct ShapeScale {
  double value = 0.0;
  bool from_bounding_box = false;  // mesh had no faces
};

/// sqrt(total triangle area); bounding-box diagonal when there are no faces.
inline ShapeScale shape_scale(const Mesh& mesh) {
  if (!mesh.has_faces()) {
    if (mesh.vertices.empty()) throw ContractError("shape_scale of an empty mesh");
    Vec3 lo = mesh.vertices.front(), hi = lo;
    for (const auto& v : mesh.vertices)
      for (int d = 0; d < 3; ++d) {
        lo[d] = std::min(lo[d], v[d]);
        hi[d] = std::max(hi[d], v[d]);
      }
    return {norm(hi - lo), true};
  }
  mesh.validate();
  double area = 0.0;
  for (const auto& f : mesh.faces) {
    const auto& a = mesh.vertices[f[0]];
    area += 0.5 * norm(cross(mesh.vertices[f[1]] - a, mesh.vertices[f[2]] - a));
  }
  if (!(area > 0.0)) throw ContractError("shape_scale: mesh has zero surface area");
  return {std::sqrt(area), false};
}

}  // namespace meps::geo
