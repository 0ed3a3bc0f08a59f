#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "meps/geometry/geodesic.hpp"
#include "meps/geometry/mesh.hpp"
#include "meps/geometry/synth.hpp"
#include "meps/numcore/rng.hpp"

namespace meps::testing {

struct NamedMesh {
  std::string name;
  geo::Mesh mesh;
};

// Jittered rows x cols grid split into triangles along random diagonals.
inline geo::Mesh random_patch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  num::Rng rng(seed);
  geo::Mesh m;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m.vertices.push_back({static_cast<double>(c) + rng.uniform(-0.3, 0.3),
                            static_cast<double>(r) + rng.uniform(-0.3, 0.3), rng.uniform(-0.5, 0.5)});
  auto id = [cols](std::size_t r, std::size_t c) { return r * cols + c; };
  for (std::size_t r = 0; r + 1 < rows; ++r)
    for (std::size_t c = 0; c + 1 < cols; ++c) {
      if (rng.below(2)) {
        m.faces.push_back({id(r, c), id(r, c + 1), id(r + 1, c + 1)});
        m.faces.push_back({id(r, c), id(r + 1, c + 1), id(r + 1, c)});
      } else {
        m.faces.push_back({id(r, c), id(r, c + 1), id(r + 1, c)});
        m.faces.push_back({id(r, c + 1), id(r + 1, c + 1), id(r + 1, c)});
      }
    }
  return m;
}

inline geo::Mesh path_mesh(const std::vector<double>& xs) {
  geo::Mesh m;
  for (double x : xs) m.vertices.push_back({x, 0.0, 0.0});
  // Degenerate slivers keep the consecutive edges and nothing else.
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) m.faces.push_back({i, i + 1, i + 1});
  return m;
}

/// Every small mesh used by the geodesic tests; all have at most 50 vertices.
inline std::vector<NamedMesh> small_mesh_corpus() {
  std::vector<NamedMesh> out;
  out.push_back({"path", path_mesh({0.0, 0.5, 1.75, 2.0, 4.5})});
  for (std::size_t n = 12; n <= 50; n += 2) {
    // The bare template is symmetric and has exactly tied shortest paths whose
    // floating-point sums differ by an ulp; a tiny jitter makes them unique.
    out.push_back({"sphere" + std::to_string(n), geo::add_gaussian_noise(geo::sphere_template(n, 1.0), 1e-3, n)});
    out.push_back({"deformed" + std::to_string(n), geo::synth_pair(n, n, 0.3).deformed});
  }
  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::size_t rows = 3 + s % 5, cols = 3 + (s * 7) % 6;
    out.push_back({"patch" + std::to_string(s), random_patch(rows, cols, 1000 + s)});
  }
  // Two components: the second triangle is unreachable from the first.
  geo::Mesh split;
  split.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 5, 5}, {6, 5, 5}, {5, 6, 5}};
  split.faces = {{0, 1, 2}, {3, 4, 5}};
  out.push_back({"two_components", split});
  return out;
}

/// All-pairs shortest paths by Floyd-Warshall. Distances are re-summed from
/// the source along each reconstructed path so they are comparable bit for
/// bit with a single-source search that accumulates the same way.
inline std::vector<std::vector<double>> floyd_warshall(const geo::EdgeGraph& g) {
  const auto n = g.vertex_count();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  std::vector<std::vector<std::size_t>> next(n, std::vector<std::size_t>(n, n));
  std::vector<std::vector<double>> len(n, std::vector<double>(n, inf));
  for (std::size_t i = 0; i < n; ++i) {
    d[i][i] = 0.0;
    next[i][i] = i;
    for (auto e = g.offsets[i]; e < g.offsets[i + 1]; ++e) {
      const auto j = g.targets[e];
      len[i][j] = g.lengths[e];
      if (g.lengths[e] < d[i][j]) {
        d[i][j] = g.lengths[e];
        next[i][j] = j;
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (d[i][k] + d[k][j] < d[i][j]) {
          d[i][j] = d[i][k] + d[k][j];
          next[i][j] = next[i][k];
        }
  std::vector<std::vector<double>> out(n, std::vector<double>(n, inf));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (next[i][j] == n) continue;
      double acc = 0.0;
      for (std::size_t u = i; u != j; u = next[u][j]) acc += len[u][next[u][j]];
      out[i][j] = acc;
    }
  return out;
}

}  // namespace meps::testing
