#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "meps/geometry/mesh.hpp"

namespace meps::geo {

/// Directed neighbor lists in compressed-row form. Row i is N(i), ordered by
/// ascending distance then ascending index.
struct NeighborhoodGraph {
  std::size_t k = 0;                   // requested neighbors per vertex
  std::vector<std::size_t> offsets;    // size N + 1
  std::vector<std::size_t> neighbors;  // size offsets.back()
  // Per-edge attribute vectors (e_ik), aligned with `neighbors`. Carried for
  // generality; the implemented layers do not read them.
  std::optional<std::vector<std::vector<double>>> edge_attrs;

  std::size_t vertex_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t edge_count() const { return neighbors.size(); }

  std::span<const std::size_t> row(std::size_t i) const {
    return std::span(neighbors).subspan(offsets[i], offsets[i + 1] - offsets[i]);
  }

  // centers()[e] = source vertex of edge e.
  std::vector<std::size_t> centers() const {
    std::vector<std::size_t> out(neighbors.size());
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i)
      std::fill(out.begin() + static_cast<std::ptrdiff_t>(offsets[i]),
                out.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]), i);
    return out;
  }

  static NeighborhoodGraph from_rows(std::size_t k, const std::vector<std::vector<std::size_t>>& rows) {
    NeighborhoodGraph g;
    g.k = k;
    g.offsets.push_back(0);
    for (const auto& r : rows) {
      g.neighbors.insert(g.neighbors.end(), r.begin(), r.end());
      g.offsets.push_back(g.neighbors.size());
    }
    return g;
  }
};

struct KnnOptions {
  // Add the reverse of every edge (rows then hold >= k entries).
  bool symmetrize = false;
  // Above this many points the kd-tree path is used; both are exact.
  std::size_t brute_force_limit = 2000;
};

namespace detail {

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index)

inline std::vector<std::vector<std::size_t>> knn_brute_force(std::span<const Vec3> pts, std::size_t k) {
  const auto n = pts.size();
  std::vector<std::vector<std::size_t>> rows(n);
  std::vector<Candidate> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(squared_distance(pts[i], pts[j]), j);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    rows[i].resize(k);
    for (std::size_t t = 0; t < k; ++t) rows[i][t] = cand[t].second;
  }
  return rows;
}

/// Exact kd-tree search. Candidates are ordered lexicographically by
/// (squared distance, index); a subtree is pruned only when its box bound is
/// strictly worse than the current k-th candidate, so ties resolve exactly
/// as in the brute-force path.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> pts, std::size_t leaf_size = 16) : pts_(pts), leaf_size_(leaf_size) {
    order_.resize(pts.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!pts.empty()) build(0, pts.size());
  }

  std::vector<std::size_t> query(std::size_t self, std::size_t k) const {
    std::priority_queue<Candidate> heap;  // max-heap: worst candidate on top
    search(0, self, k, heap);
    std::vector<std::size_t> out(heap.size());
    for (std::size_t t = heap.size(); t-- > 0;) {
      out[t] = heap.top().second;
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    std::size_t begin, end;
    Vec3 lo, hi;
    std::size_t left = 0, right = 0;  // child node ids; 0 = leaf
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    Node node{begin, end, pts_[order_[begin]], pts_[order_[begin]]};
    for (std::size_t t = begin; t < end; ++t) {
      for (int d = 0; d < 3; ++d) {
        node.lo[d] = std::min(node.lo[d], pts_[order_[t]][d]);
        node.hi[d] = std::max(node.hi[d], pts_[order_[t]][d]);
      }
    }
    const auto id = nodes_.size();
    nodes_.push_back(node);
    if (end - begin > leaf_size_) {
      int axis = 0;
      for (int d = 1; d < 3; ++d)
        if (node.hi[d] - node.lo[d] > node.hi[axis] - node.lo[axis]) axis = d;
      const auto mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                       order_.begin() + static_cast<std::ptrdiff_t>(mid),
                       order_.begin() + static_cast<std::ptrdiff_t>(end),
                       [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
      const auto left = build(begin, mid);
      const auto right = build(mid, end);
      nodes_[id].left = left;
      nodes_[id].right = right;
    }
    return id;
  }

  double box_bound(const Node& node, const Vec3& q) const {
    double s = 0.0;
    for (int d = 0; d < 3; ++d) {
      double gap = 0.0;
      if (q[d] < node.lo[d]) {
        gap = node.lo[d] - q[d];
      } else if (q[d] > node.hi[d]) {
        gap = q[d] - node.hi[d];
      }
      s += gap * gap;
    }
    return s;
  }

  void search(std::size_t id, std::size_t self, std::size_t k, std::priority_queue<Candidate>& heap) const {
    const Node& node = nodes_[id];
    const Vec3& q = pts_[self];
    if (heap.size() == k && box_bound(node, q) > heap.top().first) return;
    if (node.left == 0) {
      for (std::size_t t = node.begin; t < node.end; ++t) {
        const auto j = order_[t];
        if (j == self) continue;
        const Candidate c{squared_distance(q, pts_[j]), j};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double bl = box_bound(nodes_[node.left], q);
    const double br = box_bound(nodes_[node.right], q);
    if (bl <= br) {
      search(node.left, self, k, heap);
      search(node.right, self, k, heap);
    } else {
      search(node.right, self, k, heap);
      search(node.left, self, k, heap);
    }
  }

  std::span<const Vec3> pts_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace detail

/// Exact k-nearest-neighbor graph. Row i holds the k points closest to
/// point i (excluding i), nearest first, ties broken toward lower index.
inline NeighborhoodGraph knn_graph(std::span<const Vec3> points, std::size_t k, const KnnOptions& opts = {}) {
  const auto n = points.size();
  if (k == 0 || k >= n) {
    throw ParameterError("knn_graph: k = " + std::to_string(k) + " must satisfy 0 < k < N = " + std::to_string(n));
  }
  for (const auto& p : points) {
    for (double c : p) {
      if (!std::isfinite(c)) throw NumericError("knn_graph: non-finite coordinate");
    }
  }
  std::vector<std::vector<std::size_t>> rows;
  if (n <= opts.brute_force_limit) {
    rows = detail::knn_brute_force(points, k);
  } else {
    detail::KdTree tree(points);
    rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = tree.query(i, k);
  }
  if (opts.symmetrize) {
    auto extra = std::vector<std::vector<std::size_t>>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (auto j : rows[i])
        if (std::find(rows[j].begin(), rows[j].end(), i) == rows[j].end()) extra[j].push_back(i);
    for (std::size_t j = 0; j < n; ++j) {
      auto& add = extra[j];
      std::sort(add.begin(), add.end(), [&](std::size_t a, std::size_t b) {
        return std::pair(squared_distance(points[j], points[a]), a) < std::pair(squared_distance(points[j], points[b]), b);
      });
      rows[j].insert(rows[j].end(), add.begin(), add.end());
    }
  }
  return NeighborhoodGraph::from_rows(k, rows);
}

inline NeighborhoodGraph knn_graph(const Mesh& mesh, std::size_t k, const KnnOptions& opts = {}) {
  return knn_graph(std::span<const Vec3>(mesh.vertices), k, opts);
}

}  // namespace meps::geo
