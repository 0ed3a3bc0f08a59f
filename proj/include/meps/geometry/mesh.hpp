#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "meps/error.hpp"

namespace meps::geo {

using Vec3 = std::array<double, 3>;
using Face = std::array<std::size_t, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

inline double distance(const Vec3& a, const Vec3& b) { return std::sqrt(squared_distance(a, b)); }

/// Vertex positions, optional triangles, optional per-vertex correspondence
/// labels (indices of the matching vertex on a reference shape).
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::optional<std::vector<std::size_t>> labels;

  std::size_t size() const { return vertices.size(); }
  bool has_faces() const { return !faces.empty(); }

  // Throws on out-of-range face indices, non-finite coordinates, or labels
  // that are the wrong length or outside [0, reference_size) when a
  // reference size is given.
  void validate(std::size_t reference_size = 0) const {
    const auto n = vertices.size();
    for (const auto& v : vertices) {
      for (double c : v) {
        if (!std::isfinite(c)) throw NumericError("mesh has a non-finite vertex coordinate");
      }
    }
    for (std::size_t f = 0; f < faces.size(); ++f) {
      for (auto idx : faces[f]) {
        if (idx >= n) {
          throw IndexError("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                           " of a " + std::to_string(n) + "-vertex mesh");
        }
      }
    }
    if (labels) {
      if (labels->size() != n) {
        throw IndexError("mesh has " + std::to_string(n) + " vertices but " +
                         std::to_string(labels->size()) + " labels");
      }
      if (reference_size > 0) {
        for (auto l : *labels) {
          if (l >= reference_size) {
            throw IndexError("label " + std::to_string(l) + " outside reference range [0, " +
                             std::to_string(reference_size) + ")");
          }
        }
      }
    }
  }
};

inline std::vector<std::size_t> identity_labels(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

}  // namespace meps::geo
