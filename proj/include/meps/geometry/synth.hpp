#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "meps/geometry/mesh.hpp"
#include "meps/numcore/rng.hpp"

namespace meps::geo {

struct SynthOptions {
  double radius = 8.0;       // template sphere radius, model units
  int components = 8;        // sinusoidal displacement fields summed
  double min_frequency = 0.1;  // spatial frequency range, in units of 1/radius
  double max_frequency = 0.4;
  bool remove_mean = true;   // subtract the mean displacement (no global drift)
};

/// Triangulated sphere with exactly n vertices: two poles plus latitude
/// rings whose vertex counts follow sin(latitude). Adjacent rings are zipped
/// by angle, so any n >= 12 gives a closed, consistently oriented surface.
inline Mesh sphere_template(std::size_t n, double radius) {
  if (n < 12) throw ParameterError("sphere template needs at least 12 vertices, got " + std::to_string(n));
  const double pi = std::numbers::pi;
  const auto ring_count = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(std::sqrt(pi * static_cast<double>(n)) / 2.0)));
  const std::size_t body = n - 2;

  std::vector<double> polar(ring_count), ideal(ring_count);
  double wsum = 0.0;
  for (std::size_t r = 0; r < ring_count; ++r) {
    polar[r] = pi * static_cast<double>(r + 1) / static_cast<double>(ring_count + 1);
    wsum += std::sin(polar[r]);
  }
  std::vector<std::size_t> count(ring_count);
  std::size_t assigned = 0;
  for (std::size_t r = 0; r < ring_count; ++r) {
    ideal[r] = std::sin(polar[r]) / wsum * static_cast<double>(body);
    count[r] = std::max<std::size_t>(3, static_cast<std::size_t>(std::floor(ideal[r])));
    assigned += count[r];
  }
  // Largest-remainder fix-up to hit the exact total.
  while (assigned < body) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < ring_count; ++r)
      if (ideal[r] - static_cast<double>(count[r]) > ideal[best] - static_cast<double>(count[best])) best = r;
    ++count[best];
    ++assigned;
  }
  while (assigned > body) {
    std::size_t best = ring_count;
    for (std::size_t r = 0; r < ring_count; ++r) {
      if (count[r] <= 3) continue;
      if (best == ring_count ||
          static_cast<double>(count[r]) - ideal[r] > static_cast<double>(count[best]) - ideal[best])
        best = r;
    }
    --count[best];
    --assigned;
  }

  Mesh mesh;
  mesh.vertices.push_back({0.0, 0.0, radius});
  std::vector<std::vector<std::size_t>> rings(ring_count);
  std::vector<std::vector<double>> angles(ring_count);
  for (std::size_t r = 0; r < ring_count; ++r) {
    const double offset = 0.5 * static_cast<double>(r % 2);
    for (std::size_t j = 0; j < count[r]; ++j) {
      const double a = 2.0 * pi * (static_cast<double>(j) + offset) / static_cast<double>(count[r]);
      rings[r].push_back(mesh.vertices.size());
      angles[r].push_back(a);
      mesh.vertices.push_back({radius * std::sin(polar[r]) * std::cos(a),
                               radius * std::sin(polar[r]) * std::sin(a), radius * std::cos(polar[r])});
    }
  }
  const std::size_t south = mesh.vertices.size();
  mesh.vertices.push_back({0.0, 0.0, -radius});

  const auto& top = rings.front();
  for (std::size_t j = 0; j < top.size(); ++j) mesh.faces.push_back({0, top[j], top[(j + 1) % top.size()]});
  for (std::size_t r = 0; r + 1 < ring_count; ++r) {
    const auto &ra = rings[r], &rb = rings[r + 1];
    const auto &aa = angles[r], &ab = angles[r + 1];
    const auto na = ra.size(), nb = rb.size();
    auto angle_a = [&](std::size_t i) { return aa[i % na] + 2.0 * pi * static_cast<double>(i / na); };
    // Start ring b at its vertex closest in angle to a[0], unwrapped around a[0].
    std::size_t j0 = 0;
    for (std::size_t j = 1; j < nb; ++j)
      if (std::abs(ab[j] - aa[0]) < std::abs(ab[j0] - aa[0])) j0 = j;
    auto angle_b = [&](std::size_t j) {
      const auto idx = (j0 + j) % nb;
      return ab[idx] + 2.0 * pi * static_cast<double>((j0 + j) / nb);
    };
    std::size_t i = 0, j = 0;
    while (i < na || j < nb) {
      const bool advance_a = j == nb || (i < na && angle_a(i + 1) < angle_b(j + 1));
      if (advance_a) {
        mesh.faces.push_back({ra[i % na], rb[(j0 + j) % nb], ra[(i + 1) % na]});
        ++i;
      } else {
        mesh.faces.push_back({ra[i % na], rb[(j0 + j) % nb], rb[(j0 + j + 1) % nb]});
        ++j;
      }
    }
  }
  const auto& bottom = rings.back();
  for (std::size_t j = 0; j < bottom.size(); ++j)
    mesh.faces.push_back({south, bottom[(j + 1) % bottom.size()], bottom[j]});

  // Orient every face outward (the template is star-shaped about the origin).
  for (auto& f : mesh.faces) {
    const auto& a = mesh.vertices[f[0]];
    const auto nrm = cross(mesh.vertices[f[1]] - a, mesh.vertices[f[2]] - a);
    const auto centroid = (1.0 / 3.0) * (a + mesh.vertices[f[1]] + mesh.vertices[f[2]]);
    if (dot(nrm, centroid) < 0.0) std::swap(f[1], f[2]);
  }
  mesh.labels = identity_labels(n);
  return mesh;
}

/// Smooth displacement: amplitude * (1/J) * sum_j e_j * sin(w_j . x + phase_j)
/// with random unit directions e_j, random wave vectors |w_j| in
/// [min_frequency, max_frequency] / radius, and random phases. With
/// remove_mean the mean displacement over all vertices is subtracted.
inline std::vector<Vec3> sinusoidal_displacement(const std::vector<Vec3>& verts, double amplitude,
                                                 num::Rng& rng, const SynthOptions& opts) {
  auto unit = [&rng] {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double len = norm(v);
    return (1.0 / len) * v;
  };
  std::vector<Vec3> disp(verts.size(), Vec3{0.0, 0.0, 0.0});
  const double weight = amplitude / static_cast<double>(opts.components);
  for (int c = 0; c < opts.components; ++c) {
    const Vec3 dir = unit();
    const Vec3 wave = (rng.uniform(opts.min_frequency, opts.max_frequency) / opts.radius) * unit();
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < verts.size(); ++i) {
      disp[i] = disp[i] + (weight * std::sin(dot(wave, verts[i]) + phase)) * dir;
    }
  }
  if (opts.remove_mean && !disp.empty()) {
    Vec3 mean{0.0, 0.0, 0.0};
    for (const auto& d : disp) mean = mean + d;
    mean = (1.0 / static_cast<double>(disp.size())) * mean;
    for (auto& d : disp) d = d - mean;
  }
  return disp;
}

struct SynthPair {
  Mesh reference;  // template
  Mesh deformed;
};

/// Template sphere and a smoothly deformed copy. The deformed mesh shares the
/// template's faces and carries identity labels into the template.
inline SynthPair synth_pair(std::uint64_t seed, std::size_t n_vertices, double deform_amplitude,
                            const SynthOptions& opts = {}) {
  if (deform_amplitude < 0.0) throw ParameterError("deform amplitude must be non-negative");
  if (opts.components < 1 || !(opts.radius > 0.0) || opts.min_frequency > opts.max_frequency) {
    throw ParameterError("invalid synthetic shape options");
  }
  SynthPair out;
  out.reference = sphere_template(n_vertices, opts.radius);
  out.deformed = out.reference;
  num::Rng rng(seed, /*stream=*/0x5e7);
  const auto disp = sinusoidal_displacement(out.reference.vertices, deform_amplitude, rng, opts);
  for (std::size_t i = 0; i < n_vertices; ++i) out.deformed.vertices[i] = out.deformed.vertices[i] + disp[i];
  return out;
}

/// Noise levels of the robustness sweep, in input-coordinate units.
inline std::vector<double> default_noise_sigmas() { return {0.001, 0.002, 0.003, 0.004, 0.005, 0.006}; }

/// Adds i.i.d. N(0, sigma^2) to every coordinate; faces and labels are kept.
inline Mesh add_gaussian_noise(const Mesh& mesh, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ParameterError("noise sigma must be non-negative");
  Mesh out = mesh;
  if (sigma == 0.0) return out;
  num::Rng rng(seed, /*stream=*/0x7015e);
  for (auto& v : out.vertices)
    for (auto& c : v) c += sigma * rng.normal();
  return out;
}

}  // namespace meps::geo
