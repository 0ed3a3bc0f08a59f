#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "meps/geometry/knn.hpp"
#include "meps/layers/feast.hpp"
#include "meps/layers/linear.hpp"

namespace meps::layers {

/// Parameter layout of the generated relation network f_theta:
/// [x_i : x_k] (2*in) -> hidden (ReLU) -> M, then softmax over M.
/// theta_p is the concatenation, in order, of the row-major [hidden x 2*in]
/// weight, the hidden bias, the row-major [M x hidden] weight and the M bias.
struct BaseLearnerManifest {
  struct Block {
    std::size_t rows, cols;  // weight [rows x cols], followed by a bias of length rows
  };

  std::size_t in_channels = 0;
  std::size_t hidden = 32;
  std::size_t filters = 0;

  static BaseLearnerManifest make(std::size_t in_channels, std::size_t filters, std::size_t hidden = 32) {
    if (in_channels == 0 || filters == 0 || hidden == 0) throw ParameterError("base learner: zero-sized dimension");
    return {in_channels, hidden, filters};
  }

  std::vector<Block> blocks() const { return {{hidden, 2 * in_channels}, {filters, hidden}}; }

  std::size_t total_params() const { return (2 * in_channels * hidden + hidden) + (hidden * filters + filters); }

  // Offsets into theta_p.
  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return 2 * in_channels * hidden; }
  std::size_t w2_offset() const { return b1_offset() + hidden; }
  std::size_t b2_offset() const { return w2_offset() + hidden * filters; }
};

struct EncoderSpec {
  std::vector<std::size_t> widths{64, 128};  // per-point hidden widths
  std::size_t embedding = 1024;              // pooled patch feature width
  double head_init_std = 0.1;                // head weights ~ N(0, (std / sqrt(embedding))^2), bias 0
};

/// Convolution whose relation weights come from a per-patch network
/// generated by g_phi: centered XYZ patch -> shared per-point MLP (ReLU) ->
/// max pool -> linear head -> theta_p. W_m and b stay globally shared.
struct MetaConvLayer {
  std::size_t in = 0, out = 0, filters = 0;
  Tensor W;  // [M x in x out]
  Tensor b;  // [out]
  std::vector<Linear> encoder;  // 3 -> widths... -> embedding
  Linear head;                  // embedding -> manifest.total_params()
  BaseLearnerManifest manifest;

  static MetaConvLayer init(std::size_t in, std::size_t out, std::size_t filters, const EncoderSpec& spec,
                            num::Rng& rng) {
    if (in == 0 || out == 0 || filters == 0 || spec.embedding == 0) {
      throw ParameterError("MetaConvLayer: zero-sized dimension");
    }
    MetaConvLayer l;
    l.in = in;
    l.out = out;
    l.filters = filters;
    l.manifest = BaseLearnerManifest::make(in, filters);
    l.W = normal_fill(rng, {filters, in, out}, std::sqrt(0.5 / static_cast<double>(in)));
    l.b = Tensor::zeros({out});
    std::size_t width = 3;
    auto dims = spec.widths;
    dims.push_back(spec.embedding);
    for (auto d : dims) {
      if (d == 0) throw ParameterError("MetaConvLayer: zero encoder width");
      l.encoder.push_back(Linear::init(width, d, rng));
      width = d;
    }
    const auto t = l.manifest.total_params();
    l.head.in = spec.embedding;
    l.head.out = t;
    l.head.weight = normal_fill(rng, {spec.embedding, t}, spec.head_init_std / std::sqrt(static_cast<double>(spec.embedding)));
    l.head.bias = Tensor::zeros({t});
    return l;
  }

  std::size_t embedding() const { return encoder.back().out; }

  void register_params(num::ParameterSet& params, const std::string& prefix) {
    W = params.add(prefix + ".W", W);
    b = params.add(prefix + ".b", b);
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].register_params(params, prefix + ".enc" + std::to_string(i));
    head.register_params(params, prefix + ".head");
  }
};

/// Centered patches for every vertex, stacked: rows offsets[i] .. offsets[i+1]
/// hold x_i - x_i (the center, first) followed by x_k - x_i for k in N(i).
struct PatchBatch {
  Tensor points;  // [sum_i (|N(i)| + 1) x 3]
  std::vector<std::size_t> offsets;
};

inline PatchBatch make_patches(const Tensor& coords, const geo::NeighborhoodGraph& g) {
  if (coords.dim() != 2 || coords.size(1) != 3) {
    throw DimensionError("patch coordinates must be [N x 3], got " + num::shape_str(coords.shape()));
  }
  detail::require_graph(g, coords.size(0), "make_patches");
  const auto n = g.vertex_count();
  PatchBatch p;
  p.offsets.resize(n + 1);
  std::vector<double> pts;
  pts.reserve((g.edge_count() + n) * 3);
  const auto c = coords.data();
  for (std::size_t i = 0; i < n; ++i) {
    p.offsets[i] = g.offsets[i] + i;
    for (int d = 0; d < 3; ++d) pts.push_back(c[i * 3 + d] - c[i * 3 + d]);
    for (auto k : g.row(i))
      for (int d = 0; d < 3; ++d) pts.push_back(c[k * 3 + d] - c[i * 3 + d]);
  }
  p.offsets[n] = g.edge_count() + n;
  p.points = Tensor({p.offsets[n], 3}, std::move(pts));
  return p;
}

/// Max-pooled per-point features of every patch, [patches x embedding].
inline Tensor meta_embed(const MetaConvLayer& layer, const PatchBatch& patches) {
  Tensor h = patches.points;
  for (const auto& lin : layer.encoder) h = num::relu(lin.forward(h));
  return num::segment_max(h, patches.offsets);
}

/// theta_p for every patch of the batch, [patches x total_params].
inline Tensor meta_encode(const MetaConvLayer& layer, const PatchBatch& patches) {
  return layer.head.forward(meta_embed(layer, patches));
}

/// theta_p of a single raw patch [(k+1) x 3]: row 0 is the center vertex.
inline Tensor meta_encode(const MetaConvLayer& layer, const Tensor& patch) {
  if (patch.dim() != 2 || patch.size(1) != 3) {
    throw DimensionError("meta_encode: patch must be [(k+1) x 3], got " + num::shape_str(patch.shape()));
  }
  const auto rows = patch.size(0);
  if (rows < 2) throw ContractError("meta_encode: a patch needs the center and at least one neighbor");
  // Center through an op so gradients reach the patch coordinates.
  const auto centered = num::sub(patch, num::gather_rows(patch, std::vector<std::size_t>(rows, 0)));
  PatchBatch batch{centered, {0, rows}};
  const auto theta = meta_encode(layer, batch);
  return num::reshape(theta, {layer.manifest.total_params()});
}

/// Relation weights from generated parameters. theta holds one row per group
/// (or a single vector for all pairs); pair rows [offsets[g], offsets[g+1])
/// use theta row g. xi, xk: [P x in]. Returns [P x M].
inline Tensor base_relation(const BaseLearnerManifest& man, const Tensor& theta, const Tensor& xi, const Tensor& xk,
                            std::vector<std::size_t> offsets) {
  const auto t = man.total_params();
  const auto groups = theta.dim() == 1 ? 1 : theta.size(0);
  const auto width = theta.dim() == 1 ? theta.size(0) : theta.size(1);
  if (theta.dim() > 2 || width != t) {
    throw ManifestError("theta_p " + num::shape_str(theta.shape()) + " does not match manifest of " +
                        std::to_string(t) + " values");
  }
  detail::require_features(xi, man.in_channels, "base_relation");
  detail::require_features(xk, man.in_channels, "base_relation");
  if (xi.size(0) != xk.size(0)) throw DimensionError("base_relation: pair count mismatch");
  if (offsets.size() != groups + 1) throw DimensionError("base_relation: group count mismatch");
  const auto th = theta.dim() == 1 ? num::reshape(theta, {1, t}) : theta;
  const auto h = man.hidden, m = man.filters, c2 = 2 * man.in_channels;

  std::vector<std::size_t> owner(xi.size(0));
  for (std::size_t g = 0; g < groups; ++g)
    for (auto r = offsets[g]; r < offsets[g + 1]; ++r) owner[r] = g;

  const auto z = num::concat_cols(xi, xk);
  auto a = num::segment_matvec(num::slice_cols(th, man.w1_offset(), h * c2), z, offsets, h, c2);
  a = num::relu(num::add(a, num::gather_rows(num::slice_cols(th, man.b1_offset(), h), owner)));
  auto logits = num::segment_matvec(num::slice_cols(th, man.w2_offset(), m * h), a, offsets, m, h);
  logits = num::add(logits, num::gather_rows(num::slice_cols(th, man.b2_offset(), m), owner));
  return num::softmax(logits, 1);
}

/// Single theta_p applied to every pair.
inline Tensor base_relation(const BaseLearnerManifest& man, const Tensor& theta, const Tensor& xi, const Tensor& xk) {
  return base_relation(man, theta, xi, xk, {0, xi.size(0)});
}

inline Tensor meta_forward(const MetaConvLayer& layer, const Tensor& x, const PatchBatch& patches,
                           const geo::NeighborhoodGraph& g) {
  detail::require_features(x, layer.in, "meta_forward");
  detail::require_graph(g, x.size(0), "meta_forward");
  if (patches.offsets.size() != g.offsets.size()) throw DimensionError("meta_forward: patches do not match graph");
  const auto theta = meta_encode(layer, patches);
  const auto xi = num::gather_rows(x, g.centers());
  const auto xk = num::gather_rows(x, g.neighbors);
  const auto q = base_relation(layer.manifest, theta, xi, xk, g.offsets);
  return detail::aggregate(q, x, layer.W, layer.b, g);
}

inline Tensor meta_forward(const MetaConvLayer& layer, const Tensor& x, const Tensor& coords,
                           const geo::NeighborhoodGraph& g) {
  return meta_forward(layer, x, make_patches(coords, g), g);
}

struct PreactivationGap {
  double shared = 0.0;  // same first-layer weights for both pairs
  double meta = 0.0;    // first layers generated from patch_i and patch_j
};

namespace detail {

// First-layer pre-activation [W1 : W1~][x_i : x_k] + b1 of a theta_p, in plain doubles.
inline std::vector<double> first_preactivation(const BaseLearnerManifest& man, std::span<const double> theta,
                                               std::span<const double> xc, std::span<const double> xk) {
  const auto c = man.in_channels;
  std::vector<double> a(man.hidden);
  for (std::size_t r = 0; r < man.hidden; ++r) {
    const double* w = theta.data() + man.w1_offset() + r * 2 * c;
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += w[j] * xc[j];
    for (std::size_t j = 0; j < c; ++j) s += w[c + j] * xk[j];
    a[r] = s + theta[man.b1_offset() + r];
  }
  return a;
}

inline double l2_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) s += (a[r] - b[r]) * (a[r] - b[r]);
  return std::sqrt(s);
}

}  // namespace detail

/// L2 gap between first-layer pre-activations of the pairs (v_i, v_k) and
/// (v_j, v_k): once with one shared theta for both, once with theta generated
/// from each pair's own patch. Diagnostic only; no gradients.
inline PreactivationGap preactivation_gap_probe(std::span<const double> shared_theta, const MetaConvLayer& meta,
                                                std::span<const double> vi, std::span<const double> vj,
                                                std::span<const double> vk, const Tensor& patch_i,
                                                const Tensor& patch_j) {
  const auto& man = meta.manifest;
  if (shared_theta.size() != man.total_params()) throw ManifestError("shared theta does not match manifest");
  if (vi.size() != man.in_channels || vj.size() != man.in_channels || vk.size() != man.in_channels) {
    throw DimensionError("preactivation_gap_probe: feature width mismatch");
  }
  num::NoGradGuard no_grad;
  PreactivationGap out;
  out.shared = detail::l2_gap(detail::first_preactivation(man, shared_theta, vi, vk),
                              detail::first_preactivation(man, shared_theta, vj, vk));
  const auto ti = meta_encode(meta, patch_i), tj = meta_encode(meta, patch_j);
  out.meta = detail::l2_gap(detail::first_preactivation(man, ti.data(), vi, vk),
                            detail::first_preactivation(man, tj.data(), vj, vk));
  return out;
}

}  // namespace meps::layers
