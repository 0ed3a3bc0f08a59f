#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "meps/geometry/geodesic.hpp"
#include "meps/geometry/synth.hpp"
#include "meps/model/network.hpp"

namespace meps::eval {

struct CorrespondenceErrors {
  std::vector<double> errors;  // geodesic distance / shape_scale, +inf if unreachable
  bool any_unreachable = false;
  bool scale_from_bounding_box = false;
};

/// error_i = geodesic(ref, pred_i, gt_i) / shape_scale(ref).
inline CorrespondenceErrors correspondence_errors(std::span<const std::size_t> pred, std::span<const std::size_t> gt,
                                                  const geo::Mesh& ref) {
  if (pred.size() != gt.size()) throw DimensionError("correspondence_errors: prediction and ground truth lengths differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= ref.size() || gt[i] >= ref.size()) {
      throw IndexError("correspondence_errors: index outside the " + std::to_string(ref.size()) + "-vertex reference");
    }
  }
  const auto scale = geo::shape_scale(ref);
  const auto graph = geo::build_edge_graph(ref);
  CorrespondenceErrors out;
  out.scale_from_bounding_box = scale.from_bounding_box;
  out.errors.resize(pred.size());
  // One shortest-path tree per distinct ground-truth vertex that is missed.
  std::map<std::size_t, std::vector<double>> trees;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == gt[i]) {
      out.errors[i] = 0.0;
      continue;
    }
    auto it = trees.find(gt[i]);
    if (it == trees.end()) it = trees.emplace(gt[i], geo::geodesic_from(graph, gt[i]).distance).first;
    out.errors[i] = it->second[pred[i]] / scale.value;
    out.any_unreachable = out.any_unreachable || std::isinf(out.errors[i]);
  }
  return out;
}

inline double accuracy_at_zero(std::span<const double> errors) {
  if (errors.empty()) return 0.0;
  const auto hits = std::count(errors.begin(), errors.end(), 0.0);
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

struct EvalCurve {
  std::vector<double> thresholds;
  std::vector<double> fractions;
};

/// `steps` uniform intervals over [0, max_threshold] (steps + 1 points).
inline std::vector<double> default_thresholds(double max_threshold = 0.25, std::size_t steps = 100) {
  std::vector<double> t(steps + 1);
  for (std::size_t j = 0; j <= steps; ++j) t[j] = max_threshold * static_cast<double>(j) / static_cast<double>(steps);
  return t;
}

/// fractions[j] = fraction of errors <= thresholds[j].
inline EvalCurve error_curve(std::span<const double> errors, std::span<const double> thresholds) {
  if (thresholds.empty() || thresholds.front() != 0.0 || !std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw ParameterError("error_curve: thresholds must ascend from 0");
  }
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  EvalCurve c;
  c.thresholds.assign(thresholds.begin(), thresholds.end());
  for (double t : thresholds) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    c.fractions.push_back(sorted.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(sorted.size()));
  }
  return c;
}

/// Accuracy at zero error of a model on labeled shapes, pooled over vertices.
inline double evaluate_accuracy(const model::Model& m, const std::vector<geo::Mesh>& shapes, const geo::Mesh& ref,
                                std::vector<double>* all_errors = nullptr) {
  std::vector<double> errors;
  for (const auto& s : shapes) {
    if (!s.labels) throw ContractError("evaluate: shape has no labels");
    const auto pred = model::predict(m, model::prepare_shape(m.config(), s));
    const auto e = correspondence_errors(pred, *s.labels, ref);
    errors.insert(errors.end(), e.errors.begin(), e.errors.end());
  }
  const double acc = accuracy_at_zero(errors);
  if (all_errors) *all_errors = std::move(errors);
  return acc;
}

struct NoiseRow {
  double sigma = 0.0;
  double accuracy = 0.0;             // mean over seeds
  std::vector<double> per_seed;      // accuracy for each noise seed
};

/// For every sigma and seed: perturb the test shapes, rebuild their kNN
/// graphs, and measure accuracy at zero error. sigma is in coordinate units.
inline std::vector<NoiseRow> noise_sweep(const model::Model& m, const std::vector<geo::Mesh>& test, const geo::Mesh& ref,
                                         std::span<const double> sigmas, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ParameterError("noise_sweep: need at least one seed");
  std::vector<NoiseRow> rows;
  for (double sigma : sigmas) {
    NoiseRow row;
    row.sigma = sigma;
    for (auto seed : seeds) {
      std::vector<geo::Mesh> noisy;
      for (std::size_t s = 0; s < test.size(); ++s) {
        noisy.push_back(geo::add_gaussian_noise(test[s], sigma, num::stream_seed(seed, s)));
      }
      row.per_seed.push_back(evaluate_accuracy(m, noisy, ref));
    }
    double sum = 0.0;
    for (double a : row.per_seed) sum += a;
    row.accuracy = sum / static_cast<double>(row.per_seed.size());
    rows.push_back(row);
  }
  return rows;
}

struct Embeddings {
  std::vector<std::vector<double>> features;  // [N x embedding]
  std::vector<geo::Vec3> coords;
};

/// Pooled patch embeddings of the `meta_layer`-th meta convolution (0 = first).
inline Embeddings export_embeddings(const model::Model& m, const geo::Mesh& mesh, std::size_t meta_layer = 0) {
  if (m.config().variant != model::Variant::Meta) {
    throw ContractError("export_embeddings: the baseline variant has no patch encoder");
  }
  const layers::MetaConvLayer* target = nullptr;
  std::size_t seen = 0;
  for (const auto& l : m.layers()) {
    if (const auto* mc = std::get_if<layers::MetaConvLayer>(&l)) {
      if (seen++ == meta_layer) target = mc;
    }
  }
  if (!target) {
    throw ParameterError("export_embeddings: layer " + std::to_string(meta_layer) + " requested but the model has " +
                         std::to_string(seen) + " meta convolutions");
  }
  num::NoGradGuard no_grad;
  const auto in = model::prepare_shape(m.config(), mesh);
  const auto pooled = layers::meta_embed(*target, in.patches);
  Embeddings out;
  const auto width = pooled.size(1);
  for (std::size_t i = 0; i < pooled.size(0); ++i) {
    const auto row = pooled.data().subspan(i * width, width);
    out.features.emplace_back(row.begin(), row.end());
  }
  out.coords = mesh.vertices;
  return out;
}

}  // namespace meps::eval
