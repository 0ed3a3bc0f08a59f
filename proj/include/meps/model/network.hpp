#pragma once

#include <json.hpp>

#include <string>
#include <variant>
#include <vector>

#include "meps/geometry/knn.hpp"
#include "meps/geometry/mesh.hpp"
#include "meps/layers.hpp"
#include "meps/model/config.hpp"
#include "meps/numcore/params.hpp"

namespace meps::model {

using num::Tensor;

/// A mesh prepared for the network: coordinates, its cached kNN graph, the
/// centered patches (meta variant) and the labels if present.
struct ShapeInput {
  Tensor coords;  // [N x 3]
  geo::NeighborhoodGraph graph;
  layers::PatchBatch patches;
  std::vector<std::size_t> labels;
};

inline ShapeInput prepare_shape(const NetworkConfig& cfg, const geo::Mesh& mesh) {
  mesh.validate(cfg.n_classes);
  ShapeInput in;
  std::vector<double> xyz;
  xyz.reserve(mesh.size() * 3);
  for (const auto& v : mesh.vertices) xyz.insert(xyz.end(), v.begin(), v.end());
  in.coords = Tensor({mesh.size(), 3}, std::move(xyz));
  geo::KnnOptions opts;
  opts.symmetrize = cfg.symmetrize_knn;
  in.graph = geo::knn_graph(mesh, cfg.k, opts);
  if (cfg.variant == Variant::Meta) in.patches = layers::make_patches(in.coords, in.graph);
  if (mesh.labels) in.labels = *mesh.labels;
  return in;
}

/// Network parameters plus the layer objects bound to them.
class Model {
 public:
  using Layer = std::variant<layers::Linear, layers::FeastConvLayer, layers::MetaConvLayer>;

  static Model init(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    num::Rng rng(seed, /*stream=*/0x1a7e5);
    std::size_t width = 3;
    const auto chain = cfg.layers();
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const auto& spec = chain[i];
      const auto name = "layer" + std::to_string(i);
      if (spec.kind == LayerKind::Linear) {
        auto l = layers::Linear::init(width, spec.out, rng);
        l.register_params(m.params_, name);
        m.layers_.emplace_back(std::move(l));
      } else if (cfg.variant == Variant::Baseline) {
        auto l = layers::FeastConvLayer::init(width, spec.out, cfg.filters, rng);
        l.register_params(m.params_, name);
        m.layers_.emplace_back(std::move(l));
      } else {
        auto l = layers::MetaConvLayer::init(width, spec.out, cfg.filters, cfg.encoder, rng);
        l.register_params(m.params_, name);
        m.layers_.emplace_back(std::move(l));
      }
      width = spec.out;
    }
    return m;
  }

  /// Rebinds a model to stored parameter values; names and shapes must
  /// match what `cfg` produces.
  static Model from_params(const NetworkConfig& cfg, const num::ParameterSet& values) {
    Model m = init(cfg, 0);
    m.params_.check_layout(values);
    m.params_.assign(values);
    return m;
  }

  const NetworkConfig& config() const { return cfg_; }
  num::ParameterSet& params() { return params_; }
  const num::ParameterSet& params() const { return params_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Deep copy: fresh parameter leaves, same values.
  Model clone() const { return from_params(cfg_, params_); }

 private:
  NetworkConfig cfg_;
  num::ParameterSet params_;
  std::vector<Layer> layers_;
};

/// Per-vertex logits [N x n_classes].
inline Tensor forward_model(const Model& model, const ShapeInput& in) {
  const auto& layers = model.layers();
  Tensor x = in.coords;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = std::visit(
        [&](const auto& l) -> Tensor {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, layers::Linear>) {
            return l.forward(x);
          } else if constexpr (std::is_same_v<L, layers::FeastConvLayer>) {
            return layers::feast_forward(l, x, in.graph);
          } else {
            return layers::meta_forward(l, x, in.patches, in.graph);
          }
        },
        layers[i]);
    if (i + 1 < layers.size()) x = num::relu(x);
  }
  return x;
}

inline Tensor forward_model(const Model& model, const geo::Mesh& mesh) {
  return forward_model(model, prepare_shape(model.config(), mesh));
}

/// Predicted reference vertex per input vertex.
inline std::vector<std::size_t> predict(const Model& model, const ShapeInput& in) {
  num::NoGradGuard no_grad;
  return num::argmax_rows(forward_model(model, in));
}

// ---- checkpoints ----------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json checkpoint_to_json(const Model& model) {
  return {{"checkpoint_version", kCheckpointFormatVersion},
          {"network", to_json(model.config())},
          {"parameters", num::parameters_to_json(model.params())}};
}

inline Model checkpoint_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("checkpoint_version") ||
      doc.at("checkpoint_version") != kCheckpointFormatVersion) {
    throw ManifestError("checkpoint: unsupported or missing checkpoint_version (expected " +
                        std::to_string(kCheckpointFormatVersion) + ")");
  }
  const auto cfg = network_from_json(doc.at("network"));
  return Model::from_params(cfg, num::parameters_from_json(doc.at("parameters")));
}

}  // namespace meps::model
