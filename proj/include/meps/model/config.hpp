#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "meps/error.hpp"
#include "meps/geometry/synth.hpp"
#include "meps/layers/meta.hpp"
#include "meps/numcore/optim.hpp"

namespace meps::model {

enum class Variant { Baseline, Meta };

inline std::string to_string(Variant v) { return v == Variant::Baseline ? "baseline" : "meta"; }

inline Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "meta") return Variant::Meta;
  throw ConfigError("variant: unknown value '" + s + "' (expected baseline or meta)");
}

enum class LayerKind { Linear, Conv };

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  std::size_t out = 0;

  bool operator==(const LayerSpec&) const = default;
};

/// "lin16", "conv32", ...
inline std::string to_string(const LayerSpec& s) {
  return (s.kind == LayerKind::Linear ? "lin" : "conv") + std::to_string(s.out);
}

inline LayerSpec layer_spec_from_string(const std::string& s) {
  LayerSpec spec;
  std::string digits;
  if (s.rfind("lin", 0) == 0) {
    spec.kind = LayerKind::Linear;
    digits = s.substr(3);
  } else if (s.rfind("conv", 0) == 0) {
    spec.kind = LayerKind::Conv;
    digits = s.substr(4);
  } else {
    throw ConfigError("architecture: unknown layer '" + s + "' (expected linN or convN)");
  }
  if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("architecture: bad layer width in '" + s + "'");
  }
  spec.out = std::stoul(digits);
  return spec;
}

/// Layer chain over per-vertex XYZ input. Every layer but the last is
/// followed by a ReLU; the last must be a linear layer with n_classes outputs.
struct NetworkConfig {
  Variant variant = Variant::Baseline;
  std::vector<LayerSpec> architecture{{LayerKind::Linear, 16}, {LayerKind::Conv, 32}, {LayerKind::Conv, 64},
                                      {LayerKind::Conv, 128},  {LayerKind::Linear, 256}};
  std::size_t n_classes = 0;  // reference vertex count; appended as the final linear layer
  std::size_t filters = 9;
  std::size_t k = 20;
  bool symmetrize_knn = false;
  layers::EncoderSpec encoder;

  // Full chain including the classifier.
  std::vector<LayerSpec> layers() const {
    auto out = architecture;
    out.push_back({LayerKind::Linear, n_classes});
    return out;
  }

  void validate() const {
    if (n_classes == 0) throw ConfigError("n_classes: must be positive");
    if (filters == 0) throw ConfigError("filters: must be at least 1");
    if (k == 0) throw ConfigError("k: must be at least 1");
    for (const auto& l : architecture) {
      if (l.out == 0) throw ConfigError("architecture: layer " + to_string(l) + " has zero width");
    }
    if (variant == Variant::Meta) {
      if (encoder.embedding == 0) throw ConfigError("encoder.embedding: must be positive");
      for (auto w : encoder.widths)
        if (w == 0) throw ConfigError("encoder.widths: zero width");
      if (!(encoder.head_init_std >= 0.0)) throw ConfigError("encoder.head_init_std: must be non-negative");
    }
  }
};

struct TrainSchedule {
  double lr0 = 0.01;
  double weight_decay = 1e-4;
  std::size_t batch_size = 6;
  std::size_t max_epochs = 6000;
  std::size_t decay_every = 480;
  double decay_factor = 0.5;
  double lr_floor = 1e-4;
  std::uint64_t seed = 0;
  num::UpdateRule optimizer = num::UpdateRule::Sgd;

  void validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0: must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay: must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size: must be at least 1");
    if (decay_every == 0) throw ConfigError("decay_every: must be at least 1");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor: must be in (0, 1]");
    if (!(lr_floor >= 0.0)) throw ConfigError("lr_floor: must be non-negative");
  }
};

/// lr0 * decay_factor^floor(epoch / decay_every), clipped below at lr_floor.
inline double lr_at(const TrainSchedule& s, std::size_t epoch) {
  const auto steps = static_cast<double>(epoch / s.decay_every);
  return std::max(s.lr0 * std::pow(s.decay_factor, steps), s.lr_floor);
}

/// Synthetic training/evaluation set: the template plus `deformations`
/// deformed copies; the last `held_out` copies are kept for evaluation.
struct DataConfig {
  std::size_t vertices = 200;
  std::size_t deformations = 8;
  std::size_t held_out = 2;
  double deform_scale = 0.15;  // amplitude as a fraction of the template's shape_scale
  std::uint64_t seed = 0;
  geo::SynthOptions synth;

  void validate() const {
    if (vertices < 12) throw ConfigError("data.vertices: must be at least 12");
    if (held_out > deformations) throw ConfigError("data.held_out: exceeds data.deformations");
    if (!(deform_scale >= 0.0)) throw ConfigError("data.deform_scale: must be non-negative");
    if (synth.components < 1) throw ConfigError("data.synth.components: must be at least 1");
    if (!(synth.radius > 0.0)) throw ConfigError("data.synth.radius: must be positive");
    if (!(synth.min_frequency >= 0.0 && synth.min_frequency <= synth.max_frequency)) {
      throw ConfigError("data.synth: need 0 <= min_frequency <= max_frequency");
    }
  }
};

struct RunConfig {
  NetworkConfig network;
  TrainSchedule schedule;
  DataConfig data;
};

// ---- JSON -----------------------------------------------------------------

namespace detail {

// Reads an optional field, naming it in the error if the type is wrong.
template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& scope) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(scope + key + ": wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& scope) {
  if (!j.is_object()) throw ConfigError((scope.empty() ? std::string("config") : scope) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(scope + key + ": unknown field");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const NetworkConfig& c) {
  std::vector<std::string> arch;
  for (const auto& l : c.architecture) arch.push_back(to_string(l));
  return {{"variant", to_string(c.variant)},
          {"architecture", arch},
          {"n_classes", c.n_classes},
          {"filters", c.filters},
          {"k", c.k},
          {"symmetrize_knn", c.symmetrize_knn},
          {"encoder",
           {{"widths", c.encoder.widths}, {"embedding", c.encoder.embedding}, {"head_init_std", c.encoder.head_init_std}}}};
}

inline NetworkConfig network_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"variant", "architecture", "n_classes", "filters", "k", "symmetrize_knn", "encoder"},
                         "network.");
  NetworkConfig c;
  std::string variant = to_string(c.variant);
  detail::read_field(j, "variant", variant, "network.");
  c.variant = variant_from_string(variant);
  if (j.contains("architecture")) {
    std::vector<std::string> arch;
    detail::read_field(j, "architecture", arch, "network.");
    c.architecture.clear();
    for (const auto& s : arch) c.architecture.push_back(layer_spec_from_string(s));
  }
  detail::read_field(j, "n_classes", c.n_classes, "network.");
  detail::read_field(j, "filters", c.filters, "network.");
  detail::read_field(j, "k", c.k, "network.");
  detail::read_field(j, "symmetrize_knn", c.symmetrize_knn, "network.");
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::reject_unknown(e, {"widths", "embedding", "head_init_std"}, "network.encoder.");
    detail::read_field(e, "widths", c.encoder.widths, "network.encoder.");
    detail::read_field(e, "embedding", c.encoder.embedding, "network.encoder.");
    detail::read_field(e, "head_init_std", c.encoder.head_init_std, "network.encoder.");
  }
  return c;
}

inline nlohmann::json to_json(const TrainSchedule& s) {
  return {{"lr0", s.lr0},
          {"weight_decay", s.weight_decay},
          {"batch_size", s.batch_size},
          {"max_epochs", s.max_epochs},
          {"decay_every", s.decay_every},
          {"decay_factor", s.decay_factor},
          {"lr_floor", s.lr_floor},
          {"seed", s.seed},
          {"optimizer", num::to_string(s.optimizer)}};
}

inline TrainSchedule schedule_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"lr0", "weight_decay", "batch_size", "max_epochs", "decay_every", "decay_factor",
                             "lr_floor", "seed", "optimizer"},
                         "schedule.");
  TrainSchedule s;
  detail::read_field(j, "lr0", s.lr0, "schedule.");
  detail::read_field(j, "weight_decay", s.weight_decay, "schedule.");
  detail::read_field(j, "batch_size", s.batch_size, "schedule.");
  detail::read_field(j, "max_epochs", s.max_epochs, "schedule.");
  detail::read_field(j, "decay_every", s.decay_every, "schedule.");
  detail::read_field(j, "decay_factor", s.decay_factor, "schedule.");
  detail::read_field(j, "lr_floor", s.lr_floor, "schedule.");
  detail::read_field(j, "seed", s.seed, "schedule.");
  std::string opt = num::to_string(s.optimizer);
  detail::read_field(j, "optimizer", opt, "schedule.");
  try {
    s.optimizer = num::update_rule_from_string(opt);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("schedule.optimizer: ") + e.what());
  }
  return s;
}

inline nlohmann::json to_json(const DataConfig& d) {
  return {{"vertices", d.vertices},
          {"deformations", d.deformations},
          {"held_out", d.held_out},
          {"deform_scale", d.deform_scale},
          {"seed", d.seed},
          {"synth",
           {{"radius", d.synth.radius},
            {"components", d.synth.components},
            {"min_frequency", d.synth.min_frequency},
            {"max_frequency", d.synth.max_frequency},
            {"remove_mean", d.synth.remove_mean}}}};
}

inline DataConfig data_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"vertices", "deformations", "held_out", "deform_scale", "seed", "synth"}, "data.");
  DataConfig d;
  detail::read_field(j, "vertices", d.vertices, "data.");
  detail::read_field(j, "deformations", d.deformations, "data.");
  detail::read_field(j, "held_out", d.held_out, "data.");
  detail::read_field(j, "deform_scale", d.deform_scale, "data.");
  detail::read_field(j, "seed", d.seed, "data.");
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    detail::reject_unknown(s, {"radius", "components", "min_frequency", "max_frequency", "remove_mean"}, "data.synth.");
    detail::read_field(s, "radius", d.synth.radius, "data.synth.");
    detail::read_field(s, "components", d.synth.components, "data.synth.");
    detail::read_field(s, "min_frequency", d.synth.min_frequency, "data.synth.");
    detail::read_field(s, "max_frequency", d.synth.max_frequency, "data.synth.");
    detail::read_field(s, "remove_mean", d.synth.remove_mean, "data.synth.");
  }
  return d;
}

inline nlohmann::json to_json(const RunConfig& r) {
  return {{"network", to_json(r.network)}, {"schedule", to_json(r.schedule)}, {"data", to_json(r.data)}};
}

/// Missing sections and fields keep their defaults; unknown fields are errors.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"network", "schedule", "data"}, "");
  RunConfig r;
  if (j.contains("network")) r.network = network_from_json(j.at("network"));
  if (j.contains("schedule")) r.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("data")) r.data = data_from_json(j.at("data"));
  return r;
}

/// Desk-scale defaults: 200-vertex synthetic shapes, 300 epochs with the
/// decay interval scaled by 300 / 6000 (480 -> 24), Adam, and a narrower
/// patch encoder (32, 64 -> 128) so a meta run fits in a few minutes on one core.
inline RunConfig desk_config(Variant variant) {
  RunConfig r;
  r.network.variant = variant;
  r.network.n_classes = 200;
  r.network.encoder.widths = {32, 64};
  r.network.encoder.embedding = 128;
  r.schedule.max_epochs = 300;
  r.schedule.decay_every = 24;
  r.schedule.optimizer = num::UpdateRule::Adam;
  r.data.vertices = 200;
  return r;
}

}  // namespace meps::model
