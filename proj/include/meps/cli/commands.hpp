#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "meps/cli/manifest.hpp"
#include "meps/eval/eval.hpp"
#include "meps/geometry/mesh_io.hpp"
#include "meps/model.hpp"

namespace meps::cli {

namespace fs = std::filesystem;

/// Keeps large tensor buffers on the heap instead of fresh mmap regions.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

// ---- data directories -----------------------------------------------------
//
//   DIR/reference.off            reference shape (or .ply)
//   DIR/reference.labels         optional
//   DIR/train/<name>.off         + <name>.labels sidecar
//   DIR/test/<name>.off          + <name>.labels sidecar

inline std::optional<fs::path> find_mesh(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".off", ".ply"}) {
    if (fs::exists(dir / (stem + ext))) return dir / (stem + ext);
  }
  return std::nullopt;
}

inline std::vector<fs::path> list_meshes(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".off" || ext == ".ply")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline fs::path label_sidecar(const fs::path& mesh) { return fs::path(mesh).replace_extension(".labels"); }

/// Loads a data directory; every file read is added to `manifest` as an input.
inline model::Dataset load_dataset(const fs::path& dir, RunManifest& manifest) {
  model::Dataset d;
  const auto ref = find_mesh(dir, "reference");
  if (!ref) throw IoError(dir.string() + ": no reference.off or reference.ply");
  manifest.add_input(*ref);
  d.reference = geo::read_mesh(*ref);
  if (fs::exists(label_sidecar(*ref))) {
    d.reference = geo::read_labeled_mesh(*ref, label_sidecar(*ref));
    manifest.add_input(label_sidecar(*ref));
  }
  auto load_split = [&](const fs::path& sub, std::vector<geo::Mesh>& out) {
    for (const auto& p : list_meshes(sub)) {
      const auto lp = label_sidecar(p);
      if (!fs::exists(lp)) throw IoError(lp.string() + ": missing label file for " + p.string());
      out.push_back(geo::read_labeled_mesh(p, lp));
      manifest.add_input(p);
      manifest.add_input(lp);
    }
  };
  load_split(dir / "train", d.train);
  load_split(dir / "test", d.test);
  return d;
}

/// Accepts a bare run config or a manifest written by `train` (its embedded config).
inline model::RunConfig load_run_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(geo::detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("manifest_id")) j = j.at("config");
  return model::run_config_from_json(j);
}

inline model::Model load_checkpoint(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(geo::detail::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  return model::checkpoint_from_json(j);
}

inline std::string fmt(double x) { return geo::detail::format_double(x); }

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  model::DataConfig data;
  fs::path out;
  std::string format = "off";
};

/// Writes the synthetic dataset in the data-directory layout; output paths in
/// the manifest are relative to `out`. The template is
/// written as reference and as the first training shape.
inline RunManifest cmd_synth(const SynthArgs& a) {
  if (a.format != "off" && a.format != "ply") throw ConfigError("format: expected off or ply");
  const auto d = model::synthetic_dataset(a.data);
  const std::string ext = "." + a.format;

  RunManifest m;
  m.command = "synth";
  m.config = model::to_json(a.data);
  m.seed = a.data.seed;
  std::vector<std::pair<fs::path, const geo::Mesh*>> files{{a.out / ("reference" + ext), &d.reference}};
  auto name = [&](std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "shape_%03zu", i);
    return std::string(buf) + ext;
  };
  for (std::size_t i = 0; i < d.train.size(); ++i) files.emplace_back(a.out / "train" / name(i), &d.train[i]);
  for (std::size_t i = 0; i < d.test.size(); ++i) files.emplace_back(a.out / "test" / name(d.train.size() + i), &d.test[i]);
  for (const auto& [p, mesh] : files) {
    m.add_output(p.lexically_relative(a.out));
    m.add_output(label_sidecar(p).lexically_relative(a.out));
  }
  const auto tag = "manifest " + m.id();
  std::error_code ec;
  fs::create_directories(a.out / "train", ec);
  if (!d.test.empty()) fs::create_directories(a.out / "test", ec);
  if (ec) throw IoError(a.out.string() + ": " + ec.message());
  for (const auto& [p, mesh] : files) {
    geo::write_mesh(p, *mesh, tag);
    geo::write_labels(label_sidecar(p), *mesh->labels, tag);
  }
  m.write(a.out / "manifest.json");
  return m;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  model::RunConfig config;
  std::optional<fs::path> config_path;
  std::optional<fs::path> data;  // synthetic data from config.data if absent
  fs::path out;
  std::size_t threads = 1;
  std::ostream* progress = nullptr;  // one line per `progress_every` epochs
  std::size_t progress_every = 25;
};

struct TrainSummary {
  RunManifest manifest;
  model::TrainResult result;
  double test_accuracy = -1.0;  // last checkpoint on the test split, if any
};

inline TrainSummary cmd_train(const TrainArgs& a) {
  TrainSummary s;
  auto& m = s.manifest;
  m.command = "train";
  if (a.config_path) m.add_input(*a.config_path);
  auto cfg = a.config;
  const auto data = a.data ? load_dataset(*a.data, m) : model::synthetic_dataset(cfg.data);
  if (cfg.network.n_classes == 0) cfg.network.n_classes = data.reference.size();
  if (cfg.network.n_classes != data.reference.size()) {
    throw ConfigError("network.n_classes: " + std::to_string(cfg.network.n_classes) + " but the reference has " +
                      std::to_string(data.reference.size()) + " vertices");
  }
  if (data.train.empty()) throw ConfigError("data: no training shapes");
  m.config = model::to_json(cfg);
  m.seed = cfg.schedule.seed;
  const auto ckpt = a.out / "checkpoint.json", best = a.out / "best.json", loss = a.out / "loss.csv";
  for (const auto& p : {ckpt, best, loss}) m.add_output(p.lexically_relative(a.out));
  const auto id = m.id();

  model::TrainOptions opts;
  opts.threads = a.threads;
  if (a.progress) {
    opts.on_epoch = [&](const model::EpochLog& e) {
      if (e.epoch % a.progress_every == 0 || e.epoch + 1 == cfg.schedule.max_epochs) {
        *a.progress << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.loss << " train_acc " << e.train_accuracy
                    << std::endl;
      }
    };
  }
  s.result = model::train(cfg.network, cfg.schedule, data.train, opts);
  if (!data.test.empty()) s.test_accuracy = eval::evaluate_accuracy(s.result.last, data.test, data.reference);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError(a.out.string() + ": " + ec.message());
  auto write_ckpt = [&](const fs::path& p, const model::Model& model) {
    auto j = model::checkpoint_to_json(model);
    j["manifest_id"] = id;
    geo::detail::write_text(p, j.dump() + "\n");
  };
  write_ckpt(ckpt, s.result.last);
  write_ckpt(best, s.result.best);
  std::string csv = csv_preamble(id, "epoch,lr,loss,train_accuracy");
  for (const auto& e : s.result.log) {
    csv += std::to_string(e.epoch) + "," + fmt(e.lr) + "," + fmt(e.loss) + "," + fmt(e.train_accuracy) + "\n";
  }
  geo::detail::write_text(loss, csv);
  m.write(a.out / "manifest.json");
  return s;
}

// ---- eval / noise / embed -------------------------------------------------

struct EvalSource {
  fs::path checkpoint;
  std::optional<fs::path> data;         // data directory
  std::optional<fs::path> config_path;  // synthetic data from its data section
  std::string split = "test";
};

struct LoadedEval {
  model::Model model;
  geo::Mesh reference;
  std::vector<geo::Mesh> shapes;
};

inline LoadedEval load_eval(const EvalSource& src, RunManifest& m) {
  if (src.split != "train" && src.split != "test") throw ConfigError("split: expected train or test");
  m.add_input(src.checkpoint);
  LoadedEval out{load_checkpoint(src.checkpoint), {}, {}};
  model::Dataset d;
  if (src.data) {
    d = load_dataset(*src.data, m);
  } else if (src.config_path) {
    m.add_input(*src.config_path);
    const auto rc = load_run_config(*src.config_path);
    d = model::synthetic_dataset(rc.data);
    m.seed = rc.data.seed;
  } else {
    throw ConfigError("data: pass --data or --config");
  }
  if (out.model.config().n_classes != d.reference.size()) {
    throw ManifestError("checkpoint has " + std::to_string(out.model.config().n_classes) +
                        " classes but the reference has " + std::to_string(d.reference.size()) + " vertices");
  }
  out.reference = std::move(d.reference);
  out.shapes = src.split == "test" ? std::move(d.test) : std::move(d.train);
  if (out.shapes.empty()) throw ConfigError("data: the " + src.split + " split is empty");
  m.config = {{"network", model::to_json(out.model.config())}, {"split", src.split}};
  return out;
}

struct EvalArgs {
  EvalSource source;
  fs::path curve_out;
  double max_threshold = 0.25;
  std::size_t steps = 100;
};

struct EvalSummary {
  RunManifest manifest;
  double accuracy = 0.0;
  eval::EvalCurve curve;
};

inline fs::path sidecar_manifest(const fs::path& p) { return fs::path(p.string() + ".manifest.json"); }

inline EvalSummary cmd_eval(const EvalArgs& a) {
  EvalSummary s;
  s.manifest.command = "eval";
  auto loaded = load_eval(a.source, s.manifest);
  s.manifest.config["thresholds"] = {{"max", a.max_threshold}, {"steps", a.steps}};
  s.manifest.add_output(a.curve_out);
  std::vector<double> errors;
  s.accuracy = eval::evaluate_accuracy(loaded.model, loaded.shapes, loaded.reference, &errors);
  s.curve = eval::error_curve(errors, eval::default_thresholds(a.max_threshold, a.steps));
  std::string csv = csv_preamble(s.manifest.id(), "threshold,fraction");
  for (std::size_t j = 0; j < s.curve.thresholds.size(); ++j) {
    csv += fmt(s.curve.thresholds[j]) + "," + fmt(s.curve.fractions[j]) + "\n";
  }
  geo::detail::write_text(a.curve_out, csv);
  s.manifest.write(sidecar_manifest(a.curve_out));
  return s;
}

/// Zero plus the robustness grid.
inline std::vector<double> default_sweep_sigmas() {
  std::vector<double> s{0.0};
  for (double x : geo::default_noise_sigmas()) s.push_back(x);
  return s;
}

struct NoiseArgs {
  EvalSource source;
  fs::path out;
  std::vector<double> sigmas = default_sweep_sigmas();
  bool absolute = false;  // sigmas in coordinate units instead of multiples of shape_scale
  std::uint64_t seed = 0;
  std::size_t seeds = 3;
};

struct NoiseSummary {
  RunManifest manifest;
  double shape_scale = 1.0;
  std::vector<eval::NoiseRow> rows;
};

/// Sigmas are multiples of the reference's shape_scale unless `absolute`;
/// the CSV records both the given and the coordinate-unit value.
inline NoiseSummary cmd_noise(const NoiseArgs& a) {
  if (a.seeds == 0) throw ConfigError("seeds: must be at least 1");
  NoiseSummary s;
  s.manifest.command = "noise";
  auto loaded = load_eval(a.source, s.manifest);
  s.shape_scale = a.absolute ? 1.0 : geo::shape_scale(loaded.reference).value;
  s.manifest.config["sigmas"] = a.sigmas;
  s.manifest.config["absolute"] = a.absolute;
  s.manifest.config["shape_scale"] = s.shape_scale;
  s.manifest.config["seeds"] = a.seeds;
  s.manifest.seed = a.seed;
  s.manifest.add_output(a.out);
  std::vector<double> coord;
  for (double x : a.sigmas) coord.push_back(x * s.shape_scale);
  std::vector<std::uint64_t> seeds;
  for (std::size_t j = 0; j < a.seeds; ++j) seeds.push_back(a.seed + j);
  s.rows = eval::noise_sweep(loaded.model, loaded.shapes, loaded.reference, coord, seeds);
  std::string header = "sigma,sigma_coord,accuracy";
  for (auto sd : seeds) header += ",seed_" + std::to_string(sd);
  std::string csv = csv_preamble(s.manifest.id(), header);
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    csv += fmt(a.sigmas[r]) + "," + fmt(coord[r]) + "," + fmt(s.rows[r].accuracy);
    for (double x : s.rows[r].per_seed) csv += "," + fmt(x);
    csv += "\n";
  }
  geo::detail::write_text(a.out, csv);
  s.manifest.write(sidecar_manifest(a.out));
  return s;
}

struct EmbedArgs {
  fs::path checkpoint;
  fs::path mesh;
  fs::path out;
  std::size_t layer = 0;
};

/// CSV rows: x, y, z, e0 .. e{E-1}, one per vertex.
inline RunManifest cmd_embed(const EmbedArgs& a) {
  RunManifest m;
  m.command = "embed";
  m.add_input(a.checkpoint);
  m.add_input(a.mesh);
  const auto model = load_checkpoint(a.checkpoint);
  m.config = {{"network", model::to_json(model.config())}, {"layer", a.layer}};
  m.add_output(a.out);
  const auto e = eval::export_embeddings(model, geo::read_mesh(a.mesh), a.layer);
  std::string header = "x,y,z";
  const auto width = e.features.empty() ? 0 : e.features[0].size();
  for (std::size_t d = 0; d < width; ++d) header += ",e" + std::to_string(d);
  std::string csv = csv_preamble(m.id(), header);
  for (std::size_t i = 0; i < e.features.size(); ++i) {
    csv += fmt(e.coords[i][0]) + "," + fmt(e.coords[i][1]) + "," + fmt(e.coords[i][2]);
    for (double x : e.features[i]) csv += "," + fmt(x);
    csv += "\n";
  }
  geo::detail::write_text(a.out, csv);
  m.write(sidecar_manifest(a.out));
  return m;
}

}  // namespace meps::cli
