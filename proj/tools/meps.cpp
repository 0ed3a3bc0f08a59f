// meps: synth / train / eval / noise / embed.
//
// Exit codes: 0 ok, 2 invalid input (flags, config, files, layouts), 3 numeric failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "meps/cli/commands.hpp"

namespace {

using namespace meps;
namespace fs = std::filesystem;

struct ConfigFlags {
  std::string config;
  std::string variant;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config, "Run config JSON (or a train manifest.json)");
  cmd->add_option("--variant", f.variant, "Override network.variant")->check(CLI::IsMember({"baseline", "meta"}));
  cmd->add_option("--epochs", f.epochs, "Override schedule.max_epochs");
  cmd->add_option("--seed", f.seed, "Override schedule.seed and data.seed");
  cmd->add_option("--lr", f.lr, "Override schedule.lr0");
  cmd->add_option("--batch", f.batch, "Override schedule.batch_size");
}

// Without --config the desk-scale defaults for the chosen variant are used.
model::RunConfig resolve_config(const ConfigFlags& f) {
  model::RunConfig rc;
  if (!f.config.empty()) {
    rc = cli::load_run_config(f.config);
  } else {
    rc = model::desk_config(f.variant == "baseline" ? model::Variant::Baseline : model::Variant::Meta);
  }
  if (!f.variant.empty()) rc.network.variant = model::variant_from_string(f.variant);
  if (f.epochs) rc.schedule.max_epochs = *f.epochs;
  if (f.seed) rc.schedule.seed = rc.data.seed = *f.seed;
  if (f.lr) rc.schedule.lr0 = *f.lr;
  if (f.batch) rc.schedule.batch_size = *f.batch;
  rc.schedule.validate();
  rc.data.validate();
  return rc;
}

void add_source_flags(CLI::App* cmd, cli::EvalSource& src, std::string& data, std::string& config) {
  cmd->add_option("--checkpoint", src.checkpoint, "Checkpoint JSON")->required();
  cmd->add_option("--data", data, "Data directory (reference + train/ + test/)");
  cmd->add_option("--config", config, "Run config whose data section generates synthetic shapes");
  cmd->add_option("--split", src.split, "train or test")->capture_default_str();
}

void finish_source(cli::EvalSource& src, const std::string& data, const std::string& config) {
  if (!data.empty()) src.data = data;
  if (!config.empty()) src.config_path = config;
}

}  // namespace

int main(int argc, char** argv) {
  cli::tune_allocator();
  CLI::App app{"Mesh correspondence with FeaSt and meta (hypernetwork) convolutions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "meps " MEPS_VERSION);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads for per-shape gradients")->check(CLI::PositiveNumber);

  // synth
  cli::SynthArgs synth;
  std::string synth_out;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic template/deformation dataset");
  c_synth->add_option("--seed", synth.data.seed, "Deformation seed")->capture_default_str();
  c_synth->add_option("--vertices", synth.data.vertices, "Vertices per shape")->capture_default_str();
  c_synth->add_option("--deform", synth.data.deform_scale, "Deformation amplitude / shape_scale")->capture_default_str();
  c_synth->add_option("--count", synth.data.deformations, "Deformed copies")->capture_default_str();
  c_synth->add_option("--held-out", synth.data.held_out, "Copies placed in test/")->capture_default_str();
  c_synth->add_option("--format", synth.format, "off or ply")->capture_default_str();
  c_synth->add_option("--out", synth_out, "Output directory")->required();

  // train
  ConfigFlags train_flags;
  std::string train_data, train_out;
  bool quiet = false;
  auto* c_train = app.add_subcommand("train", "Train a model; writes checkpoints, loss.csv and manifest.json");
  add_config_flags(c_train, train_flags);
  c_train->add_option("--data", train_data, "Data directory; synthetic data from the config if omitted");
  c_train->add_option("--out", train_out, "Output directory")->required();
  c_train->add_flag("--quiet", quiet, "No per-epoch progress");

  // eval
  cli::EvalArgs ev;
  std::string ev_data, ev_config, ev_curve;
  auto* c_eval = app.add_subcommand("eval", "Accuracy at zero error and the error curve");
  add_source_flags(c_eval, ev.source, ev_data, ev_config);
  c_eval->add_option("--curve-out", ev_curve, "Curve CSV")->required();
  c_eval->add_option("--max-threshold", ev.max_threshold)->capture_default_str();
  c_eval->add_option("--steps", ev.steps)->capture_default_str();

  // noise
  cli::NoiseArgs nz;
  std::string nz_data, nz_config, nz_out;
  auto* c_noise = app.add_subcommand("noise", "Accuracy under Gaussian vertex noise");
  add_source_flags(c_noise, nz.source, nz_data, nz_config);
  c_noise->add_option("--sigmas", nz.sigmas, "Noise levels (multiples of shape_scale)")->delimiter(',');
  c_noise->add_flag("--absolute", nz.absolute, "Sigmas are in coordinate units");
  c_noise->add_option("--seed", nz.seed, "First noise seed")->capture_default_str();
  c_noise->add_option("--seeds", nz.seeds, "Noise seeds per sigma")->capture_default_str();
  c_noise->add_option("--out", nz_out, "Sweep CSV")->required();

  // embed
  cli::EmbedArgs em;
  std::string em_ckpt, em_mesh, em_out;
  auto* c_embed = app.add_subcommand("embed", "Export patch embeddings of a meta convolution");
  c_embed->add_option("--checkpoint", em_ckpt)->required();
  c_embed->add_option("--mesh", em_mesh, "OFF or PLY mesh")->required();
  c_embed->add_option("--layer", em.layer, "Meta convolution index (0 = first)")->capture_default_str();
  c_embed->add_option("--out", em_out, "Embedding CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_synth) {
      synth.out = synth_out;
      const auto m = cli::cmd_synth(synth);
      std::cout << "wrote " << synth_out << " (manifest " << m.id() << ")\n";
    } else if (*c_train) {
      cli::TrainArgs a;
      a.config = resolve_config(train_flags);
      if (!train_flags.config.empty()) a.config_path = train_flags.config;
      if (!train_data.empty()) a.data = train_data;
      a.out = train_out;
      a.threads = threads;
      if (!quiet) a.progress = &std::cerr;
      const auto s = cli::cmd_train(a);
      const auto& last = s.result.log.back();
      std::cout << "final loss " << last.loss << " train_acc " << last.train_accuracy;
      if (s.test_accuracy >= 0.0) std::cout << " test_acc " << s.test_accuracy;
      std::cout << " (manifest " << s.manifest.id() << ")\n";
    } else if (*c_eval) {
      finish_source(ev.source, ev_data, ev_config);
      ev.curve_out = ev_curve;
      const auto s = cli::cmd_eval(ev);
      std::cout << "accuracy " << s.accuracy << " (manifest " << s.manifest.id() << ")\n";
    } else if (*c_noise) {
      finish_source(nz.source, nz_data, nz_config);
      nz.out = nz_out;
      const auto s = cli::cmd_noise(nz);
      for (const auto& r : s.rows) std::cout << "sigma_coord " << r.sigma << " accuracy " << r.accuracy << "\n";
    } else if (*c_embed) {
      em.checkpoint = em_ckpt;
      em.mesh = em_mesh;
      em.out = em_out;
      cli::cmd_embed(em);
      std::cout << "wrote " << em_out << "\n";
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
