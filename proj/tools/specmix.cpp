// specmix: command-line front end for scene synthesis, training, unmixing and evaluation.
//
// Exit codes: 0 ok, 2 usage/configuration error, 3 data error, 4 numerical failure.
// Failures print exactly one line to stderr:  specmix: error[<kind>]: <message>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "specmix/dataio.hpp"
#include "specmix/error.hpp"
#include "specmix/eval.hpp"
#include "specmix/gradcheck.hpp"
#include "specmix/synth.hpp"
#include "specmix/trainer.hpp"

namespace fs = std::filesystem;
using namespace specmix;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

struct TrainFlags {
  std::string config;
  std::optional<std::size_t> epochs, batch_size, n_critic, components, latent, noise;
  std::optional<double> lr_gen, lr_critic, adam_beta1, adam_beta2, lambda_pq, lambda_adv, lambda_u, lambda_r;
  std::optional<std::uint64_t> seed;
  bool ablate_eu = false, ablate_wgan = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON file with TrainConfig fields; flags override it")
        ->check(CLI::ExistingFile);
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lr-gen", lr_gen);
    app->add_option("--lr-critic", lr_critic);
    app->add_option("--adam-beta1", adam_beta1);
    app->add_option("--adam-beta2", adam_beta2);
    app->add_option("--n-critic", n_critic);
    app->add_option("--components", components, "Mixture components N");
    app->add_option("--latent", latent, "Latent width M");
    app->add_option("--noise-dim", noise, "Noise dimension P");
    app->add_option("--lambda-pq", lambda_pq);
    app->add_option("--lambda-adv", lambda_adv);
    app->add_option("--lambda-u", lambda_u);
    app->add_option("--lambda-r", lambda_r);
    app->add_flag("--ablate-eu", ablate_eu, "Bypass the uncertainty and refinement heads");
    app->add_flag("--ablate-wgan", ablate_wgan, "Train on the reconstruction loss only");
    app->add_option("--seed", seed);
  }

  TrainConfig resolve() const {
    TrainConfig c = config.empty() ? TrainConfig{} : train_config_from_json(read_text(config));
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (lr_gen) c.lr_gen = *lr_gen;
    if (lr_critic) c.lr_critic = *lr_critic;
    if (adam_beta1) c.adam_beta1 = *adam_beta1;
    if (adam_beta2) c.adam_beta2 = *adam_beta2;
    if (n_critic) c.n_critic = *n_critic;
    if (components) c.components = *components;
    if (latent) c.latent = *latent;
    if (noise) c.noise = *noise;
    if (lambda_pq) c.weights.lambda_pq = *lambda_pq;
    if (lambda_adv) c.weights.lambda_adv = *lambda_adv;
    if (lambda_u) c.weights.lambda_u = *lambda_u;
    if (lambda_r) c.weights.lambda_r = *lambda_r;
    if (ablate_eu) c.ablate_eu = true;
    if (ablate_wgan) c.ablate_wgan = true;
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

struct SceneFlags {
  std::string config;
  std::optional<std::size_t> height, width, bands, materials, blobs;
  std::optional<double> blob_sigma, noise_sigma, variability;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app, const std::string& seed_flag) {
    app->add_option("--scene-config", config, "JSON file with SceneConfig fields; flags override it")
        ->check(CLI::ExistingFile);
    app->add_option("--height", height);
    app->add_option("--width", width);
    app->add_option("--bands", bands);
    app->add_option("--materials", materials);
    app->add_option("--blobs", blobs, "Blobs per non-background material");
    app->add_option("--blob-sigma", blob_sigma, "Blob width in pixels (0: 8% of the longer side)");
    app->add_option("--noise-sigma", noise_sigma);
    app->add_option("--variability", variability, "Per-pixel spectral variability scale");
    app->add_option(seed_flag, seed);
  }

  SceneConfig resolve() const {
    SceneConfig c = config.empty() ? SceneConfig{} : scene_config_from_json(read_text(config));
    if (height) c.height = *height;
    if (width) c.width = *width;
    if (bands) c.bands = *bands;
    if (materials) c.materials = *materials;
    if (blobs) c.blobs_per_material = *blobs;
    if (blob_sigma) c.blob_sigma = *blob_sigma;
    if (noise_sigma) c.noise_sigma = *noise_sigma;
    if (variability) c.variability_scale = *variability;
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
  return p;
}

void check_bands(const HyperspectralCube& cube, const EndmemberMatrix& e) {
  if (cube.bands != e.bands) {
    throw DataError("cube has " + std::to_string(cube.bands) + " bands but the endmember file has " +
                    std::to_string(e.bands) + " rows");
  }
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "specmix: warning: " << w << "\n";
}

std::string invocation_json(const std::string& command, const nlohmann::ordered_json& fields) {
  nlohmann::ordered_json j;
  j["command"] = command;
  for (const auto& [k, v] : fields.items()) j[k] = v;
  return j.dump(2) + "\n";
}

int cmd_synth(const SceneFlags& flags, const std::string& out) {
  const SceneConfig cfg = flags.resolve();
  const fs::path dir = prepare_dir(out);
  const Scene scene = generate_scene(cfg);
  write_cube((dir / "cube").string(), scene.cube);
  write_abundance((dir / "abundance").string(), scene.truth.abundances);
  write_endmembers((dir / "endmembers.csv").string(), scene.truth.endmembers);
  write_text((dir / "scene_config.json").string(), scene_config_json(cfg));
  std::cout << "wrote " << (dir / "cube").string() << ".{json,f32} (" << scene.cube.height << "x" << scene.cube.width
            << "x" << scene.cube.bands << "), abundance, endmembers.csv\n";
  return kOk;
}

int cmd_train(const std::string& cube_path, const std::string& em_path, const TrainFlags& flags,
              const std::string& out, bool quiet) {
  const TrainConfig cfg = flags.resolve();
  const auto cube = read_cube(cube_path);
  const auto e = read_endmembers(em_path);
  check_bands(cube, e);
  const fs::path dir = prepare_dir(out);
  write_text((dir / "train_config.json").string(), train_config_json(cfg));

  std::ofstream log(dir / "train.log");
  auto result = train(cube, e, cfg, [&](const EpochRecord& r) {
    char line[200];
    std::snprintf(line, sizeof(line), "epoch %zu sad %.5f critic %.5f penalty %.5f grad_norm %.4f %.2fs", r.epoch,
                  r.sad, r.critic_loss, r.penalty, r.grad_norm, r.seconds);
    log << line << "\n" << std::flush;
    if (!quiet) std::cerr << line << "\n";
  });
  print_warnings(result.warnings);
  save_checkpoint((dir / "checkpoint.json").string(), result.model);
  write_text((dir / "history.json").string(), history_json(result.history));
  std::cout << "wrote " << (dir / "checkpoint.json").string() << "\n";
  return kOk;
}

int cmd_unmix(const std::string& cube_path, const std::string& ckpt_path, const std::string& out) {
  const auto cube = read_cube(cube_path);
  auto model = load_checkpoint(ckpt_path);
  const fs::path dir = prepare_dir(out);
  write_text((dir / "unmix_config.json").string(),
             invocation_json("unmix", {{"cube", cube_path}, {"checkpoint", ckpt_path}}));
  write_abundance((dir / "abundance").string(), unmix(cube, model));
  std::cout << "wrote " << (dir / "abundance").string() << ".{json,f32}\n";
  return kOk;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& out) {
  const auto pred = read_abundance(pred_path);
  const auto gt = read_abundance(gt_path);
  if (pred.height != gt.height || pred.width != gt.width || pred.materials != gt.materials) {
    throw DataError("prediction is " + std::to_string(pred.height) + "x" + std::to_string(pred.width) + "x" +
                    std::to_string(pred.materials) + " but ground truth is " + std::to_string(gt.height) + "x" +
                    std::to_string(gt.width) + "x" + std::to_string(gt.materials));
  }
  nlohmann::ordered_json metrics{{"rmse", rmse(pred, gt)},
                                 {"pixels", pred.pixels()},
                                 {"materials", pred.materials}};
  const std::string text = metrics.dump(2) + "\n";
  if (!out.empty()) {
    const fs::path dir = prepare_dir(out);
    write_text((dir / "eval_config.json").string(), invocation_json("eval", {{"pred", pred_path}, {"gt", gt_path}}));
    write_text((dir / "metrics.json").string(), text);
  }
  std::cout << text;
  return kOk;
}

int cmd_fcls(const std::string& cube_path, const std::string& em_path, const FclsOptions& opts,
             const std::string& out) {
  const auto cube = read_cube(cube_path);
  const auto e = read_endmembers(em_path);
  check_bands(cube, e);
  const fs::path dir = prepare_dir(out);
  write_text((dir / "fcls_config.json").string(),
             invocation_json("fcls", {{"cube", cube_path},
                                      {"endmembers", em_path},
                                      {"tolerance", opts.tolerance},
                                      {"max_iterations", opts.max_iterations}}));
  std::vector<std::string> warnings;
  const auto field = fcls_unmix(cube, e, &warnings, opts);
  print_warnings(warnings);
  write_abundance((dir / "abundance").string(), field);
  std::cout << "wrote " << (dir / "abundance").string() << ".{json,f32}\n";
  return kOk;
}

struct AblateInputs {
  std::string cube, endmembers, truth;
};

int cmd_ablate(const AblateInputs& in, const SceneFlags& scene_flags, const TrainFlags& flags, std::size_t runs,
               std::size_t jobs, const std::string& out, bool quiet) {
  const TrainConfig base = flags.resolve();
  if (runs == 0) throw ConfigError("--runs must be >= 1");
  HyperspectralCube cube;
  EndmemberMatrix e;
  AbundanceField truth;
  nlohmann::ordered_json source;
  const bool from_files = !in.cube.empty() || !in.endmembers.empty() || !in.truth.empty();
  if (from_files) {
    if (in.cube.empty() || in.endmembers.empty() || in.truth.empty()) {
      throw ConfigError("ablate needs all of --cube, --endmembers and --truth, or none of them for a synthetic scene");
    }
    cube = read_cube(in.cube);
    e = read_endmembers(in.endmembers);
    truth = read_abundance(in.truth);
    check_bands(cube, e);
    if (truth.pixels() != cube.pixels() || truth.materials != e.materials) {
      throw DataError("ground truth does not match the cube pixels and endmember count");
    }
    source = {{"cube", in.cube}, {"endmembers", in.endmembers}, {"truth", in.truth}};
  } else {
    const SceneConfig sc = scene_flags.resolve();
    Scene scene = generate_scene(sc);
    cube = std::move(scene.cube);
    e = std::move(scene.truth.endmembers);
    truth = std::move(scene.truth.abundances);
    source = nlohmann::ordered_json::parse(scene_config_json(sc));
  }

  const fs::path dir = prepare_dir(out);
  write_text((dir / "ablate_config.json").string(),
             invocation_json("ablate", {{"runs", runs},
                                        {"source", source},
                                        {"base", nlohmann::ordered_json::parse(train_config_json(base))}}));
  std::ofstream log(dir / "ablate.log");
  std::vector<RunReport> reports;
  for (const auto& [label, cfg] : ablation_grid(base)) {
    RepeatTask task{label, &cube, &e, &truth, cfg, runs};
    reports.push_back(repeat_harness(task, jobs));
    const auto& r = reports.back();
    char line[200];
    std::snprintf(line, sizeof(line), "%s: mean %.5f std %.5f%s %.1fs", label.c_str(), r.mean, r.std,
                  r.partial ? " (partial)" : "", r.wall_seconds);
    log << line << "\n" << std::flush;
    for (const auto& run : r.runs)
      if (!run.ok) log << "  seed " << run.seed << " failed: " << run.error << "\n";
    if (!quiet) std::cerr << line << "\n";
  }
  const std::string table = report_table(reports);
  write_text((dir / "report.json").string(), report_json(reports));
  write_text((dir / "report.txt").string(), table);
  std::cout << table;
  for (const auto& r : reports)
    if (r.partial) return kNumerical;
  return kOk;
}

int cmd_gradcheck(const GradcheckOptions& opts) {
  const auto report = run_gradcheck(opts);
  std::cout << report.table();
  return report.passed() ? kOk : kNumerical;
}

int cmd_dump_latents(const std::string& cube_path, const std::string& ckpt_path, const std::string& out) {
  const auto cube = read_cube(cube_path);
  auto model = load_checkpoint(ckpt_path);
  dump_latents(cube, model, out);
  std::cout << "wrote " << out << " (" << cube.pixels() << " rows, " << model.dims.latent << " columns)\n";
  return kOk;
}

int fail(const char* kind, const std::string& message, int code) {
  std::string flat = message;
  for (char& c : flat)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "specmix: error[" << kind << "]: " << flat << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral unmixing with an uncertainty-aware autoencoder"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress per-epoch progress on stderr");

  std::string cube, endmembers, checkpoint, out, pred, gt;

  SceneFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene with ground truth");
  synth_flags.attach(synth, "--seed");
  std::string synth_out = ".";
  synth->add_option("--out", synth_out, "Output directory");

  TrainFlags train_flags;
  std::string train_out = "train_out";
  auto* train_cmd = app.add_subcommand("train", "Train the unmixing model");
  train_cmd->add_option("--cube", cube, "Cube container (stem, .json or .f32)")->required();
  train_cmd->add_option("--endmembers", endmembers, "Endmember CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Output directory");
  train_flags.attach(train_cmd);

  std::string unmix_out = "unmix_out";
  auto* unmix_cmd = app.add_subcommand("unmix", "Estimate fractions with a trained checkpoint");
  unmix_cmd->add_option("--cube", cube)->required();
  unmix_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  unmix_cmd->add_option("--out", unmix_out, "Output directory");

  std::string eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "RMSE between two abundance fields");
  eval_cmd->add_option("--pred", pred)->required();
  eval_cmd->add_option("--gt", gt)->required();
  eval_cmd->add_option("--out", eval_out, "Also write metrics.json into this directory");

  std::string fcls_out = "fcls_out";
  FclsOptions fcls_opts;
  auto* fcls_cmd = app.add_subcommand("fcls", "Fully constrained least squares baseline");
  fcls_cmd->add_option("--cube", cube)->required();
  fcls_cmd->add_option("--endmembers", endmembers)->required()->check(CLI::ExistingFile);
  fcls_cmd->add_option("--tolerance", fcls_opts.tolerance, "Duality-gap stopping tolerance");
  fcls_cmd->add_option("--max-iterations", fcls_opts.max_iterations);
  fcls_cmd->add_option("--out", fcls_out, "Output directory");

  AblateInputs ablate_in;
  SceneFlags ablate_scene;
  TrainFlags ablate_flags;
  std::size_t runs = 20, jobs = 1;
  std::string ablate_out = "ablate_out";
  auto* ablate = app.add_subcommand("ablate", "Repeat-run ablation grid (N sweep, w/o EU, w/o WGAN)");
  ablate->add_option("--cube", ablate_in.cube, "Cube container; omit to use a synthetic scene");
  ablate->add_option("--endmembers", ablate_in.endmembers);
  ablate->add_option("--truth", ablate_in.truth, "Ground-truth abundance container");
  ablate->add_option("--runs", runs, "Runs per configuration; run i uses seed + i");
  ablate->add_option("--jobs", jobs, "Runs trained in parallel");
  ablate->add_option("--out", ablate_out, "Output directory");
  ablate_scene.attach(ablate, "--scene-seed");
  ablate_flags.attach(ablate);

  GradcheckOptions gc_opts;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference verification of every primitive and network");
  gc->add_option("--trials", gc_opts.trials);
  gc->add_option("--seed", gc_opts.seed);
  gc->add_option("--filter", gc_opts.filter, "Only checks whose name contains this text");

  std::string latents_out = "latents.csv";
  auto* dump = app.add_subcommand("dump-latents", "Write per-pixel latent codes as CSV");
  dump->add_option("--cube", cube)->required();
  dump->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  dump->add_option("--out", latents_out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    if (*synth) return cmd_synth(synth_flags, synth_out);
    if (*train_cmd) return cmd_train(cube, endmembers, train_flags, train_out, quiet);
    if (*unmix_cmd) return cmd_unmix(cube, checkpoint, unmix_out);
    if (*eval_cmd) return cmd_eval(pred, gt, eval_out);
    if (*fcls_cmd) return cmd_fcls(cube, endmembers, fcls_opts, fcls_out);
    if (*ablate) return cmd_ablate(ablate_in, ablate_scene, ablate_flags, runs, jobs, ablate_out, quiet);
    if (*gc) return cmd_gradcheck(gc_opts);
    if (*dump) return cmd_dump_latents(cube, checkpoint, latents_out);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), kUsage);
  } catch (const DataError& e) {
    return fail("data", e.what(), kData);
  } catch (const ShapeError& e) {
    return fail("data", e.what(), kData);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), kNumerical);
  } catch (const NotTwiceDifferentiable& e) {
    return fail("numerical", e.what(), kNumerical);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kNumerical);
  }
  return kUsage;
}
