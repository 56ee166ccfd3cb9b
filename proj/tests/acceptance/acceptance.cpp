// Acceptance checks. Usage: specmix_acceptance <1-7|all>
// Each criterion prints one line "criterion N: PASS|FAIL <details>" and the
// process exits non-zero if any selected criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "specmix/dataio.hpp"
#include "specmix/eval.hpp"
#include "specmix/gradcheck.hpp"
#include "specmix/model.hpp"
#include "specmix/rng.hpp"
#include "specmix/synth.hpp"
#include "specmix/trainer.hpp"

namespace fs = std::filesystem;
using namespace specmix;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Outcome gradient_suite() {
  Stopwatch clock;
  GradcheckOptions opts;
  opts.trials = 100;
  const auto report = run_gradcheck(opts);
  const double secs = clock.seconds();
  std::string worst;
  double worst_ratio = 0;
  for (const auto& row : report.rows) {
    if (row.max_rel_error / row.tolerance > worst_ratio) {
      worst_ratio = row.max_rel_error / row.tolerance;
      worst = row.name;
    }
    if (!row.passed()) std::fprintf(stderr, "  %s: rel err %.3g >= %.0e\n", row.name.c_str(), row.max_rel_error, row.tolerance);
  }
  return {report.passed() && secs < 120.0,
          fmt("%zu checks x 100 trials, worst %s at %.2f of tolerance, %.1fs (limit 120s)", report.rows.size(),
              worst.c_str(), worst_ratio, secs)};
}

Outcome constraint_suite() {
  Stopwatch clock;
  std::size_t violations = 0;
  double worst_sum = 0, min_fraction = 1, min_g = 1, max_g = 0, worst_beta = 0;

  const std::size_t band_choices[] = {20, 40, 100, 200};
  Rng rng(2024);
  std::size_t passes = 0;
  for (std::size_t block = 0; block < 100; ++block) {
    const std::size_t d = band_choices[block % 4];
    const std::size_t k = 2 + rng.below(5);
    const std::size_t n = 1 + rng.below(24);
    ModelParams<float> model = init_params<float>(block, ModelDims{d, k, 32, n, 8});
    for (std::size_t i = 0; i < 100; ++i, ++passes) {
      Tensor<float> x({1, d});
      const double scale = std::pow(10.0, rng.uniform(-2, 2));
      for (auto& v : x.values()) v = static_cast<float>(scale * rng.uniform(0, 1));
      const auto mode = i % 2 ? Mode::train : Mode::infer;
      auto z = encode(model, ag::Var<float>::constant(x), mode, false);
      const auto out = mixture_fractions(model, z);
      const auto& y = out.fractions.value();
      double sum = 0;
      for (float v : y.values()) {
        sum += v;
        min_fraction = std::min<double>(min_fraction, v);
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      double bsum = 0;
      for (float v : out.beta.value().values()) {
        bsum += v;
        if (v < 0) ++violations;
      }
      worst_beta = std::max(worst_beta, std::abs(bsum - 1.0));
      for (float v : out.g.value().values()) {
        min_g = std::min<double>(min_g, v);
        max_g = std::max<double>(max_g, v);
      }
    }
  }
  if (worst_sum >= 1e-6 || min_fraction < 0 || worst_beta >= 1e-6 || min_g <= 0 || max_g >= 1) ++violations;

  std::size_t chain_failures = 0;
  for (std::size_t d : band_choices) {
    auto model = init_params<float>(7, ModelDims{d, 4, 32, 16, 8});
    ShapeTrace enc, crit;
    Tensor<float> x({2, d}, 0.5f);
    encode(model, ag::Var<float>::constant(x), Mode::infer, false, &enc);
    critic_score(model, ag::Var<float>::constant(x), &crit);
    const std::vector<Shape> enc_expected{{d, 10},      {d / 5, 10},  {d / 5, 30}, {d / 10, 30},
                                          {d / 10, 10}, {d / 20, 10}, {32}};
    const std::vector<Shape> crit_expected{{d / 5, 5}, {d / 10, 10}, {d / 20, 20}, {d / 20, 5}};
    if (enc.rows != enc_expected) ++chain_failures;
    if (crit.rows != crit_expected) ++chain_failures;
  }
  const double secs = clock.seconds();
  return {violations == 0 && chain_failures == 0 && secs < 60.0,
          fmt("%zu passes, max |sum-1| %.2g, min y %.3g, max |sum(beta)-1| %.2g, g in [%.3g, %.3g], "
              "%zu shape-chain mismatches, %.1fs (limit 60s)",
              passes, worst_sum, min_fraction, worst_beta, min_g, max_g, chain_failures, secs)};
}

Outcome linear_recovery() {
  Stopwatch clock;
  SceneConfig sc;
  sc.noise_sigma = 0.0;
  sc.variability_scale = 0.0;
  const auto scene = generate_scene(sc);
  const double fcls_rmse = rmse(fcls_unmix(scene.cube, scene.truth.endmembers), scene.truth.abundances);
  TrainConfig cfg;
  auto trained = train(scene.cube, scene.truth.endmembers, cfg);
  const double model_rmse = rmse(unmix(scene.cube, trained.model), scene.truth.abundances);
  const double secs = clock.seconds();
  return {fcls_rmse < 1e-4 && model_rmse <= 0.05 && secs < 900.0,
          fmt("FCLS RMSE %.3g (limit 1e-4), model RMSE %.4f (limit 0.05), %.0fs (limit 900s)", fcls_rmse, model_rmse,
              secs)};
}

struct Paired {
  double full = 0, ablated = 0;
};

Paired paired_runs(const SceneConfig& sc, const std::function<void(TrainConfig&)>& ablate) {
  const auto scene = generate_scene(sc);
  Paired p;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig full;
    full.seed = seed;
    TrainConfig other = full;
    ablate(other);
    auto a = train(scene.cube, scene.truth.endmembers, full);
    auto b = train(scene.cube, scene.truth.endmembers, other);
    const double ra = rmse(unmix(scene.cube, a.model), scene.truth.abundances);
    const double rb = rmse(unmix(scene.cube, b.model), scene.truth.abundances);
    std::fprintf(stderr, "  seed %llu: full %.4f ablated %.4f\n", static_cast<unsigned long long>(seed), ra, rb);
    p.full += ra / 5;
    p.ablated += rb / 5;
  }
  return p;
}

Outcome uncertainty_benefit() {
  Stopwatch clock;
  SceneConfig sc;
  sc.seed = 11;
  sc.noise_sigma = 0.0;
  sc.variability_scale = 0.05;
  const auto p = paired_runs(sc, [](TrainConfig& c) { c.ablate_eu = true; });
  const double secs = clock.seconds();
  return {p.full <= p.ablated + 0.01 && secs < 2700.0,
          fmt("mean RMSE over 5 seeds: full %.4f, w/o EU %.4f (need full <= w/o EU + 0.01), %.0fs (limit 2700s)",
              p.full, p.ablated, secs)};
}

Outcome noise_consistency() {
  Stopwatch clock;
  SceneConfig sc;
  sc.seed = 11;
  sc.noise_sigma = 0.01;
  sc.variability_scale = 0.0;
  const auto p = paired_runs(sc, [](TrainConfig& c) { c.ablate_wgan = true; });
  return {p.ablated <= p.full + 0.02, fmt("mean RMSE over 5 seeds: full %.4f, w/o WGAN %.4f (need w/o WGAN <= full + "
                                          "0.02), %.0fs",
                                          p.full, p.ablated, clock.seconds())};
}

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome ablation_report() {
  Stopwatch clock;
  const fs::path dir = fs::temp_directory_path() / "specmix_acceptance_ablate";
  fs::remove_all(dir);
  const std::string cmd = std::string("\"") + SPECMIX_CLI_PATH +
                          "\" -q ablate --height 16 --width 16 --bands 40 --materials 3 --scene-seed 1 "
                          "--epochs 10 --batch-size 32 --latent 16 --noise-dim 4 --runs 20 --jobs 1 --out \"" +
                          dir.string() + "\" > \"" + (dir.string() + ".stdout") + "\"";
  const int code = run_command(cmd);
  const std::string table = slurp(dir / "report.txt");
  const std::string printed = slurp(dir.string() + ".stdout");

  std::vector<std::string> problems;
  if (code != 0) problems.push_back("exit code " + std::to_string(code));
  if (printed != table) problems.push_back("printed table differs from report.txt");

  const std::vector<std::string> labels{"N=4", "N=8", "N=16", "N=24", "w/o EU", "w/o WGAN"};
  std::istringstream lines(table);
  std::string line;
  std::getline(lines, line);
  if (line.rfind("x1e-2", 0) != 0) problems.push_back("missing header");
  const std::regex cell(R"(^(\S+(?: \S+)?)\s+\d+\.\d{2} ±\d+\.\d$)");
  for (const auto& label : labels) {
    std::smatch m;
    if (!std::getline(lines, line) || !std::regex_match(line, m, cell) || m[1] != label)
      problems.push_back("bad row for " + label + ": '" + line + "'");
  }
  if (std::getline(lines, line)) problems.push_back("extra row '" + line + "'");

  std::size_t completed = 0;
  try {
    const auto doc = nlohmann::json::parse(slurp(dir / "report.json"));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& row = doc["reports"].at(i);
      if (row["label"] != labels[i] || row["partial"].get<bool>() || row["runs"].size() != 20)
        problems.push_back("report.json row " + labels[i] + " incomplete");
      for (const auto& run : row["runs"]) completed += run["ok"].get<bool>() ? 1 : 0;
    }
  } catch (const std::exception& e) {
    problems.push_back(std::string("report.json: ") + e.what());
  }
  std::string detail = fmt("%zu/120 runs completed, 6 rows of mean ±std over 20 runs, %.0fs", completed,
                           clock.seconds());
  for (const auto& p : problems) detail += "; " + p;
  if (problems.empty()) fs::remove_all(dir);
  return {problems.empty() && completed == 120, detail};
}

Outcome determinism() {
  std::vector<std::string> problems;
  SceneConfig sc;
  sc.height = 16;
  sc.width = 16;
  sc.materials = 3;
  sc.bands = 60;
  sc.seed = 5;
  const auto scene = generate_scene(sc);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  auto a = train(scene.cube, scene.truth.endmembers, cfg);
  auto b = train(scene.cube, scene.truth.endmembers, cfg);
  const auto ya = unmix(scene.cube, a.model);
  const auto yb = unmix(scene.cube, b.model);
  if (std::memcmp(ya.data.data(), yb.data.data(), ya.data.size() * sizeof(double)) != 0)
    problems.push_back("abundances differ between identical runs");

  const fs::path dir = fs::temp_directory_path() / "specmix_acceptance_roundtrip";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_checkpoint((dir / "ck.json").string(), a.model);
  auto loaded = load_checkpoint((dir / "ck.json").string());
  for (const auto& e : a.model.params.entries()) {
    const auto& v = e.var.value().values();
    const auto& w = loaded.params.entry(e.name).var.value().values();
    if (v.size() != w.size() || std::memcmp(v.data(), w.data(), v.size() * sizeof(float)) != 0)
      problems.push_back("checkpoint parameter " + e.name + " changed");
  }
  if (checkpoint_json(loaded) != slurp(dir / "ck.json")) problems.push_back("checkpoint re-serialisation differs");
  if (unmix(scene.cube, loaded).data != ya.data) problems.push_back("reloaded model unmixes differently");

  Rng rng(77);
  HyperspectralCube cube;
  cube.height = 7;
  cube.width = 9;
  cube.bands = 31;
  for (std::size_t i = 0; i < 7 * 9 * 31; ++i) {
    std::uint32_t bits;
    float f;
    do {
      bits = static_cast<std::uint32_t>(rng.below(1ull << 32));
      std::memcpy(&f, &bits, 4);
    } while (!std::isfinite(f));
    cube.data.push_back(f);
  }
  write_cube((dir / "cube").string(), cube);
  const auto back = read_cube((dir / "cube").string());
  if (back.data.size() != cube.data.size() ||
      std::memcmp(back.data.data(), cube.data.data(), cube.data.size() * sizeof(float)) != 0)
    problems.push_back("cube payload changed on round trip");
  fs::remove_all(dir);

  std::string detail = fmt("abundances of two seed-9 runs bit-identical, %zu checkpoint tensors and a %zu-value "
                           "random-bit cube compared bytewise",
                           a.model.params.entries().size(), cube.data.size());
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"gradient suite", gradient_suite},         {"constraint suite", constraint_suite},
      {"linear recovery", linear_recovery},       {"uncertainty benefit", uncertainty_benefit},
      {"noise-only consistency", noise_consistency}, {"ablation report", ablation_report},
      {"determinism and round trip", determinism}};
  const std::string which = argc > 1 ? argv[1] : "all";
  bool all_passed = true;
  bool ran = false;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (which != "all" && which != std::to_string(i + 1)) continue;
    ran = true;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %zu (%s): %s %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    all_passed = all_passed && o.pass;
  }
  if (!ran) {
    std::fprintf(stderr, "usage: %s <1-%zu|all>\n", argv[0], criteria.size());
    return 2;
  }
  return all_passed ? 0 : 1;
}
