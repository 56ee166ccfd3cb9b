#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "specmix/eval.hpp"
#include "specmix/rng.hpp"
#include "specmix/synth.hpp"

namespace specmix {
namespace {

AbundanceField field(std::size_t h, std::size_t w, std::size_t k, std::vector<double> v) {
  AbundanceField f;
  f.height = h;
  f.width = w;
  f.materials = k;
  f.data = std::move(v);
  return f;
}

EndmemberMatrix identity(std::size_t n) {
  EndmemberMatrix e;
  e.bands = n;
  e.materials = n;
  e.data.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) e.at(i, i) = 1.0;
  return e;
}

double objective(std::span<const double> x, const EndmemberMatrix& e, std::span<const double> y) {
  double s = 0;
  for (std::size_t d = 0; d < e.bands; ++d) {
    double r = x[d];
    for (std::size_t k = 0; k < e.materials; ++k) r -= e.at(d, k) * y[k];
    s += r * r;
  }
  return s;
}

TEST(Rmse, WorkedExamples) {
  auto a = field(1, 2, 2, {1, 0, 0, 1});
  EXPECT_EQ(rmse(a, a), 0.0);
  auto b = field(1, 2, 2, {0, 1, 0, 1});
  EXPECT_DOUBLE_EQ(rmse(a, b), std::sqrt(2.0 / 4.0));
  auto c = field(1, 1, 2, {0.3, 0.7});
  auto d = field(1, 1, 2, {0.5, 0.5});
  EXPECT_NEAR(rmse(c, d), 0.2, 1e-15);
}

TEST(Rmse, MetricProperties) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> u(12), v(12), w(12);
    for (auto* vec : {&u, &v, &w})
      for (auto& x : *vec) x = rng.uniform();
    auto a = field(2, 2, 3, u), b = field(2, 2, 3, v), c = field(2, 2, 3, w);
    EXPECT_DOUBLE_EQ(rmse(a, b), rmse(b, a));
    EXPECT_GE(rmse(a, b), 0.0);
    EXPECT_LE(rmse(a, c), rmse(a, b) + rmse(b, c) + 1e-12);
  }
}

TEST(Rmse, ShapeMismatchIsAnError) {
  EXPECT_THROW(rmse(field(1, 2, 2, {1, 0, 0, 1}), field(2, 1, 2, {1, 0, 0, 1})), ShapeError);
  EXPECT_THROW(rmse(field(1, 1, 2, {1, 0}), field(1, 1, 3, {1, 0, 0})), ShapeError);
}

TEST(ProjectSimplex, KnownProjections) {
  std::vector<double> v{0.3, 0.7};
  project_simplex(v);
  EXPECT_NEAR(v[0], 0.3, 1e-15);
  EXPECT_NEAR(v[1], 0.7, 1e-15);
  v = {2, 0};
  project_simplex(v);
  EXPECT_EQ(v, (std::vector<double>{1, 0}));
  v = {0, 0, 0};
  project_simplex(v);
  for (double x : v) EXPECT_NEAR(x, 1.0 / 3, 1e-15);
}

TEST(ProjectSimplex, ResultIsOnSimplexAndClosestAmongSamples) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(4);
    for (auto& x : v) x = rng.uniform(-2, 2);
    auto p = v;
    project_simplex(p);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    double dp = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_GE(p[i], 0.0);
      dp += (p[i] - v[i]) * (p[i] - v[i]);
    }
    for (int s = 0; s < 20; ++s) {
      std::vector<double> q(4);
      double total = 0;
      for (auto& x : q) total += x = rng.uniform();
      double dq = 0;
      for (std::size_t i = 0; i < 4; ++i) dq += (q[i] / total - v[i]) * (q[i] / total - v[i]);
      EXPECT_LE(dp, dq + 1e-12);
    }
  }
}

TEST(Fcls, IdentityInteriorPoint) {
  const std::vector<double> x{0.3, 0.7};
  const auto r = fcls(x, identity(2));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.fractions[0], 0.3, 1e-9);
  EXPECT_NEAR(r.fractions[1], 0.7, 1e-9);
}

TEST(Fcls, InfeasibleTargetMatchesGridSearch) {
  const std::vector<double> x{2, 0};
  const auto e = identity(2);
  const auto r = fcls(x, e);
  double best = 1e9, arg = -1;
  for (int i = 0; i <= 1000; ++i) {
    const double a = i * 1e-3;
    const std::vector<double> y{a, 1 - a};
    if (const double f = objective(x, e, y); f < best) best = f, arg = a;
  }
  EXPECT_NEAR(r.fractions[0], arg, 1e-3);
  EXPECT_NEAR(r.fractions[0], 1.0, 1e-9);
  EXPECT_NEAR(objective(x, e, r.fractions), best, 1e-9);
}

TEST(Fcls, RecoversRandomSimplexMixtures) {
  Rng rng(3);
  const auto e = generate_endmembers(60, 5, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> y(5);
    double total = 0;
    for (auto& v : y) total += v = rng.uniform();
    for (auto& v : y) v /= total;
    std::vector<double> x(60, 0.0);
    for (std::size_t d = 0; d < 60; ++d)
      for (std::size_t k = 0; k < 5; ++k) x[d] += e.at(d, k) * y[k];
    const auto r = fcls(x, e, FclsOptions{1e-14, 100000});
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(r.fractions[k], y[k], 1e-6);
    EXPECT_LT(r.residual, 1e-9);
  }
}

TEST(Fcls, NeverWorseThanUniformOrVertices) {
  Rng rng(4);
  const auto e = generate_endmembers(40, 4, 9);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> x(40);
    for (auto& v : x) v = rng.uniform();
    const auto r = fcls(x, e);
    const double f = objective(x, e, r.fractions);
    EXPECT_LE(f, objective(x, e, std::vector<double>(4, 0.25)) + 1e-12);
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<double> vtx(4, 0.0);
      vtx[k] = 1;
      EXPECT_LE(f, objective(x, e, vtx) + 1e-12);
    }
  }
}

TEST(Fcls, RankDeficientEndmembersWarn) {
  EndmemberMatrix e;
  e.bands = 3;
  e.materials = 2;
  e.data = {1, 2, 1, 2, 1, 2};
  HyperspectralCube cube;
  cube.height = 1;
  cube.width = 1;
  cube.bands = 3;
  cube.data = {1.5f, 1.5f, 1.5f};
  std::vector<std::string> warnings;
  const auto f = fcls_unmix(cube, e, &warnings);
  ASSERT_FALSE(warnings.empty());
  EXPECT_NE(warnings[0].find("rank"), std::string::npos);
  EXPECT_NEAR(f.data[0] + f.data[1], 1.0, 1e-12);
}

TEST(Fcls, BandMismatchIsAShapeError) {
  const std::vector<double> x{1, 2, 3};
  EXPECT_THROW(fcls(x, identity(2)), ShapeError);
}

RunReport report(std::string label, std::vector<std::pair<bool, double>> runs) {
  RunReport r;
  r.label = std::move(label);
  std::uint64_t seed = 0;
  for (auto [ok, v] : runs) {
    RunOutcome o;
    o.seed = seed++;
    o.ok = ok;
    if (ok) o.rmse = v;
    else o.error = "diverged";
    r.runs.push_back(o);
  }
  aggregate(r);
  return r;
}

TEST(Aggregate, MeanAndSampleStd) {
  const auto r = report("x", {{true, 0.1}, {true, 0.2}, {true, 0.3}});
  EXPECT_NEAR(r.mean, 0.2, 1e-15);
  EXPECT_NEAR(r.std, 0.1, 1e-15);
  EXPECT_FALSE(r.partial);
}

TEST(Aggregate, SingleRunHasZeroStd) {
  const auto r = report("x", {{true, 0.42}});
  EXPECT_EQ(r.mean, 0.42);
  EXPECT_EQ(r.std, 0.0);
}

TEST(Aggregate, FailedRunsAreExcludedAndMarkPartial) {
  const auto r = report("x", {{true, 0.1}, {false, 0}, {true, 0.3}});
  EXPECT_TRUE(r.partial);
  EXPECT_NEAR(r.mean, 0.2, 1e-15);
  EXPECT_NE(report_table({r}).find("(2/3 runs)"), std::string::npos);
}

TEST(ReportTable, RowPerConfigurationInHundredths) {
  const auto table = report_table({report("full", {{true, 0.0774}, {true, 0.0834}}), report("w/o EU", {{false, 0}})});
  EXPECT_NE(table.find("full"), std::string::npos);
  EXPECT_NE(table.find("8.04 ±0.4"), std::string::npos) << table;
  EXPECT_NE(table.find("failed"), std::string::npos);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
}

TEST(ReportJson, SchemaAndOptionalTiming) {
  auto r = report("N=4", {{true, 0.05}, {false, 0}});
  r.runs[0].seconds = 3.5;
  const auto doc = nlohmann::json::parse(report_json({r}));
  const auto& row = doc["reports"][0];
  EXPECT_EQ(row["label"], "N=4");
  EXPECT_EQ(row["runs"].size(), 2u);
  EXPECT_EQ(row["runs"][0]["rmse"], 0.05);
  EXPECT_EQ(row["runs"][1]["error"], "diverged");
  EXPECT_TRUE(row["partial"].get<bool>());
  EXPECT_TRUE(row.contains("config"));
  EXPECT_FALSE(row["runs"][0].contains("seconds"));
  EXPECT_TRUE(nlohmann::json::parse(report_json({r}, true))["reports"][0]["runs"][0].contains("seconds"));
}

TEST(AblationGrid, RowStructure) {
  TrainConfig base;
  base.components = 8;
  const auto grid = ablation_grid(base);
  std::vector<std::string> labels;
  for (const auto& [l, c] : grid) labels.push_back(l);
  EXPECT_EQ(labels, (std::vector<std::string>{"N=4", "N=8", "N=16", "N=24", "w/o EU", "w/o WGAN"}));
  EXPECT_EQ(grid[2].second.components, 16u);
  EXPECT_TRUE(grid[4].second.ablate_eu);
  EXPECT_FALSE(grid[4].second.ablate_wgan);
  EXPECT_TRUE(grid[5].second.ablate_wgan);
  EXPECT_EQ(grid[5].second.components, 8u);
}

TEST(RepeatHarness, DeterministicAcrossJobCounts) {
  SceneConfig sc;
  sc.height = 8;
  sc.width = 8;
  sc.materials = 3;
  sc.bands = 24;
  sc.seed = 2;
  const auto scene = generate_scene(sc);
  RepeatTask task;
  task.label = "tiny";
  task.cube = &scene.cube;
  task.endmembers = &scene.truth.endmembers;
  task.truth = &scene.truth.abundances;
  task.config.epochs = 1;
  task.config.batch_size = 32;
  task.config.components = 4;
  task.config.latent = 6;
  task.config.noise = 2;
  task.runs = 3;
  const auto a = repeat_harness(task, 1);
  const auto b = repeat_harness(task, 3);
  ASSERT_EQ(a.runs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(a.runs[i].ok) << a.runs[i].error;
    EXPECT_EQ(a.runs[i].seed, i);
    EXPECT_EQ(a.runs[i].rmse, b.runs[i].rmse);
  }
  EXPECT_EQ(report_json({a}), report_json({b}));
  task.runs = 0;
  EXPECT_THROW(repeat_harness(task), ConfigError);
}

}  // namespace
}  // namespace specmix
