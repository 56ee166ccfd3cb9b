#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "specmix/trainer.hpp"
#include "specmix/types.hpp"

namespace specmix {

/// Root mean square error over all pixels and materials jointly.
double rmse(const AbundanceField& pred, const AbundanceField& gt);

/// Euclidean projection onto the probability simplex.
void project_simplex(std::span<double> v);

struct FclsResult {
  std::vector<double> fractions;
  std::size_t iterations = 0;
  bool converged = false;
  double gap = 0.0;       // Frank-Wolfe duality gap at the returned point
  double residual = 0.0;  // ||x - E y||
};

struct FclsOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 10000;
};

/// argmin_y ||x - E y|| subject to y >= 0, sum(y) = 1, by accelerated projected gradient.
FclsResult fcls(std::span<const double> x, const EndmemberMatrix& e, const FclsOptions& opts = {});

/// Solves every pixel of a cube. Non-converged pixels and a rank-deficient E are reported in `warnings`.
AbundanceField fcls_unmix(const HyperspectralCube& cube, const EndmemberMatrix& e,
                          std::vector<std::string>* warnings = nullptr, const FclsOptions& opts = {});

struct RunOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  double rmse = 0.0;
  double seconds = 0.0;
  std::string error;
};

struct RunReport {
  std::string label;
  std::vector<RunOutcome> runs;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single completed run
  bool partial = false;
  double wall_seconds = 0.0;
  TrainConfig config;
};

struct RepeatTask {
  std::string label;
  const HyperspectralCube* cube = nullptr;
  const EndmemberMatrix* endmembers = nullptr;
  const AbundanceField* truth = nullptr;
  TrainConfig config;  // run i trains with seed = config.seed + i
  std::size_t runs = 20;
};

/// Trains and scores `task.runs` models, up to `jobs` at a time. Failed runs are
/// recorded and excluded from the statistics, and mark the report partial.
RunReport repeat_harness(const RepeatTask& task, std::size_t jobs = 1);

/// Mean and sample standard deviation over the completed runs of a report.
void aggregate(RunReport& report);

/// {"reports": [{label, runs, mean, std, config, partial}]}; timings only on request.
std::string report_json(const std::vector<RunReport>& reports, bool include_timing = false);

/// Rows = configurations, cells = "mean ±std" in units of 1e-2.
std::string report_table(const std::vector<RunReport>& reports, const std::string& column = "RMSE");

/// The ablation rows: N in {4, 8, 16, 24} on the base configuration, then "w/o EU" and "w/o WGAN".
std::vector<std::pair<std::string, TrainConfig>> ablation_grid(const TrainConfig& base);

}  // namespace specmix
