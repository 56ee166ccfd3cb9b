#include "specmix/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "specmix/dataio.hpp"
#include "specmix/error.hpp"

namespace specmix {

namespace {

using json = nlohmann::ordered_json;

// Gram matrix G = E^T E (K x K, row-major) and a safe step bound.
struct Normal {
  std::size_t k = 0;
  std::vector<double> gram;
  double lipschitz = 0.0;
};

Normal normal_equations(const EndmemberMatrix& e) {
  Normal n;
  n.k = e.materials;
  n.gram.assign(n.k * n.k, 0.0);
  for (std::size_t d = 0; d < e.bands; ++d)
    for (std::size_t a = 0; a < n.k; ++a)
      for (std::size_t b = 0; b < n.k; ++b) n.gram[a * n.k + b] += e.at(d, a) * e.at(d, b);
  double fro = 0;
  for (double v : n.gram) fro += v * v;
  n.lipschitz = std::sqrt(fro);  // >= largest eigenvalue
  return n;
}

bool full_column_rank(const Normal& n) {
  std::vector<double> l = n.gram;
  const std::size_t k = n.k;
  double trace = 0;
  for (std::size_t i = 0; i < k; ++i) trace += n.gram[i * k + i];
  for (std::size_t j = 0; j < k; ++j) {
    double d = l[j * k + j];
    for (std::size_t p = 0; p < j; ++p) d -= l[j * k + p] * l[j * k + p];
    if (d <= 1e-12 * trace) return false;
    d = std::sqrt(d);
    l[j * k + j] = d;
    for (std::size_t i = j + 1; i < k; ++i) {
      double s = l[i * k + j];
      for (std::size_t p = 0; p < j; ++p) s -= l[i * k + p] * l[j * k + p];
      l[i * k + j] = s / d;
    }
  }
  return true;
}

FclsResult solve(const Normal& n, const std::vector<double>& b, double xx, const FclsOptions& opts) {
  const std::size_t k = n.k;
  std::vector<double> y(k, 1.0 / static_cast<double>(k)), prev = y, v = y, g(k), next(k);
  auto gradient = [&](const std::vector<double>& at, std::vector<double>& out) {
    for (std::size_t a = 0; a < k; ++a) {
      double s = -b[a];
      for (std::size_t c = 0; c < k; ++c) s += n.gram[a * k + c] * at[c];
      out[a] = s;
    }
  };
  auto duality_gap = [&](const std::vector<double>& at, std::vector<double>& grad_at) {
    gradient(at, grad_at);
    double dot = 0, lo = grad_at[0];
    for (std::size_t a = 0; a < k; ++a) {
      dot += grad_at[a] * at[a];
      lo = std::min(lo, grad_at[a]);
    }
    return dot - lo;
  };

  FclsResult r;
  const double step = 1.0 / n.lipschitz;
  double t = 1.0;
  r.gap = duality_gap(y, g);
  while (r.gap > opts.tolerance && r.iterations < opts.max_iterations) {
    ++r.iterations;
    gradient(v, g);
    for (std::size_t a = 0; a < k; ++a) next[a] = v[a] - step * g[a];
    project_simplex(next);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    // Momentum restart when the step opposes the previous direction.
    double align = 0;
    for (std::size_t a = 0; a < k; ++a) align += (v[a] - next[a]) * (next[a] - y[a]);
    prev = y;
    y = next;
    if (align > 0) {
      t = 1.0;
      v = y;
    } else {
      for (std::size_t a = 0; a < k; ++a) v[a] = y[a] + ((t - 1.0) / t_next) * (y[a] - prev[a]);
      t = t_next;
    }
    r.gap = duality_gap(y, g);
    if (y == prev && v == y) break;  // fixed point of the projected step
  }
  r.converged = r.gap <= opts.tolerance || y == prev;
  // ||x - E y||^2 = x.x - 2 b.y + y.G y
  double quad = 0;
  for (std::size_t a = 0; a < k; ++a) {
    double gy = 0;
    for (std::size_t c = 0; c < k; ++c) gy += n.gram[a * k + c] * y[c];
    quad += y[a] * gy - 2.0 * b[a] * y[a];
  }
  r.residual = std::sqrt(std::max(0.0, xx + quad));
  r.fractions = std::move(y);
  return r;
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

double rmse(const AbundanceField& pred, const AbundanceField& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.materials != gt.materials ||
      pred.data.size() != gt.data.size()) {
    throw ShapeError("rmse: fields differ in shape (" + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     "x" + std::to_string(pred.materials) + " vs " + std::to_string(gt.height) + "x" +
                     std::to_string(gt.width) + "x" + std::to_string(gt.materials) + ")");
  }
  if (pred.data.empty()) throw ShapeError("rmse: empty abundance field");
  double s = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - gt.data[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.data.size()));
}

void project_simplex(std::span<double> v) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0, theta = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0) theta = candidate;
  }
  for (double& x : v) x = std::max(x - theta, 0.0);
}

FclsResult fcls(std::span<const double> x, const EndmemberMatrix& e, const FclsOptions& opts) {
  if (x.size() != e.bands) {
    throw ShapeError("fcls: spectrum has " + std::to_string(x.size()) + " bands, endmembers have " +
                     std::to_string(e.bands));
  }
  const Normal n = normal_equations(e);
  std::vector<double> b(n.k, 0.0);
  double xx = 0;
  for (std::size_t d = 0; d < e.bands; ++d) {
    xx += x[d] * x[d];
    for (std::size_t a = 0; a < n.k; ++a) b[a] += e.at(d, a) * x[d];
  }
  FclsResult r = solve(n, b, xx, opts);
  double ss = 0;
  for (std::size_t d = 0; d < e.bands; ++d) {
    double res = x[d];
    for (std::size_t a = 0; a < n.k; ++a) res -= e.at(d, a) * r.fractions[a];
    ss += res * res;
  }
  r.residual = std::sqrt(ss);
  return r;
}

AbundanceField fcls_unmix(const HyperspectralCube& cube, const EndmemberMatrix& e, std::vector<std::string>* warnings,
                          const FclsOptions& opts) {
  if (cube.bands != e.bands) {
    throw ShapeError("fcls: cube has " + std::to_string(cube.bands) + " bands, endmembers have " +
                     std::to_string(e.bands));
  }
  const Normal n = normal_equations(e);
  if (warnings && !full_column_rank(n)) warnings->push_back("fcls: endmember matrix is not of full column rank");
  AbundanceField out;
  out.height = cube.height;
  out.width = cube.width;
  out.materials = e.materials;
  out.names = e.names;
  out.data.resize(cube.pixels() * e.materials);
  std::size_t failed = 0;
  double worst_gap = 0;
  std::vector<double> b(n.k);
  for (std::size_t p = 0; p < cube.pixels(); ++p) {
    const auto x = cube.pixel(p);
    std::fill(b.begin(), b.end(), 0.0);
    double xx = 0;
    for (std::size_t d = 0; d < cube.bands; ++d) {
      const double xd = x[d];
      xx += xd * xd;
      for (std::size_t a = 0; a < n.k; ++a) b[a] += e.at(d, a) * xd;
    }
    const auto r = solve(n, b, xx, opts);
    if (!r.converged) {
      ++failed;
      worst_gap = std::max(worst_gap, r.gap);
    }
    std::copy(r.fractions.begin(), r.fractions.end(), out.pixel(p).begin());
  }
  if (warnings && failed > 0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "fcls: %zu of %zu pixels did not converge (worst duality gap %.3g)", failed,
                  cube.pixels(), worst_gap);
    warnings->push_back(buf);
  }
  return out;
}

void aggregate(RunReport& report) {
  std::vector<double> values;
  for (const auto& r : report.runs)
    if (r.ok) values.push_back(r.rmse);
  report.partial = values.size() != report.runs.size();
  report.mean = 0;
  for (double v : values) report.mean += v;
  if (!values.empty()) report.mean /= static_cast<double>(values.size());
  report.std = sample_std(values, report.mean);
}

RunReport repeat_harness(const RepeatTask& task, std::size_t jobs) {
  if (!task.cube || !task.endmembers || !task.truth) throw ConfigError("repeat_harness: task is missing its data");
  if (task.runs == 0) throw ConfigError("repeat_harness: runs must be >= 1");
  task.config.validate();
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.label = task.label;
  report.config = task.config;
  report.runs.resize(task.runs);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < task.runs; i = next++) {
      auto& out = report.runs[i];
      TrainConfig cfg = task.config;
      cfg.seed = task.config.seed + i;
      out.seed = cfg.seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto trained = train(*task.cube, *task.endmembers, cfg);
        out.rmse = rmse(unmix(*task.cube, trained.model), *task.truth);
        out.ok = true;
      } catch (const std::exception& e) {
        out.error = e.what();
      }
      out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, task.runs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  aggregate(report);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string report_json(const std::vector<RunReport>& reports, bool include_timing) {
  json rows = json::array();
  for (const auto& rep : reports) {
    json runs = json::array();
    for (const auto& r : rep.runs) {
      json j{{"seed", r.seed}, {"ok", r.ok}};
      if (r.ok) j["rmse"] = r.rmse;
      else j["error"] = r.error;
      if (include_timing) j["seconds"] = r.seconds;
      runs.push_back(std::move(j));
    }
    json row{{"label", rep.label},
             {"runs", runs},
             {"mean", rep.mean},
             {"std", rep.std},
             {"config", json::parse(train_config_json(rep.config))},
             {"partial", rep.partial}};
    if (include_timing) row["wall_seconds"] = rep.wall_seconds;
    rows.push_back(std::move(row));
  }
  return json{{"reports", rows}}.dump(2) + "\n";
}

std::string report_table(const std::vector<RunReport>& reports, const std::string& column) {
  std::size_t label_width = 8;
  for (const auto& r : reports) label_width = std::max(label_width, r.label.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %s\n", static_cast<int>(label_width), "x1e-2", column.c_str());
  out += buf;
  for (const auto& r : reports) {
    std::size_t done = 0;
    for (const auto& run : r.runs) done += run.ok ? 1 : 0;
    std::string cell;
    if (done == 0) {
      cell = "failed";
    } else {
      std::snprintf(buf, sizeof(buf), "%.2f ±%.1f", 100.0 * r.mean, 100.0 * r.std);
      cell = buf;
    }
    if (r.partial) cell += " (" + std::to_string(done) + "/" + std::to_string(r.runs.size()) + " runs)";
    std::snprintf(buf, sizeof(buf), "%-*s  %s\n", static_cast<int>(label_width), r.label.c_str(), cell.c_str());
    out += buf;
  }
  return out;
}

std::vector<std::pair<std::string, TrainConfig>> ablation_grid(const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> rows;
  for (std::size_t n : {4, 8, 16, 24}) {
    TrainConfig c = base;
    c.components = n;
    rows.emplace_back("N=" + std::to_string(n), c);
  }
  TrainConfig no_eu = base;
  no_eu.ablate_eu = true;
  rows.emplace_back("w/o EU", no_eu);
  TrainConfig no_wgan = base;
  no_wgan.ablate_wgan = true;
  rows.emplace_back("w/o WGAN", no_wgan);
  return rows;
}

}  // namespace specmix
