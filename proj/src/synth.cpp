#include "specmix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "specmix/error.hpp"
#include "specmix/rng.hpp"

namespace specmix {

namespace {

enum Stream : std::uint64_t { kEndmemberStream = 0, kLayoutStream = 1, kVariabilityStream = 2, kNoiseStream = 3 };

constexpr double kMinAngle = 0.15;
constexpr double kMaxStep = 0.1;
constexpr int kMaxAttempts = 100;

double angle(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0));
}

std::vector<double> random_spectrum(Rng& rng, std::size_t bands) {
  const double d = static_cast<double>(bands);
  std::vector<double> s(bands);
  const double base = rng.uniform(0.05, 0.15);
  const double slope = rng.uniform(-0.1, 0.1);
  for (std::size_t i = 0; i < bands; ++i) s[i] = base + slope * (static_cast<double>(i) / (d - 1.0) - 0.5);
  const int bumps = 3 + static_cast<int>(rng.below(4));
  const double min_w = std::max(6.0, d / 25.0);
  const double max_w = std::max(10.0, d / 8.0);
  for (int b = 0; b < bumps; ++b) {
    const double centre = rng.uniform(0.0, d);
    const double width = rng.uniform(min_w, max_w);
    const double amp = rng.uniform(0.2, 1.0);
    for (std::size_t i = 0; i < bands; ++i) {
      const double t = (static_cast<double>(i) - centre) / width;
      s[i] += amp * std::exp(-0.5 * t * t);
    }
  }
  double peak = 0;
  for (auto& v : s) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  for (auto& v : s) v /= peak;
  return s;
}

bool smooth_enough(const std::vector<double>& s) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (std::abs(s[i] - s[i - 1]) >= kMaxStep) return false;
  }
  return true;
}

// Low-pass filtered white noise with unit RMS.
void smooth_noise(Rng& rng, std::size_t bands, std::vector<double>& white, const std::vector<double>& kernel,
                  float* out, double scale) {
  for (auto& w : white) w = rng.normal();
  const auto half = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  std::vector<double> s(bands, 0.0);
  double power = 0;
  for (std::size_t i = 0; i < bands; ++i) {
    double acc = 0;
    for (std::ptrdiff_t j = -half; j <= half; ++j) {
      // Reflecting boundary keeps the filter length constant near the edges.
      auto idx = static_cast<std::ptrdiff_t>(i) + j;
      if (idx < 0) idx = -idx;
      if (idx >= static_cast<std::ptrdiff_t>(bands)) idx = 2 * static_cast<std::ptrdiff_t>(bands) - 2 - idx;
      idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(bands) - 1);
      acc += kernel[static_cast<std::size_t>(j + half)] * white[static_cast<std::size_t>(idx)];
    }
    s[i] = acc;
    power += acc * acc;
  }
  const double norm = scale / std::sqrt(power / static_cast<double>(bands));
  for (std::size_t i = 0; i < bands; ++i) out[i] = static_cast<float>(s[i] * norm);
}

std::vector<double> gaussian_kernel(std::size_t bands) {
  const double sigma = std::max(1.0, static_cast<double>(bands) / 40.0);
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(3 * sigma));
  std::vector<double> k;
  double total = 0;
  for (std::ptrdiff_t j = -half; j <= half; ++j) {
    const double t = static_cast<double>(j) / sigma;
    k.push_back(std::exp(-0.5 * t * t));
    total += k.back();
  }
  for (auto& v : k) v /= total;
  return k;
}

// Draws gamma for every pixel and material and stores sum_k gamma_k y_k into mix[pixel][band].
void draw_variability(const AbundanceField& y, std::size_t bands, double scale, std::uint64_t seed,
                      std::vector<float>& gamma, std::vector<double>& mix) {
  Rng rng = Rng::stream(seed, kVariabilityStream);
  const auto kernel = gaussian_kernel(bands);
  const std::size_t k_count = y.materials;
  gamma.assign(y.pixels() * k_count * bands, 0.0f);
  mix.assign(y.pixels() * bands, 0.0);
  std::vector<double> white(bands);
  for (std::size_t p = 0; p < y.pixels(); ++p) {
    for (std::size_t k = 0; k < k_count; ++k) {
      float* g = gamma.data() + (p * k_count + k) * bands;
      smooth_noise(rng, bands, white, kernel, g, scale);
      const double frac = y.pixel(p)[k];
      for (std::size_t d = 0; d < bands; ++d) mix[p * bands + d] += static_cast<double>(g[d]) * frac;
    }
  }
}

}  // namespace

void SceneConfig::validate() const {
  if (materials < 2) throw ConfigError("scene: need at least 2 materials");
  if (bands < 21) throw ConfigError("scene: need at least 21 bands");
  if (height * width < materials) throw ConfigError("scene: height*width must be >= number of materials");
  if (blob_sigma < 0) throw ConfigError("scene: blob_sigma must be > 0 (or 0 for the default)");
  if (noise_sigma < 0) throw ConfigError("scene: noise_sigma must be >= 0");
  if (variability_scale < 0) throw ConfigError("scene: variability_scale must be >= 0");
}

double SceneConfig::effective_blob_sigma() const {
  return blob_sigma > 0 ? blob_sigma : 0.08 * static_cast<double>(std::max(height, width));
}

double min_pairwise_angle(const EndmemberMatrix& e) {
  std::vector<std::vector<double>> cols(e.materials, std::vector<double>(e.bands));
  for (std::size_t d = 0; d < e.bands; ++d)
    for (std::size_t k = 0; k < e.materials; ++k) cols[k][d] = e.at(d, k);
  double best = M_PI;
  for (std::size_t a = 0; a < e.materials; ++a)
    for (std::size_t b = a + 1; b < e.materials; ++b) best = std::min(best, angle(cols[a], cols[b]));
  return best;
}

EndmemberMatrix generate_endmembers(std::size_t bands, std::size_t materials, std::uint64_t seed) {
  if (materials < 2) throw ConfigError("endmembers: need at least 2 materials");
  if (bands < 21) throw ConfigError("endmembers: need at least 21 bands");
  Rng rng(seed);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::vector<double>> cols;
    bool ok = true;
    for (std::size_t k = 0; k < materials && ok; ++k) {
      cols.push_back(random_spectrum(rng, bands));
      ok = smooth_enough(cols.back());
      for (std::size_t j = 0; j + 1 < cols.size() && ok; ++j) ok = angle(cols[j], cols.back()) >= kMinAngle;
    }
    if (!ok) continue;
    EndmemberMatrix e;
    e.bands = bands;
    e.materials = materials;
    e.data.resize(bands * materials);
    for (std::size_t d = 0; d < bands; ++d)
      for (std::size_t k = 0; k < materials; ++k) e.at(d, k) = cols[k][d];
    e.names.push_back("background");
    for (std::size_t k = 1; k < materials; ++k) e.names.push_back("material" + std::to_string(k));
    return e;
  }
  throw DataError("endmembers: could not reach pairwise separation of " + std::to_string(kMinAngle) + " rad after " +
                  std::to_string(kMaxAttempts) + " attempts; use more bands");
}

Scene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  Scene scene;
  auto& truth = scene.truth;
  truth.endmembers = generate_endmembers(cfg.bands, cfg.materials, Rng::stream(cfg.seed, kEndmemberStream).next_u64());
  const auto& e = truth.endmembers;

  // Abundances: background at weight 1 everywhere plus Gaussian blobs for the
  // other materials, normalised onto the simplex per pixel.
  auto& y = truth.abundances;
  y.height = cfg.height;
  y.width = cfg.width;
  y.materials = cfg.materials;
  y.names = e.names;
  y.data.assign(y.pixels() * y.materials, 0.0);
  Rng layout = Rng::stream(cfg.seed, kLayoutStream);
  const double sigma = cfg.effective_blob_sigma();
  std::vector<std::pair<double, double>> centres;  // (row, col), material-major
  for (std::size_t k = 1; k < cfg.materials; ++k)
    for (std::size_t b = 0; b < cfg.blobs_per_material; ++b) {
      const double r = layout.uniform(0.0, static_cast<double>(cfg.height));
      const double c = layout.uniform(0.0, static_cast<double>(cfg.width));
      centres.emplace_back(r, c);
      truth.blobs.push_back(Blob{k, r, c});
    }
  for (std::size_t row = 0; row < cfg.height; ++row) {
    for (std::size_t col = 0; col < cfg.width; ++col) {
      auto frac = y.pixel(row * cfg.width + col);
      frac[0] = 1.0;
      for (std::size_t k = 1; k < cfg.materials; ++k) {
        double a = 0;
        for (std::size_t b = 0; b < cfg.blobs_per_material; ++b) {
          const auto [cr, cc] = centres[(k - 1) * cfg.blobs_per_material + b];
          const double dr = static_cast<double>(row) - cr;
          const double dc = static_cast<double>(col) - cc;
          a += std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
        }
        frac[k] = a;
      }
      double total = 0;
      for (double v : frac) total += v;
      for (double& v : frac) v /= total;
    }
  }

  std::vector<double> variability;
  if (cfg.variability_scale > 0) {
    draw_variability(y, cfg.bands, cfg.variability_scale, cfg.seed, truth.gamma, variability);
  }

  auto& cube = scene.cube;
  cube.height = cfg.height;
  cube.width = cfg.width;
  cube.bands = cfg.bands;
  cube.data.resize(cube.pixels() * cube.bands);
  Rng noise = Rng::stream(cfg.seed, kNoiseStream);
  for (std::size_t p = 0; p < cube.pixels(); ++p) {
    const auto frac = y.pixel(p);
    for (std::size_t d = 0; d < cfg.bands; ++d) {
      double x = 0;
      for (std::size_t k = 0; k < cfg.materials; ++k) x += e.at(d, k) * frac[k];
      if (!variability.empty()) x += variability[p * cfg.bands + d];
      if (cfg.noise_sigma > 0) x += noise.normal(0.0, cfg.noise_sigma);
      cube.data[p * cfg.bands + d] = static_cast<float>(std::max(x, 0.0));
    }
  }
  return scene;
}

HyperspectralCube inject_variability(const HyperspectralCube& cube, const GroundTruth& truth, double scale,
                                     std::uint64_t seed) {
  const auto& y = truth.abundances;
  if (y.data.empty() || y.pixels() != cube.pixels() || y.height != cube.height) {
    throw DataError("inject_variability: ground-truth abundances for this cube are missing");
  }
  if (scale < 0) throw ConfigError("inject_variability: scale must be >= 0");
  HyperspectralCube out = cube;
  if (scale == 0) return out;
  std::vector<float> gamma;
  std::vector<double> variability;
  draw_variability(y, cube.bands, scale, seed, gamma, variability);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(std::max(static_cast<double>(out.data[i]) + variability[i], 0.0));
  }
  return out;
}

}  // namespace specmix
