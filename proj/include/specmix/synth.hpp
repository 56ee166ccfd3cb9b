#pragma once

// Synthetic scenes for desk-scale verification: a background material covering
// the whole image, other materials placed as Gaussian-shaped abundance blobs,
// procedurally generated smooth endmember spectra, and optional per-pixel
// spectral variability and additive noise:
//
//   x = sum_k (e_k + gamma_k) y_k + eta

#include <cstdint>
#include <vector>

#include "specmix/types.hpp"

namespace specmix {

struct SceneConfig {
  std::size_t height = 40;
  std::size_t width = 40;
  std::size_t materials = 4;  // K; material 0 is the background
  std::size_t bands = 200;    // D
  std::size_t blobs_per_material = 3;
  double blob_sigma = 0.0;  // pixels; 0 selects 8% of the longer image side
  double noise_sigma = 0.01;
  double variability_scale = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  double effective_blob_sigma() const;
};

struct Blob {
  std::size_t material = 0;
  double row = 0.0;
  double col = 0.0;
};

struct GroundTruth {
  AbundanceField abundances;
  EndmemberMatrix endmembers;
  std::vector<Blob> blobs;
  /// Variability spectra, [pixel][material][band]; empty when no variability was applied.
  std::vector<float> gamma;
};

struct Scene {
  HyperspectralCube cube;
  GroundTruth truth;
};

/// Smooth non-negative spectra (peak <= 1) with pairwise spectral angle >= 0.15 rad.
EndmemberMatrix generate_endmembers(std::size_t bands, std::size_t materials, std::uint64_t seed);

Scene generate_scene(const SceneConfig& cfg);

/// Adds freshly drawn variability sum_k gamma_k y_k to every pixel of a scene
/// whose ground truth is known. Abundances are unchanged; scale 0 is the identity.
HyperspectralCube inject_variability(const HyperspectralCube& cube, const GroundTruth& truth, double scale,
                                     std::uint64_t seed);

/// Minimum pairwise spectral angle between endmember columns (rad).
double min_pairwise_angle(const EndmemberMatrix& e);

}  // namespace specmix
