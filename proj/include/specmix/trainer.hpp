#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "specmix/losses.hpp"
#include "specmix/model.hpp"
#include "specmix/types.hpp"

namespace specmix {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr_gen = 1e-3;
  double lr_critic = 1e-4;
  double adam_beta1 = 0.7;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  std::size_t n_critic = 5;
  std::size_t components = 16;  // N
  std::size_t latent = 32;      // M
  std::size_t noise = 8;        // P
  LossWeights weights;
  bool ablate_eu = false;    // bypass uncertainty and refinement heads
  bool ablate_wgan = false;  // no critic, reconstruction loss only
  std::uint64_t seed = 0;

  void validate() const;
  ModelDims dims(std::size_t bands, std::size_t materials) const {
    return ModelDims{bands, materials, latent, components, noise};
  }
  DecoderOptions decoder_options() const { return DecoderOptions{weights.lambda_u, weights.lambda_r, ablate_eu}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double sad = 0.0;          // mean generator-step spectral angle (rad)
  double critic_loss = 0.0;  // mean critic objective
  double penalty = 0.0;      // mean (||grad|| - 1)^2
  double grad_norm = 0.0;    // mean critic input-gradient norm at interpolates
  double gap = 0.0;          // mean d(x) - d(x_hat)
  double seconds = 0.0;      // wall time, excluded from equality
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  /// Compares every recorded quantity except wall time.
  bool same_trajectory(const TrainHistory& other) const;
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.7;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of every entry from its stored gradient.
/// Throws NumericalError naming the parameter if a gradient is not finite.
template <typename T>
void adam_step(const std::vector<typename ParamSet<T>::Entry*>& entries, const AdamHyper& hyper);

/// Computes d(loss)/d(entry) for each entry and stores it in entry->grad.
template <typename T>
void store_gradients(const ag::Var<T>& loss, const std::vector<typename ParamSet<T>::Entry*>& entries);

struct TrainResult {
  ModelParams<float> model;
  TrainHistory history;
  std::vector<std::string> warnings;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Alternating WGAN-GP optimisation of the unmixing model; deterministic given cfg.seed.
TrainResult train(const HyperspectralCube& cube, const EndmemberMatrix& endmembers, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Per-pixel fractions from the encoder and mixture kernel in inference mode.
AbundanceField unmix(const HyperspectralCube& cube, ModelParams<float>& model);

/// Per-pixel latent codes, one row per pixel.
std::vector<std::vector<float>> latents(const HyperspectralCube& cube, ModelParams<float>& model);

/// Writes latents as CSV: H*W rows, M columns, no header.
void dump_latents(const HyperspectralCube& cube, ModelParams<float>& model, const std::string& path);

}  // namespace specmix
