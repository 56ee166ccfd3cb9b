#pragma once

// The four networks of the unmixing model:
//   encoder   spectrum x[D]      -> latent z[M]      (1D conv stack with an inception block)
//   mixture   latent z[M]        -> fractions y[K]   (multinomial mixture kernel)
//   decoder   fractions y[K], eta -> reconstruction  (E y + uncertainty head + refinement head)
//   critic    spectrum x[D]      -> scalar score     (patch critic, averaged)
//
// All tensors are batched along axis 0. Spectra with a band count that is not
// a multiple of 20 are zero-padded before entering the encoder and critic.

#include <cstdint>
#include <string>
#include <vector>

#include "specmix/autograd.hpp"
#include "specmix/params.hpp"

namespace specmix {

inline constexpr std::size_t kBandMultiple = 20;

struct ModelDims {
  std::size_t bands = 0;       // D
  std::size_t materials = 0;   // K
  std::size_t latent = 32;     // M
  std::size_t components = 16; // N
  std::size_t noise = 8;       // P

  std::size_t padded_bands() const { return (bands + kBandMultiple - 1) / kBandMultiple * kBandMultiple; }
  std::size_t head_width() const { return bands / 4 > 0 ? bands / 4 : 1; }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Throws ConfigError for unusable dimensions; appends soft violations to `warnings`.
void validate_dims(const ModelDims& dims, std::vector<std::string>* warnings = nullptr);

enum class Mode { train, infer };

/// Per-sample output shapes of each stage, batch axis dropped.
struct ShapeTrace {
  std::vector<Shape> rows;
};

template <typename T>
struct ModelParams {
  ModelDims dims;
  ParamSet<T> params;

  ModelParams clone() const { return ModelParams{dims, params.clone()}; }
  template <typename U>
  ModelParams<U> cast() const {
    return ModelParams<U>{dims, params.template cast<U>()};
  }
};

inline const std::vector<std::string_view> kGeneratorGroups{"encoder.", "mixture.", "decoder."};
inline const std::vector<std::string_view> kCriticGroups{"critic."};

/// Deterministic initialisation: Glorot-uniform conv/linear weights, zero biases,
/// component means ~ N(0, 0.5^2), zero precision pre-activations, PReLU slopes 0.25.
template <typename T>
ModelParams<T> init_params(std::uint64_t seed, const ModelDims& dims, std::vector<std::string>* warnings = nullptr);

/// x[B,D] -> z[B,M]. In train mode normalisation uses batch statistics and,
/// when `update_stats` is set, folds them into the running averages.
template <typename T>
ag::Var<T> encode(ModelParams<T>& model, const ag::Var<T>& x, Mode mode, bool update_stats = true,
                  ShapeTrace* trace = nullptr);

template <typename T>
struct MixtureOutput {
  ag::Var<T> fractions;  // [B,K], rows on the simplex
  ag::Var<T> g;          // [B,N], sigmoid-normalised Mahalanobis responses in (0,1)
  ag::Var<T> beta;       // [B,N], softmax mixing weights
};

template <typename T>
MixtureOutput<T> mixture_fractions(const ModelParams<T>& model, const ag::Var<T>& z);

struct DecoderOptions {
  double lambda_u = 0.1;
  double lambda_r = 0.05;
  bool ablate_eu = false;
};

/// fractions[B,K], eta[B,P], endmembers_t[K,D] (E transposed) -> x_hat[B,D].
template <typename T>
ag::Var<T> decode(const ModelParams<T>& model, const ag::Var<T>& fractions, const ag::Var<T>& eta,
                  const ag::Var<T>& endmembers_t, const DecoderOptions& opts);

/// x[B,D] -> [B] patch-averaged critic scores.
template <typename T>
ag::Var<T> critic_score(const ModelParams<T>& model, const ag::Var<T>& x, ShapeTrace* trace = nullptr);

/// Zero-pads the band axis of x[B,D] to the model's padded width.
template <typename T>
ag::Var<T> pad_bands(const ModelDims& dims, const ag::Var<T>& x);

}  // namespace specmix
