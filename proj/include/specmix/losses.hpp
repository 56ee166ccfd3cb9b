#pragma once

#include <functional>

#include "specmix/autograd.hpp"
#include "specmix/rng.hpp"

namespace specmix {

struct LossWeights {
  double lambda_pq = 10.0;  // gradient penalty scale
  double lambda_adv = 0.1;  // generator adversarial weight
  double lambda_u = 0.1;    // uncertainty head scale
  double lambda_r = 0.05;   // refinement head scale

  void validate() const;
};

/// Batch-mean spectral angle between rows of x[B,D] and x_hat[B,D], in radians.
/// The cosine is clamped to [-1 + 1e-7, 1 - 1e-7] before arccos.
template <typename T>
ag::Var<T> sad_loss(const ag::Var<T>& x, const ag::Var<T>& x_hat);

/// Per-row spectral angles, [B].
template <typename T>
ag::Var<T> spectral_angles(const ag::Var<T>& x, const ag::Var<T>& x_hat);

/// Maps a batch of spectra [B,D] to per-sample scores [B].
template <typename T>
using CriticFn = std::function<ag::Var<T>(const ag::Var<T>&)>;

/// Per-sample ||d f(x_i) / d x_i||_2 as a differentiable node of shape [B].
/// Throws NotTwiceDifferentiable if f uses a first-order-only primitive.
template <typename T>
ag::Var<T> input_gradient_norm(const CriticFn<T>& f, const ag::Var<T>& x);

template <typename T>
struct CriticLoss {
  ag::Var<T> loss;     // -(mean d(x) - mean d(x_hat)) + lambda_pq * penalty
  T gap = T(0);        // mean d(x) - mean d(x_hat)
  T penalty = T(0);    // mean (||grad|| - 1)^2
  T grad_norm = T(0);  // mean ||grad|| at the interpolates
};

/// WGAN-GP critic objective. Interpolates x~ = e x + (1 - e) x_hat use one
/// e ~ U[0,1] per sample drawn from `rng`.
template <typename T>
CriticLoss<T> critic_loss(const ag::Var<T>& x_real, const ag::Var<T>& x_fake, const CriticFn<T>& critic,
                          double lambda_pq, Rng& rng);

/// Same, with the interpolation coefficients supplied explicitly ([B]).
template <typename T>
CriticLoss<T> critic_loss(const ag::Var<T>& x_real, const ag::Var<T>& x_fake, const CriticFn<T>& critic,
                          double lambda_pq, const Tensor<T>& mix);

template <typename T>
struct GeneratorLoss {
  ag::Var<T> loss;
  T sad = T(0);
  T adversarial = T(0);  // -mean d(x_hat)
};

/// sad(x, x_hat) + lambda_adv * (-mean d(x_hat)). With lambda_adv == 0 the
/// critic is not evaluated at all.
template <typename T>
GeneratorLoss<T> generator_loss(const ag::Var<T>& x, const ag::Var<T>& x_hat, const CriticFn<T>& critic,
                                double lambda_adv);

}  // namespace specmix
