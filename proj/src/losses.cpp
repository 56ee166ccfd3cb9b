#include "specmix/losses.hpp"

#include <cmath>
#include <string>

namespace specmix {

namespace {

using ag::Var;

// Keeps sqrt differentiable when the input gradient vanishes.
constexpr double kNormFloor = 1e-12;

template <typename T>
void reject_zero_rows(const Tensor<T>& x, const char* what) {
  const std::size_t d = x.shape().back();
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    T acc = T(0);
    for (std::size_t j = 0; j < d; ++j) acc += x[r * d + j] * x[r * d + j];
    if (!(acc > T(0))) {
      throw DataError(std::string("sad_loss: ") + what + " spectrum at pixel " + std::to_string(r) +
                      " has zero norm");
    }
  }
}

}  // namespace

void LossWeights::validate() const {
  if (lambda_pq < 0 || lambda_adv < 0 || lambda_u < 0 || lambda_r < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

template <typename T>
Var<T> spectral_angles(const Var<T>& x, const Var<T>& x_hat) {
  if (x.shape() != x_hat.shape() || x.shape().size() != 2) {
    throw ShapeError("sad_loss: expected matching [B,D] batches, got " + shape_str(x.shape()) + " and " +
                     shape_str(x_hat.shape()));
  }
  reject_zero_rows(x.value(), "input");
  reject_zero_rows(x_hat.value(), "reconstructed");
  const Shape col{x.shape()[0], 1};
  auto dot = ag::sum_to(ag::mul(x, x_hat), col);
  auto nx = ag::pow_scalar(ag::sum_to(ag::mul(x, x), col), T(0.5));
  auto ny = ag::pow_scalar(ag::sum_to(ag::mul(x_hat, x_hat), col), T(0.5));
  auto cosine = ag::div(dot, ag::mul(nx, ny));
  return ag::reshape(ag::arccos(cosine), {x.shape()[0]});
}

template <typename T>
Var<T> sad_loss(const Var<T>& x, const Var<T>& x_hat) {
  return ag::mean(spectral_angles(x, x_hat));
}

template <typename T>
Var<T> input_gradient_norm(const CriticFn<T>& f, const Var<T>& x) {
  Var<T> input = x.requires_grad() ? x : Var<T>::leaf(x.value());
  auto scores = f(input);
  auto g = ag::grad(ag::sum(scores), {input}, /*create_graph=*/true)[0];
  const std::size_t batch = x.shape().size() >= 2 ? x.shape()[0] : 1;
  Shape per_sample(x.shape().size(), 1);
  if (x.shape().size() >= 2) per_sample[0] = batch;
  auto sq = ag::sum_to(ag::mul(g, g), per_sample);
  return ag::reshape(ag::pow_scalar(ag::add_scalar(sq, static_cast<T>(kNormFloor)), T(0.5)), {batch});
}

template <typename T>
CriticLoss<T> critic_loss(const Var<T>& x_real, const Var<T>& x_fake, const CriticFn<T>& critic, double lambda_pq,
                          const Tensor<T>& mix) {
  if (x_real.shape() != x_fake.shape() || x_real.shape().size() != 2) {
    throw ShapeError("critic_loss: real and fake batches differ: " + shape_str(x_real.shape()) + " vs " +
                     shape_str(x_fake.shape()));
  }
  const std::size_t batch = x_real.shape()[0];
  if (mix.size() != batch) throw ShapeError("critic_loss: need one interpolation weight per sample");

  Tensor<T> keep({batch, 1}), rest({batch, 1});
  for (std::size_t b = 0; b < batch; ++b) {
    keep[b] = mix[b];
    rest[b] = T(1) - mix[b];
  }
  auto interp = ag::add(ag::mul(x_real, Var<T>::constant(std::move(keep))),
                        ag::mul(x_fake, Var<T>::constant(std::move(rest))));

  auto real_score = ag::mean(critic(x_real));
  auto fake_score = ag::mean(critic(x_fake));
  auto gap = ag::sub(real_score, fake_score);
  auto norms = input_gradient_norm(critic, interp);
  auto dev = ag::add_scalar(norms, T(-1));
  auto penalty = ag::mean(ag::mul(dev, dev));
  auto loss = ag::add(ag::neg(gap), ag::scale(penalty, static_cast<T>(lambda_pq)));
  return {loss, gap.item(), penalty.item(), ag::mean(norms).item()};
}

template <typename T>
CriticLoss<T> critic_loss(const Var<T>& x_real, const Var<T>& x_fake, const CriticFn<T>& critic, double lambda_pq,
                          Rng& rng) {
  Tensor<T> mix({x_real.shape().at(0)});
  for (auto& e : mix.values()) e = static_cast<T>(rng.uniform());
  return critic_loss(x_real, x_fake, critic, lambda_pq, mix);
}

template <typename T>
GeneratorLoss<T> generator_loss(const Var<T>& x, const Var<T>& x_hat, const CriticFn<T>& critic, double lambda_adv) {
  auto sad = sad_loss(x, x_hat);
  if (lambda_adv == 0.0) return {sad, sad.item(), T(0)};
  auto adv = ag::neg(ag::mean(critic(x_hat)));
  return {ag::add(sad, ag::scale(adv, static_cast<T>(lambda_adv))), sad.item(), adv.item()};
}

#define SPECMIX_INSTANTIATE(T)                                                                                   \
  template Var<T> spectral_angles<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sad_loss<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> input_gradient_norm<T>(const CriticFn<T>&, const Var<T>&);                                     \
  template CriticLoss<T> critic_loss<T>(const Var<T>&, const Var<T>&, const CriticFn<T>&, double, const Tensor<T>&); \
  template CriticLoss<T> critic_loss<T>(const Var<T>&, const Var<T>&, const CriticFn<T>&, double, Rng&);         \
  template GeneratorLoss<T> generator_loss<T>(const Var<T>&, const Var<T>&, const CriticFn<T>&, double);

SPECMIX_INSTANTIATE(float)
SPECMIX_INSTANTIATE(double)

#undef SPECMIX_INSTANTIATE

}  // namespace specmix
