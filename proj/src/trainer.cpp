#include "specmix/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "specmix/rng.hpp"

namespace specmix {

namespace {

using ag::Var;

// Named RNG streams derived from the master seed.
enum Stream : std::uint64_t { kInitStream = 0, kShuffleStream = 1, kNoiseStream = 2, kPenaltyStream = 3 };

constexpr std::size_t kInferenceBatch = 256;

Tensor<float> endmembers_transposed(const EndmemberMatrix& e) {
  Tensor<float> t({e.materials, e.bands});
  for (std::size_t d = 0; d < e.bands; ++d)
    for (std::size_t k = 0; k < e.materials; ++k) t[k * e.bands + d] = static_cast<float>(e.at(d, k));
  return t;
}

Tensor<float> gather_rows(const HyperspectralCube& cube, const std::vector<std::size_t>& order, std::size_t begin,
                          std::size_t end) {
  const std::size_t d = cube.bands;
  Tensor<float> x({end - begin, d});
  for (std::size_t i = begin; i < end; ++i) {
    auto px = cube.pixel(order[i]);
    std::copy(px.begin(), px.end(), x.data() + (i - begin) * d);
  }
  return x;
}

Tensor<float> normal_tensor(Rng& rng, Shape shape) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

template <typename T>
std::vector<Var<T>> vars_of(const std::vector<typename ParamSet<T>::Entry*>& entries) {
  std::vector<Var<T>> vars;
  vars.reserve(entries.size());
  for (auto* e : entries) vars.push_back(e->var);
  return vars;
}

void check_loss(float value, std::size_t epoch, std::size_t batch, const char* which) {
  if (!std::isfinite(value)) {
    throw NumericalError(std::string(which) + " loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch));
  }
}

void check_cube(const HyperspectralCube& cube, const EndmemberMatrix& e) {
  if (cube.bands != e.bands) {
    throw ConfigError("cube has " + std::to_string(cube.bands) + " bands but endmembers have " +
                      std::to_string(e.bands));
  }
  if (cube.pixels() == 0) throw DataError("cube has no pixels");
  if (cube.data.size() != cube.pixels() * cube.bands) throw DataError("cube payload does not match its extents");
  for (std::size_t p = 0; p < cube.pixels(); ++p) {
    const auto x = cube.pixel(p);
    if (std::all_of(x.begin(), x.end(), [](float v) { return v == 0.0f; })) {
      throw DataError("pixel " + std::to_string(p) + " is an all-zero spectrum; its spectral angle is undefined");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (n_critic < 1) throw ConfigError("n_critic must be >= 1");
  if (!(lr_gen > 0) || !(lr_critic > 0)) throw ConfigError("learning rates must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
  if (components < 1 || latent < 1) throw ConfigError("components and latent must be >= 1");
  weights.validate();
}

bool TrainHistory::same_trajectory(const TrainHistory& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.sad != b.sad || a.critic_loss != b.critic_loss || a.penalty != b.penalty ||
        a.grad_norm != b.grad_norm || a.gap != b.gap) {
      return false;
    }
  }
  return true;
}

template <typename T>
void adam_step(const std::vector<typename ParamSet<T>::Entry*>& entries, const AdamHyper& h) {
  for (auto* e : entries) {
    if (!e->grad.all_finite()) throw NumericalError("non-finite gradient for parameter " + e->name);
  }
  for (auto* e : entries) {
    e->adam_t += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(e->adam_t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(e->adam_t));
    T* w = e->var.mutable_value().data();
    const T* g = e->grad.data();
    T* m = e->adam_m.data();
    T* v = e->adam_v.data();
    const T b1 = static_cast<T>(h.beta1);
    const T b2 = static_cast<T>(h.beta2);
    for (std::size_t i = 0; i < e->grad.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      w[i] -= static_cast<T>(h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
  }
}

template <typename T>
void store_gradients(const Var<T>& loss, const std::vector<typename ParamSet<T>::Entry*>& entries) {
  auto grads = ag::grad(loss, vars_of<T>(entries));
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i]->grad = grads[i].value();
}

template void adam_step<float>(const std::vector<ParamSet<float>::Entry*>&, const AdamHyper&);
template void adam_step<double>(const std::vector<ParamSet<double>::Entry*>&, const AdamHyper&);
template void store_gradients<float>(const Var<float>&, const std::vector<ParamSet<float>::Entry*>&);
template void store_gradients<double>(const Var<double>&, const std::vector<ParamSet<double>::Entry*>&);

TrainResult train(const HyperspectralCube& cube, const EndmemberMatrix& endmembers, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  check_cube(cube, endmembers);

  TrainResult result;
  const ModelDims dims = cfg.dims(cube.bands, endmembers.materials);
  result.model = init_params<float>(Rng::stream(cfg.seed, kInitStream).next_u64(), dims, &result.warnings);
  auto& model = result.model;

  const auto et = Var<float>::constant(endmembers_transposed(endmembers));
  const DecoderOptions dec = cfg.decoder_options();
  Rng shuffle_rng = Rng::stream(cfg.seed, kShuffleStream);
  Rng noise_rng = Rng::stream(cfg.seed, kNoiseStream);
  Rng penalty_rng = Rng::stream(cfg.seed, kPenaltyStream);

  auto gen_entries = model.params.group(kGeneratorGroups);
  auto critic_entries = model.params.group(kCriticGroups);
  const AdamHyper gen_hyper{cfg.lr_gen, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  const AdamHyper critic_hyper{cfg.lr_critic, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  const CriticFn<float> critic = [&model](const Var<float>& x) { return critic_score(model, x); };
  const bool adversarial = !cfg.ablate_wgan;

  std::vector<std::size_t> order(cube.pixels());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order.begin(), order.end());
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t n_batches = 0;
    std::size_t n_critic_steps = 0;

    for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t bsz = end - begin;
      const auto x = Var<float>::constant(gather_rows(cube, order, begin, end));

      if (adversarial) {
        Var<float> fake;
        {
          ag::NoGradGuard no_grad;
          auto z = encode(model, x, Mode::train, /*update_stats=*/false);
          auto y = mixture_fractions(model, z).fractions;
          fake = decode(model, y, Var<float>::constant(normal_tensor(noise_rng, {bsz, dims.noise})), et, dec);
        }
        const auto gen_sum = model.params.checksum(kGeneratorGroups);
        for (std::size_t step = 0; step < cfg.n_critic; ++step) {
          auto cl = critic_loss(x, fake, critic, cfg.weights.lambda_pq, penalty_rng);
          check_loss(cl.loss.item(), epoch + 1, batch, "critic");
          store_gradients(cl.loss, critic_entries);
          adam_step<float>(critic_entries, critic_hyper);
          rec.critic_loss += cl.loss.item();
          rec.penalty += cl.penalty;
          rec.grad_norm += cl.grad_norm;
          rec.gap += cl.gap;
          ++n_critic_steps;
        }
        if (model.params.checksum(kGeneratorGroups) != gen_sum) {
          throw std::logic_error("critic update modified generator parameters");
        }
      }

      const auto critic_sum = model.params.checksum(kCriticGroups);
      auto z = encode(model, x, Mode::train, /*update_stats=*/true);
      auto y = mixture_fractions(model, z).fractions;
      auto x_hat = decode(model, y, Var<float>::constant(normal_tensor(noise_rng, {bsz, dims.noise})), et, dec);
      auto gl = generator_loss(x, x_hat, critic, adversarial ? cfg.weights.lambda_adv : 0.0);
      check_loss(gl.loss.item(), epoch + 1, batch, "generator");
      store_gradients(gl.loss, gen_entries);
      adam_step<float>(gen_entries, gen_hyper);
      if (model.params.checksum(kCriticGroups) != critic_sum) {
        throw std::logic_error("generator update modified critic parameters");
      }
      rec.sad += gl.sad;
      ++n_batches;
    }

    rec.sad /= static_cast<double>(n_batches);
    if (n_critic_steps > 0) {
      const auto n = static_cast<double>(n_critic_steps);
      rec.critic_loss /= n;
      rec.penalty /= n;
      rec.grad_norm /= n;
      rec.gap /= n;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

namespace {

template <typename F>
void for_each_inference_batch(const HyperspectralCube& cube, ModelParams<float>& model, F&& f) {
  if (cube.bands != model.dims.bands) {
    throw ConfigError("cube has " + std::to_string(cube.bands) + " bands but the model expects " +
                      std::to_string(model.dims.bands));
  }
  ag::NoGradGuard no_grad;
  std::vector<std::size_t> order(cube.pixels());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t begin = 0; begin < order.size(); begin += kInferenceBatch) {
    const std::size_t end = std::min(order.size(), begin + kInferenceBatch);
    auto z = encode(model, Var<float>::constant(gather_rows(cube, order, begin, end)), Mode::infer, false);
    f(begin, z);
  }
}

}  // namespace

AbundanceField unmix(const HyperspectralCube& cube, ModelParams<float>& model) {
  AbundanceField out;
  out.height = cube.height;
  out.width = cube.width;
  out.materials = model.dims.materials;
  out.data.resize(cube.pixels() * out.materials);
  for_each_inference_batch(cube, model, [&](std::size_t begin, const Var<float>& z) {
    const auto y = mixture_fractions(model, z).fractions;
    for (std::size_t i = 0; i < y.size(); ++i) out.data[begin * out.materials + i] = y.value()[i];
  });
  return out;
}

std::vector<std::vector<float>> latents(const HyperspectralCube& cube, ModelParams<float>& model) {
  std::vector<std::vector<float>> rows(cube.pixels());
  const std::size_t m = model.dims.latent;
  for_each_inference_batch(cube, model, [&](std::size_t begin, const Var<float>& z) {
    for (std::size_t r = 0; r < z.shape()[0]; ++r) {
      rows[begin + r].assign(z.value().data() + r * m, z.value().data() + (r + 1) * m);
    }
  });
  return rows;
}

void dump_latents(const HyperspectralCube& cube, ModelParams<float>& model, const std::string& path) {
  const auto rows = latents(cube, model);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  char buf[32];
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(row[j]));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace specmix
