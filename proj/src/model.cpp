#include "specmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "specmix/rng.hpp"

namespace specmix {

namespace {

using ag::Var;

constexpr double kNormEps = 1e-5;
constexpr double kNormMomentum = 0.9;
constexpr double kLatentSlope = 0.1;
constexpr double kInitSlope = 0.25;

template <typename T>
Tensor<T> glorot(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

template <typename T>
void add_conv(ParamSet<T>& ps, Rng& rng, const std::string& name, std::size_t kernel, std::size_t cin,
              std::size_t cout) {
  ps.add(name + ".weight", glorot<T>(rng, {kernel, cin, cout}, kernel * cin, kernel * cout));
  ps.add(name + ".bias", Tensor<T>({cout}));
}

template <typename T>
void add_linear(ParamSet<T>& ps, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
                bool zero = false) {
  ps.add(name + ".weight", zero ? Tensor<T>({in, out}) : glorot<T>(rng, {in, out}, in, out));
  ps.add(name + ".bias", Tensor<T>({out}));
}

template <typename T>
void add_prelu(ParamSet<T>& ps, const std::string& name, std::size_t ch) {
  ps.add(name + ".slope", Tensor<T>({ch}, static_cast<T>(kInitSlope)));
}

template <typename T>
void add_norm(ParamSet<T>& ps, const std::string& name, std::size_t ch, bool running) {
  ps.add(name + ".gamma", Tensor<T>({ch}, T(1)));
  ps.add(name + ".beta", Tensor<T>({ch}));
  if (running) {
    ps.add_buffer(name + ".running_mean", Tensor<T>({ch}));
    ps.add_buffer(name + ".running_var", Tensor<T>({ch}, T(1)));
  }
}

template <typename T>
Var<T> conv(const ParamSet<T>& ps, const std::string& name, const Var<T>& x, std::size_t stride) {
  return ag::add(ag::conv1d(x, ps.var(name + ".weight"), stride), ps.var(name + ".bias"));
}

template <typename T>
Var<T> linear(const ParamSet<T>& ps, const std::string& name, const Var<T>& x) {
  const Var<T>& w = ps.var(name + ".weight");
  const Shape& xs = x.shape();
  const std::size_t in = xs.back();
  const std::size_t rows = x.size() / in;
  auto y = ag::add(ag::matmul(ag::reshape(x, {rows, in}), w), ps.var(name + ".bias"));
  Shape out_shape = xs;
  out_shape.back() = w.shape()[1];
  return ag::reshape(y, out_shape);
}

template <typename T>
Var<T> prelu(const ParamSet<T>& ps, const std::string& name, const Var<T>& x) {
  return ag::prelu(x, ps.var(name + ".slope"));
}

// Encoder normalisation: per-channel batch statistics in training, running
// averages at inference.
template <typename T>
Var<T> batch_norm(ParamSet<T>& ps, const std::string& name, const Var<T>& x, Mode mode, bool update_stats) {
  const Var<T>& gamma = ps.var(name + ".gamma");
  const Var<T>& beta = ps.var(name + ".beta");
  Tensor<T>& rmean = ps.buffer(name + ".running_mean");
  Tensor<T>& rvar = ps.buffer(name + ".running_var");
  if (mode == Mode::train) {
    auto r = ag::batch_norm_train(x, gamma, beta, static_cast<T>(kNormEps));
    if (update_stats) {
      const T m = static_cast<T>(kNormMomentum);
      for (std::size_t c = 0; c < rmean.size(); ++c) {
        rmean[c] = m * rmean[c] + (T(1) - m) * r.mean[c];
        rvar[c] = m * rvar[c] + (T(1) - m) * r.var[c];
      }
    }
    return r.out;
  }
  Tensor<T> inv({rvar.size()});
  for (std::size_t c = 0; c < rvar.size(); ++c) inv[c] = T(1) / std::sqrt(rvar[c] + static_cast<T>(kNormEps));
  auto centred = ag::sub(x, Var<T>::constant(rmean));
  return ag::add(ag::mul(centred, ag::mul(gamma, Var<T>::constant(std::move(inv)))), beta);
}

// Critic normalisation: per-sample statistics over positions and channels with
// a per-channel affine map. Built from primitives so it is twice differentiable,
// and samples never interact, so the per-sample input gradient is well defined.
template <typename T>
Var<T> layer_norm(const ParamSet<T>& ps, const std::string& name, const Var<T>& x) {
  const Shape& xs = x.shape();
  const Shape stat_shape{xs[0], 1, 1};
  const T inv_n = T(1) / static_cast<T>(xs[1] * xs[2]);
  auto mu = ag::scale(ag::sum_to(x, stat_shape), inv_n);
  auto centred = ag::sub(x, mu);
  auto var = ag::scale(ag::sum_to(ag::mul(centred, centred), stat_shape), inv_n);
  auto inv_std = ag::pow_scalar(ag::add_scalar(var, static_cast<T>(kNormEps)), T(-0.5));
  auto xhat = ag::mul(centred, inv_std);
  return ag::add(ag::mul(xhat, ps.var(name + ".gamma")), ps.var(name + ".beta"));
}

void record(ShapeTrace* trace, const Shape& batched) {
  if (trace) trace->rows.emplace_back(batched.begin() + 1, batched.end());
}

}  // namespace

void validate_dims(const ModelDims& dims, std::vector<std::string>* warnings) {
  if (dims.bands < kBandMultiple) {
    throw ConfigError("model: " + std::to_string(dims.bands) + " bands is too short for the 21-tap input kernel (need >= " +
                      std::to_string(kBandMultiple) + ")");
  }
  if (dims.materials < 1) throw ConfigError("model: at least one material is required");
  if (dims.latent < 1 || dims.components < 1) throw ConfigError("model: latent size and component count must be >= 1");
  if (warnings) {
    if (dims.latent <= dims.materials) {
      warnings->push_back("latent size M=" + std::to_string(dims.latent) + " should be much larger than K=" +
                          std::to_string(dims.materials));
    }
    if (dims.components < dims.materials) {
      warnings->push_back("component count N=" + std::to_string(dims.components) + " is below K=" +
                          std::to_string(dims.materials));
    }
  }
}

template <typename T>
Var<T> pad_bands(const ModelDims& dims, const Var<T>& x) {
  if (x.shape().size() != 2 || x.shape()[1] != dims.bands) {
    throw ShapeError("model: expected spectra of shape [B," + std::to_string(dims.bands) + "], got " +
                     shape_str(x.shape()));
  }
  return ag::pad_last(x, 0, dims.padded_bands());
}

template <typename T>
ModelParams<T> init_params(std::uint64_t seed, const ModelDims& dims, std::vector<std::string>* warnings) {
  validate_dims(dims, warnings);
  Rng rng(seed);
  ModelParams<T> m{dims, {}};
  auto& ps = m.params;
  const std::size_t dp = dims.padded_bands();
  const std::size_t h = dims.head_width();

  add_conv(ps, rng, "encoder.conv1", 21, 1, 10);
  add_prelu(ps, "encoder.act1", 10);
  add_norm(ps, "encoder.norm1", 10, true);
  add_conv(ps, rng, "encoder.branch3", 3, 10, 10);
  add_conv(ps, rng, "encoder.branch5", 5, 10, 10);
  add_conv(ps, rng, "encoder.branch7", 7, 10, 10);
  add_prelu(ps, "encoder.act2", 30);
  add_norm(ps, "encoder.norm2", 30, true);
  add_conv(ps, rng, "encoder.conv3", 3, 30, 10);
  add_prelu(ps, "encoder.act3", 10);
  add_norm(ps, "encoder.norm3", 10, true);
  add_linear(ps, rng, "encoder.fc", dp / 20 * 10, dims.latent);

  {
    Tensor<T> mu({dims.components, dims.latent});
    for (auto& v : mu.values()) v = static_cast<T>(rng.normal(0.0, 0.5));
    ps.add("mixture.mean", std::move(mu));
  }
  ps.add("mixture.precision_raw", Tensor<T>({dims.components, dims.latent}));
  add_linear(ps, rng, "mixture.beta", dims.latent, dims.components);
  {
    Tensor<T> a({dims.materials, dims.components});
    for (auto& v : a.values()) v = static_cast<T>(rng.normal());
    ps.add("mixture.assignment_raw", std::move(a));
  }

  add_linear(ps, rng, "decoder.uncertainty.fc1", dims.materials + dims.noise, h);
  add_prelu(ps, "decoder.uncertainty.act", h);
  // Output layers of both heads start at zero so the decoder begins as exactly E y.
  add_linear(ps, rng, "decoder.uncertainty.fc2", h, dims.bands, true);
  add_linear(ps, rng, "decoder.refine.fc1", dims.materials, h);
  add_prelu(ps, "decoder.refine.act", h);
  add_linear(ps, rng, "decoder.refine.fc2", h, dims.bands, true);

  add_conv(ps, rng, "critic.conv1", 21, 1, 5);
  add_norm(ps, "critic.norm1", 5, false);
  add_prelu(ps, "critic.act1", 5);
  add_conv(ps, rng, "critic.conv2", 5, 5, 10);
  add_norm(ps, "critic.norm2", 10, false);
  add_prelu(ps, "critic.act2", 10);
  add_conv(ps, rng, "critic.conv3", 5, 10, 20);
  add_norm(ps, "critic.norm3", 20, false);
  add_prelu(ps, "critic.act3", 20);
  add_linear(ps, rng, "critic.fc", 20, 5);
  return m;
}

template <typename T>
Var<T> encode(ModelParams<T>& model, const Var<T>& x, Mode mode, bool update_stats, ShapeTrace* trace) {
  auto& ps = model.params;
  const std::size_t batch = x.shape().at(0);
  const std::size_t dp = model.dims.padded_bands();
  auto h = ag::reshape(pad_bands(model.dims, x), {batch, dp, 1});

  h = conv(ps, "encoder.conv1", h, 1);
  record(trace, h.shape());
  h = batch_norm(ps, "encoder.norm1", ag::avgpool1d(prelu(ps, "encoder.act1", h), 5), mode, update_stats);
  record(trace, h.shape());

  h = ag::concat_last<T>({conv(ps, "encoder.branch3", h, 1), conv(ps, "encoder.branch5", h, 1),
                          conv(ps, "encoder.branch7", h, 1)});
  record(trace, h.shape());
  h = batch_norm(ps, "encoder.norm2", ag::avgpool1d(prelu(ps, "encoder.act2", h), 2), mode, update_stats);
  record(trace, h.shape());

  h = conv(ps, "encoder.conv3", h, 1);
  record(trace, h.shape());
  h = batch_norm(ps, "encoder.norm3", ag::avgpool1d(prelu(ps, "encoder.act3", h), 2), mode, update_stats);
  record(trace, h.shape());

  auto z = ag::leaky_relu(linear(ps, "encoder.fc", ag::reshape(h, {batch, h.size() / batch})),
                          static_cast<T>(kLatentSlope));
  record(trace, z.shape());
  return z;
}

template <typename T>
MixtureOutput<T> mixture_fractions(const ModelParams<T>& model, const Var<T>& z) {
  const auto& ps = model.params;
  const auto& dims = model.dims;
  if (z.shape().size() != 2 || z.shape()[1] != dims.latent) {
    throw ShapeError("mixture: expected latent codes [B," + std::to_string(dims.latent) + "], got " +
                     shape_str(z.shape()));
  }
  const std::size_t batch = z.shape()[0];
  const std::size_t n = dims.components;

  // Mahalanobis form with a diagonal precision: a_n = -1/2 sum_m p_nm (z_m - mu_nm)^2.
  auto diff = ag::sub(ag::reshape(z, {batch, 1, dims.latent}), ps.var("mixture.mean"));
  auto precision = ag::softplus(ps.var("mixture.precision_raw"));
  auto quad = ag::reshape(ag::sum_to(ag::mul(ag::mul(diff, diff), precision), {batch, n, 1}), {batch, n});
  auto act = ag::scale(quad, T(-0.5));
  // Floored at the smallest normal value of T.
  auto g = ag::clamp(ag::sigmoid(act), std::numeric_limits<T>::min(), T(1));

  auto logits = linear(ps, "mixture.beta", z);
  auto beta = ag::softmax_last(logits);

  // beta_n * g_n in the log domain: log sigmoid(a) = -softplus(-a).
  auto log_g = ag::neg(ag::softplus(ag::neg(act)));
  auto weights = ag::softmax_last(ag::add(ag::log_softmax_last(logits), log_g));

  // Each component distributes its weight over the K materials through a
  // column-stochastic assignment; rows of `assign` are components.
  auto assign = ag::softmax_last(ag::transpose(ps.var("mixture.assignment_raw")));
  auto mass = ag::matmul(weights, assign);
  auto fractions = ag::div(mass, ag::sum_to(mass, {batch, 1}));
  return {fractions, g, beta};
}

// Orthonormal basis [D,R] of the row space of et[K,D] by modified Gram-Schmidt;
// numerically dependent rows are dropped.
template <typename T>
Tensor<T> span_basis(const Tensor<T>& et) {
  const std::size_t k = et.dim(0), d = et.dim(1);
  std::vector<std::vector<double>> basis;
  double scale = 0;
  for (std::size_t i = 0; i < et.size(); ++i) scale = std::max(scale, std::abs(static_cast<double>(et[i])));
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<double> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = et[a * d + j];
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += v[j] * b[j];
        for (std::size_t j = 0; j < d; ++j) v[j] -= dot * b[j];
      }
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm <= 1e-10 * scale * std::sqrt(static_cast<double>(d))) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  Tensor<T> q({d, basis.size()});
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t r = 0; r < basis.size(); ++r) q[j * basis.size() + r] = static_cast<T>(basis[r][j]);
  return q;
}

template <typename T>
Var<T> decode(const ModelParams<T>& model, const Var<T>& fractions, const Var<T>& eta, const Var<T>& endmembers_t,
              const DecoderOptions& opts) {
  const auto& ps = model.params;
  const auto& dims = model.dims;
  if (fractions.shape().size() != 2 || endmembers_t.shape().size() != 2 ||
      fractions.shape()[1] != endmembers_t.shape()[0]) {
    throw ShapeError("decode: fractions " + shape_str(fractions.shape()) + " do not match endmembers (transposed) " +
                     shape_str(endmembers_t.shape()));
  }
  if (endmembers_t.shape()[1] != dims.bands) {
    throw ShapeError("decode: endmember band count " + std::to_string(endmembers_t.shape()[1]) +
                     " differs from model bands " + std::to_string(dims.bands));
  }
  auto linear_mix = ag::matmul(fractions, endmembers_t);
  if (opts.ablate_eu) return linear_mix;

  if (eta.shape() != Shape{fractions.shape()[0], dims.noise}) {
    throw ShapeError("decode: noise must be [B," + std::to_string(dims.noise) + "], got " + shape_str(eta.shape()));
  }
  auto u = linear(ps, "decoder.uncertainty.fc1", ag::concat_last<T>({fractions, eta}));
  u = linear(ps, "decoder.uncertainty.fc2", prelu(ps, "decoder.uncertainty.act", u));
  auto r = linear(ps, "decoder.refine.fc1", fractions);
  r = linear(ps, "decoder.refine.fc2", prelu(ps, "decoder.refine.act", r));
  auto heads = ag::add(ag::scale(u, static_cast<T>(opts.lambda_u)), ag::scale(r, static_cast<T>(opts.lambda_r)));
  // Remove the part of the head output that lies in span(E): a head contribution
  // E d could otherwise stand in for a fraction error d under the scale-invariant loss.
  auto q = Var<T>::constant(span_basis(endmembers_t.value()));
  auto in_span = ag::matmul(ag::matmul(heads, q), ag::transpose(q));
  return ag::add(linear_mix, ag::sub(heads, in_span));
}

template <typename T>
Var<T> critic_score(const ModelParams<T>& model, const Var<T>& x, ShapeTrace* trace) {
  const auto& ps = model.params;
  const std::size_t batch = x.shape().at(0);
  const std::size_t dp = model.dims.padded_bands();
  auto h = ag::reshape(pad_bands(model.dims, x), {batch, dp, 1});

  h = prelu(ps, "critic.act1", layer_norm(ps, "critic.norm1", conv(ps, "critic.conv1", h, 5)));
  record(trace, h.shape());
  h = prelu(ps, "critic.act2", layer_norm(ps, "critic.norm2", conv(ps, "critic.conv2", h, 2)));
  record(trace, h.shape());
  h = prelu(ps, "critic.act3", layer_norm(ps, "critic.norm3", conv(ps, "critic.conv3", h, 2)));
  record(trace, h.shape());
  auto patches = linear(ps, "critic.fc", h);
  record(trace, patches.shape());

  const std::size_t per_sample = patches.size() / batch;
  auto total = ag::reshape(ag::sum_to(patches, {batch, 1, 1}), {batch});
  return ag::scale(total, T(1) / static_cast<T>(per_sample));
}

#define SPECMIX_INSTANTIATE(T)                                                                                \
  template ModelParams<T> init_params<T>(std::uint64_t, const ModelDims&, std::vector<std::string>*);         \
  template Var<T> encode<T>(ModelParams<T>&, const Var<T>&, Mode, bool, ShapeTrace*);                         \
  template MixtureOutput<T> mixture_fractions<T>(const ModelParams<T>&, const Var<T>&);                       \
  template Var<T> decode<T>(const ModelParams<T>&, const Var<T>&, const Var<T>&, const Var<T>&,               \
                            const DecoderOptions&);                                                           \
  template Var<T> critic_score<T>(const ModelParams<T>&, const Var<T>&, ShapeTrace*);                         \
  template Var<T> pad_bands<T>(const ModelDims&, const Var<T>&);

SPECMIX_INSTANTIATE(float)
SPECMIX_INSTANTIATE(double)

#undef SPECMIX_INSTANTIATE

}  // namespace specmix
