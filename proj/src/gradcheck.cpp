#include "specmix/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "specmix/autograd.hpp"
#include "specmix/losses.hpp"
#include "specmix/model.hpp"
#include "specmix/rng.hpp"

namespace specmix {

namespace {

using V = ag::Var<double>;
using Tn = Tensor<double>;

struct Case {
  std::vector<V> leaves;
  std::function<V()> f;
};

using Factory = std::function<Case(Rng&)>;

Tn normal(Rng& rng, const Shape& shape, double sd = 1.0) {
  Tn t(shape);
  for (auto& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

Tn uniform(Rng& rng, const Shape& shape, double lo, double hi) {
  Tn t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

V leaf(Tn t) { return V::leaf(std::move(t)); }

V project(const V& out, const Tn& r) { return ag::sum(ag::mul(out, V::constant(r))); }

double inner(const Tn& a, const Tn& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Evaluates g at leaves + t * dirs, restoring the leaves afterwards.
double shifted(std::vector<V>& leaves, const std::vector<Tn>& dirs, double t, const std::function<double()>& g) {
  std::vector<Tn> saved;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    saved.push_back(leaves[i].value());
    auto& v = leaves[i].mutable_value();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += t * dirs[i][j];
  }
  const double out = g();
  for (std::size_t i = 0; i < leaves.size(); ++i) leaves[i].mutable_value() = saved[i];
  return out;
}

// A random direction of unit norm across all leaves, so the finite-difference step
// moves the inputs by exactly h regardless of how many parameters are involved.
std::vector<Tn> random_dirs(Rng& rng, const std::vector<V>& leaves) {
  std::vector<Tn> dirs;
  double norm = 0;
  for (const auto& l : leaves) {
    dirs.push_back(normal(rng, l.shape()));
    norm += inner(dirs.back(), dirs.back());
  }
  norm = std::sqrt(norm);
  for (auto& d : dirs)
    for (auto& v : d.values()) v /= norm;
  return dirs;
}

// Outcome of one trial; `smooth` is false when the central differences at h and h/2
// disagree, which happens when the step crosses a PReLU or clamp kink.
struct Trial {
  double error = 0.0;
  bool smooth = true;
};

Trial compare(Case& c, const std::vector<Tn>& dirs, double h, double analytic, const std::function<double()>& value) {
  auto central = [&](double step) {
    return (shifted(c.leaves, dirs, step, value) - shifted(c.leaves, dirs, -step, value)) / (2 * step);
  };
  const double coarse = central(h);
  const double fine = central(h / 2);
  return {relative_error(analytic, coarse), relative_error(coarse, fine) < 1e-6};
}

Trial first_order_trial(Case& c, Rng& rng, double h) {
  const Tn r = normal(rng, c.f().shape());
  auto objective = [&] { return project(c.f(), r); };
  const auto grads = ag::grad(objective(), c.leaves);
  const auto dirs = random_dirs(rng, c.leaves);
  double analytic = 0;
  for (std::size_t i = 0; i < grads.size(); ++i) analytic += inner(grads[i].value(), dirs[i]);
  auto value = [&] { return objective().item(); };
  return compare(c, dirs, h, analytic, value);
}

// Checks the gradient of the directional derivative <grad L, u>, i.e. a Hessian-vector product.
Trial second_order_trial(Case& c, Rng& rng, double h) {
  const Tn r = normal(rng, c.f().shape());
  const auto u = random_dirs(rng, c.leaves);
  auto directional = [&] {
    const auto g = ag::grad(project(c.f(), r), c.leaves, /*create_graph=*/true);
    V acc = project(g[0], u[0]);
    for (std::size_t i = 1; i < g.size(); ++i) acc = ag::add(acc, project(g[i], u[i]));
    return acc;
  };
  const auto hvp = ag::grad(directional(), c.leaves);
  const auto dirs = random_dirs(rng, c.leaves);
  double analytic = 0;
  for (std::size_t i = 0; i < hvp.size(); ++i) analytic += inner(hvp[i].value(), dirs[i]);
  auto value = [&] { return directional().item(); };
  return compare(c, dirs, h, analytic, value);
}

constexpr std::size_t kMaxRedraws = 20;

struct Check {
  std::string name;
  Factory make;
  bool second_order = false;
  bool composite = false;
};

Case unary(Rng& rng, double lo, double hi, std::function<V(const V&)> op) {
  const Shape s{pick(rng, 1, 4), pick(rng, 1, 5)};
  V x = leaf(uniform(rng, s, lo, hi));
  return {{x}, [x, op] { return op(x); }};
}

Shape random_shape(Rng& rng) { return {pick(rng, 1, 4), pick(rng, 1, 5)}; }

// A second operand shape that broadcasts against s: full, row, column or scalar.
Shape broadcast_partner(Rng& rng, const Shape& s) {
  switch (rng.below(4)) {
    case 0: return s;
    case 1: return {s[1]};
    case 2: return {s[0], 1};
    default: return {1};
  }
}

Case binary(Rng& rng, bool positive_rhs, std::function<V(const V&, const V&)> op) {
  Shape s = random_shape(rng);
  Shape t = broadcast_partner(rng, s);
  if (rng.below(2)) std::swap(s, t);
  V a = leaf(normal(rng, s));
  V b = leaf(positive_rhs ? uniform(rng, t, 0.5, 2.0) : normal(rng, t));
  return {{a, b}, [a, b, op] { return op(a, b); }};
}

struct ConvGeometry {
  std::size_t batch, len, cin, cout, kernel, stride, out, pad_left;
  ag::Padding padding;
};

ConvGeometry random_conv(Rng& rng) {
  ConvGeometry g{};
  g.batch = pick(rng, 1, 3);
  g.cin = pick(rng, 1, 3);
  g.cout = pick(rng, 1, 3);
  g.kernel = pick(rng, 1, 5);
  g.stride = pick(rng, 1, 3);
  g.padding = rng.below(2) ? ag::Padding::same : ag::Padding::valid;
  if (g.padding == ag::Padding::same) {
    g.len = pick(rng, 1, 12);
    g.out = (g.len + g.stride - 1) / g.stride;
    const std::size_t need = (g.out - 1) * g.stride + g.kernel;
    g.pad_left = need > g.len ? (need - g.len) / 2 : 0;
  } else {
    g.len = pick(rng, g.kernel, 12);
    g.out = (g.len - g.kernel) / g.stride + 1;
    g.pad_left = 0;
  }
  return g;
}

ModelDims small_dims(Rng& rng) {
  const std::size_t bands[] = {20, 23, 40};
  return ModelDims{bands[rng.below(3)], pick(rng, 2, 4), 6, pick(rng, 2, 5), 3};
}

// Freshly initialised biases are zero, which places zero-padded bands exactly on
// the PReLU kink; a random offset moves every check to a differentiable point.
std::shared_ptr<ModelParams<double>> random_model(Rng& rng, const ModelDims& dims) {
  auto model = std::make_shared<ModelParams<double>>(init_params<double>(rng.next_u64(), dims));
  for (auto& e : model->params.entries())
    for (auto& v : e.var.mutable_value().values()) v += rng.normal(0.0, 0.1);
  return model;
}

std::vector<V> group_leaves(ModelParams<double>& m, std::string_view prefix) {
  std::vector<V> out;
  for (auto* e : m.params.group({prefix})) out.push_back(e->var);
  return out;
}

Tn positive_spectra(Rng& rng, std::size_t batch, std::size_t bands) { return uniform(rng, {batch, bands}, 0.1, 1.0); }

std::vector<Check> checks() {
  std::vector<Check> c;
  auto add = [&](std::string name, Factory f, bool second = true) { c.push_back({std::move(name), std::move(f), second}); };

  add("add", [](Rng& r) { return binary(r, false, [](const V& a, const V& b) { return ag::add(a, b); }); });
  add("sub", [](Rng& r) { return binary(r, false, [](const V& a, const V& b) { return ag::sub(a, b); }); });
  add("mul", [](Rng& r) { return binary(r, false, [](const V& a, const V& b) { return ag::mul(a, b); }); });
  add("div", [](Rng& r) { return binary(r, true, [](const V& a, const V& b) { return ag::div(a, b); }); });
  add("neg", [](Rng& r) { return unary(r, -2, 2, [](const V& x) { return ag::neg(x); }); });
  add("scale", [](Rng& r) {
    const double s = r.normal();
    return unary(r, -2, 2, [s](const V& x) { return ag::scale(x, s); });
  });
  add("add_scalar", [](Rng& r) {
    const double s = r.normal();
    return unary(r, -2, 2, [s](const V& x) { return ag::add_scalar(x, s); });
  });
  add("pow_scalar", [](Rng& r) {
    const double p = r.uniform(-1.5, 2.5);
    return unary(r, 0.3, 2, [p](const V& x) { return ag::pow_scalar(x, p); });
  });
  add("exp", [](Rng& r) { return unary(r, -2, 2, [](const V& x) { return ag::exp(x); }); });
  add("log", [](Rng& r) { return unary(r, 0.2, 3, [](const V& x) { return ag::log(x); }); });
  add("sigmoid", [](Rng& r) { return unary(r, -4, 4, [](const V& x) { return ag::sigmoid(x); }); });
  add("softplus", [](Rng& r) { return unary(r, -4, 4, [](const V& x) { return ag::softplus(x); }); });
  add("clamp", [](Rng& r) { return unary(r, -2, 2, [](const V& x) { return ag::clamp(x, -1.0, 1.0); }); });
  add("arccos", [](Rng& r) { return unary(r, -0.9, 0.9, [](const V& x) { return ag::arccos(x); }); });
  add("leaky_relu", [](Rng& r) { return unary(r, -2, 2, [](const V& x) { return ag::leaky_relu(x, 0.1); }); });
  add("prelu", [](Rng& r) {
    const Shape s{pick(r, 1, 3), pick(r, 1, 5), pick(r, 1, 4)};
    V x = leaf(normal(r, s));
    V slope = leaf(uniform(r, {s[2]}, 0.05, 0.5));
    return Case{{x, slope}, [x, slope] { return ag::prelu(x, slope); }};
  });
  add("sum_to", [](Rng& r) {
    const Shape s = random_shape(r);
    const Shape t = broadcast_partner(r, s);
    V x = leaf(normal(r, s));
    return Case{{x}, [x, t] { return ag::sum_to(x, t); }};
  });
  add("broadcast_to", [](Rng& r) {
    const Shape s = random_shape(r);
    const Shape t = broadcast_partner(r, s);
    V x = leaf(normal(r, t));
    return Case{{x}, [x, s] { return ag::broadcast_to(x, s); }};
  });
  add("sum", [](Rng& r) { return unary(r, -2, 2, [](const V& x) { return ag::sum(x); }); });
  add("mean", [](Rng& r) { return unary(r, -2, 2, [](const V& x) { return ag::mean(x); }); });
  add("reshape", [](Rng& r) {
    return unary(r, -2, 2, [](const V& x) { return ag::reshape(x, {x.size()}); });
  });
  add("transpose", [](Rng& r) { return unary(r, -2, 2, [](const V& x) { return ag::transpose(x); }); });
  add("matmul", [](Rng& r) {
    const std::size_t m = pick(r, 1, 4), k = pick(r, 1, 4), n = pick(r, 1, 4);
    V a = leaf(normal(r, {m, k}));
    V b = leaf(normal(r, {k, n}));
    return Case{{a, b}, [a, b] { return ag::matmul(a, b); }};
  });
  add("softmax_last", [](Rng& r) { return unary(r, -3, 3, [](const V& x) { return ag::softmax_last(x); }); });
  add("log_softmax_last", [](Rng& r) {
    return unary(r, -3, 3, [](const V& x) { return ag::log_softmax_last(x); });
  });
  add("conv1d", [](Rng& r) {
    const auto g = random_conv(r);
    V x = leaf(normal(r, {g.batch, g.len, g.cin}));
    V w = leaf(normal(r, {g.kernel, g.cin, g.cout}));
    return Case{{x, w}, [x, w, g] { return ag::conv1d(x, w, g.stride, g.padding); }};
  });
  add("conv1d_input_grad", [](Rng& r) {
    const auto g = random_conv(r);
    V gy = leaf(normal(r, {g.batch, g.out, g.cout}));
    V w = leaf(normal(r, {g.kernel, g.cin, g.cout}));
    return Case{{gy, w}, [gy, w, g] { return ag::conv1d_input_grad(gy, w, g.len, g.stride, g.pad_left); }};
  });
  add("conv1d_weight_grad", [](Rng& r) {
    const auto g = random_conv(r);
    V x = leaf(normal(r, {g.batch, g.len, g.cin}));
    V gy = leaf(normal(r, {g.batch, g.out, g.cout}));
    return Case{{x, gy}, [x, gy, g] { return ag::conv1d_weight_grad(x, gy, g.kernel, g.stride, g.pad_left); }};
  });
  add("avgpool1d", [](Rng& r) {
    const std::size_t k = pick(r, 1, 4);
    V x = leaf(normal(r, {pick(r, 1, 3), k * pick(r, 1, 4), pick(r, 1, 3)}));
    return Case{{x}, [x, k] { return ag::avgpool1d(x, k); }};
  });
  add("avgpool1d_grad", [](Rng& r) {
    const std::size_t k = pick(r, 1, 4), out = pick(r, 1, 4);
    V gy = leaf(normal(r, {pick(r, 1, 3), out, pick(r, 1, 3)}));
    return Case{{gy}, [gy, k, out] { return ag::avgpool1d_grad(gy, k, k * out); }};
  });
  add("concat_last", [](Rng& r) {
    const std::size_t b = pick(r, 1, 3), l = pick(r, 1, 4);
    std::vector<V> parts;
    for (std::size_t i = 0, n = pick(r, 1, 3); i < n; ++i) parts.push_back(leaf(normal(r, {b, l, pick(r, 1, 4)})));
    return Case{parts, [parts] { return ag::concat_last(parts); }};
  });
  add("slice_last", [](Rng& r) {
    const std::size_t width = pick(r, 1, 6), take = pick(r, 1, width), offset = pick(r, 0, width - take);
    V x = leaf(normal(r, {pick(r, 1, 3), width}));
    return Case{{x}, [x, offset, take] { return ag::slice_last(x, offset, take); }};
  });
  add("pad_last", [](Rng& r) {
    const std::size_t width = pick(r, 1, 5), total = width + pick(r, 0, 4), offset = pick(r, 0, total - width);
    V x = leaf(normal(r, {pick(r, 1, 3), width}));
    return Case{{x}, [x, offset, total] { return ag::pad_last(x, offset, total); }};
  });
  add(
      "batch_norm_train",
      [](Rng& r) {
        const std::size_t ch = pick(r, 1, 4);
        V x = leaf(normal(r, {pick(r, 2, 4), pick(r, 1, 4), ch}, 2.0));
        V gamma = leaf(uniform(r, {ch}, 0.5, 1.5));
        V beta = leaf(normal(r, {ch}));
        return Case{{x, gamma, beta}, [x, gamma, beta] { return ag::batch_norm_train(x, gamma, beta, 1e-5).out; }};
      },
      /*second=*/false);
  add("dot", [](Rng& r) {
    const Shape s = random_shape(r);
    V a = leaf(normal(r, s));
    V b = leaf(normal(r, s));
    return Case{{a, b}, [a, b] { return ag::dot(a, b); }};
  });
  add("l2_norm", [](Rng& r) { return unary(r, -2, 2, [](const V& x) { return ag::l2_norm(x); }); });

  auto composite = [&](std::string name, Factory f, bool second) {
    c.push_back({std::move(name), std::move(f), second, true});
  };
  composite(
      "encoder (train mode)",
      [](Rng& r) {
        const auto dims = small_dims(r);
        auto model = random_model(r, dims);
        V x = leaf(positive_spectra(r, pick(r, 2, 4), dims.bands));
        auto leaves = group_leaves(*model, "encoder.");
        leaves.push_back(x);
        return Case{leaves, [model, x] { return encode(*model, x, Mode::train, /*update_stats=*/false); }};
      },
      false);
  composite(
      "encoder (inference)",
      [](Rng& r) {
        const auto dims = small_dims(r);
        auto model = random_model(r, dims);
        V x = leaf(positive_spectra(r, pick(r, 1, 3), dims.bands));
        auto leaves = group_leaves(*model, "encoder.");
        leaves.push_back(x);
        return Case{leaves, [model, x] { return encode(*model, x, Mode::infer); }};
      },
      true);
  composite(
      "mixture",
      [](Rng& r) {
        const auto dims = small_dims(r);
        auto model = random_model(r, dims);
        V z = leaf(normal(r, {pick(r, 1, 3), dims.latent}));
        auto leaves = group_leaves(*model, "mixture.");
        leaves.push_back(z);
        return Case{leaves, [model, z] {
                      auto m = mixture_fractions(*model, z);
                      return ag::concat_last<double>({m.fractions, m.g, m.beta});
                    }};
      },
      true);
  for (bool ablate : {false, true}) {
    composite(
        ablate ? "decoder (w/o EU)" : "decoder",
        [ablate](Rng& r) {
          const auto dims = small_dims(r);
          auto model = random_model(r, dims);
          const std::size_t b = pick(r, 1, 3);
          V y = leaf(uniform(r, {b, dims.materials}, 0.05, 1.0));
          V eta = leaf(normal(r, {b, dims.noise}));
          V et = V::constant(uniform(r, {dims.materials, dims.bands}, 0.0, 1.0));
          auto leaves = group_leaves(*model, "decoder.");
          leaves.push_back(y);
          leaves.push_back(eta);
          const DecoderOptions opts{0.1, 0.05, ablate};
          return Case{leaves, [model, y, eta, et, opts] { return decode(*model, y, eta, et, opts); }};
        },
        true);
  }
  composite(
      "critic",
      [](Rng& r) {
        const auto dims = small_dims(r);
        auto model = random_model(r, dims);
        V x = leaf(positive_spectra(r, pick(r, 1, 3), dims.bands));
        auto leaves = group_leaves(*model, "critic.");
        leaves.push_back(x);
        return Case{leaves, [model, x] { return critic_score(*model, x); }};
      },
      true);
  composite(
      "sad_loss",
      [](Rng& r) {
        const std::size_t b = pick(r, 1, 4), d = pick(r, 2, 30);
        V x = leaf(positive_spectra(r, b, d));
        V y = leaf(positive_spectra(r, b, d));
        return Case{{x, y}, [x, y] { return sad_loss(x, y); }};
      },
      true);
  composite(
      "generator_loss",
      [](Rng& r) {
        const auto dims = small_dims(r);
        auto model = random_model(r, dims);
        const std::size_t b = pick(r, 2, 4);
        const Tn x = positive_spectra(r, b, dims.bands);
        V eta = V::constant(normal(r, {b, dims.noise}));
        V et = V::constant(uniform(r, {dims.materials, dims.bands}, 0.1, 1.0));
        std::vector<V> leaves;
        for (auto* e : model->params.group(kGeneratorGroups)) leaves.push_back(e->var);
        return Case{leaves, [model, x, eta, et] {
                      V input = V::constant(x);
                      auto z = encode(*model, input, Mode::train, /*update_stats=*/false);
                      auto y = mixture_fractions(*model, z).fractions;
                      auto x_hat = decode(*model, y, eta, et, DecoderOptions{});
                      CriticFn<double> critic = [model](const V& v) { return critic_score(*model, v); };
                      return generator_loss(input, x_hat, critic, 0.1).loss;
                    }};
      },
      false);
  composite(
      "input_gradient_norm (second order)",
      [](Rng& r) {
        const auto dims = small_dims(r);
        auto model = random_model(r, dims);
        V x = leaf(positive_spectra(r, pick(r, 1, 3), dims.bands));
        auto leaves = group_leaves(*model, "critic.");
        leaves.push_back(x);
        return Case{leaves, [model, x] {
                      CriticFn<double> critic = [model](const V& v) { return critic_score(*model, v); };
                      return input_gradient_norm(critic, x);
                    }};
      },
      false);
  composite(
      "critic_loss (second order)",
      [](Rng& r) {
        const auto dims = small_dims(r);
        auto model = random_model(r, dims);
        const std::size_t b = pick(r, 1, 3);
        V real = leaf(positive_spectra(r, b, dims.bands));
        V fake = leaf(positive_spectra(r, b, dims.bands));
        const Tn mix = uniform(r, {b}, 0.0, 1.0);
        auto leaves = group_leaves(*model, "critic.");
        leaves.push_back(real);
        leaves.push_back(fake);
        return Case{leaves, [model, real, fake, mix] {
                      CriticFn<double> critic = [model](const V& v) { return critic_score(*model, v); };
                      return critic_loss(real, fake, critic, 10.0, mix).loss;
                    }};
      },
      false);
  return c;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::passed() const {
  return std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.passed(); });
}

std::string GradcheckReport::table() const {
  std::size_t width = 10;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s %7s %8s %14s %10s  %s\n", static_cast<int>(width), "check", "trials",
                "redrawn", "max rel err", "tolerance", "status");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s %7zu %8zu %14.3e %10.0e  %s\n", static_cast<int>(width), r.name.c_str(),
                  r.trials, r.redrawn, r.max_rel_error, r.tolerance, r.passed() ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  std::uint64_t id = 0;
  for (const auto& check : checks()) {
    ++id;
    const bool penalty_path = check.name.find("second order") != std::string::npos;
    std::vector<std::pair<std::string, bool>> variants{{check.name, false}};
    if (check.second_order) variants.emplace_back(check.name + " (second order)", true);
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const auto& [name, hessian] = variants[vi];
      if (!opts.filter.empty() && name.find(opts.filter) == std::string::npos) continue;
      Rng rng = Rng::stream(opts.seed, id * 2 + vi);
      GradcheckRow row{name, opts.trials, 0, 0.0,
                       hessian || penalty_path ? opts.second_order_tolerance : opts.first_order_tolerance};
      for (std::size_t t = 0; t < opts.trials; ++t) {
        Trial trial;
        for (std::size_t attempt = 0; attempt < kMaxRedraws; ++attempt) {
          Case c = check.make(rng);
          trial = hessian ? second_order_trial(c, rng, opts.step) : first_order_trial(c, rng, opts.step);
          if (trial.smooth) break;
          ++row.redrawn;
        }
        const double err = trial.smooth ? trial.error : INFINITY;
        row.max_rel_error = std::max(row.max_rel_error, std::isnan(err) ? INFINITY : err);
      }
      report.rows.push_back(std::move(row));
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace specmix
