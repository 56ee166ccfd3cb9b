#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "specmix/losses.hpp"
#include "specmix/model.hpp"

namespace specmix {
namespace {

using ag::Var;

Var<double> rows(Shape shape, std::vector<double> v) { return Var<double>::constant(Tensor<double>(shape, v)); }

TEST(Sad, IdenticalSpectraGiveClampFloor) {
  auto x = rows({1, 3}, {0.2, 0.5, 0.9});
  EXPECT_NEAR(sad_loss(x, x).item(), std::acos(1.0 - 1e-7), 1e-9);
  EXPECT_LT(sad_loss(x, x).item(), 1e-3);
}

TEST(Sad, ScaleInvariant) {
  auto x = rows({1, 3}, {0.2, 0.5, 0.9});
  auto x2 = rows({1, 3}, {0.4, 1.0, 1.8});
  EXPECT_LT(sad_loss(x, x2).item(), 1e-3);
}

TEST(Sad, OrthogonalIsHalfPi) {
  EXPECT_NEAR(sad_loss(rows({1, 2}, {1, 0}), rows({1, 2}, {0, 1})).item(), std::numbers::pi / 2, 1e-12);
}

TEST(Sad, SymmetricNonNegativeAndBatchAveraged) {
  auto a = rows({2, 3}, {1, 2, 3, 0.5, 0.1, 0.2});
  auto b = rows({2, 3}, {3, 2, 1, 0.4, 0.4, 0.1});
  EXPECT_DOUBLE_EQ(sad_loss(a, b).item(), sad_loss(b, a).item());
  auto per = spectral_angles(a, b).value();
  EXPECT_GT(per[0], 0);
  EXPECT_GT(per[1], 0);
  EXPECT_NEAR(sad_loss(a, b).item(), 0.5 * (per[0] + per[1]), 1e-15);
}

TEST(Sad, ZeroSpectrumNamesPixel) {
  try {
    sad_loss(rows({3, 2}, {1, 1, 0, 0, 1, 2}), rows({3, 2}, {1, 1, 1, 1, 1, 1}));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("pixel 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("zero norm"), std::string::npos) << e.what();
  }
}

TEST(CriticLoss, ZeroCriticIsPenaltyOnly) {
  CriticFn<double> zero = [](const Var<double>& x) {
    return ag::scale(ag::reshape(ag::sum_to(x, {x.shape()[0], 1}), {x.shape()[0]}), 0.0);
  };
  Rng rng(1);
  auto out = critic_loss(rows({2, 3}, {1, 2, 3, 4, 5, 6}), rows({2, 3}, {0, 1, 0, 1, 0, 1}), zero, 10.0, rng);
  EXPECT_NEAR(out.loss.item(), 10.0, 1e-4);
  EXPECT_DOUBLE_EQ(out.gap, 0.0);
}

TEST(CriticLoss, UnitLinearCriticHasNoPenalty) {
  const double s = 1.0 / std::sqrt(2.0);
  auto w = Var<double>::constant(Tensor<double>({2, 1}, {s, -s}));
  CriticFn<double> f = [&](const Var<double>& x) { return ag::reshape(ag::matmul(x, w), {x.shape()[0]}); };
  auto real = rows({3, 2}, {1, 0, 2, 1, 0.5, 3});
  auto fake = rows({3, 2}, {0, 1, 1, 1, 2, 0.5});
  Rng rng(2);
  auto out = critic_loss(real, fake, f, 10.0, rng);
  const double mr = (s * 1 + s * 1 + s * (0.5 - 3)) / 3;
  const double mf = (-s + 0 + s * 1.5) / 3;
  EXPECT_NEAR(out.penalty, 0.0, 1e-10);
  EXPECT_NEAR(out.loss.item(), -(mr - mf), 1e-10);
}

TEST(CriticLoss, DefaultPenaltyScale) {
  LossWeights w;
  EXPECT_EQ(w.lambda_pq, 10.0);
  EXPECT_EQ(w.lambda_adv, 0.1);
  EXPECT_EQ(w.lambda_u, 0.1);
  EXPECT_EQ(w.lambda_r, 0.05);
  w.lambda_adv = -1;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(CriticLoss, ExplicitInterpolationMatchesRngVersion) {
  auto model = init_params<double>(3, ModelDims{40, 3, 8, 4, 2});
  CriticFn<double> f = [&](const Var<double>& x) { return critic_score(model, x); };
  Rng data(3);
  Tensor<double> xr({4, 40}), xf({4, 40});
  for (auto& v : xr.values()) v = data.uniform();
  for (auto& v : xf.values()) v = data.uniform();
  Rng a(9), b(9);
  Tensor<double> mix({4});
  for (auto& v : mix.values()) v = b.uniform();
  auto l1 = critic_loss(Var<double>::constant(xr), Var<double>::constant(xf), f, 10.0, a);
  auto l2 = critic_loss(Var<double>::constant(xr), Var<double>::constant(xf), f, 10.0, mix);
  EXPECT_EQ(l1.loss.item(), l2.loss.item());
}

TEST(GeneratorLoss, WithoutAdversaryIsSad) {
  auto x = rows({2, 3}, {1, 2, 3, 0.5, 0.1, 0.2});
  auto xh = rows({2, 3}, {1.1, 2, 2.9, 0.4, 0.2, 0.2});
  bool called = false;
  CriticFn<double> f = [&](const Var<double>& v) {
    called = true;
    return ag::reshape(ag::sum_to(v, {v.shape()[0], 1}), {v.shape()[0]});
  };
  auto g = generator_loss(x, xh, f, 0.0);
  EXPECT_EQ(g.loss.item(), sad_loss(x, xh).item());
  EXPECT_FALSE(called);
}

TEST(GeneratorLoss, PerfectReconstructionWithNullCritic) {
  auto x = rows({2, 3}, {1, 2, 3, 0.5, 0.1, 0.2});
  CriticFn<double> zero = [](const Var<double>& v) {
    return ag::scale(ag::reshape(ag::sum_to(v, {v.shape()[0], 1}), {v.shape()[0]}), 0.0);
  };
  EXPECT_LT(generator_loss(x, x, zero, 0.1).loss.item(), 1e-3);
}

TEST(GeneratorLoss, RandomBatchHasFiniteGradients) {
  const ModelDims dims{40, 3, 8, 4, 2};
  auto model = init_params<float>(4, dims);
  Rng rng(4);
  Tensor<float> x({8, 40}), e({3, 40}), eta({8, 2});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(0.05, 1));
  for (auto& v : e.values()) v = static_cast<float>(rng.uniform(0.05, 1));
  for (auto& v : eta.values()) v = static_cast<float>(rng.normal());
  auto xv = Var<float>::constant(x);
  auto y = mixture_fractions(model, encode(model, xv, Mode::train)).fractions;
  auto xh = decode(model, y, Var<float>::constant(eta), Var<float>::constant(e), DecoderOptions{});
  CriticFn<float> critic = [&](const Var<float>& v) { return critic_score(model, v); };
  auto g = generator_loss(xv, xh, critic, 0.1);
  ASSERT_TRUE(std::isfinite(g.loss.item()));
  std::vector<Var<float>> gen;
  for (auto* entry : model.params.group(kGeneratorGroups)) gen.push_back(entry->var);
  for (const auto& gr : ag::grad(g.loss, gen)) EXPECT_TRUE(gr.value().all_finite());
}

}  // namespace
}  // namespace specmix
