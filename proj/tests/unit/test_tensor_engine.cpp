#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "specmix/autograd.hpp"
#include "specmix/gradcheck.hpp"
#include "specmix/losses.hpp"
#include "specmix/model.hpp"
#include "specmix/rng.hpp"

namespace specmix {
namespace {

using ag::Var;

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Direct sliding-window convolution: taps outer, input channels inner, zeros outside the signal.
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, bool same) {
  const std::size_t b = x.dim(0), len = x.dim(1), cin = x.dim(2);
  const std::size_t k = w.dim(0), cout = w.dim(2);
  std::size_t out_len, pad;
  if (same) {
    out_len = (len + stride - 1) / stride;
    const std::size_t total = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>((out_len - 1) * stride + k) -
                                                              static_cast<std::ptrdiff_t>(len));
    pad = total / 2;
  } else {
    out_len = (len - k) / stride + 1;
    pad = 0;
  }
  Tensor<T> y({b, out_len, cout});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t o = 0; o < out_len; ++o)
      for (std::size_t co = 0; co < cout; ++co) {
        T acc = T(0);
        for (std::size_t t = 0; t < k; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(o * stride + t) - static_cast<std::ptrdiff_t>(pad);
          if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(len)) continue;
          for (std::size_t ci = 0; ci < cin; ++ci)
            acc += x[(n * len + static_cast<std::size_t>(pos)) * cin + ci] * w[(t * cin + ci) * cout + co];
        }
        y[(n * out_len + o) * cout + co] = acc;
      }
  return y;
}

TEST(Conv1d, ValidWindowOfOnes) {
  auto x = Var<float>::constant(Tensor<float>({1, 3, 1}, {1, 2, 3}));
  auto w = Var<float>::constant(Tensor<float>({2, 1, 1}, {1, 1}));
  auto y = ag::conv1d(x, w, 1, ag::Padding::valid);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(y.value()[0], 3.0f);
  EXPECT_EQ(y.value()[1], 5.0f);
}

TEST(Conv1d, UnitKernelIsIdentity) {
  Rng rng(1);
  auto x = random_tensor<float>(rng, {2, 17, 1});
  auto y = ag::conv1d(Var<float>::constant(x), Var<float>::constant(Tensor<float>({1, 1, 1}, {1})), 1);
  EXPECT_EQ(y.value(), x);
}

struct ConvCase {
  std::size_t len, cin, cout, kernel, stride;
  bool same;
};

class Conv1dOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(Conv1dOracle, MatchesNaiveLoopsExactly) {
  const auto c = GetParam();
  Rng rng(c.len * 31 + c.kernel);
  auto x = random_tensor<float>(rng, {3, c.len, c.cin});
  auto w = random_tensor<float>(rng, {c.kernel, c.cin, c.cout});
  auto y = ag::conv1d(Var<float>::constant(x), Var<float>::constant(w), c.stride,
                      c.same ? ag::Padding::same : ag::Padding::valid);
  EXPECT_EQ(y.value(), conv_oracle(x, w, c.stride, c.same));
}

INSTANTIATE_TEST_SUITE_P(Shapes, Conv1dOracle,
                         ::testing::Values(ConvCase{200, 1, 10, 21, 1, true}, ConvCase{40, 10, 10, 7, 1, true},
                                           ConvCase{40, 30, 10, 3, 1, true}, ConvCase{200, 1, 5, 21, 5, true},
                                           ConvCase{40, 5, 10, 5, 2, true}, ConvCase{20, 10, 20, 5, 2, true},
                                           ConvCase{23, 3, 4, 4, 3, true}, ConvCase{30, 2, 3, 5, 1, false},
                                           ConvCase{31, 2, 3, 6, 4, false}));

TEST(Softmax, EqualLogitsGiveUniform) {
  auto y = ag::softmax_last(Var<float>::constant(Tensor<float>({4}, std::vector<float>(4, 2.5f))));
  for (float v : y.value().values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Softmax, LargeLogitsStayFinite) {
  auto y = ag::softmax_last(Var<double>::constant(Tensor<double>({3}, {1000.0, 999.0, -1000.0})));
  EXPECT_TRUE(y.value().all_finite());
  EXPECT_NEAR(y.value()[0] + y.value()[1] + y.value()[2], 1.0, 1e-15);
}

TEST(Backward, SumOfSquares) {
  auto w = Var<double>::leaf(Tensor<double>({2}, {1, 2}));
  auto g = ag::grad(ag::sum(ag::mul(w, w)), {w})[0];
  EXPECT_EQ(g.value()[0], 2.0);
  EXPECT_EQ(g.value()[1], 4.0);
}

TEST(Backward, FanOutAccumulates) {
  Rng rng(3);
  auto w = Var<double>::leaf(random_tensor<double>(rng, {5}));
  auto g_branch = [](const Var<double>& v) { return ag::sum(ag::exp(v)); };
  auto h_branch = [](const Var<double>& v) { return ag::sum(ag::mul(ag::sigmoid(v), v)); };
  auto both = ag::grad(ag::add(g_branch(w), h_branch(w)), {w})[0];
  auto gg = ag::grad(g_branch(w), {w})[0];
  auto gh = ag::grad(h_branch(w), {w})[0];
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(both.value()[i], gg.value()[i] + gh.value()[i], 1e-14);
}

TEST(Backward, NonScalarOutputIsRejected) {
  auto w = Var<double>::leaf(Tensor<double>({2}, {1, 2}));
  EXPECT_THROW(ag::grad(ag::mul(w, w), {w}), ShapeError);
}

TEST(Backward, SadOfIdenticalSpectraHasFiniteGradients) {
  auto x = Var<double>::leaf(Tensor<double>({2, 4}, {0.1, 0.2, 0.3, 0.4, 1, 0.5, 0.25, 0.125}));
  auto loss = sad_loss(x, x);
  auto g = ag::grad(loss, {x})[0];
  EXPECT_TRUE(g.value().all_finite());
}

TEST(Primitives, ShapeMismatchNamesPrimitiveAndShapes) {
  auto a = Var<float>::constant(Tensor<float>({2, 3}));
  auto b = Var<float>::constant(Tensor<float>({4, 5}));
  try {
    ag::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
  }
}

TEST(Primitives, ArccosClampsOutOfRangeInput) {
  auto x = Var<double>::leaf(Tensor<double>({3}, {1.5, -2.0, 1.0}));
  auto y = ag::arccos(x);
  EXPECT_TRUE(y.value().all_finite());
  EXPECT_NEAR(y.value()[0], std::acos(1.0 - 1e-7), 1e-12);
  EXPECT_NEAR(y.value()[1], std::acos(-1.0 + 1e-7), 1e-12);
  auto g = ag::grad(ag::sum(y), {x})[0];
  EXPECT_TRUE(g.value().all_finite());
}

TEST(Primitives, BroadcastingAddAndReduceBack) {
  auto a = Var<double>::leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto b = Var<double>::leaf(Tensor<double>({3}, {10, 20, 30}));
  auto y = ag::add(a, b);
  EXPECT_EQ(y.value()[5], 36.0);
  auto gb = ag::grad(ag::sum(y), {b})[0];
  for (double v : gb.value().values()) EXPECT_EQ(v, 2.0);
}

TEST(Primitives, BatchNormTrainNormalisesEachChannel) {
  Rng rng(9);
  auto x = Var<double>::constant(random_tensor<double>(rng, {4, 6, 3}, -3, 5));
  auto r = ag::batch_norm_train(x, Var<double>::constant(Tensor<double>({3}, 1.0)),
                                Var<double>::constant(Tensor<double>({3})), 1e-5);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < 24; ++i) {
      const double v = r.out.value()[i * 3 + c];
      s += v;
      ss += v * v;
    }
    EXPECT_NEAR(s / 24, 0.0, 1e-12);
    EXPECT_NEAR(ss / 24, 1.0, 1e-3);
  }
}

TEST(InputGradientNorm, UnitLinearCritic) {
  const double inv = 1.0 / std::sqrt(3.0);
  auto w = Var<double>::constant(Tensor<double>({3, 1}, {inv, inv, inv}));
  CriticFn<double> f = [&](const Var<double>& x) { return ag::reshape(ag::matmul(x, w), {x.shape()[0]}); };
  auto n = input_gradient_norm(f, Var<double>::constant(Tensor<double>({2, 3}, {1, 2, 3, -4, 5, 6})));
  EXPECT_NEAR(n.value()[0], 1.0, 1e-12);
  EXPECT_NEAR(n.value()[1], 1.0, 1e-12);
}

TEST(InputGradientNorm, ThreeTimesSum) {
  CriticFn<double> f = [](const Var<double>& x) { return ag::scale(ag::sum_to(x, {1, 1}), 3.0); };
  auto n = input_gradient_norm(f, Var<double>::constant(Tensor<double>({1, 4}, {0.3, -1, 2, 7})));
  EXPECT_NEAR(n.item(), 6.0, 1e-12);
}

TEST(InputGradientNorm, FirstOrderOnlyPrimitiveIsRefused) {
  CriticFn<double> f = [](const Var<double>& x) {
    auto r = ag::batch_norm_train(ag::reshape(x, {x.shape()[0], x.shape()[1], 1}),
                                  Var<double>::leaf(Tensor<double>({1}, 1.0)), Var<double>::leaf(Tensor<double>({1})),
                                  1e-5);
    return ag::reshape(ag::sum_to(ag::mul(r.out, r.out), {x.shape()[0], 1, 1}), {x.shape()[0]});
  };
  Rng rng(2);
  try {
    input_gradient_norm(f, Var<double>::constant(random_tensor<double>(rng, {3, 4})));
    FAIL() << "expected NotTwiceDifferentiable";
  } catch (const NotTwiceDifferentiable& e) {
    EXPECT_NE(std::string(e.what()).find("not twice-differentiable"), std::string::npos);
  }
}

TEST(InputGradientNorm, FullCriticMatchesFiniteDifferences) {
  ModelDims dims{40, 3, 8, 4, 3};
  auto model = init_params<double>(11, dims);
  Rng rng(5);
  auto x = random_tensor<double>(rng, {1, 40}, 0, 1);
  auto n = input_gradient_norm<double>([&](const Var<double>& v) { return critic_score(model, v); },
                                       Var<double>::constant(x));
  const double h = 1e-6;
  double sq = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double d = (critic_score(model, Var<double>::constant(xp)).item() -
                      critic_score(model, Var<double>::constant(xm)).item()) /
                     (2 * h);
    sq += d * d;
  }
  EXPECT_LT(relative_error(n.item(), std::sqrt(sq)), 1e-3);
}

TEST(Tensor, ShapeAndDataMustAgree) { EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError); }

TEST(Tensor, ValidityCheckFindsNonFinite) {
  Tensor<float> t({3}, {1, 2, 3});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  t[1] = std::numeric_limits<float>::infinity();
  EXPECT_FALSE(t.all_finite());
}

TEST(Determinism, RepeatedEvaluationIsBitIdentical) {
  ModelDims dims{60, 4, 16, 8, 4};
  auto model = init_params<float>(4, dims);
  Rng rng(8);
  auto x = Var<float>::constant(random_tensor<float>(rng, {16, 60}, 0, 1));
  auto a = mixture_fractions(model, encode(model, x, Mode::infer)).fractions.value();
  auto b = mixture_fractions(model, encode(model, x, Mode::infer)).fractions.value();
  EXPECT_EQ(a, b);
}

TEST(Gradcheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-3);
}

TEST(Gradcheck, PrimitivesPassWithHundredTrials) {
  GradcheckOptions opts;
  opts.filter = "softmax";
  const auto report = run_gradcheck(opts);
  ASSERT_FALSE(report.rows.empty());
  for (const auto& row : report.rows) {
    EXPECT_GE(row.trials, 100u) << row.name;
    EXPECT_TRUE(row.passed()) << row.name << " " << row.max_rel_error;
  }
}

}  // namespace
}  // namespace specmix
