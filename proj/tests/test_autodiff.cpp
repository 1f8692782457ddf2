#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "uld/autodiff.hpp"
#include "uld/losses.hpp"

using namespace uld;
using namespace uld::ad;

namespace {

Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = normal(rng);
  return t;
}

// Contracts an arbitrary-shaped output against fixed random weights so every
// output coordinate enters the checked scalar.
Var weighted_sum(Tape<double>& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto w = random_tensor(rng, tape.shape(y));
  return tape.sum(tape.mul(y, tape.leaf(w)));
}

}  // namespace

TEST(Primitives, MatmulIdentity) {
  Tape<double> tape;
  std::mt19937_64 rng(51);
  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const auto x = random_tensor(rng, {3, 4});
  const Var y = tape.matmul(tape.leaf(eye), tape.leaf(x));
  EXPECT_EQ(tape.value(y).data, x.data);
}

TEST(Primitives, SoftmaxOfZerosIsUniform) {
  Tape<double> tape;
  const Var y = tape.softmax_rows(tape.leaf(Tensor<double>({2, 4})));
  for (double v : tape.value(y).data) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Primitives, GeluAtZero) {
  EXPECT_EQ(Tape<double>::gelu_value(0.0), 0.0);
  EXPECT_EQ(Tape<float>::gelu_value(0.0f), 0.0f);
}

TEST(Primitives, ShapeMismatchesThrow) {
  Tape<double> tape;
  const Var a = tape.leaf(Tensor<double>({2, 3}));
  const Var b = tape.leaf(Tensor<double>({2, 3}));
  EXPECT_THROW(tape.matmul(a, b), ParameterError);
  EXPECT_THROW(tape.mul(a, tape.leaf(Tensor<double>({3, 2}))), ParameterError);
  EXPECT_THROW(tape.add(a, tape.leaf(Tensor<double>({2}))), ParameterError);
  EXPECT_THROW(tape.reshape(a, {4}), ParameterError);
  EXPECT_THROW(tape.causal_mask_add(a), ParameterError);
}

TEST(Primitives, CausalMaskBlocksFuture) {
  Tape<double> tape;
  const Var s = tape.causal_mask_add(tape.leaf(Tensor<double>({3, 3})));
  const Var p = tape.softmax_rows(s);
  const auto& v = tape.value(p);
  EXPECT_DOUBLE_EQ(v.at(0, 0), 1.0);
  EXPECT_EQ(v.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(v.at(1, 0), 0.5);
  EXPECT_EQ(v.at(1, 2), 0.0);
  EXPECT_NEAR(v.at(2, 2), 1.0 / 3.0, 1e-15);
}

TEST(Backward, SquareAtThree) {
  Tape<double> tape;
  const Var x = tape.leaf(Tensor<double>({1}, std::vector<double>{3.0}), true);
  tape.backward(tape.mul(x, x));
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 6.0);
}

TEST(Backward, NonScalarLossThrows) {
  Tape<double> tape;
  const Var x = tape.leaf(Tensor<double>({2}), true);
  EXPECT_THROW(tape.backward(x), ParameterError);
}

TEST(Backward, SoftmaxCrossEntropyClosedForm) {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = fixtures::random_logits(rng, 7);
    const std::size_t gold = static_cast<std::size_t>(trial % 7);
    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>({1, 7}, z), true);
    const Var loss = tape.scale(tape.log(tape.pick(tape.softmax_rows(x), gold)), -1.0);
    tape.backward(loss);
    const auto p = softmax_temp(LogitVector(z), 1.0);
    for (std::size_t k = 0; k < 7; ++k) {
      ASSERT_NEAR(tape.grad(x)[k], p[k] - (k == gold ? 1.0 : 0.0), 1e-14);
    }
  }
}

TEST(Backward, ThreeLayerCompositionMatchesFiniteDifferences) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w1 = random_tensor(rng, {5, 8}, 0.5);
    const auto w2 = random_tensor(rng, {8, 8}, 0.5);
    const auto w3 = random_tensor(rng, {8, 3}, 0.5);
    const auto x = random_tensor(rng, {4, 5});
    const auto r = grad_check(
        [&](Tape<double>& t, Var in) {
          Var h = t.gelu(t.matmul(in, t.leaf(w1)));
          h = t.gelu(t.matmul(h, t.leaf(w2)));
          h = t.softmax_rows(t.matmul(h, t.leaf(w3)));
          return t.sum(t.log(h));
        },
        x);
    ASSERT_LT(r.max_rel_error, 1e-4);
  }
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(54);
  const auto x = random_tensor(rng, {10});
  const auto r = grad_check([](Tape<double>& t, Var in) { return t.sum(t.mul(in, in)); }, x, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, CrossEntropyThroughSoftmax) {
  std::mt19937_64 rng(55);
  const auto x = random_tensor(rng, {1, 9});
  const auto r = grad_check(
      [](Tape<double>& t, Var in) { return t.scale(t.log(t.pick(t.softmax_rows(in), 4)), -1.0); }, x);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, UldSingleStepThroughExternalLoss) {
  std::mt19937_64 rng(56);
  StepLossInput in;
  in.teacher_logits = LogitVector(fixtures::random_logits(rng, 11));
  in.gold_token = 2;
  in.lambda = 1.5;
  const auto x = random_tensor(rng, {6}, 2.0);
  auto eval = [&](std::span<const double> z) {
    StepLossInput s = in;
    s.student_logits = LogitVector(std::vector<double>(z.begin(), z.end()));
    return evaluate_step(LossMode::ce_uld, s);
  };
  const auto r = grad_check(
      [&](Tape<double>& t, Var v) {
        const auto e = eval(t.value(v).data);
        return t.external_loss(v, e.loss.total, e.grad);
      },
      x);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, EveryPrimitiveOnRandomShapes) {
  std::mt19937_64 rng(57);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const auto b = random_tensor(rng, {k, n});
    const auto bt = random_tensor(rng, {n, k});
    const auto other = random_tensor(rng, {m, k});
    const auto row = random_tensor(rng, {k});
    const auto gain = random_tensor(rng, {k});
    const auto sq = random_tensor(rng, {m, m});
    const auto x = random_tensor(rng, {m, k});
    const std::uint64_t seed = rng();
    std::vector<std::size_t> ids(dim(rng));
    for (auto& id : ids) id = rng() % m;
    const std::size_t begin = rng() % k;
    const std::size_t count = 1 + rng() % (k - begin);

    const std::vector<std::function<Var(Tape<double>&, Var)>> cases = {
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.matmul(v, t.leaf(b)), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.matmul(t.leaf(bt), t.reshape(v, {k, m})), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.matmul_nt(v, t.leaf(bt)), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.matmul_nt(t.leaf(bt), v), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.add(v, t.leaf(other)), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.mul(v, t.leaf(other)), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.scale(v, -0.7), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.gather_rows(v, ids), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.softmax_rows(v), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.rms_norm(v, t.leaf(gain)), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.gelu(v), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.reshape(v, {k, m}), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.slice_cols(v, begin, count), seed); },
        [&](Tape<double>& t, Var v) { return weighted_sum(t, t.concat_cols({v, t.leaf(other), v}), seed); },
        [&](Tape<double>& t, Var v) { return t.sum(t.log(t.softmax_rows(v))); },
    };
    for (const auto& f : cases) worst = std::max(worst, grad_check(f, x).max_rel_error);

    // Broadcast bias and norm gain as the differentiated inputs.
    worst = std::max(worst, grad_check([&](Tape<double>& t, Var v) {
      return weighted_sum(t, t.add(t.leaf(x), v), seed);
    }, row).max_rel_error);
    worst = std::max(worst, grad_check([&](Tape<double>& t, Var v) {
      return weighted_sum(t, t.rms_norm(t.leaf(x), v), seed);
    }, gain).max_rel_error);
    worst = std::max(worst, grad_check([&](Tape<double>& t, Var v) {
      return weighted_sum(t, t.softmax_rows(t.causal_mask_add(v)), seed);
    }, sq).max_rel_error);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Backward, DeterministicAndLinear) {
  std::mt19937_64 rng(58);
  const auto w = random_tensor(rng, {6, 6});
  const auto x0 = random_tensor(rng, {3, 6});
  auto f = [&](Tape<double>& t, Var x) { return t.sum(t.gelu(t.matmul(x, t.leaf(w)))); };
  auto g = [&](Tape<double>& t, Var x) { return t.sum(t.softmax_rows(t.mul(x, x))); };
  auto grad_of = [&](auto&& fn) {
    Tape<double> t;
    const Var x = t.leaf(x0, true);
    t.backward(fn(t, x));
    return t.grad(x);
  };
  EXPECT_EQ(grad_of(f), grad_of(f));
  const auto gf = grad_of(f);
  const auto gg = grad_of(g);
  const auto gsum = grad_of([&](Tape<double>& t, Var x) {
    const Var a = f(t, x);
    const Var b = g(t, x);
    return t.sum(t.concat_cols({t.reshape(a, {1, 1}), t.reshape(b, {1, 1})}));
  });
  for (std::size_t i = 0; i < gf.size(); ++i) EXPECT_NEAR(gsum[i], gf[i] + gg[i], 1e-12);
}
