#include <string>
#include <random>

#include "doctest.h"
#include "earfa/autograd.hpp"
#include "support/gradcheck.hpp"
#include "support/reference.hpp"

using namespace earfa;
using TD = Tensor<double>;
using VD = Var<double>;
namespace k = earfa::kernels;

namespace {

constexpr double kOpTol = 1e-4;

// Values at least `gap` away from zero, for kinked ops.
TD away_from_zero(Shape s, std::mt19937_64& rng, double gap = 0.05) {
  TD t = ref::randn(s, rng);
  for (double& v : t.mutable_data()) v = v >= 0 ? v + gap : v - gap;
  return t;
}

void expect_grad(const char* name, const gc::Builder& f, std::vector<TD> inputs) {
  const gc::Report r = gc::check(f, std::move(inputs));
  const std::string what = std::string(name) + ": max rel err " + std::to_string(r.max_rel);
  CHECK_MESSAGE(r.coords >= 100, what);
  CHECK_MESSAGE(r.max_rel < kOpTol, what);
}

}  // namespace

TEST_CASE("simple closed-form gradients") {
  std::mt19937_64 rng(1);
  const TD x0 = ref::randn(Shape{2, 3, 4, 4}, rng);
  Tape<double> tape;
  VD x = tape.leaf(x0);
  tape.backward(ag::sum(x));
  for (double g : x.grad().data()) CHECK(g == 1.0);

  Tape<double> tape2;
  VD y = tape2.leaf(x0);
  tape2.backward(ag::sum(ag::mul(y, y)));
  for (std::size_t i = 0; i < x0.numel(); ++i) CHECK(y.grad().data()[i] == doctest::Approx(2 * x0.data()[i]));
}

TEST_CASE("non-participating leaves get zero gradients") {
  Tape<double> tape;
  VD a = tape.leaf(TD(Shape{1, 1, 2, 2}, 1.0));
  VD unused = tape.leaf(TD(Shape{1, 1, 2, 2}, 3.0));
  tape.backward(ag::sum(a));
  const TD g = unused.grad();
  for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("backward usage errors") {
  Tape<double> tape;
  VD x = tape.leaf(TD(Shape{1, 1, 2, 2}, 1.0));
  CHECK_THROWS_AS(tape.backward(ag::sigmoid(x)), UsageError);  // not a scalar
  const VD detached = VD::constant(TD::scalar(1.0));
  CHECK_THROWS_AS(tape.backward(detached), UsageError);
  Tape<double> other;
  VD y = other.leaf(TD(Shape{1, 1, 2, 2}, 1.0));
  CHECK_THROWS_AS(ag::add(x, y), UsageError);
}

TEST_CASE("a no-grad tape records nothing") {
  Tape<double> tape(false);
  VD x = tape.leaf(TD(Shape{1, 1, 2, 2}, 1.0));
  VD y = ag::sigmoid(ag::add(x, x));
  CHECK(tape.size() == 0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite differences: convolutions") {
  std::mt19937_64 rng(2);
  auto conv = [](k::ConvParams p) {
    return [p](Tape<double>&, const std::vector<VD>& v) { return ag::conv2d(v[0], v[1], &v[2], p); };
  };
  expect_grad("conv 3x3", conv({1, 1, 1, 1}),
              {ref::randn(Shape{2, 3, 6, 7}, rng), ref::randn(Shape{4, 3, 3, 3}, rng), ref::randn(Shape{1, 4, 1, 1}, rng)});
  expect_grad("depthwise dilated", conv({1, 6, 3, 5}),
              {ref::randn(Shape{1, 5, 9, 8}, rng), ref::randn(Shape{5, 1, 5, 5}, rng), ref::randn(Shape{1, 5, 1, 1}, rng)});
  expect_grad("grouped stride 2", conv({2, 1, 1, 2}),
              {ref::randn(Shape{2, 4, 7, 7}, rng), ref::randn(Shape{6, 2, 3, 3}, rng), ref::randn(Shape{1, 6, 1, 1}, rng)});
  expect_grad("pointwise", conv({}),
              {ref::randn(Shape{2, 6, 4, 4}, rng), ref::randn(Shape{3, 6, 1, 1}, rng), ref::randn(Shape{1, 3, 1, 1}, rng)});
}

TEST_CASE("finite differences: normalization and rearrangements") {
  std::mt19937_64 rng(3);
  expect_grad("layer_norm",
              [](Tape<double>&, const std::vector<VD>& v) { return ag::layer_norm(v[0], v[1], v[2], 1e-6); },
              {ref::randn(Shape{2, 6, 3, 4}, rng), ref::randn(Shape{1, 6, 1, 1}, rng), ref::randn(Shape{1, 6, 1, 1}, rng)});
  expect_grad("channel_shift", [](Tape<double>&, const std::vector<VD>& v) { return ag::channel_shift(v[0], 1); },
              {ref::randn(Shape{2, 7, 5, 5}, rng)});
  expect_grad("pixel_shuffle", [](Tape<double>&, const std::vector<VD>& v) { return ag::pixel_shuffle(v[0], 2); },
              {ref::randn(Shape{2, 8, 3, 4}, rng)});
  expect_grad("split_channels",
              [](Tape<double>&, const std::vector<VD>& v) {
                auto [a, b] = ag::split_channels(v[0], 2);
                return ag::mul(a, b);
              },
              {ref::randn(Shape{2, 4, 3, 3}, rng)});
}

TEST_CASE("finite differences: elementwise ops and reductions") {
  std::mt19937_64 rng(4);
  expect_grad("sigmoid", [](Tape<double>&, const std::vector<VD>& v) { return ag::sigmoid(v[0]); },
              {ref::randn(Shape{2, 3, 4, 5}, rng, 2.0)});
  expect_grad("relu", [](Tape<double>&, const std::vector<VD>& v) { return ag::relu(v[0]); },
              {away_from_zero(Shape{2, 3, 4, 5}, rng)});
  expect_grad("add broadcast", [](Tape<double>&, const std::vector<VD>& v) { return ag::add(v[0], v[1]); },
              {ref::randn(Shape{2, 3, 4, 5}, rng), ref::randn(Shape{1, 3, 1, 1}, rng)});
  expect_grad("mul broadcast", [](Tape<double>&, const std::vector<VD>& v) { return ag::mul(v[0], v[1]); },
              {ref::randn(Shape{2, 3, 4, 5}, rng), ref::randn(Shape{2, 3, 1, 1}, rng)});
  expect_grad("channel_var", [](Tape<double>&, const std::vector<VD>& v) { return ag::channel_var(v[0]); },
              {ref::randn(Shape{2, 4, 5, 6}, rng)});
  expect_grad("channel_mean", [](Tape<double>&, const std::vector<VD>& v) { return ag::channel_mean(v[0]); },
              {ref::randn(Shape{2, 4, 5, 6}, rng)});
  expect_grad("gaussian_entropy",
              [](Tape<double>&, const std::vector<VD>& v) { return ag::gaussian_entropy(v[0], 1e-5); },
              {ref::uniform(Shape{2, 8, 1, 1}, rng, 0.1, 3.0)});
  expect_grad("mean", [](Tape<double>&, const std::vector<VD>& v) { return ag::mean(v[0]); },
              {ref::randn(Shape{2, 3, 4, 5}, rng)});
  expect_grad("sum", [](Tape<double>&, const std::vector<VD>& v) { return ag::sum(v[0]); },
              {ref::randn(Shape{2, 3, 4, 5}, rng)});
  // Pred and target kept apart so no probe crosses the kink.
  TD pred = ref::randn(Shape{2, 3, 4, 5}, rng), target = pred;
  const TD offs = away_from_zero(pred.shape(), rng, 0.01);
  for (std::size_t i = 0; i < pred.numel(); ++i) target.mutable_data()[i] += offs.data()[i];
  expect_grad("l1_loss", [](Tape<double>&, const std::vector<VD>& v) { return ag::l1_loss(v[0], v[1]); },
              {pred, target});
}

TEST_CASE("l1 loss values and subgradient") {
  Tape<double> tape;
  const TD t = TD(Shape{1, 2, 3, 3}, 0.25);
  VD same = tape.leaf(t);
  CHECK(ag::l1_loss(same, tape.constant(t)).value().item() == 0.0);
  TD shifted = t;
  for (double& v : shifted.mutable_data()) v += 0.5;
  VD p = tape.leaf(shifted);
  VD loss = ag::l1_loss(p, tape.constant(t));
  CHECK(loss.value().item() == doctest::Approx(0.5).epsilon(1e-12));
  tape.backward(loss);
  for (double g : p.grad().data()) CHECK(g == doctest::Approx(1.0 / 18));
  CHECK_THROWS_AS(ag::l1_loss(p, tape.constant(TD(Shape{1, 1, 3, 3}))), DimensionError);
}
