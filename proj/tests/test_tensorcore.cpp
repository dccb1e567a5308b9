#include <doctest.h>

#include <cmath>
#include <random>

#include "distillwsd/error.hpp"
#include "distillwsd/nn.hpp"
#include "distillwsd/ops.hpp"
#include "distillwsd/optim.hpp"
#include "support/oracles.hpp"

using namespace distillwsd;

namespace {

Parameter<double> param(const std::string& name, Tensor<double> v) { return Parameter<double>(name, std::move(v)); }

}  // namespace

TEST_CASE("conv2d matches the loop oracle and the forced examples") {
  std::mt19937_64 rng(3);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      auto x = oracle::random_tensor({2, 3, 7, 6}, rng);
      auto w = oracle::random_tensor({4, 3, 3, 3}, rng);
      auto b = oracle::random_tensor({4}, rng);
      Tape<double> tape;
      auto y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), stride, pad);
      CHECK(max_abs_diff(y.value(), oracle::conv2d(x, w, b, stride, pad)) < 1e-12);
    }
  }

  Tape<double> tape;
  auto x = oracle::random_tensor({1, 1, 5, 5}, rng);
  auto id = conv2d(tape.constant(x), tape.constant(Tensor<double>({1, 1, 1, 1}, 1.0)),
                   tape.constant(Tensor<double>({1})), 1, 0);
  CHECK(max_abs_diff(id.value(), x) == 0.0);

  auto ones = conv2d(tape.constant(Tensor<double>({1, 1, 4, 4}, 1.0)), tape.constant(Tensor<double>({1, 1, 3, 3}, 1.0)),
                     tape.constant(Tensor<double>({1})), 1, 0);
  CHECK(ones.shape() == Shape{1, 1, 2, 2});
  for (double v : ones.value().values()) CHECK(v == 9.0);

  CHECK_THROWS_AS(conv2d(tape.constant(Tensor<double>({1, 2, 4, 4})), tape.constant(Tensor<double>({1, 3, 3, 3})),
                         tape.constant(Tensor<double>({1})), 1, 0),
                  DimensionError);
  Tensor<double> bad({1, 1, 3, 3});
  bad[4] = std::nan("");
  CHECK_THROWS_AS(conv2d(tape.constant(bad), tape.constant(Tensor<double>({1, 1, 1, 1}, 1.0)),
                         tape.constant(Tensor<double>({1})), 1, 0),
                  NumericError);
}

TEST_CASE("linear and max_pool2d match their oracles") {
  std::mt19937_64 rng(5);
  auto x = oracle::random_tensor({3, 6}, rng);
  auto w = oracle::random_tensor({4, 6}, rng);
  auto b = oracle::random_tensor({4}, rng);
  Tape<double> tape;
  CHECK(max_abs_diff(linear(tape.constant(x), tape.constant(w), tape.constant(b)).value(), oracle::linear(x, w, b)) <
        1e-12);

  Tensor<double> eye({6, 6});
  for (std::size_t i = 0; i < 6; ++i) eye.at({i, i}) = 1;
  CHECK(max_abs_diff(linear(tape.constant(x), tape.constant(eye), tape.constant(Tensor<double>({6}))).value(), x) == 0);
  auto zero = linear(tape.constant(Tensor<double>({2, 6})), tape.constant(w), tape.constant(b));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t k = 0; k < 4; ++k) CHECK(zero.value().at({n, k}) == b[k]);
  CHECK_THROWS_AS(linear(tape.constant(x), tape.constant(Tensor<double>({4, 5})), tape.constant(b)), DimensionError);

  auto m = oracle::random_tensor({2, 3, 8, 6}, rng);
  CHECK(max_abs_diff(max_pool2d(tape.constant(m), 2, 2).value(), oracle::max_pool(m, 2, 2)) == 0);
  CHECK(max_abs_diff(max_pool2d(tape.constant(m), 1, 1).value(), m) == 0);
  auto small = max_pool2d(tape.constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2);
  CHECK(small.value().item() == 4);
  CHECK_THROWS_AS(max_pool2d(tape.constant(m), 9, 1), DimensionError);
}

TEST_CASE("max_pool2d sends the gradient of a tie to the lowest flat index") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 1, 2, 2}, 7.0), true);
  tape.backward(sum(max_pool2d(x, 2, 2)));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("tempered softmax and sigmoid examples") {
  Tape<double> tape;
  auto m = tape.constant(Tensor<double>({2, 2}, {2, 0, 0, 2}));
  auto t = tape.constant(Tensor<double>({2}, {2, 1}));
  auto s = tempered_softmax(m, t, SoftmaxAxis::Class);
  const auto want = oracle::tempered_softmax({2, 0, 0, 2}, 2, 2, {2, 1}, true);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(s.value()[i] - want[i]) < 1e-12);
  CHECK(std::abs(s.value()[0] - 1 / (1 + std::exp(-1.0))) < 1e-12);
  CHECK(std::abs(s.value()[3] - 1 / (1 + std::exp(-2.0))) < 1e-12);

  // Nonzero uniform logits stay uniform only under equal temperatures.
  auto zeros = tape.constant(Tensor<double>({3, 4}, 0.0));
  auto uc = tempered_softmax(zeros, tape.constant(Tensor<double>({4}, {1, 2, 3, 4})), SoftmaxAxis::Class);
  for (double v : uc.value().values()) CHECK(std::abs(v - 0.25) < 1e-12);
  auto uniform = tape.constant(Tensor<double>({3, 4}, 0.7));
  auto up = tempered_softmax(uniform, tape.constant(Tensor<double>({3}, 2.5)), SoftmaxAxis::Proposal);
  for (double v : up.value().values()) CHECK(std::abs(v - 1.0 / 3) < 1e-12);

  auto sig = tempered_sigmoid(tape.constant(Tensor<double>({3}, {0, 0, std::log(3.0)})),
                              tape.constant(Tensor<double>({3}, {0.3, 5, 1})));
  CHECK(sig.value()[0] == 0.5);
  CHECK(sig.value()[1] == 0.5);
  CHECK(std::abs(sig.value()[2] - 0.75) < 1e-15);

  CHECK_THROWS_AS(tempered_softmax(m, tape.constant(Tensor<double>({2}, {1, 0})), SoftmaxAxis::Class), DomainError);
  CHECK_THROWS_AS(tempered_sigmoid(m, tape.constant(Tensor<double>({2}, {-1, 1}))), DomainError);
}

TEST_CASE("tempered softmax normalizes and flattens monotonically") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = oracle::random_tensor({5, 7}, rng, -50, 50);
    Tape<double> tape;
    auto m = tape.constant(x);
    auto t = oracle::random_tensor({7}, rng, 0.05, 4);
    auto sc = tempered_softmax(m, tape.constant(Tensor<double>({7}, 1.3)), SoftmaxAxis::Class);
    for (std::size_t r = 0; r < 5; ++r) {
      double row = 0;
      for (std::size_t k = 0; k < 7; ++k) row += sc.value().at({r, k});
      CHECK(std::abs(row - 1) < 1e-12);
    }
    auto sp = tempered_softmax(m, tape.constant(Tensor<double>({5}, 0.4)), SoftmaxAxis::Proposal);
    for (std::size_t k = 0; k < 7; ++k) {
      double col = 0;
      for (std::size_t r = 0; r < 5; ++r) col += sp.value().at({r, k});
      CHECK(std::abs(col - 1) < 1e-12);
    }
    auto ref = tempered_softmax(m, tape.constant(t), SoftmaxAxis::Class);
    for (double v : ref.value().values()) CHECK((v >= 0 && v <= 1));

    Tensor<float> xf = x.cast<float>();
    Tape<float> ft;
    auto sf = tempered_softmax(ft.constant(xf), ft.constant(Tensor<float>({7}, 0.9f)), SoftmaxAxis::Class);
    for (std::size_t r = 0; r < 5; ++r) {
      float row = 0;
      for (std::size_t k = 0; k < 7; ++k) row += sf.value().at({r, k});
      CHECK(std::abs(row - 1.0f) < 1e-6f);
    }
  }

  Tape<double> tape;
  auto m = tape.constant(Tensor<double>({1, 4}, {0.3, -1.0, 2.0, 0.5}));
  double previous = 2;
  for (double temp : {0.1, 0.5, 1.0, 2.0, 5.0, 50.0}) {
    auto s = tempered_softmax(m, tape.constant(Tensor<double>({4}, temp)), SoftmaxAxis::Class);
    double top = 0;
    for (double v : s.value().values()) top = std::max(top, v);
    CHECK(top < previous);
    previous = top;
  }
}

TEST_CASE("unit temperatures reduce to the standard forms") {
  std::mt19937_64 rng(17);
  auto x = oracle::random_tensor({3, 6, 5}, rng, -20, 20);
  Tape<double> tape;
  auto m = tape.constant(x);
  CHECK(max_abs_diff(tempered_softmax(m, tape.constant(Tensor<double>({5}, 1.0)), SoftmaxAxis::Class).value(),
                     softmax(m, 2).value()) < 1e-12);
  CHECK(max_abs_diff(tempered_softmax(m, tape.constant(Tensor<double>({6}, 1.0)), SoftmaxAxis::Proposal).value(),
                     softmax(m, 1).value()) < 1e-12);
  CHECK(max_abs_diff(tempered_sigmoid(m, tape.constant(Tensor<double>({5}, 1.0))).value(), sigmoid(m).value()) < 1e-12);
}

TEST_CASE("temperature scaling node matches the closed-form derivative") {
  Tape<double> tape;
  auto m = tape.leaf(Tensor<double>({1}, 2.0), true);
  auto t = tape.leaf(Tensor<double>({1}, 1.0), true);
  tape.backward(sum(divide_by_temperature(m, t, 0)));
  CHECK(m.grad()[0] == 1.0);
  CHECK(t.grad()[0] == -2.0);

  std::mt19937_64 rng(23);
  auto x = oracle::random_tensor({4, 5}, rng, -3, 3);
  auto temps = oracle::random_tensor({5}, rng, 0.2, 3);
  auto w = oracle::random_tensor({4, 5}, rng);
  Tape<double> tape2;
  auto xv = tape2.leaf(x, true);
  auto tv = tape2.leaf(temps, true);
  tape2.backward(sum(mul(divide_by_temperature(xv, tv, 1), tape2.constant(w))));
  for (std::size_t k = 0; k < 5; ++k) {
    double closed = 0;
    for (std::size_t r = 0; r < 4; ++r) closed += w.at({r, k}) * (-x.at({r, k}) / (temps[k] * temps[k]));
    CHECK(std::abs(tv.grad()[k] - closed) < 1e-12);
    for (std::size_t r = 0; r < 4; ++r) CHECK(std::abs(xv.grad().at({r, k}) - w.at({r, k}) / temps[k]) < 1e-12);
  }
}

TEST_CASE("finite differences agree with every differentiable op") {
  std::mt19937_64 rng(29);
  auto x = param("x", oracle::random_tensor({2, 2, 6, 6}, rng));
  auto w = param("w", oracle::random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
  auto b = param("b", oracle::random_tensor({3}, rng));
  auto fw = param("fw", oracle::random_tensor({4, 27}, rng, -0.3, 0.3));
  auto fb = param("fb", oracle::random_tensor({4}, rng));
  auto tc = param("tc", oracle::random_tensor({4}, rng, 0.5, 2));
  auto ts = param("ts", oracle::random_tensor({4}, rng, 0.5, 2));
  Tensor<double> y({2, 4}, {1, 0, 1, 0, 0, 1, 1, 0});

  auto loss = [&](bool backward) {
    Tape<double> tape;
    auto h = conv2d(tape.parameter(x), tape.parameter(w), tape.parameter(b), 1, 1);
    auto pooled = max_pool2d(relu(h), 2, 2);
    auto flat = reshape(pooled, {2, 27});
    auto logits = linear(flat, tape.parameter(fw), tape.parameter(fb));
    auto soft = tempered_softmax(reshape(logits, {1, 2, 4}), tape.parameter(tc), SoftmaxAxis::Class);
    auto sig = tempered_sigmoid(logits, tape.parameter(ts));
    auto l = add(binary_cross_entropy(sig, y, 1e-6), scale(sum(mul(soft, soft)), 0.5));
    if (backward) tape.backward(l);
    return l.value().item();
  };
  CHECK(oracle::gradient_check({&x, &w, &b, &fw, &fb, &tc, &ts}, loss).rel < 1e-5);
}

TEST_CASE("roi_max_pool is differentiable through windows and weights") {
  std::mt19937_64 rng(31);
  auto f = param("f", oracle::random_tensor({2, 3, 5, 5}, rng));
  const std::vector<RoiWindow> windows{{0, 0, 5, 0, 5, 0.7}, {1, 1, 4, 0, 3, 0.2}, {0, 2, 3, 2, 3, 1.0}};
  auto loss = [&](bool backward) {
    Tape<double> tape;
    auto pooled = roi_max_pool(tape.parameter(f), std::span<const RoiWindow>(windows), 2, 2);
    auto l = sum(mul(pooled, pooled));
    if (backward) tape.backward(l);
    return l.value().item();
  };
  CHECK(oracle::gradient_check({&f}, loss).rel < 1e-5);
}

TEST_CASE("tape contracts") {
  Tape<double> tape;
  auto v = tape.leaf(Tensor<double>({2}, {1, 2}), true);
  CHECK_THROWS_AS(tape.backward(v), ContractError);
  auto s = sum(v);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), StateError);
  tape.reset();
  CHECK(tape.size() == 0);

  Parameter<double> frozen("frozen", Tensor<double>({2}, {1, 2}), true);
  Parameter<double> live("live", Tensor<double>({2}, {3, 4}));
  Tape<double> t2;
  t2.backward(sum(mul(t2.parameter(frozen), t2.parameter(live))));
  CHECK(frozen.grad[0] == 0.0);
  CHECK(frozen.grad[1] == 0.0);
  CHECK(live.grad[0] == 1.0);

  Sgd<double> opt({0.1, 0.0, 0.0});
  opt.add_group({&frozen, &live});
  opt.step();
  CHECK(frozen.value[0] == 1.0);
  CHECK(live.value[0] == doctest::Approx(3.0 - 0.1));
}

TEST_CASE("binary cross-entropy at one half is K ln 2 per image") {
  Tape<double> tape;
  auto p = tape.constant(Tensor<double>({3, 4}, 0.5));
  Tensor<double> y({3, 4}, {1, 0, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1});
  CHECK(std::abs(binary_cross_entropy(p, y, 1e-6).value().item() - 4 * std::log(2.0)) < 1e-12);
}

TEST_CASE("temperature group is clamped at its floor") {
  Parameter<double> t("t", Tensor<double>({2}, {0.06, 1.0}));
  t.grad = Tensor<double>({2}, {10.0, 0.0});
  Sgd<double> opt({0.1, 0.0, 0.0});
  opt.add_group({&t}, false, 0.05);
  opt.step();
  CHECK(t.value[0] == 0.05);
  CHECK(t.value[1] == 1.0);
}
