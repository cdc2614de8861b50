#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "../support/op_cases.hpp"
#include "doctest.h"
#include "xmar/adam.hpp"
#include "xmar/checkpoint.hpp"
#include "xmar/kernels.hpp"
#include "xmar/ops.hpp"
#include "xmar/runtime.hpp"

using namespace xmar;
using xmar::testing::random_tensor;

TEST_CASE("matmul with identity returns the other operand") {
  std::mt19937_64 rng(1);
  Tape<float> tape;
  Tensor<float> eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0f;
  auto a = random_tensor<float>({3, 3}, rng);
  auto out = ops::matmul(tape.constant(eye), tape.constant(a));
  CHECK(out.value() == a);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tape<float> tape;
  auto out = ops::softmax(tape.constant(Tensor<float>(Shape{4}, 0.0f)));
  for (float v : out.value().data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("tanh of zeros is zeros") {
  Tape<float> tape;
  auto out = ops::tanh(tape.constant(Tensor<float>(Shape{2, 3}, 0.0f)));
  for (float v : out.value().data()) CHECK(v == 0.0f);
}

TEST_CASE("shape errors name the op and both shapes") {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>(Shape{2, 3}));
  auto b = tape.constant(Tensor<float>(Shape{4, 2}));
  try {
    ops::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(a, b), ShapeError);
  CHECK_THROWS_AS(ops::clip(a, 1.0f, 1.0f), ShapeError);
}

TEST_CASE("backward of sum of squares") {
  Tape<float> tape;
  auto w = tape.leaf(Tensor<float>(Shape{2}, std::vector<float>{1, 2}), true);
  auto loss = ops::sum(ops::mul(w, w));
  tape.backward(loss);
  CHECK(tape.grad(w)[0] == 2.0f);
  CHECK(tape.grad(w)[1] == 4.0f);
}

TEST_CASE("cross-entropy gradient of uniform logits is softmax minus one-hot") {
  const int k = 5;
  Tape<double> tape;
  auto z = tape.leaf(Tensor<double>(Shape{1, k}, 0.0), true);
  const std::vector<int> label{2};
  auto loss = ops::cross_entropy<double>(z, label);
  CHECK(loss.value().item() == doctest::Approx(std::log(double(k))));
  tape.backward(loss);
  for (int j = 0; j < k; ++j) {
    CHECK(tape.grad(z)[j] == doctest::Approx(1.0 / k - (j == 2 ? 1.0 : 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects non-scalar losses and double use") {
  Tape<float> tape;
  auto w = tape.leaf(Tensor<float>(Shape{3}, 1.0f), true);
  auto y = ops::tanh(w);
  CHECK_THROWS_AS(tape.backward(y), TapeError);
  auto loss = ops::sum(y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), TapeError);
  CHECK_THROWS_AS(tape.leaf(Tensor<float>(Shape{1}), true), TapeError);
  tape.reset();
  CHECK(tape.size() == 0);
}

TEST_CASE("requires_grad leaves get zero gradients when unreachable") {
  Tape<float> tape;
  auto used = tape.leaf(Tensor<float>(Shape{2}, 1.0f), true);
  auto unused = tape.leaf(Tensor<float>(Shape{3, 2}, 1.0f), true);
  tape.backward(ops::sum(used));
  CHECK(tape.grad(unused).shape() == Shape{3, 2});
  for (float g : tape.grad(unused).data()) CHECK(g == 0.0f);
}

TEST_CASE_TEMPLATE("every primitive matches central finite differences", S, float, double) {
  for (auto& c : xmar::testing::primitive_op_cases<S>()) {
    CAPTURE(c.name);
    const double err = xmar::testing::gradcheck<S>(c.inputs, c.build, xmar::testing::fd_step<S>());
    CHECK(err < xmar::testing::fd_tolerance<S>());
  }
}

TEST_CASE("random conv2d + tanh + dense composite matches finite differences in 64-bit") {
  std::mt19937_64 rng(2024);
  std::vector<Tensor<double>> inputs{
      random_tensor<double>({2, 5, 5, 2}, rng), random_tensor<double>({3, 3, 2, 3}, rng),
      random_tensor<double>({3}, rng), random_tensor<double>({27, 4}, rng), random_tensor<double>({4}, rng)};
  auto build = [](Tape<double>&, const std::vector<Var<double>>& v) {
    auto h = ops::tanh(ops::conv2d(v[0], v[1], v[2]));
    auto flat = ops::reshape(h, Shape{2, 27});
    auto logits = ops::dense(flat, v[3], v[4]);
    const std::vector<int> labels{1, 3};
    return ops::cross_entropy<double>(logits, labels);
  };
  CHECK(xmar::testing::gradcheck<double>(inputs, build, 1e-3) < 1e-5);
}

TEST_CASE("clip is bounded and is the identity inside the range") {
  std::mt19937_64 rng(3);
  Tape<float> tape;
  auto x = random_tensor<float>({200}, rng, -3.0, 3.0);
  auto y = ops::clip(tape.constant(x), -1.0f, 1.0f);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(y.value()[i] >= -1.0f);
    CHECK(y.value()[i] <= 1.0f);
    if (x[i] >= -1.0f && x[i] <= 1.0f) CHECK(y.value()[i] == x[i]);
  }
}

TEST_CASE("softmax sums to one and ignores constant shifts") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Tape<double> tape;
    auto x = random_tensor<double>({3, 7}, rng, -5.0, 5.0);
    auto shifted = x;
    for (auto& v : shifted.data()) v += 3.25;
    auto p = ops::softmax(tape.constant(x), 1);
    auto q = ops::softmax(tape.constant(shifted), 1);
    for (int r = 0; r < 3; ++r) {
      double s = 0;
      for (int j = 0; j < 7; ++j) {
        s += p.value()[r * 7 + j];
        CHECK(std::abs(p.value()[r * 7 + j] - q.value()[r * 7 + j]) < 1e-6);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("max_over_indices routes gradient to the lowest index on ties") {
  Tape<float> tape;
  auto x = tape.leaf(Tensor<float>(Shape{1, 4}, std::vector<float>{2, 7, 7, 1}), true);
  auto y = ops::max_over_indices(x, {{2, 1}, {0, 3}});
  CHECK(y.value()[0] == 7.0f);
  CHECK(y.value()[1] == 2.0f);
  tape.backward(ops::sum(y));
  CHECK(tape.grad(x)[1] == 1.0f);
  CHECK(tape.grad(x)[2] == 0.0f);
  CHECK(tape.grad(x)[0] == 1.0f);
}

TEST_CASE("forward values are bit-identical across repeated runs") {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tape<float> tape;
    auto x = tape.constant(random_tensor<float>({2, 8, 8, 3}, rng));
    auto f = tape.constant(random_tensor<float>({3, 3, 3, 4}, rng));
    auto y = ops::maxpool2d(ops::relu(ops::conv2d<float>(x, f, std::nullopt)), 2);
    return y.value();
  };
  CHECK(run() == run());
}

TEST_CASE("checked mode rejects non-finite values") {
  runtime::set_checked(true);
  Tape<float> tape;
  CHECK_THROWS_AS(tape.leaf(Tensor<float>(Shape{1}, std::numeric_limits<float>::quiet_NaN())), NumericError);
  std::vector<Tensor<float>*> params;
  Tensor<float> p(Shape{1}, 0.0f), g(Shape{1}, std::numeric_limits<float>::infinity());
  AdamState<float> state({&p});
  CHECK_THROWS_AS(adam_step<float>({&p}, {&g}, state, 0.1), NumericError);
  runtime::set_checked(false);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor<float> p(Shape{3}, std::vector<float>{0.5f, -1.0f, 2.0f});
  const Tensor<float> before = p;
  Tensor<float> g(Shape{3}, 0.0f);
  AdamState<float> state({&p});
  for (int i = 0; i < 5; ++i) adam_step<float>({&p}, {&g}, state, 0.01);
  CHECK(p == before);
  CHECK(state.step == 5);
}

TEST_CASE("adam: first step with constant gradient moves by about lr") {
  // m1 = (1-b1) g, v1 = (1-b2) g^2; bias correction gives m/v^(1/2) = g/|g|,
  // so the step is lr * g / (|g| + eps_hat).
  const double lr = 0.001, g0 = 0.37;
  Tensor<double> p(Shape{1}, 1.0);
  Tensor<double> g(Shape{1}, g0);
  AdamState<double> state({&p});
  adam_step<double>({&p}, {&g}, state, lr);
  const double expected = 1.0 - lr * g0 / (g0 + 1e-8);
  CHECK(p[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(1.0 - p[0] == doctest::Approx(lr).epsilon(1e-6));
}

TEST_CASE("adam: equal gradient magnitudes give equal update magnitudes") {
  Tensor<float> a(Shape{1}, 0.0f), b(Shape{1}, 0.0f);
  Tensor<float> ga(Shape{1}, 0.8f), gb(Shape{1}, -0.8f);
  AdamState<float> state({&a, &b});
  for (int i = 0; i < 3; ++i) adam_step<float>({&a, &b}, {&ga, &gb}, state, 0.05);
  CHECK(std::abs(a[0]) == std::abs(b[0]));
  CHECK_THROWS(adam_step<float>({&a}, {&ga}, state, 0.05));
}

TEST_CASE("OpenMP kernels agree bit-exactly with the serial reference") {
  std::mt19937_64 rng(5);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const kernels::Index m = 37, n = 29, k = 41;
      auto a = random_tensor<float>({m, k}, rng);
      auto b = random_tensor<float>({k, n}, rng);
      Tensor<float> c1(Shape{m, n}, 0.5f), c2 = c1;
      kernels::serial::gemm(ta, tb, m, n, k, a.data().data(), b.data().data(), c1.data().data(), true);
      for (int threads : {1, 2, 4}) {
        runtime::set_threads(threads);
        Tensor<float> c3 = c2;
        kernels::omp::gemm(ta, tb, m, n, k, a.data().data(), b.data().data(), c3.data().data(), true);
        CHECK(c3 == c1);
      }
    }
  }
  kernels::Conv2dGeometry g{3, 9, 7, 2, 3, 3, 4, 2, 1, 1, 5, 4};
  auto x = random_tensor<float>({3, 9, 7, 2}, rng);
  std::vector<float> col1(g.rows() * g.patch_len()), col2 = col1;
  kernels::serial::im2col(g, x.data().data(), col1.data());
  std::vector<float> dx1(x.size()), dx2(x.size());
  kernels::serial::col2im(g, col1.data(), dx1.data());
  for (int threads : {1, 3}) {
    runtime::set_threads(threads);
    kernels::omp::im2col(g, x.data().data(), col2.data());
    CHECK(col2 == col1);
    std::fill(dx2.begin(), dx2.end(), 0.0f);
    kernels::omp::col2im(g, col2.data(), dx2.data());
    CHECK(dx2 == dx1);
    std::vector<float> y1(3 * 4 * 3 * 2), y2 = y1;
    std::vector<kernels::Index> a1(y1.size()), a2(y1.size());
    kernels::serial::maxpool<float>(3, 9, 7, 2, 2, x.data().data(), y1.data(), a1.data());
    kernels::omp::maxpool<float>(3, 9, 7, 2, 2, x.data().data(), y2.data(), a2.data());
    CHECK(y1 == y2);
    CHECK(a1 == a2);
  }
  runtime::set_threads(0);
}

TEST_CASE("checkpoint container layout and round trip") {
  Checkpoint ck;
  ck.meta["seed"] = 7;
  ck.add("theta", Tensor<float>(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, -6.5f}));
  ck.add("bias", Tensor<float>(Shape{2}, std::vector<float>{0.25f, -0.0f}));
  auto bytes = encode_checkpoint(ck);
  REQUIRE(bytes.size() > 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "XMAR");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(bytes[8 + i]) << (8 * i);
  CHECK(bytes.size() == 16 + len + 8 * 4);
  // Last float is -0.0f: sign bit only, little-endian.
  CHECK(bytes[bytes.size() - 1] == 0x80);
  CHECK(bytes[bytes.size() - 4] == 0x00);
  auto back = decode_checkpoint(bytes);
  CHECK(back.meta["seed"] == 7);
  CHECK(back.array("theta") == ck.array("theta"));
  CHECK(back.arrays[0].first == "theta");
  CHECK(encode_checkpoint(back) == bytes);
  bytes[0] = 'Y';
  CHECK_THROWS_AS(decode_checkpoint(bytes), ParseError);
}
