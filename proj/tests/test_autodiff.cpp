#include <catch2/catch_amalgamated.hpp>

#include "hoflow/core/ops.hpp"
#include "test_util.hpp"

using namespace hoflow;
using hoflow::testutil::grad_check;
using hoflow::testutil::random_tensor;

TEST_CASE("d(x*x)/dx at x=3 is 6") {
  Tensor x = Tensor::scalar(3.0f);
  x.track();
  GradTape tape;
  Tensor y = mul(x, x);
  tape.backward(y);
  REQUIRE_THAT(x.grad()[0], Catch::Matchers::WithinAbs(6.0, 1e-6));
}

TEST_CASE("stop-gradient is identity forward, zero backward") {
  Tensor x = Tensor::scalar(2.0f);
  Tensor y = Tensor::scalar(5.0f);
  x.track();
  y.track();
  GradTape tape;
  Tensor z = mul(stop_gradient(x), y);
  REQUIRE(z.item() == 10.0f);
  tape.backward(z);
  REQUIRE(x.grad()[0] == 0.0f);
  REQUIRE(y.grad()[0] == 2.0f);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x({2, 2}, 1.0f);
  x.track();
  GradTape tape;
  Tensor y = mul(x, x);
  REQUIRE_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("two-layer MLP gradient matches finite differences") {
  Rng rng(42);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor w1 = random_tensor({5, 7}, rng, 0.5f);
  Tensor b1 = random_tensor({7}, rng, 0.1f);
  Tensor w2 = random_tensor({7, 2}, rng, 0.5f);
  auto f = [&]() { return mean_all(square(matmul(gelu(add(matmul(x, w1), b1)), w2))); };
  REQUIRE(grad_check(f, {x, w1, b1, w2}) < 1e-3);
}

TEST_CASE("per-op finite difference checks") {
  Rng rng(7);
  auto weighted = [&](const Tensor& y, Rng& r) {
    // random linear functional to produce a scalar loss
    Tensor w = random_tensor(y.shape(), r);
    return sum_all(mul(y, w));
  };

  SECTION("elementwise binary") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = add_scalar(random_tensor({3, 4}, rng, 0.3f), 2.0f);  // keep away from 0 for div
    Rng wr(100);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(add(a, b), r); }, {a, b}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(mul(a, b), r); }, {a, b}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(div(a, b), r); }, {a, b}) < 1e-3);
  }
  SECTION("broadcast bias") {
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Rng wr(101);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(add(a, b), r); }, {a, b}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(mul(a, b), r); }, {a, b}) < 1e-3);
  }
  SECTION("unary") {
    Tensor a = random_tensor({2, 6}, rng);
    Rng wr(102);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(silu(a), r); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(gelu(a), r); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(tanh_t(a), r); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(sigmoid(a), r); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(exp_t(a), r); }, {a}) < 1e-3);
  }
  SECTION("softmax and layer norm") {
    Tensor a = random_tensor({3, 5}, rng);
    Tensor g = add_scalar(random_tensor({5}, rng, 0.2f), 1.0f);
    Tensor b = random_tensor({5}, rng, 0.2f);
    Rng wr(103);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(softmax_lastdim(a), r); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(layer_norm(a, g, b), r); }, {a, g, b}) <
            1e-3);
  }
  SECTION("matmul variants") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    Tensor ba = random_tensor({2, 3, 4}, rng);
    Tensor bb = random_tensor({2, 4, 2}, rng);
    Rng wr(104);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(matmul(a, b), r); }, {a, b}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(matmul(ba, bb), r); }, {ba, bb}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(matmul(ba, b), r); }, {ba, b}) < 1e-3);
  }
  SECTION("conv1d and upsample") {
    Tensor x = random_tensor({3, 10}, rng);
    Tensor w = random_tensor({2, 3, 3}, rng, 0.5f);
    Tensor b = random_tensor({2}, rng, 0.2f);
    Rng wr(105);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(conv1d(x, w, b, 2, 1), r); },
                       {x, w, b}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(upsample2x_linear(x), r); }, {x}) < 1e-3);
  }
  SECTION("shape ops") {
    Tensor a = random_tensor({2, 3, 4}, rng);
    Rng wr(106);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(permute(a, {2, 0, 1}), r); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(slice(a, 2, 1, 2), r); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(reshape(a, {6, 4}), r); }, {a}) < 1e-3);
    Tensor b2 = random_tensor({2, 3, 2}, rng);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(concat({a, b2}, 2), r); }, {a, b2}) <
            1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(gather_rows(a, {1, 0, 1}), r); }, {a}) <
            1e-3);
  }
  SECTION("reductions") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor a3 = random_tensor({2, 5, 3}, rng);
    Rng wr(107);
    REQUIRE(grad_check([&] { return mean_all(square(a)); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(sum_lastdim(a), r); }, {a}) < 1e-3);
    REQUIRE(grad_check([&] { Rng r = wr; return weighted(reduce_max(a3, 1), r); }, {a3}) < 1e-3);
  }
}

TEST_CASE("no recording without an active tape") {
  Tensor x = Tensor::scalar(2.0f);
  x.track();
  Tensor y = mul(x, x);  // no tape in scope
  REQUIRE(y.item() == 4.0f);
  REQUIRE_FALSE(y.tracked());
}
