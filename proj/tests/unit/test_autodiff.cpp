#include <doctest.h>

#include <cmath>

#include "teb/nets.hpp"

using namespace teb;

namespace {

Tensor<double> randn(Shape s, CounterRng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (Index i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// Scalar readout with random weights so every output element matters.
Var<double> readout(const Var<double>& y, std::uint64_t seed) {
  CounterRng rng(seed, 99);
  return sum(y * Var<double>(randn(y.shape(), rng)));
}

void expect_pass(const GradCheckReport& r, const char* what) {
  CHECK_MESSAGE(r.pass, what << ": worst " << r.worst << " rel " << r.max_rel_error);
}

}  // namespace

TEST_CASE("elementwise operations") {
  CounterRng rng(1);
  Var<double> a(randn({3, 4}, rng)), b(randn({3, 4}, rng));
  expect_pass(grad_check([&] { return readout(a + b, 1); }, {a, b}), "add");
  expect_pass(grad_check([&] { return readout(a - b, 2); }, {a, b}), "sub");
  expect_pass(grad_check([&] { return readout(a * b, 3); }, {a, b}), "mul");
  expect_pass(grad_check([&] { return readout(2.5 * a, 4); }, {a}), "scale");
  expect_pass(grad_check([&] { return readout(add_const(a, 1.5), 5); }, {a}), "add_const");
  expect_pass(grad_check([&] { return readout(relu(a), 6); }, {a}), "relu");
  expect_pass(grad_check([&] { return readout(tanh(a), 7); }, {a}), "tanh");
  expect_pass(grad_check([&] { return readout(sigmoid(a), 8); }, {a}), "sigmoid");
  expect_pass(grad_check([&] { return readout(exp(a), 9); }, {a}), "exp");
  expect_pass(grad_check([&] { return readout(square(a), 10); }, {a}), "square");
  expect_pass(grad_check([&] { return readout(clamp(a, -0.5, 0.5), 11); }, {a}), "clamp");
}

TEST_CASE("reductions and linear algebra") {
  CounterRng rng(2);
  Var<double> a(randn({4, 3}, rng)), w(randn({3, 5}, rng)), bias(randn({5}, rng));
  expect_pass(grad_check([&] { return sum(a); }, {a}), "sum");
  expect_pass(grad_check([&] { return mean(square(a)); }, {a}), "mean");
  expect_pass(grad_check([&] { return readout(sum_rows(a), 1); }, {a}), "sum_rows");
  expect_pass(grad_check([&] { return readout(matmul(a, w), 2); }, {a, w}), "matmul");
  expect_pass(grad_check([&] { return readout(add_bias(matmul(a, w), bias), 3); }, {a, w, bias}), "add_bias");
  expect_pass(grad_check([&] { return readout(transpose(a), 4); }, {a}), "transpose");
}

TEST_CASE("shape operations") {
  CounterRng rng(3);
  Var<double> a(randn({4, 6}, rng)), b(randn({4, 2}, rng));
  expect_pass(grad_check([&] { return readout(reshape(a, {2, 12}), 1); }, {a}), "reshape");
  expect_pass(grad_check([&] { return readout(slice_cols(a, 1, 3), 2); }, {a}), "slice_cols");
  expect_pass(grad_check([&] { return readout(concat_cols<double>({a, b}), 3); }, {a, b}), "concat_cols");
  expect_pass(grad_check([&] { return readout(gather_rows(a, {3, 0, 3, 1}), 4); }, {a}), "gather_rows");
}

TEST_CASE("matmul values match Eigen") {
  CounterRng rng(4);
  const Tensor<double> a = randn({3, 4}, rng), w = randn({4, 2}, rng);
  const Tensor<double> y = matmul(Var<double>(a), Var<double>(w)).value();
  const RowMat<double> ref = a.mat() * w.mat();
  CHECK((y.mat() - ref).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("convolution against a direct loop") {
  CounterRng rng(5);
  const Tensor<double> x = randn({2, 3, 5, 4}, rng), w = randn({2, 3, 3, 3}, rng), b = randn({2}, rng);
  for (PadMode mode : {PadMode::zeros, PadMode::reflect}) {
    const Tensor<double> y = conv2d(Var<double>(x), Var<double>(w), Var<double>(b), mode).value();
    REQUIRE(y.shape() == Shape{2, 2, 5, 4});
    auto src = [&](Index n, Index c, Index i, Index j) -> double {
      if (mode == PadMode::zeros) {
        if (i < 0 || i >= 5 || j < 0 || j >= 4) return 0.0;
      } else {
        i = i < 0 ? -i : (i >= 5 ? 2 * 4 - i : i);
        j = j < 0 ? -j : (j >= 4 ? 2 * 3 - j : j);
      }
      return x[((n * 3 + c) * 5 + i) * 4 + j];
    };
    double worst = 0;
    for (Index n = 0; n < 2; ++n)
      for (Index o = 0; o < 2; ++o)
        for (Index i = 0; i < 5; ++i)
          for (Index j = 0; j < 4; ++j) {
            double acc = b[o];
            for (Index c = 0; c < 3; ++c)
              for (Index u = 0; u < 3; ++u)
                for (Index v = 0; v < 3; ++v) acc += w[((o * 3 + c) * 3 + u) * 3 + v] * src(n, c, i + u - 1, j + v - 1);
            worst = std::max(worst, std::abs(acc - y[((n * 2 + o) * 5 + i) * 4 + j]));
          }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("spatial operations pass gradient checks") {
  CounterRng rng(6);
  Var<double> x(randn({2, 2, 5, 5}, rng)), w(randn({3, 2, 3, 3}, rng)), b(randn({3}, rng));
  expect_pass(grad_check([&] { return readout(conv2d(x, w, b, PadMode::zeros), 1); }, {x, w, b}), "conv2d zeros");
  expect_pass(grad_check([&] { return readout(conv2d(x, w, b, PadMode::reflect), 2); }, {x, w, b}),
              "conv2d reflect");
  Var<double> w5(randn({1, 2, 5, 5}, rng)), b1(randn({1}, rng));
  expect_pass(grad_check([&] { return readout(conv2d(x, w5, b1, PadMode::reflect), 3); }, {x, w5, b1}),
              "conv2d 5x5 reflect");
  Var<double> y(randn({2, 3, 6, 4}, rng));
  expect_pass(grad_check([&] { return readout(maxpool2(y), 4); }, {y}), "maxpool2");
  Var<double> z(randn({2, 3}, rng)), pos(randn({3, 4, 4}, rng));
  expect_pass(grad_check([&] { return readout(spatial_broadcast_add(z, pos), 5); }, {z, pos}),
              "spatial_broadcast_add");
}

TEST_CASE("gradients accumulate across shared uses") {
  Var<double> a(Tensor<double>::from({1, 1}, {3.0}), true);
  const Var<double> y = sum(a * a + a);
  backward(y);
  CHECK(a.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("no-grad mode records nothing") {
  Var<double> a(Tensor<double>::from({1, 1}, {2.0}), true);
  Var<double> y;
  {
    NoGradGuard g;
    y = sum(a * a);
  }
  CHECK(y.value()[0] == doctest::Approx(4.0));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check flags a kink") {
  Var<double> a(Tensor<double>::from({1, 1}, {0.0}));
  const GradCheckReport r = grad_check([&] { return sum(relu(a)); }, {a});
  CHECK(r.nondifferentiable);
  CHECK_FALSE(r.pass);
}
