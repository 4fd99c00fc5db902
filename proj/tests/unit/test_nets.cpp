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

Var<double> readout(const Var<double>& y, std::uint64_t seed) {
  CounterRng rng(seed, 77);
  return sum(y * Var<double>(randn(y.shape(), rng)));
}

// Gradient check restricted to parameters of a component; relu kinks are vanishingly rare
// with random inputs, so a failure here is a real mismatch.
template <typename F>
void check_params(const ParamList<double>& params, F&& f, const char* what) {
  std::vector<Var<double>> inputs;
  for (const auto& [n, v] : params) inputs.push_back(v);
  const GradCheckReport r = grad_check(f, inputs, 1e-6, 1e-4, 24);
  CHECK_MESSAGE(r.pass, what << ": worst " << r.worst << " rel " << r.max_rel_error);
}

}  // namespace

TEST_CASE("RK4 integrates a rotation field to fourth order") {
  // dh/dt = A h with A = [[0, -w], [w, 0]]; exact solution is a rotation by w t.
  const double w = 2.0;
  const Var<double> a(Tensor<double>::from({2, 2}, {0.0, w, -w, 0.0}));  // row-vector convention: h A
  auto field = [&](const Var<double>& h) { return matmul(h, a); };
  const Var<double> h0(Tensor<double>::from({1, 2}, {1.0, 0.0}));
  auto err_at = [&](double dt, int steps) {
    const auto states = rk4_trajectory<double>(field, h0, dt, steps);
    const double t = dt * steps;
    const auto& h = states.back().value();
    return std::hypot(h[0] - std::cos(w * t), h[1] - std::sin(w * t));
  };
  const double e1 = err_at(0.05, 20), e2 = err_at(0.025, 40);
  CHECK(e1 < 1e-5);
  // Halving the step should cut the error by about 2^4.
  CHECK(e1 / e2 == doctest::Approx(16.0).epsilon(0.15));
  CHECK(rk4_trajectory<double>(field, h0, 0.05, 20).size() == 21);
}

TEST_CASE("combiner starts at the prior mean with tiny variance") {
  CounterRng rng(1);
  const Combiner<double> comb(4, 5, 6, 3, true, rng);
  const Var<double> ctx(randn({2, 4}, rng)), hx(randn({2, 5}, rng));
  const DiagGaussian<double> prior{Var<double>(randn({2, 3}, rng)), Var<double>(randn({2, 3}, rng))};
  const DiagGaussian<double> post = comb(ctx, hx, prior);
  for (Index i = 0; i < 6; ++i) {
    CHECK(post.mean.value()[i] == doctest::Approx(prior.mean.value()[i]));
    CHECK(post.log_var.value()[i] == doctest::Approx(std::log(1e-7)));
  }
  CHECK_THROWS_AS(comb(ctx, hx, DiagGaussian<double>::standard(2, 4)), ContractError);
}

TEST_CASE("border distance grid") {
  const Tensor<double> g = border_distance_grid<double>(3, 5);
  REQUIRE(g.shape() == Shape{4, 3, 5});
  // Pixel (1, 4): top 0.5, bottom 0.5, left 1, right 0.
  const Index p = 1 * 5 + 4;
  CHECK(g[0 * 15 + p] == doctest::Approx(0.5));
  CHECK(g[1 * 15 + p] == doctest::Approx(0.5));
  CHECK(g[2 * 15 + p] == doctest::Approx(1.0));
  CHECK(g[3 * 15 + p] == doctest::Approx(0.0));
}

TEST_CASE("image decoder preserves the target size") {
  CounterRng rng(2);
  const ImageDecoder<double> dec(4, {3, 7, 6}, {5, 5}, {5, 3}, 3, rng);
  const Var<double> z(randn({2, 4}, rng));
  CHECK(dec(z).shape() == Shape{2, 3, 7, 6});
  ParamList<double> p;
  dec.collect(p, "dec");
  check_params(p, [&] { return readout(dec(z), 1); }, "image decoder");
  Var<double> zz = z;
  const GradCheckReport r = grad_check([&] { return readout(dec(zz), 2); }, {zz}, 1e-6, 1e-4);
  CHECK_MESSAGE(r.pass, r.worst << " " << r.max_rel_error);
}

TEST_CASE("ODE decoder pins the first element and differentiates through RK4") {
  CounterRng rng(3);
  const OdeDecoder<double> dec(3, 8, 0.05, rng);
  Var<double> z(randn({2, 3}, rng));
  const Tensor<double> last = Tensor<double>::from({2, 1}, {0.25, -0.5});
  const Tensor<double> y = dec(z, 6, last).value();
  REQUIRE(y.shape() == Shape{2, 7});
  CHECK(y[0] == 0.25);
  CHECK(y[7] == -0.5);
  ParamList<double> p;
  dec.collect(p, "ode");
  check_params(p, [&] { return readout(dec(z, 6, last), 3); }, "ode decoder");
  const GradCheckReport r = grad_check([&] { return readout(dec(z, 6, last), 4); }, {z});
  CHECK_MESSAGE(r.pass, r.worst << " " << r.max_rel_error);
}

TEST_CASE("vector sequence decoder") {
  CounterRng rng(4);
  const VectorSequenceDecoder<double> dec(3, 8, 5, rng);
  const Var<double> z(randn({2, 3}, rng));
  const Tensor<double> y = dec(z, Tensor<double>::from({2, 1}, {1.0, 2.0})).value();
  REQUIRE(y.shape() == Shape{2, 6});
  CHECK(y[0] == 1.0);
  CHECK(y[6] == 2.0);
}

TEST_CASE("sequence encoders over each featurizer kind") {
  CounterRng rng(5);
  SUBCASE("small conv over images") {
    const SequenceEncoder<double> enc({StepFeaturizer<double>(EncoderKind::small_conv, {2, 6, 6}, 0, {3, 4}, 5, rng)},
                                      4, rng);
    const Tensor<double> x = randn({2, 3, 2, 6, 6}, rng);
    CHECK(enc({&x}).shape() == Shape{2, 4});
    ParamList<double> p;
    enc.collect(p, "enc");
    check_params(p, [&] { return readout(enc({&x}), 1); }, "conv encoder");
  }
  SUBCASE("embedding table over class ids") {
    const SequenceEncoder<double> enc({StepFeaturizer<double>(EncoderKind::embedding_table, {1}, 4, {}, 3, rng)}, 4,
                                      rng);
    const Tensor<double> ids = Tensor<double>::from({2, 2, 1}, {0, 3, 2, 2});
    CHECK(enc({&ids}).shape() == Shape{2, 4});
    ParamList<double> p;
    enc.collect(p, "enc");
    check_params(p, [&] { return readout(enc({&ids}), 2); }, "embedding encoder");
    const Tensor<double> bad = Tensor<double>::from({1, 1, 1}, {4});
    CHECK_THROWS_AS(enc({&bad}), ContractError);
  }
  SUBCASE("two identity streams concatenated") {
    const SequenceEncoder<double> enc({StepFeaturizer<double>(EncoderKind::identity, {3}, 0, {}, 0, rng),
                                       StepFeaturizer<double>(EncoderKind::identity, {1}, 0, {}, 0, rng)},
                                      5, rng);
    const Tensor<double> a = randn({2, 4, 3}, rng), b = randn({2, 4, 1}, rng);
    CHECK(enc({&a, &b}).shape() == Shape{2, 5});
    ParamList<double> p;
    enc.collect(p, "enc");
    check_params(p, [&] { return readout(enc({&a, &b}), 3); }, "gru encoder");
    const Tensor<double> shorter = randn({2, 3, 1}, rng);
    CHECK_THROWS_AS(enc({&a, &shorter}), ContractError);
  }
}

TEST_CASE("prior head splits into mean, log-variance and context") {
  CounterRng rng(6);
  const PriorHead<double> head(4, 3, rng);
  const auto [prior, ctx] = head(Var<double>(randn({2, 4}, rng)));
  CHECK(prior.mean.shape() == Shape{2, 3});
  CHECK(prior.log_var.shape() == Shape{2, 3});
  CHECK(ctx.shape() == Shape{2, 3});
  CHECK_THROWS_AS(head(Var<double>(randn({2, 5}, rng))), ContractError);
}
