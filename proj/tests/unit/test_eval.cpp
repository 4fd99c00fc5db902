#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "teb/harness.hpp"
#include "teb/infoexact.hpp"
#include "teb/objectives.hpp"

using namespace teb;

namespace {

DatasetBundle needle_data() {
  TaskConfig t;
  t.kind = TaskKind::needle_haystack;
  t.distractors = 1;
  t.switch_prob = 0.5;
  t.n_train = 1400;
  t.n_val = 700;
  t.n_test = 2800;
  t.seed = 21;
  return generate_dataset(t);
}

std::shared_ptr<const ColorClassifier> shared_classifier() {
  static const DatasetBundle data = needle_data();
  static const auto clf = std::make_shared<const ColorClassifier>(data.train, data.val, 1);
  return clf;
}

ExperimentConfig sinusoid_config(ObjectiveKind kind) {
  ExperimentConfig c;
  c.task.kind = TaskKind::multi_sinusoids;
  c.task.num_points = 30;
  c.task.history = 20;
  c.task.n_train = 50;
  c.task.n_val = 30;
  c.task.n_test = 30;
  c.objective.kind = kind;
  c.objective.joint_input = kind == ObjectiveKind::ceb ? JointInput::y_only : JointInput::unified;
  c.model.latent_dim = 4;
  c.model.ode_width = 8;
  return c;
}

}  // namespace

TEST_CASE("recon_loglik equals the objective's log-likelihood term") {
  const ExperimentConfig cfg = sinusoid_config(ObjectiveKind::teb);
  const DatasetBundle data = generate_dataset(cfg.task);
  const auto model = build_model<float>(cfg, dataset_shapes(data), 2);
  const Index n = data.test.size();
  const auto l = objective_loss(*model, data.test.all(), 1.0, 1.0, example_noise(0, n, 4, 17));
  CHECK(recon_loglik(*model, data.test, 17) == doctest::Approx(l.loglik_value()).epsilon(1e-5));
  // Batch size does not change the per-example noise.
  CHECK(recon_loglik(*model, data.test, 17, 7) == doctest::Approx(recon_loglik(*model, data.test, 17, 256)));
  CHECK(te_metric(*model, data.test) == doctest::Approx(l.kl_value()).epsilon(1e-5));
}

TEST_CASE("color accuracy reference points") {
  const DatasetBundle data = needle_data();
  const auto clf = shared_classifier();
  MESSAGE("held-out classifier accuracy " << clf->held_out_accuracy());
  REQUIRE(clf->passes_gate());
  const Tensor<float>& frames = data.test.y_next;
  // The true next frame against its own color.
  CHECK(color_accuracy(frames, data.test.y_class, *clf) >= 0.995);
  // Repeating the previous color is right when no change happened: 1 - s + s/7 = 4/7.
  const double repeat = color_accuracy(frames, data.test.prev_class, *clf);
  CHECK(std::abs(repeat - 4.0 / 7.0) < 0.04);
  // Uniform random guesses: 1/7.
  CounterRng rng(3);
  std::vector<int> guess(data.test.y_class.size());
  for (auto& g : guess) g = rng.below_int(7);
  CHECK(std::abs(color_accuracy(frames, guess, *clf) - 1.0 / 7.0) < 0.03);
  CHECK_THROWS_AS(color_accuracy(frames, std::vector<int>(3, 0), *clf), ContractError);
}

TEST_CASE("an untrained color classifier is refused") {
  const DatasetBundle data = needle_data();
  const ColorClassifier weak(data.train, data.val, 1, 0);
  CHECK_FALSE(weak.passes_gate());
  CHECK_THROWS_AS(color_accuracy(data.test.y_next, data.test.y_class, weak), NumericError);
}

TEST_CASE("rotation template classifier") {
  TaskConfig t;
  t.num_classes = 4;
  t.examples_per_class = 20;
  t.n_test = 200;
  t.n_train = t.n_val = 10;
  t.seed = 4;
  const DatasetBundle data = generate_dataset(t);
  const std::vector<int> cls = classify_rotation(data.test.y_next, data.templates, data.test.angle);
  int hits = 0;
  for (std::size_t i = 0; i < cls.size(); ++i) hits += cls[i] == data.test.y_class[i];
  CHECK(hits >= 196);
  CHECK_THROWS_AS(classify_rotation(data.test.y_next, data.templates, {0}), ContractError);
}

TEST_CASE("mean estimate") {
  const Estimate e = mean_estimate({1.0, 2.0, 3.0, 6.0});
  CHECK(e.mean == doctest::Approx(3.0));
  // Sample sd sqrt(14/3) over sqrt(4).
  CHECK(e.stderr_ == doctest::Approx(std::sqrt(14.0 / 3.0) / 2.0));
  CHECK(e.n == 4);
}

TEST_CASE("information estimate of an untrained teb_c model is zero") {
  // At initialization the posterior sits on the context mean with variance 1e-7, so the
  // full and context-only decoders see the same latent.
  const ExperimentConfig ccfg = sinusoid_config(ObjectiveKind::ceb);
  const DatasetBundle data = generate_dataset(ccfg.task);
  auto ctx = std::shared_ptr<JointModel<float>>(
      dynamic_cast<JointModel<float>*>(build_model<float>(ccfg, dataset_shapes(data), 3).release()));
  const auto model = build_model<float>(sinusoid_config(ObjectiveKind::teb_c), dataset_shapes(data), 4, ctx);
  const Estimate e = info_yz_given_y(dynamic_cast<const TebCModel<float>&>(*model), data.test, 5);
  CHECK(std::abs(e.mean) < 0.05);
  CHECK(e.n == data.test.size());
}

TEST_CASE("evaluate splits the log-likelihood by the changed flag") {
  const ExperimentConfig cfg = sinusoid_config(ObjectiveKind::teb);
  const DatasetBundle data = generate_dataset(cfg.task);
  const auto model = build_model<float>(cfg, dataset_shapes(data), 2);
  const EvalMetrics m = evaluate(*model, data.test, EvalContext{nullptr, nullptr, 8, 16});
  CHECK(m.n == 30);
  const double mix = (m.n_changed * (m.n_changed ? m.loglik_changed : 0.0) +
                      (m.n - m.n_changed) * (m.n - m.n_changed ? m.loglik_unchanged : 0.0)) /
                     static_cast<double>(m.n);
  CHECK(mix == doctest::Approx(m.recon_loglik).epsilon(1e-9));
  CHECK_FALSE(m.has_accuracy());
}

TEST_CASE("decoder difference matches the exact information on a discrete toy") {
  // Two-class Y, X, Y' and a two-bin latent Z drawn from q(z|x,y). The decoders are the exact
  // conditionals p(y'|z,y) and p(y'|y) of the joint, so the estimate targets I(Y';Z|Y).
  CounterRng rng(41);
  for (int rep = 0; rep < 5; ++rep) {
    const JointTable j = build_joint_graph_a(random_pair_table(2, 2, rng), random_channel(4, 2, rng),
                                             random_channel(4, 2, rng));
    const double exact = cond_mutual_info(j, {"Y'"}, {"Z"}, {"Y"});
    const JointTable yzy = j.marginal({"Y'", "Z", "Y"}), zy = j.marginal({"Z", "Y"});
    const JointTable yy = j.marginal({"Y'", "Y"}), y = j.marginal({"Y"});
    std::vector<double> cdf(j.probs.size());
    double acc = 0;
    for (std::size_t i = 0; i < cdf.size(); ++i) cdf[i] = (acc += j.probs[i]);
    std::vector<double> log_d, log_dy;
    for (int s = 0; s < 40000; ++s) {
      const double u = rng.uniform() * acc;
      const auto flat = static_cast<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      const std::vector<int> v = j.unravel(std::min(flat, cdf.size() - 1));  // (y', z, x, y)
      log_d.push_back(std::log(yzy.at({v[0], v[1], v[3]}) / zy.at({v[1], v[3]})));
      log_dy.push_back(std::log(yy.at({v[0], v[3]}) / y.at({v[3]})));
    }
    const Estimate e = decoder_difference(log_d, log_dy);
    CHECK(std::abs(e.mean - exact) < 0.05);
  }
  CHECK_THROWS_AS(decoder_difference({1.0}, {}), ContractError);
}
