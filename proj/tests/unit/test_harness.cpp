#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "teb/harness.hpp"

using namespace teb;

namespace {

DatasetBundle tiny_rotation(int classes, int n_train) {
  TaskConfig t;
  t.kind = TaskKind::switching_rotation;
  t.num_classes = classes;
  t.examples_per_class = 4;
  t.image_size = 10;
  t.n_train = n_train;
  t.n_val = 40;
  t.n_test = 40;
  t.seed = 3;
  return generate_dataset(t);
}

ExperimentConfig tiny_config(const DatasetBundle& data, int epochs) {
  ExperimentConfig c;
  c.task = data.cfg;
  c.model.latent_dim = 6;
  c.model.conv_channels = {4, 4};
  c.model.decoder_channels = {6};
  c.model.decoder_kernels = {3};
  c.optimizer.lr = 3e-3;
  c.train.epochs = epochs;
  c.train.batch_size = 32;
  c.train.eval_batch_size = 64;
  return c;
}

bool same(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("beta star interpolation") {
  CHECK(interpolate_beta_star({{0.1, 1.2}, {0.2, 1.9}}, 1.67689) ==
        doctest::Approx(0.1 + 0.1 * (0.47689 / 0.7)).epsilon(1e-12));
  CHECK(interpolate_beta_star({{0.1, 1.2}, {0.2, 1.9}}, 1.67689) == doctest::Approx(0.1681).epsilon(1e-3));
  CHECK(interpolate_beta_star({{0.1, 0.2}, {0.3, 1.0}, {0.5, 1.4}}, 1.0) == 0.3);
  // Several crossings: the smallest-beta one wins.
  CHECK(interpolate_beta_star({{0.1, 0.0}, {0.2, 2.0}, {0.3, 0.5}, {0.4, 2.0}}, 1.0) ==
        doctest::Approx(0.15).epsilon(1e-12));
  CHECK_THROWS_AS(interpolate_beta_star({{0.1, 0.1}, {0.2, 0.5}}, 1.0), ContractError);
  CHECK_THROWS_AS(interpolate_beta_star({}, 1.0), ContractError);
  // Monotone in the target between fixed brackets.
  double prev = 0;
  for (double t = 1.25; t < 1.9; t += 0.05) {
    const double b = interpolate_beta_star({{0.1, 1.2}, {0.2, 1.9}}, t);
    CHECK(b > prev);
    prev = b;
  }
}

TEST_CASE("metrics records round trip") {
  SweepRecord s;
  s.beta = 0.1 + 0.2;
  s.seed = 12345678901234ULL;
  s.te_metric_nats = 1.0 / 3.0;
  s.recon_loglik = -1e-300;
  s.split = Split::val;
  SweepRecord back = SweepRecord::from_record(parse_record(format_record(s.to_record())));
  CHECK(back.beta == s.beta);
  CHECK(back.seed == s.seed);
  CHECK(back.te_metric_nats == s.te_metric_nats);
  CHECK(back.recon_loglik == s.recon_loglik);
  CHECK_FALSE(back.task_accuracy.has_value());
  CHECK(back.split == Split::val);
  s.task_accuracy = 0.875;
  back = SweepRecord::from_record(parse_record(format_record(s.to_record())));
  CHECK(back.task_accuracy == 0.875);

  EpochRecord e;
  e.epoch = 7;
  e.loss = -2.5e-7;
  e.val_te = 0.1;
  const EpochRecord eb = EpochRecord::from_record(parse_record(format_record(e.to_record())));
  CHECK(eb.epoch == 7);
  CHECK(eb.loss == e.loss);
  CHECK(std::isnan(eb.val_accuracy));
  CHECK(parse_double(format_double(0.1)) == 0.1);
  CHECK_THROWS(parse_double("zero"));
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  const DatasetBundle data = tiny_rotation(2, 96);
  const ExperimentConfig cfg = tiny_config(data, 2);
  const TrainResult a = train(cfg, data, 5);
  const TrainResult b = train(cfg, data, 5);
  CHECK(a.epoch0_loss == b.epoch0_loss);
  CHECK(a.epochs.back().loss == b.epochs.back().loss);
  CHECK(train(cfg, data, 6).epoch0_loss != a.epoch0_loss);

  const std::filesystem::path file = std::filesystem::temp_directory_path() / "teb_unit_ckpt.tebt";
  a.checkpoint.save(file.string());
  const Archive loaded = Archive::load(file.string());
  std::filesystem::remove(file);
  const auto model = load_model(loaded, data);
  const EvalContext ctx = make_eval_context(data, 9);
  const EvalMetrics m1 = evaluate(*a.model, data.val, ctx);
  const EvalMetrics m2 = evaluate(*model, data.val, ctx);
  CHECK(m1.te_metric == m2.te_metric);
  CHECK(m1.recon_loglik == m2.recon_loglik);
  CHECK(m1.accuracy == m2.accuracy);
  CHECK(checkpoint_config(loaded).model.latent_dim == 6);
  const auto pa = a.model->parameters(), pb = model->parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(same(pa[i].second.value(), pb[i].second.value()));
}

TEST_CASE("checkpoint loading rejects a mismatched archive") {
  const DatasetBundle data = tiny_rotation(2, 32);
  const ExperimentConfig cfg = tiny_config(data, 1);
  const auto model = build_model<float>(cfg, dataset_shapes(data), 1);
  Archive ck = make_checkpoint(cfg, *model, 1, 0);
  ck.tensors.erase(ck.tensors.begin());
  CHECK_THROWS(load_model(ck, data));
  Archive other;
  other.attrs["format"] = "something-else";
  CHECK_THROWS(load_model(other, data));
}

TEST_CASE("two-class rotation loss halves within five epochs") {
  const DatasetBundle data = tiny_rotation(2, 320);
  const TrainResult r = train(tiny_config(data, 5), data, 1);
  REQUIRE(r.epochs.size() == 5);
  const double first = r.epochs.front().loss, last = r.epochs.back().loss;
  MESSAGE("epoch 0 loss " << first << ", epoch 4 loss " << last);
  CHECK(first > 0);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("sweep emits one record per grid point and seed") {
  const DatasetBundle data = tiny_rotation(2, 64);
  ExperimentConfig cfg = tiny_config(data, 1);
  cfg.train.beta_schedule = {{0, 5.0}};
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "teb_unit_sweep";
  std::filesystem::remove_all(dir);
  SweepOptions opts;
  opts.workers = 2;
  opts.log_dir = dir.string();
  const auto recs = beta_sweep(cfg, data, {0.5, 1.0, 2.0}, {0, 1}, opts);
  CHECK(recs.size() == 6);
  CHECK(recs[0].beta == 0.5);
  CHECK(recs[5].beta == 2.0);
  CHECK(recs[5].seed == 1);
  for (const auto& r : recs) {
    CHECK(r.te_metric_nats >= 0);
    CHECK(r.split == Split::test);
    CHECK(r.task_accuracy.has_value());
  }
  CHECK(read_log_records((dir / "sweep.log").string(), "sweep").size() == 6);
  const auto agg = aggregate_sweep(recs);
  REQUIRE(agg.size() == 3);
  CHECK(agg[1].n == 2);
  CHECK(agg[1].te_mean == doctest::Approx((recs[2].te_metric_nats + recs[3].te_metric_nats) / 2));

  SweepOptions serial;
  const auto again = beta_sweep(cfg, data, {0.5, 1.0, 2.0}, {0, 1}, serial);
  REQUIRE(again.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(again[i].te_metric_nats == recs[i].te_metric_nats);
    CHECK(again[i].recon_loglik == recs[i].recon_loglik);
  }
  CHECK_THROWS(beta_sweep(cfg, data, {}, {0}, opts));
  std::filesystem::remove_all(dir);
}
