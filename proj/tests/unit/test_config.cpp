#include <doctest.h>

#include <string>

#include "teb/config.hpp"
#include "teb/errors.hpp"

using namespace teb;

namespace {

const char* kMinimal = "[task]\nkind = switching_rotation\n[objective]\nkind = teb\n";

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("a minimal config takes the documented defaults") {
  const ExperimentConfig c = parse_config_text(kMinimal);
  CHECK(c.optimizer.lr == 1e-4);
  CHECK(c.optimizer.beta1 == 0.9);
  CHECK(c.optimizer.beta2 == 0.999);
  CHECK(c.model.latent_dim == 128);
  CHECK(c.model.fixed_variance == 0.1);
  CHECK(c.train.batch_size == 32);
  CHECK(c.objective.beta == 1.0);
}

TEST_CASE("serialization reaches a fixpoint") {
  ExperimentConfig c = parse_config_text(kMinimal);
  c.task.kind = TaskKind::multi_sinusoids;
  c.task.frequencies = {0.25, 0.5, 1.0 / 3.0};
  c.model.latent_dim = 7;
  c.model.decoder_channels = {4, 8, 12};
  c.model.decoder_kernels = {3, 3, 5};
  c.objective.kind = ObjectiveKind::ceb;
  c.objective.gamma = 0.125;
  c.train.beta_schedule = {{0, 0.1}, {5, 0.7}};
  c.train.seeds = {3, 4, 18446744073709551615ULL};
  c.sweep.betas = {1e-3, 0.1};
  const std::string once = serialize_config(c);
  const ExperimentConfig back = parse_config_text(once);
  CHECK(serialize_config(back) == once);
  CHECK(back.task.frequencies[2] == 1.0 / 3.0);
  CHECK(back.train.seeds[2] == 18446744073709551615ULL);
  CHECK(back.train.beta_schedule.size() == 2);
  CHECK(back.objective.kind == ObjectiveKind::ceb);
}

TEST_CASE("parse errors name the problem") {
  const std::string unknown = error_of(std::string(kMinimal) + "[model]\nunknwon_key = 3\n");
  CHECK(unknown.find("unknwon_key") != std::string::npos);
  CHECK_FALSE(error_of(std::string(kMinimal) + "[model]\nlatent_dim = many\n").empty());
  CHECK_FALSE(error_of("[objective]\nkind = teb\n").empty());
  CHECK_FALSE(error_of("[task]\nkind = switching_rotation\n").empty());
  CHECK_FALSE(error_of("[task]\nkind = spirals\n[objective]\nkind = teb\n").empty());
  CHECK_FALSE(error_of(std::string(kMinimal) + "[bogus]\nx = 1\n").empty());
}

TEST_CASE("overrides") {
  ExperimentConfig c = parse_config_text(kMinimal);
  apply_override(c, "model.latent_dim=12");
  apply_override(c, "objective.beta = 0.25");
  CHECK(c.model.latent_dim == 12);
  CHECK(c.objective.beta == 0.25);
  CHECK_THROWS(apply_override(c, "model.latent_dim"));
  CHECK_THROWS(apply_override(c, "latent_dim=3"));
  CHECK_THROWS(apply_override(c, "model.nothing=3"));
}

TEST_CASE("beta schedule lookup") {
  ExperimentConfig c = parse_config_text(kMinimal);
  c.objective.beta = 0.9;
  CHECK(c.beta_at(4) == 0.9);
  c.train.beta_schedule = {{2, 0.1}, {5, 0.5}};
  CHECK(c.beta_at(0) == 0.9);
  CHECK(c.beta_at(2) == 0.1);
  CHECK(c.beta_at(4) == 0.1);
  CHECK(c.beta_at(5) == 0.5);
  CHECK(c.beta_at(100) == 0.5);
}
