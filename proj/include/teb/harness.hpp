#pragma once

// Training loop, checkpoints, metrics log records and beta sweeps.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "teb/archive.hpp"
#include "teb/eval.hpp"
#include "teb/models.hpp"
#include "teb/tasks.hpp"

namespace teb {

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// One line of the metrics log: space-separated key=value pairs, doubles in shortest
/// round-trip form.
using Record = std::vector<std::pair<std::string, std::string>>;
std::string format_record(const Record& r);
std::map<std::string, std::string> parse_record(const std::string& line);
std::string format_double(double v);
double parse_double(const std::string& s);

struct EpochRecord {
  int epoch = 0;
  double beta = 0;
  double loss = 0;
  double kl = 0;
  double loglik = 0;
  double val_te = 0;
  double val_loglik = 0;
  double val_accuracy = EvalMetrics::kNaN;

  Record to_record() const;
  static EpochRecord from_record(const std::map<std::string, std::string>& kv);
};

struct SweepRecord {
  double beta = 0;
  std::uint64_t seed = 0;
  double te_metric_nats = 0;
  double recon_loglik = 0;
  std::optional<double> task_accuracy;
  Split split = Split::test;

  Record to_record() const;
  static SweepRecord from_record(const std::map<std::string, std::string>& kv);
};

/// Records of one kind ("epoch" or "sweep") from a metrics log; comment lines are skipped.
std::vector<std::map<std::string, std::string>> read_log_records(const std::string& path, const std::string& type);

/// "# key: value" header lines naming the resolved config and any overrides.
std::string log_header(const ExperimentConfig& cfg, const std::vector<std::string>& overrides);

struct TrainOptions {
  std::ostream* log = nullptr;       // metrics log sink
  std::ostream* progress = nullptr;  // human-readable progress
  std::shared_ptr<const ColorClassifier> classifier;  // needle task; trained on demand when null
  std::optional<Archive> context;    // teb_c Y module; else loaded from objective.context_checkpoint
  int max_batches_per_epoch = 0;     // 0 = full epoch
};

struct TrainResult {
  std::unique_ptr<Model<float>> model;  // restored to the best validation epoch
  Archive checkpoint;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double epoch0_loss = 0;
};

ModelShapes dataset_shapes(const DatasetBundle& data);

/// Minibatch Adam on the configured objective; selects the best epoch on validation.
TrainResult train(const ExperimentConfig& cfg, const DatasetBundle& data, std::uint64_t seed,
                  const TrainOptions& opts = {});

/// Checkpoint container: parameters plus the producing config (and the Y-module config for teb_c).
Archive make_checkpoint(const ExperimentConfig& cfg, const Model<float>& model, std::uint64_t seed, int best_epoch);
std::unique_ptr<Model<float>> load_model(const Archive& checkpoint, const DatasetBundle& data);
ExperimentConfig checkpoint_config(const Archive& checkpoint);

/// Y module for teb_c from its checkpoint.
std::shared_ptr<JointModel<float>> load_context_module(const Archive& checkpoint, const DatasetBundle& data);

/// Evaluation context for a dataset: rotation templates or a trained color classifier.
EvalContext make_eval_context(const DatasetBundle& data, std::uint64_t seed,
                              std::shared_ptr<const ColorClassifier> classifier = nullptr);

struct SweepOptions {
  int workers = 1;
  std::string log_dir;              // per-worker logs plus the merged sweep.log; empty = none
  std::ostream* progress = nullptr;
  int max_batches_per_epoch = 0;
  std::optional<Archive> context;
};

/// One training run per (beta, seed); metrics on the test split, in grid-major order.
std::vector<SweepRecord> beta_sweep(const ExperimentConfig& cfg, const DatasetBundle& data,
                                    const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds,
                                    const SweepOptions& opts = {});

struct BetaAggregate {
  double beta = 0;
  int n = 0;
  double te_mean = 0, te_std = 0;
  double loglik_mean = 0, loglik_std = 0;
  double accuracy_mean = EvalMetrics::kNaN, accuracy_std = EvalMetrics::kNaN;
};

/// Mean and sample standard deviation per beta, sorted by beta.
std::vector<BetaAggregate> aggregate_sweep(const std::vector<SweepRecord>& records);

/// Smallest-beta linear crossing of te = true_te over (beta, te) pairs sorted by beta.
double interpolate_beta_star(const std::vector<std::pair<double, double>>& pairs, double true_te);

}  // namespace teb
