#pragma once

// Declarative experiment description, read from and written to a sectioned
// key/value text file.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "teb/dist.hpp"
#include "teb/nets.hpp"

namespace teb {

enum class TaskKind { switching_rotation, needle_haystack, multi_sinusoids };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct TaskConfig {
  TaskKind kind = TaskKind::switching_rotation;
  double switch_prob = 0.5;
  int num_classes = 10;
  int examples_per_class = 20;  // procedural glyph variants per class
  std::string digits_path;      // directory with IDX digit files; empty = procedural glyphs
  int distractors = 5;
  int image_size = 0;  // 0 = task default (14 rotation, 16 needle)
  int ball_radius = 2;
  int num_balls = 2;
  int num_points = 120;
  int history = 100;
  double sample_rate = 20.0;
  std::vector<double> frequencies{0.2, 0.4, 0.6, 0.8, 1.0};
  double freq_noise = 0.15;
  int rk4_substeps = 10;
  int n_train = 2000;
  int n_val = 500;
  int n_test = 500;
  std::uint64_t seed = 0;

  int resolved_image_size() const;
  void validate() const;
};

enum class DecoderKind { positional_conv_image, ode_timeseries, vector_sequence };

std::string to_string(DecoderKind k);
DecoderKind decoder_kind_from_string(const std::string& s);

struct ModelSpec {
  Index latent_dim = 128;
  std::string y_encoder = "auto";
  std::string x_encoder = "auto";
  std::string aggregator = "recurrent";
  std::string decoder = "auto";
  std::string output = "auto";
  double fixed_variance = 0.1;
  std::vector<Index> conv_channels{16, 32};
  std::vector<Index> decoder_channels{32, 32};
  std::vector<Index> decoder_kernels{5, 5};
  Index decoder_final_kernel = 3;
  Index combiner_width = 0;  // 0 = latent_dim
  bool combiner_mlp = true;
  Index embedding_dim = 0;  // 0 = latent_dim
  Index ode_width = 50;
  double ode_step = 0.05;

  void validate() const;
};

enum class ObjectiveKind { teb, teb_c, ceb, vib, deterministic, deterministic_joint };
enum class JointInput { unified, y_only };

std::string to_string(ObjectiveKind k);
ObjectiveKind objective_kind_from_string(const std::string& s);
std::string to_string(JointInput k);
JointInput joint_input_from_string(const std::string& s);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::teb;
  double beta = 1.0;
  double gamma = 1.0;
  JointInput joint_input = JointInput::unified;
  std::string context_checkpoint;  // pre-trained Y module for teb_c
  bool context_decoder = true;     // teb_c: decode with the frozen Y-module decoder
  bool cotrain_context = false;    // teb_c: keep training the Y module with its own loss

  void validate() const;
};

struct OptimizerSpec {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainSpec {
  int epochs = 10;
  int batch_size = 32;
  int eval_batch_size = 256;
  std::vector<std::pair<int, double>> beta_schedule;  // (epoch, beta), epochs increasing
  std::vector<std::uint64_t> seeds{0};
};

struct SweepSpec {
  std::vector<double> betas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int workers = 1;
};

struct ExperimentConfig {
  TaskConfig task;
  ModelSpec model;
  ObjectiveSpec objective;
  OptimizerSpec optimizer;
  TrainSpec train;
  SweepSpec sweep;

  void validate() const;
  /// Beta in force at `epoch`: the last schedule entry at or before it, else objective.beta.
  double beta_at(int epoch) const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

/// The [task] section alone, for dataset manifests.
std::string serialize_task_config(const TaskConfig& task);
TaskConfig parse_task_config_text(const std::string& text);

/// Applies one `section.key=value` override in place.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

}  // namespace teb
