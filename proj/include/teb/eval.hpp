#pragma once

// Post-hoc metrics over a trained model and a dataset split.

#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "teb/models.hpp"
#include "teb/tasks.hpp"

namespace teb {

/// Standard-normal noise for examples [first, first + count), one substream per example so
/// results do not depend on batch size.
Tensor<float> example_noise(Index first, Index count, Index dim, std::uint64_t seed);

/// Per-example outputs of one evaluation pass.
struct Predictions {
  std::vector<double> kl;
  std::vector<double> loglik;
  Tensor<float> output;  // predicted mean of y' (sigmoid applied for Bernoulli outputs)
};

Predictions predict(const Model<float>& model, const Dataset& data, std::uint64_t seed, int batch_size = 256);

/// Mean closed-form KL between the encoder and its reference distribution.
double te_metric(const Model<float>& model, const Dataset& data, int batch_size = 256);
/// Mean log-likelihood of y' with one latent sample per example.
double recon_loglik(const Model<float>& model, const Dataset& data, std::uint64_t seed, int batch_size = 256);

/// Nearest template at the known rotation index; templates are (K, 8, s, s).
std::vector<int> classify_rotation(const Tensor<float>& frames, const Tensor<float>& templates,
                                   const std::vector<int>& angles);

/// Small three-block convolutional color classifier for the needle task.
class ColorClassifier {
 public:
  static constexpr double kGate = 0.995;

  /// Trains on clean training-split target frames and measures held-out accuracy on `val`.
  ColorClassifier(const Dataset& train, const Dataset& val, std::uint64_t seed, int max_epochs = 20);

  /// Frames are (N, 3, S, S) in [0, 1].
  std::vector<int> classify(const Tensor<float>& frames) const;
  double held_out_accuracy() const { return held_out_; }
  bool passes_gate() const { return held_out_ >= kGate; }

 private:
  Var<float> logits(const Var<float>& x) const;

  std::vector<Conv2d<float>> blocks_;
  Linear<float> head_;
  double held_out_ = 0;
};

/// Fraction of frames whose classified color equals `labels`; refuses a classifier below the gate.
double color_accuracy(const Tensor<float>& frames, const std::vector<int>& labels, const ColorClassifier& clf);

struct Estimate {
  double mean = 0;
  double stderr_ = 0;
  Index n = 0;
};

Estimate mean_estimate(const std::vector<double>& v);

/// Mean of per-example log d(y'|z,c) - log d_y(y'|c), the decoder-difference estimate of I(Y';Z|Y).
Estimate decoder_difference(const std::vector<double>& log_d, const std::vector<double>& log_dy);

/// Mean of log d(y'|z,c) - log d_y(y'|c) for a TEB^c model; an I(Y';Z|Y) estimate at convergence.
Estimate info_yz_given_y(const TebCModel<float>& model, const Dataset& data, std::uint64_t seed,
                         int batch_size = 256);

struct EvalMetrics {
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  double te_metric = 0;
  double recon_loglik = 0;
  double loglik_changed = kNaN;    // examples whose class or frequency changed at Y'
  double loglik_unchanged = kNaN;
  double accuracy = kNaN;          // rotation: template class; needle: ball color
  double accuracy_changed = kNaN;
  double info_yz_given_y = kNaN;
  Index n = 0;
  Index n_changed = 0;

  bool has_accuracy() const { return accuracy == accuracy; }
};

struct EvalContext {
  const Tensor<float>* templates = nullptr;              // rotation
  std::shared_ptr<const ColorClassifier> classifier;     // needle
  std::uint64_t seed = 0;
  int batch_size = 256;
};

EvalMetrics evaluate(const Model<float>& model, const Dataset& data, const EvalContext& ctx);

}  // namespace teb
