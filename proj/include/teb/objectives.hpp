#pragma once

// Training objectives: TEB, TEB with a frozen context, and the single-encoder baselines.

#include <cmath>

#include "teb/models.hpp"

namespace teb {

template <typename S>
struct LossBreakdown {
  Var<S> total;
  Var<S> kl_term;
  Var<S> loglik_term;
  Var<S> aux;  // co-training term, undefined unless enabled
  double beta = 1.0;

  double total_value() const { return static_cast<double>(total.value()[0]); }
  double kl_value() const { return static_cast<double>(kl_term.value()[0]); }
  double loglik_value() const { return static_cast<double>(loglik_term.value()[0]); }
};

struct BaselineSpec {
  ObjectiveKind kind = ObjectiveKind::vib;
  double gamma = 1.0;

  void validate() const {
    require(kind == ObjectiveKind::ceb || kind == ObjectiveKind::vib || kind == ObjectiveKind::deterministic ||
                kind == ObjectiveKind::deterministic_joint,
            "baseline kind must be ceb, vib, deterministic or deterministic_joint, got " + to_string(kind));
    require(kind != ObjectiveKind::ceb || gamma > 0, "ceb needs gamma > 0");
  }
};

/// total = mean(kl) - weight * mean(loglik), plus the auxiliary term when present.
template <typename S>
LossBreakdown<S> compose_loss(const ForwardPass<S>& f, double weight) {
  require(std::isfinite(weight) && weight >= 0, "loss weight must be finite and >= 0");
  LossBreakdown<S> l;
  l.beta = weight;
  l.kl_term = mean(f.kl);
  l.loglik_term = mean(f.loglik);
  l.total = l.kl_term - scale(l.loglik_term, static_cast<S>(weight));
  if (f.aux.defined()) {
    l.aux = f.aux;
    l.total = l.total + f.aux;
  }
  return l;
}

/// `eps` is (B, latent_dim) standard-normal noise, one latent sample per example.
template <typename S>
LossBreakdown<S> teb_loss(const Model<S>& model, const StreamBatch<S>& batch, double beta, const Tensor<S>& eps) {
  require(model.kind() == ObjectiveKind::teb, "teb_loss needs a teb model, got " + to_string(model.kind()));
  require(beta >= 0, "beta must be >= 0");
  return compose_loss(model.forward(batch, eps), beta);
}

template <typename S>
LossBreakdown<S> teb_c_loss(const TebCModel<S>& model, const StreamBatch<S>& batch, double beta,
                            const Tensor<S>& eps) {
  require(model.context().latent_dim() == model.latent_dim(), "frozen module latent dimension mismatch");
  require(beta >= 0, "beta must be >= 0");
  return compose_loss(model.forward(batch, eps), beta);
}

template <typename S>
LossBreakdown<S> baseline_loss(const BaselineSpec& spec, const Model<S>& model, const StreamBatch<S>& batch,
                               double weight, const Tensor<S>& eps) {
  spec.validate();
  require(model.kind() == spec.kind,
          "baseline spec " + to_string(spec.kind) + " does not match model " + to_string(model.kind()));
  switch (spec.kind) {
    case ObjectiveKind::vib: return compose_loss(model.forward(batch, eps), weight);
    case ObjectiveKind::ceb: return compose_loss(model.forward(batch, eps), spec.gamma);
    default: return compose_loss(model.forward(batch, eps), 1.0);
  }
}

/// Dispatches on the model's kind; `beta` is the current schedule value.
template <typename S>
LossBreakdown<S> objective_loss(const Model<S>& model, const StreamBatch<S>& batch, double beta, double gamma,
                                const Tensor<S>& eps) {
  switch (model.kind()) {
    case ObjectiveKind::teb: return teb_loss(model, batch, beta, eps);
    case ObjectiveKind::teb_c: return teb_c_loss(dynamic_cast<const TebCModel<S>&>(model), batch, beta, eps);
    default: return baseline_loss(BaselineSpec{model.kind(), gamma}, model, batch, beta, eps);
  }
}

}  // namespace teb
