#pragma once

// Dual-stream models and the joint-stream baselines, templated on the scalar type.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "teb/batch.hpp"
#include "teb/config.hpp"
#include "teb/dist.hpp"
#include "teb/nets.hpp"

namespace teb {

/// Per-sample shapes of a dataset, without the batch axis.
struct ModelShapes {
  TaskKind task = TaskKind::switching_rotation;
  Shape x_step, y_step, y_next;
  Index t_x = 0, t_y = 0;
  int x_classes = 0;  // class-label source streams

  template <typename S>
  static ModelShapes from(const StreamBatch<S>& b, TaskKind task, int x_classes) {
    ModelShapes s;
    s.task = task;
    s.x_step.assign(b.x_hist.shape().begin() + 2, b.x_hist.shape().end());
    s.y_step.assign(b.y_hist.shape().begin() + 2, b.y_hist.shape().end());
    s.y_next.assign(b.y_next.shape().begin() + 1, b.y_next.shape().end());
    if (s.x_step.empty()) s.x_step = {1};
    if (s.y_step.empty()) s.y_step = {1};
    s.t_x = b.x_hist.dim(1);
    s.t_y = b.y_hist.dim(1);
    s.x_classes = x_classes;
    return s;
  }
};

/// ModelSpec with every "auto" resolved against the task and objective.
struct ResolvedModel {
  ModelSpec spec;
  EncoderKind y_encoder = EncoderKind::small_conv;
  EncoderKind x_encoder = EncoderKind::embedding_table;
  DecoderKind decoder = DecoderKind::positional_conv_image;
  OutputDistSpec output;
};

inline ResolvedModel resolve_model(const ModelSpec& spec, TaskKind task, ObjectiveKind objective) {
  spec.validate();
  ResolvedModel r;
  r.spec = spec;
  switch (task) {
    case TaskKind::switching_rotation:
      r.y_encoder = EncoderKind::small_conv;
      r.x_encoder = EncoderKind::embedding_table;
      r.decoder = DecoderKind::positional_conv_image;
      r.output.kind = OutputKind::gaussian_fixed_var;
      break;
    case TaskKind::needle_haystack:
      r.y_encoder = EncoderKind::small_conv;
      r.x_encoder = EncoderKind::small_conv;
      r.decoder = DecoderKind::positional_conv_image;
      r.output.kind = OutputKind::bernoulli_logits;
      break;
    case TaskKind::multi_sinusoids:
      r.y_encoder = EncoderKind::identity;
      r.x_encoder = EncoderKind::identity;
      r.decoder = objective == ObjectiveKind::deterministic_joint ? DecoderKind::vector_sequence
                                                                  : DecoderKind::ode_timeseries;
      r.output.kind = OutputKind::gaussian_fixed_var;
      break;
  }
  if (spec.y_encoder != "auto") r.y_encoder = encoder_kind_from_string(spec.y_encoder);
  if (spec.x_encoder != "auto") r.x_encoder = encoder_kind_from_string(spec.x_encoder);
  if (spec.decoder != "auto") r.decoder = decoder_kind_from_string(spec.decoder);
  if (spec.output != "auto") r.output.kind = output_kind_from_string(spec.output);
  r.output.fixed_variance = spec.fixed_variance;
  return r;
}

template <typename S>
StepFeaturizer<S> make_featurizer(EncoderKind kind, const Shape& step, int classes,
                                  const ResolvedModel& m, CounterRng& rng) {
  const Index d = m.spec.latent_dim;
  const Index width = kind == EncoderKind::embedding_table && m.spec.embedding_dim > 0
                          ? m.spec.embedding_dim
                          : d;
  return StepFeaturizer<S>(kind, step, classes, m.spec.conv_channels, width, rng);
}

/// Decoder of any configured kind; output shape equals the per-sample y' shape.
template <typename S>
struct Decoder {
  DecoderKind kind = DecoderKind::positional_conv_image;
  ImageDecoder<S> image;
  OdeDecoder<S> ode;
  VectorSequenceDecoder<S> vec;
  int horizon = 0;

  Decoder() = default;
  Decoder(const ResolvedModel& m, const Shape& y_next, CounterRng& rng) : kind(m.decoder) {
    const Index d = m.spec.latent_dim;
    switch (kind) {
      case DecoderKind::positional_conv_image:
        require(y_next.size() == 3, "positional_conv_image decoder needs an image target");
        image = ImageDecoder<S>(d, y_next, m.spec.decoder_channels, m.spec.decoder_kernels,
                                m.spec.decoder_final_kernel, rng);
        break;
      case DecoderKind::ode_timeseries:
        require(y_next.size() == 1 && y_next[0] >= 2, "ode_timeseries decoder needs a sequence target");
        horizon = static_cast<int>(y_next[0] - 1);
        ode = OdeDecoder<S>(d, m.spec.ode_width, m.spec.ode_step, rng);
        break;
      case DecoderKind::vector_sequence:
        require(y_next.size() == 1 && y_next[0] >= 2, "vector_sequence decoder needs a sequence target");
        horizon = static_cast<int>(y_next[0] - 1);
        vec = VectorSequenceDecoder<S>(d, m.spec.ode_width, horizon, rng);
        break;
    }
  }

  Var<S> operator()(const Var<S>& z, const StreamBatch<S>& b) const {
    switch (kind) {
      case DecoderKind::positional_conv_image: return image(z);
      case DecoderKind::ode_timeseries: return ode(z, horizon, b.y_last());
      case DecoderKind::vector_sequence: return vec(z, b.y_last());
    }
    throw ContractError("decoder: bad kind");
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    switch (kind) {
      case DecoderKind::positional_conv_image: image.collect(out, prefix); break;
      case DecoderKind::ode_timeseries: ode.collect(out, prefix); break;
      case DecoderKind::vector_sequence: vec.collect(out, prefix); break;
    }
  }
};

/// Everything an objective needs from one forward pass; per-example terms are (B).
template <typename S>
struct ForwardPass {
  std::optional<DiagGaussian<S>> posterior;
  std::optional<DiagGaussian<S>> prior;
  Var<S> kl;
  Var<S> loglik;
  Var<S> prediction;
  Var<S> aux;  // extra scalar loss (Y-module co-training), undefined when unused
};

template <typename S>
class Model {
 public:
  virtual ~Model() = default;
  virtual ObjectiveKind kind() const = 0;
  virtual ParamList<S> parameters() const = 0;
  virtual Index latent_dim() const = 0;
  virtual const OutputDistSpec& output() const = 0;
  /// `eps` is (B, latent_dim) standard-normal noise; deterministic kinds ignore it.
  virtual ForwardPass<S> forward(const StreamBatch<S>& b, const Tensor<S>& eps) const = 0;

  bool deterministic() const {
    return kind() == ObjectiveKind::deterministic || kind() == ObjectiveKind::deterministic_joint;
  }
};

namespace detail {

template <typename S>
Var<S> zeros_per_example(Index b) {
  return Var<S>(Tensor<S>(Shape{b}));
}

}  // namespace detail

/// Dual-stream model: Y pathway -> prior q_y(z|y) and context, X pathway perturbs it into
/// q(z|x,y), decoder d(y'|z,y). With `deterministic` set it decodes the posterior mean.
template <typename S>
class TebModel : public Model<S> {
 public:
  TebModel(const ResolvedModel& m, const ModelShapes& shapes, bool deterministic, CounterRng rng)
      : m_(m), deterministic_(deterministic) {
    const Index d = m.spec.latent_dim;
    CounterRng r1 = rng.substream(1), r2 = rng.substream(2), r3 = rng.substream(3),
               r4 = rng.substream(4), r5 = rng.substream(5);
    y_enc_ = SequenceEncoder<S>({make_featurizer<S>(m.y_encoder, shapes.y_step, 0, m, r1)}, d, r1);
    x_enc_ = SequenceEncoder<S>(
        {make_featurizer<S>(m.x_encoder, shapes.x_step, shapes.x_classes, m, r2)}, d, r2);
    head_ = PriorHead<S>(d, d, r3);
    const Index width = m.spec.combiner_width > 0 ? m.spec.combiner_width : d;
    comb_ = Combiner<S>(d, d, width, d, m.spec.combiner_mlp, r4);
    dec_ = Decoder<S>(m, shapes.y_next, r5);
  }

  ObjectiveKind kind() const override {
    return deterministic_ ? ObjectiveKind::deterministic : ObjectiveKind::teb;
  }
  Index latent_dim() const override { return m_.spec.latent_dim; }
  const OutputDistSpec& output() const override { return m_.output; }

  ParamList<S> parameters() const override {
    ParamList<S> p;
    y_enc_.collect(p, "y_enc");
    x_enc_.collect(p, "x_enc");
    head_.collect(p, "prior_head");
    comb_.collect(p, "combiner");
    dec_.collect(p, "decoder");
    return p;
  }

  struct Encoded {
    DiagGaussian<S> prior;
    DiagGaussian<S> posterior;
  };

  Encoded encode(const StreamBatch<S>& b) const {
    b.validate();
    const Var<S> hy = y_enc_({&b.y_hist});
    auto [prior, context] = head_(hy);
    const Var<S> hx = x_enc_({&b.x_hist});
    return {prior, comb_(context, hx, prior)};
  }

  Var<S> decode(const Var<S>& z, const StreamBatch<S>& b) const { return dec_(z, b); }

  ForwardPass<S> forward(const StreamBatch<S>& b, const Tensor<S>& eps) const override {
    Encoded e = encode(b);
    ForwardPass<S> f;
    Var<S> z;
    if (deterministic_) {
      z = e.posterior.mean;
      f.kl = detail::zeros_per_example<S>(b.size());
    } else {
      z = reparam_sample(e.posterior, eps);
      f.kl = kl_diag_gaussian(e.posterior, e.prior);
    }
    f.prediction = dec_(z, b);
    f.loglik = log_likelihood_per_example(b.y_next, f.prediction, m_.output);
    f.prior = e.prior;
    f.posterior = e.posterior;
    return f;
  }

 private:
  ResolvedModel m_;
  bool deterministic_;
  SequenceEncoder<S> y_enc_, x_enc_;
  PriorHead<S> head_;
  Combiner<S> comb_;
  Decoder<S> dec_;
};

/// Single-encoder baselines: VIB, CEB and the deterministic joint-stream model. With
/// JointInput::y_only (and kind ceb) this is also the pre-trained Y module for TEB^c.
template <typename S>
class JointModel : public Model<S> {
 public:
  JointModel(const ResolvedModel& m, const ModelShapes& shapes, ObjectiveKind kind, JointInput input,
             double gamma, CounterRng rng)
      : m_(m), kind_(kind), input_(input), gamma_(gamma) {
    require(kind == ObjectiveKind::ceb || kind == ObjectiveKind::vib ||
                kind == ObjectiveKind::deterministic_joint,
            "JointModel: unsupported objective " + to_string(kind));
    const Index d = m.spec.latent_dim;
    CounterRng r1 = rng.substream(1), r2 = rng.substream(2), r3 = rng.substream(3),
               r4 = rng.substream(4), r5 = rng.substream(5);
    std::vector<StepFeaturizer<S>> feats;
    use_x_ = input == JointInput::unified;
    // The needle task's X already contains every Y channel group, so X alone is the unified input.
    use_y_ = input == JointInput::y_only || shapes.task != TaskKind::needle_haystack;
    if (use_x_) {
      feats.push_back(make_featurizer<S>(m.x_encoder, shapes.x_step, shapes.x_classes, m, r1));
    }
    if (use_y_) {
      feats.push_back(make_featurizer<S>(m.y_encoder, shapes.y_step, 0, m, r1));
    }
    require(!use_x_ || !use_y_ || shapes.t_x == shapes.t_y,
            "joint input needs equally long X and Y histories");
    enc_ = SequenceEncoder<S>(std::move(feats), d, r1);
    head_ = Linear<S>(d, 2 * d, r2);
    if (kind == ObjectiveKind::ceb) {
      // Backward encoder b(z|y'): the Y-pathway design applied to y' viewed as a sequence.
      Shape step = shapes.y_next;
      bwd_steps_ = 1;
      EncoderKind bk = m.y_encoder;
      if (shapes.y_next.size() == 1) {
        bwd_steps_ = shapes.y_next[0];
        step = {1};
        bk = EncoderKind::identity;
      }
      bwd_enc_ = SequenceEncoder<S>({make_featurizer<S>(bk, step, 0, m, r3)}, d, r3);
      bwd_head_ = Linear<S>(d, 2 * d, r4);
    }
    dec_ = Decoder<S>(m, shapes.y_next, r5);
  }

  ObjectiveKind kind() const override { return kind_; }
  Index latent_dim() const override { return m_.spec.latent_dim; }
  const OutputDistSpec& output() const override { return m_.output; }
  JointInput input() const { return input_; }
  double gamma() const { return gamma_; }

  ParamList<S> parameters() const override {
    ParamList<S> p;
    enc_.collect(p, "enc");
    head_.collect(p, "head");
    if (kind_ == ObjectiveKind::ceb) {
      bwd_enc_.collect(p, "bwd_enc");
      bwd_head_.collect(p, "bwd_head");
    }
    dec_.collect(p, "decoder");
    return p;
  }

  /// Forward encoder q(z|input).
  DiagGaussian<S> encode(const StreamBatch<S>& b) const {
    b.validate();
    std::vector<const Tensor<S>*> streams;
    if (use_x_) streams.push_back(&b.x_hist);
    if (use_y_) streams.push_back(&b.y_hist);
    const Var<S> out = head_(enc_(streams));
    const Index d = latent_dim();
    return {slice_cols(out, 0, d), slice_cols(out, d, d)};
  }

  /// Backward encoder b(z|y') (ceb only).
  DiagGaussian<S> encode_backward(const StreamBatch<S>& b) const {
    require(kind_ == ObjectiveKind::ceb, "backward encoder exists only for ceb");
    Shape s{b.size(), bwd_steps_};
    const Shape& yn = b.y_next.shape();
    if (bwd_steps_ == 1) {
      s.insert(s.end(), yn.begin() + 1, yn.end());
    } else {
      s.push_back(1);
    }
    const Tensor<S> seq = b.y_next.reshaped(s);
    const Var<S> out = bwd_head_(bwd_enc_({&seq}));
    const Index d = latent_dim();
    return {slice_cols(out, 0, d), slice_cols(out, d, d)};
  }

  Var<S> decode(const Var<S>& z, const StreamBatch<S>& b) const { return dec_(z, b); }

  ForwardPass<S> forward(const StreamBatch<S>& b, const Tensor<S>& eps) const override {
    const DiagGaussian<S> q = encode(b);
    ForwardPass<S> f;
    Var<S> z;
    switch (kind_) {
      case ObjectiveKind::vib: {
        const DiagGaussian<S> prior = DiagGaussian<S>::standard(b.size(), latent_dim());
        z = reparam_sample(q, eps);
        f.kl = kl_diag_gaussian(q, prior);
        f.prior = prior;
        break;
      }
      case ObjectiveKind::ceb: {
        const DiagGaussian<S> back = encode_backward(b);
        z = reparam_sample(q, eps);
        f.kl = kl_diag_gaussian(q, back);
        f.prior = back;
        break;
      }
      default:
        z = q.mean;
        f.kl = detail::zeros_per_example<S>(b.size());
        break;
    }
    f.posterior = q;
    f.prediction = dec_(z, b);
    f.loglik = log_likelihood_per_example(b.y_next, f.prediction, m_.output);
    return f;
  }

 private:
  ResolvedModel m_;
  ObjectiveKind kind_;
  JointInput input_;
  double gamma_;
  bool use_x_ = true, use_y_ = true;
  Index bwd_steps_ = 1;
  SequenceEncoder<S> enc_, bwd_enc_;
  Linear<S> head_, bwd_head_;
  Decoder<S> dec_;
};

/// TEB with a pre-trained context: the frozen Y module supplies q_y(z|y) and the context
/// c = its posterior mean; an X pathway perturbs q_y into q(z|x,c).
template <typename S>
class TebCModel : public Model<S> {
 public:
  TebCModel(const ResolvedModel& m, const ModelShapes& shapes, std::shared_ptr<JointModel<S>> context,
            bool context_decoder, bool cotrain, CounterRng rng)
      : m_(m), context_(std::move(context)), use_context_decoder_(context_decoder), cotrain_(cotrain) {
    require(context_ != nullptr, "teb_c needs a pre-trained Y module");
    require(context_->input() == JointInput::y_only, "the Y module must see Y only");
    require(context_->latent_dim() == m.spec.latent_dim,
            "frozen module latent dimension " + std::to_string(context_->latent_dim()) +
                " does not match model latent dimension " + std::to_string(m.spec.latent_dim));
    const Index d = m.spec.latent_dim;
    CounterRng r1 = rng.substream(1), r2 = rng.substream(2), r3 = rng.substream(3);
    x_enc_ = SequenceEncoder<S>(
        {make_featurizer<S>(m.x_encoder, shapes.x_step, shapes.x_classes, m, r1)}, d, r1);
    const Index width = m.spec.combiner_width > 0 ? m.spec.combiner_width : d;
    comb_ = Combiner<S>(d, d, width, d, m.spec.combiner_mlp, r2);
    if (!use_context_decoder_) {
      dec_ = Decoder<S>(m, shapes.y_next, r3);
    }
    set_context_frozen(!cotrain_);
  }

  void set_context_frozen(bool frozen) {
    for (auto& [name, v] : context_->parameters()) {
      Var<S> h = v;
      h.set_requires_grad(!frozen);
    }
  }

  ObjectiveKind kind() const override { return ObjectiveKind::teb_c; }
  Index latent_dim() const override { return m_.spec.latent_dim; }
  const OutputDistSpec& output() const override { return m_.output; }
  const JointModel<S>& context() const { return *context_; }
  std::shared_ptr<JointModel<S>> context_ptr() const { return context_; }
  bool uses_context_decoder() const { return use_context_decoder_; }

  ParamList<S> parameters() const override {
    ParamList<S> p;
    for (auto& [name, v] : context_->parameters()) {
      p.emplace_back("context." + name, v);
    }
    x_enc_.collect(p, "x_enc");
    comb_.collect(p, "combiner");
    if (!use_context_decoder_) {
      dec_.collect(p, "decoder");
    }
    return p;
  }

  ForwardPass<S> forward(const StreamBatch<S>& b, const Tensor<S>& eps) const override {
    const DiagGaussian<S> prior = context_->encode(b);
    const Var<S> hx = x_enc_({&b.x_hist});
    const DiagGaussian<S> post = comb_(prior.mean, hx, prior);
    ForwardPass<S> f;
    const Var<S> z = reparam_sample(post, eps);
    f.kl = kl_diag_gaussian(post, prior);
    f.prediction = use_context_decoder_ ? context_->decode(z, b) : dec_(z, b);
    f.loglik = log_likelihood_per_example(b.y_next, f.prediction, m_.output);
    f.prior = prior;
    f.posterior = post;
    if (cotrain_) {
      const ForwardPass<S> c = context_->forward(b, eps);
      f.aux = mean(c.kl) - static_cast<S>(context_->gamma()) * mean(c.loglik);
    }
    return f;
  }

  /// log d_y(y'|c) per example, decoding the context mean with the Y-module decoder.
  Var<S> context_loglik(const StreamBatch<S>& b) const {
    const DiagGaussian<S> prior = context_->encode(b);
    return log_likelihood_per_example(b.y_next, context_->decode(prior.mean, b), m_.output);
  }

 private:
  ResolvedModel m_;
  std::shared_ptr<JointModel<S>> context_;
  bool use_context_decoder_;
  bool cotrain_;
  SequenceEncoder<S> x_enc_;
  Combiner<S> comb_;
  Decoder<S> dec_;
};

/// Builds the model named by cfg.objective. teb_c requires `context`.
template <typename S>
std::unique_ptr<Model<S>> build_model(const ExperimentConfig& cfg, const ModelShapes& shapes,
                                      std::uint64_t seed,
                                      std::shared_ptr<JointModel<S>> context = nullptr) {
  const ObjectiveKind kind = cfg.objective.kind;
  const ResolvedModel m = resolve_model(cfg.model, shapes.task, kind);
  const CounterRng rng(seed, 0x696e6974);
  switch (kind) {
    case ObjectiveKind::teb:
      return std::make_unique<TebModel<S>>(m, shapes, false, rng);
    case ObjectiveKind::deterministic:
      return std::make_unique<TebModel<S>>(m, shapes, true, rng);
    case ObjectiveKind::teb_c:
      return std::make_unique<TebCModel<S>>(m, shapes, std::move(context), cfg.objective.context_decoder,
                                            cfg.objective.cotrain_context, rng);
    case ObjectiveKind::ceb:
    case ObjectiveKind::vib:
    case ObjectiveKind::deterministic_joint:
      return std::make_unique<JointModel<S>>(m, shapes, kind, cfg.objective.joint_input,
                                             cfg.objective.gamma, rng);
  }
  throw ContractError("unknown objective kind");
}

/// Copies named tensors into the model's parameters; every parameter must be present.
template <typename S, typename Lookup>
void assign_parameters(const ParamList<S>& params, Lookup&& lookup) {
  for (const auto& [name, v] : params) {
    const Tensor<float>* t = lookup(name);
    require(t != nullptr, "missing parameter '" + name + "'");
    require(t->shape() == v.shape(), "parameter '" + name + "' has shape " + shape_str(t->shape()) +
                                         ", expected " + shape_str(v.shape()));
    Var<S> h = v;
    h.mutable_value() = t->template cast<S>();
  }
}

extern template class TebModel<float>;
extern template class JointModel<float>;
extern template class TebCModel<float>;
extern template class TebModel<double>;
extern template class JointModel<double>;
extern template class TebCModel<double>;

}  // namespace teb
