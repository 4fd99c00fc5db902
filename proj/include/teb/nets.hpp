#pragma once

// Differentiable building blocks for the dual-stream encoder/decoder.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "teb/autodiff.hpp"
#include "teb/dist.hpp"
#include "teb/rng.hpp"

namespace teb {

template <typename S>
using ParamList = std::vector<std::pair<std::string, Var<S>>>;

/// He-normal initialization, std = sqrt(2 / fan_in).
template <typename S>
Tensor<S> he_normal(Shape shape, Index fan_in, CounterRng& rng) {
  Tensor<S> t(std::move(shape));
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) {
    t[i] = static_cast<S>(rng.normal() * std_dev);
  }
  return t;
}

template <typename S>
Tensor<S> uniform_init(Shape shape, double bound, CounterRng& rng) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) {
    t[i] = static_cast<S>(rng.uniform(-bound, bound));
  }
  return t;
}

template <typename S>
struct Linear {
  Var<S> weight;  // (in, out)
  Var<S> bias;    // (out)

  Linear() = default;
  Linear(Index in, Index out, CounterRng& rng)
      : weight(Var<S>::param(he_normal<S>({in, out}, in, rng))),
        bias(Var<S>::param(Tensor<S>(Shape{out}))) {}

  Index in_dim() const { return weight.value().dim(0); }
  Index out_dim() const { return weight.value().dim(1); }

  Var<S> operator()(const Var<S>& x) const { return add_bias(matmul(x, weight), bias); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// One hidden layer with a rectified nonlinearity.
template <typename S>
struct Mlp {
  Linear<S> hidden;
  Linear<S> output;

  Mlp() = default;
  Mlp(Index in, Index width, Index out, CounterRng& rng)
      : hidden(in, width, rng), output(width, out, rng) {}

  Var<S> operator()(const Var<S>& x) const { return output(relu(hidden(x))); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    hidden.collect(out, prefix + ".hidden");
    output.collect(out, prefix + ".output");
  }
};

template <typename S>
struct Conv2d {
  Var<S> weight;  // (O, C, k, k)
  Var<S> bias;    // (O)
  PadMode pad = PadMode::reflect;

  Conv2d() = default;
  Conv2d(Index in_ch, Index out_ch, Index kernel, PadMode mode, CounterRng& rng)
      : weight(Var<S>::param(
            he_normal<S>({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng))),
        bias(Var<S>::param(Tensor<S>(Shape{out_ch}))),
        pad(mode) {}

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, pad); }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Gated recurrent cell (reset, update, candidate gates packed in that order).
template <typename S>
struct GruCell {
  Linear<S> input;   // in -> 3H
  Linear<S> hidden;  // H -> 3H

  GruCell() = default;
  GruCell(Index in, Index h, CounterRng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    input.weight = Var<S>::param(uniform_init<S>({in, 3 * h}, bound, rng));
    input.bias = Var<S>::param(uniform_init<S>({3 * h}, bound, rng));
    hidden.weight = Var<S>::param(uniform_init<S>({h, 3 * h}, bound, rng));
    hidden.bias = Var<S>::param(uniform_init<S>({3 * h}, bound, rng));
  }

  Index hidden_dim() const { return hidden.in_dim(); }

  /// `gi` is the precomputed input projection for this step: (B, 3H).
  Var<S> step(const Var<S>& gi, const Var<S>& h) const {
    const Index hd = hidden_dim();
    const Var<S> gh = hidden(h);
    const Var<S> r = sigmoid(slice_cols(gi, 0, hd) + slice_cols(gh, 0, hd));
    const Var<S> z = sigmoid(slice_cols(gi, hd, hd) + slice_cols(gh, hd, hd));
    const Var<S> n = tanh(slice_cols(gi, 2 * hd, hd) + r * slice_cols(gh, 2 * hd, hd));
    return n + z * (h - n);
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    input.collect(out, prefix + ".input");
    hidden.collect(out, prefix + ".hidden");
  }
};

enum class EncoderKind { small_conv, embedding_table, identity };

inline std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::small_conv: return "small_conv";
    case EncoderKind::embedding_table: return "embedding_table";
    case EncoderKind::identity: return "identity";
  }
  return "?";
}

inline EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "small_conv") return EncoderKind::small_conv;
  if (s == "embedding_table") return EncoderKind::embedding_table;
  if (s == "identity") return EncoderKind::identity;
  throw ContractError("unknown encoder kind '" + s + "'");
}

/// Per-step feature extractor. Input (N, step...) -> (N, out_dim).
template <typename S>
struct StepFeaturizer {
  EncoderKind kind = EncoderKind::identity;
  Shape step_shape;
  Index num_classes = 0;
  std::vector<Conv2d<S>> convs;
  Linear<S> proj;
  Var<S> table;  // (num_classes, dim)

  StepFeaturizer() = default;

  /// `channels` lists conv widths for small_conv; `out` is the feature width where it applies.
  StepFeaturizer(EncoderKind k, Shape step, Index classes, const std::vector<Index>& channels,
                 Index out, CounterRng& rng)
      : kind(k), step_shape(std::move(step)), num_classes(classes) {
    switch (kind) {
      case EncoderKind::small_conv: {
        require(step_shape.size() == 3, "small_conv expects (C, H, W) steps, got " +
                                            shape_str(step_shape));
        require(!channels.empty(), "small_conv needs at least one channel width");
        Index c = step_shape[0];
        Index h = step_shape[1];
        Index w = step_shape[2];
        for (std::size_t i = 0; i < channels.size(); ++i) {
          convs.emplace_back(c, channels[i], 3, PadMode::zeros, rng);
          c = channels[i];
          if (i + 1 < channels.size()) {
            require(h >= 2 && w >= 2, "small_conv: image too small for pooling");
            h /= 2;
            w /= 2;
          }
        }
        proj = Linear<S>(c * h * w, out, rng);
        break;
      }
      case EncoderKind::embedding_table:
        require(num_classes >= 1, "embedding_table needs num_classes >= 1");
        require(shape_size(step_shape) == 1, "embedding_table expects scalar class ids");
        table = Var<S>::param(he_normal<S>({num_classes, out}, 1, rng));
        break;
      case EncoderKind::identity:
        break;
    }
  }

  Index out_dim() const {
    switch (kind) {
      case EncoderKind::small_conv: return proj.out_dim();
      case EncoderKind::embedding_table: return table.value().dim(1);
      case EncoderKind::identity: return shape_size(step_shape);
    }
    return 0;
  }

  Var<S> operator()(const Tensor<S>& steps) const {
    const Index n = steps.rows();
    require(steps.cols() == shape_size(step_shape),
            "featurizer: step shape mismatch, expected " + shape_str(step_shape) + " got " +
                shape_str(steps.shape()));
    switch (kind) {
      case EncoderKind::small_conv: {
        Shape s{n};
        s.insert(s.end(), step_shape.begin(), step_shape.end());
        Var<S> x(steps.reshaped(s));
        for (std::size_t i = 0; i < convs.size(); ++i) {
          x = relu(convs[i](x));
          if (i + 1 < convs.size()) {
            x = maxpool2(x);
          }
        }
        return proj(reshape(x, {n, x.size() / n}));
      }
      case EncoderKind::embedding_table: {
        std::vector<Index> ids(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) {
          const auto id = static_cast<Index>(std::lround(static_cast<double>(steps[i])));
          require(id >= 0 && id < num_classes, "embedding_table: class id out of range");
          ids[static_cast<std::size_t>(i)] = id;
        }
        return gather_rows(table, std::move(ids));
      }
      case EncoderKind::identity:
        return Var<S>(steps.reshaped({n, steps.cols()}));
    }
    throw ContractError("featurizer: bad kind");
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      convs[i].collect(out, prefix + ".conv" + std::to_string(i));
    }
    if (kind == EncoderKind::small_conv) {
      proj.collect(out, prefix + ".proj");
    }
    if (kind == EncoderKind::embedding_table) {
      out.emplace_back(prefix + ".table", table);
    }
  }
};

/// Per-step featurizers (one per stream) feeding a shared recurrent aggregator.
/// Streams are (B, T, step...) and are concatenated feature-wise at each step.
template <typename S>
struct SequenceEncoder {
  std::vector<StepFeaturizer<S>> featurizers;
  GruCell<S> gru;

  SequenceEncoder() = default;
  SequenceEncoder(std::vector<StepFeaturizer<S>> f, Index hidden, CounterRng& rng)
      : featurizers(std::move(f)) {
    Index in = 0;
    for (const auto& fz : featurizers) {
      in += fz.out_dim();
    }
    gru = GruCell<S>(in, hidden, rng);
  }

  Index hidden_dim() const { return gru.hidden_dim(); }

  /// Final hidden state (B, hidden).
  Var<S> operator()(const std::vector<const Tensor<S>*>& streams) const {
    require(streams.size() == featurizers.size(), "encode_sequence: stream count mismatch");
    require(!streams.empty(), "encode_sequence: no streams");
    const Index b = streams.front()->dim(0);
    require(streams.front()->rank() >= 2, "encode_sequence: stream must be (B, T, ...)");
    const Index t = streams.front()->dim(1);
    require(t >= 1, "encode_sequence: empty sequence");
    std::vector<Var<S>> feats;
    for (std::size_t s = 0; s < streams.size(); ++s) {
      const Tensor<S>& x = *streams[s];
      require(x.rank() >= 2 && x.dim(0) == b && x.dim(1) == t,
              "encode_sequence: streams must share batch and length");
      Shape step_rows{b * t};
      const Index per_step = x.size() / std::max<Index>(b * t, 1);
      require(per_step == shape_size(featurizers[s].step_shape),
              "encode_sequence: shape mismatch with encoder kind " +
                  to_string(featurizers[s].kind));
      feats.push_back(featurizers[s](x.reshaped({b * t, per_step})));
    }
    const Var<S> all = feats.size() == 1 ? feats.front() : concat_cols(feats);
    const Var<S> gi_all = gru.input(all);
    Var<S> h(Tensor<S>(Shape{b, hidden_dim()}));
    std::vector<Index> idx(static_cast<std::size_t>(b));
    for (Index step = 0; step < t; ++step) {
      for (Index i = 0; i < b; ++i) {
        idx[static_cast<std::size_t>(i)] = i * t + step;
      }
      h = gru.step(gather_rows(gi_all, idx), h);
    }
    return h;
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < featurizers.size(); ++i) {
      featurizers[i].collect(out, prefix + ".feat" + std::to_string(i));
    }
    gru.collect(out, prefix + ".gru");
  }
};

/// Linear projection of the Y-pathway state into (prior mean, prior log-variance, context).
template <typename S>
struct PriorHead {
  Linear<S> proj;  // H -> 3d
  Index latent = 0;

  PriorHead() = default;
  PriorHead(Index hidden, Index latent_dim, CounterRng& rng)
      : proj(hidden, 3 * latent_dim, rng), latent(latent_dim) {}

  std::pair<DiagGaussian<S>, Var<S>> operator()(const Var<S>& hidden_y) const {
    require(hidden_y.cols() == proj.in_dim(), "prior_head: hidden dimension mismatch");
    const Var<S> out = proj(hidden_y);
    DiagGaussian<S> prior{slice_cols(out, 0, latent), slice_cols(out, latent, latent)};
    return {prior, slice_cols(out, 2 * latent, latent)};
  }

  void collect(ParamList<S>& out, const std::string& prefix) const { proj.collect(out, prefix); }
};

/// X-pathway perturbation of the prior: posterior mean = prior mean + mu_x,
/// posterior log-variance = log var_x. The last layer starts at mu_x = 0, var_x = 1e-7.
template <typename S>
struct Combiner {
  bool use_mlp = true;
  Mlp<S> mlp;        // [context; hidden_x] -> width -> 2d
  Linear<S> direct;  // hidden_x -> 2d
  Index latent = 0;

  static constexpr double kInitVariance = 1e-7;

  Combiner() = default;
  Combiner(Index context_dim, Index hidden_x, Index width, Index latent_dim, bool mlp_on,
           CounterRng& rng)
      : use_mlp(mlp_on), latent(latent_dim) {
    Linear<S>* last = nullptr;
    if (use_mlp) {
      mlp = Mlp<S>(context_dim + hidden_x, width, 2 * latent_dim, rng);
      last = &mlp.output;
    } else {
      direct = Linear<S>(hidden_x, 2 * latent_dim, rng);
      last = &direct;
    }
    last->weight.mutable_value().set_zero();
    auto& b = last->bias.mutable_value();
    for (Index i = 0; i < latent_dim; ++i) {
      b[i] = S(0);
      b[latent_dim + i] = static_cast<S>(std::log(kInitVariance));
    }
  }

  DiagGaussian<S> operator()(const Var<S>& context, const Var<S>& hidden_x,
                             const DiagGaussian<S>& prior) const {
    prior.validate();
    require(prior.dim() == latent, "combine_perturb: prior dimension mismatch");
    require(context.rows() == hidden_x.rows(), "combine_perturb: batch mismatch");
    Var<S> out;
    if (use_mlp) {
      require(context.cols() + hidden_x.cols() == mlp.hidden.in_dim(),
              "combine_perturb: input dimension mismatch");
      out = mlp(concat_cols<S>({context, hidden_x}));
    } else {
      require(hidden_x.cols() == direct.in_dim(), "combine_perturb: input dimension mismatch");
      out = direct(hidden_x);
    }
    return {prior.mean + slice_cols(out, 0, latent), slice_cols(out, latent, latent)};
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    if (use_mlp) {
      mlp.collect(out, prefix + ".mlp");
    } else {
      direct.collect(out, prefix + ".direct");
    }
  }
};

/// (4, h, w) grid of normalized distances to the top, bottom, left and right borders:
/// (i/(h-1), (h-1-i)/(h-1), j/(w-1), (w-1-j)/(w-1)) at pixel (i, j).
template <typename S>
Tensor<S> border_distance_grid(Index h, Index w) {
  require(h > 0 && w > 0, "border_distance_grid: nonpositive size");
  Tensor<S> g(Shape{4, h, w});
  const S hn = h > 1 ? static_cast<S>(h - 1) : S(1);
  const S wn = w > 1 ? static_cast<S>(w - 1) : S(1);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const Index p = i * w + j;
      g[0 * h * w + p] = static_cast<S>(i) / hn;
      g[1 * h * w + p] = static_cast<S>(h - 1 - i) / hn;
      g[2 * h * w + p] = static_cast<S>(j) / wn;
      g[3 * h * w + p] = static_cast<S>(w - 1 - j) / wn;
    }
  }
  return g;
}

/// Positional-encoding image decoder with size-preserving reflection-padded convolutions.
template <typename S>
struct ImageDecoder {
  Index channels = 1, height = 0, width = 0;
  Linear<S> lift;  // 4 -> latent
  std::vector<Conv2d<S>> convs;

  ImageDecoder() = default;
  ImageDecoder(Index latent, Shape out_shape, const std::vector<Index>& hidden_channels,
               const std::vector<Index>& kernels, Index final_kernel, CounterRng& rng) {
    require(out_shape.size() == 3, "decode_image: out_shape must be (c, h, w)");
    require(out_shape[0] > 0 && out_shape[1] > 0 && out_shape[2] > 0,
            "decode_image: out_shape must be positive");
    require(hidden_channels.size() == kernels.size(),
            "decode_image: one kernel size per hidden layer");
    channels = out_shape[0];
    height = out_shape[1];
    width = out_shape[2];
    lift = Linear<S>(4, latent, rng);
    Index c = latent;
    for (std::size_t i = 0; i < hidden_channels.size(); ++i) {
      convs.emplace_back(c, hidden_channels[i], kernels[i], PadMode::reflect, rng);
      c = hidden_channels[i];
    }
    convs.emplace_back(c, channels, final_kernel, PadMode::reflect, rng);
  }

  Index latent_dim() const { return lift.out_dim(); }

  /// (B, latent) -> (B, c, h, w) output mean (or logits).
  Var<S> operator()(const Var<S>& z) const {
    require(z.cols() == latent_dim(), "decode_image: latent dimension mismatch");
    const Tensor<S> grid = border_distance_grid<S>(height, width);
    Tensor<S> per_pixel(Shape{height * width, 4});
    per_pixel.mat() = grid.mat(4, height * width).transpose();
    const Var<S> pos = reshape(transpose(lift(Var<S>(per_pixel))), {latent_dim(), height, width});
    Var<S> x = spatial_broadcast_add(z, pos);
    for (std::size_t i = 0; i < convs.size(); ++i) {
      x = convs[i](x);
      if (i + 1 < convs.size()) {
        x = relu(x);
      }
    }
    return x;
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    lift.collect(out, prefix + ".lift");
    for (std::size_t i = 0; i < convs.size(); ++i) {
      convs[i].collect(out, prefix + ".conv" + std::to_string(i));
    }
  }
};

/// Classic 4th-order Runge-Kutta with a fixed step. Returns states h(0), h(dt), ..., h(steps*dt).
template <typename S, typename Field>
std::vector<Var<S>> rk4_trajectory(Field&& field, const Var<S>& h0, S dt, int steps) {
  require(steps >= 1, "rk4_trajectory: need at least one step");
  std::vector<Var<S>> states{h0};
  states.reserve(static_cast<std::size_t>(steps) + 1);
  Var<S> h = h0;
  const S half = dt / S(2);
  for (int s = 0; s < steps; ++s) {
    const Var<S> k1 = field(h);
    const Var<S> k2 = field(h + half * k1);
    const Var<S> k3 = field(h + half * k2);
    const Var<S> k4 = field(h + dt * k3);
    h = h + (dt / S(6)) * (k1 + S(2) * k2 + S(2) * k3 + k4);
    states.push_back(h);
  }
  return states;
}

/// Latent ODE decoder: dh/dt = f(h) from h(0) = z, scalar readout per state,
/// output element 0 replaced by the last observed value.
template <typename S>
struct OdeDecoder {
  Mlp<S> dynamics;  // latent -> width -> latent
  Mlp<S> readout;   // latent -> width -> 1
  double step = 0.05;

  OdeDecoder() = default;
  OdeDecoder(Index latent, Index width, double dt, CounterRng& rng)
      : dynamics(latent, width, latent, rng), readout(latent, width, 1, rng), step(dt) {}

  Index latent_dim() const { return dynamics.hidden.in_dim(); }

  /// z (B, latent), y_last (B, 1) -> (B, horizon + 1).
  Var<S> operator()(const Var<S>& z, int horizon, const Tensor<S>& y_last) const {
    require(horizon >= 1, "decode_timeseries: horizon must be positive");
    require(z.cols() == latent_dim(), "decode_timeseries: latent dimension mismatch");
    require(y_last.size() == z.rows(), "decode_timeseries: one last value per example");
    const auto states = rk4_trajectory<S>([this](const Var<S>& h) { return dynamics(h); }, z,
                                          static_cast<S>(step), horizon);
    std::vector<Var<S>> cols;
    cols.reserve(states.size());
    cols.emplace_back(y_last.reshaped({z.rows(), 1}));
    for (std::size_t i = 1; i < states.size(); ++i) {
      cols.push_back(readout(states[i]));
    }
    return concat_cols(cols);
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    dynamics.collect(out, prefix + ".dynamics");
    readout.collect(out, prefix + ".readout");
  }
};

/// Direct vector head for recurrent sequence baselines: (B, latent) -> (B, horizon + 1).
template <typename S>
struct VectorSequenceDecoder {
  Mlp<S> head;

  VectorSequenceDecoder() = default;
  VectorSequenceDecoder(Index latent, Index width, int horizon, CounterRng& rng)
      : head(latent, width, horizon, rng) {}

  Var<S> operator()(const Var<S>& z, const Tensor<S>& y_last) const {
    return concat_cols<S>({Var<S>(y_last.reshaped({z.rows(), 1})), head(z)});
  }

  void collect(ParamList<S>& out, const std::string& prefix) const {
    head.collect(out, prefix + ".head");
  }
};

// ---------------------------------------------------------------- gradient checking

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = true;
  bool nondifferentiable = false;
  std::string worst;  // "<input>[<index>]" of the worst coordinate
};

/// Compares `analytic` gradients against central finite differences of `f` at the
/// current values of `inputs`. At most `max_coords` coordinates per input are probed.
/// A kink (one-sided slopes disagreeing) marks the point non-differentiable and fails.
inline GradCheckReport compare_gradients(const std::function<double()>& f,
                                         std::vector<Var<double>>& inputs,
                                         const std::vector<Tensor<double>>& analytic,
                                         double step = 1e-5, double tolerance = 1e-4,
                                         Index max_coords = 64) {
  require(inputs.size() == analytic.size(), "grad_check: one gradient per input");
  GradCheckReport rep;
  const double f0 = f();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& x = inputs[k].mutable_value();
    require(analytic[k].size() == x.size(), "grad_check: gradient shape mismatch");
    const Index n = x.size();
    const Index stride = std::max<Index>(1, n / std::max<Index>(1, max_coords));
    for (Index i = 0; i < n; i += stride) {
      const double orig = x[i];
      x[i] = orig + step;
      const double fp = f();
      x[i] = orig - step;
      const double fm = f();
      x[i] = orig;
      const double numeric = (fp - fm) / (2 * step);
      const double fwd = (fp - f0) / step;
      const double bwd = (f0 - fm) / step;
      const double scale = std::max({std::abs(fwd), std::abs(bwd), 1.0});
      if (std::abs(fwd - bwd) > 1e-2 * scale) {
        rep.nondifferentiable = true;
        rep.pass = false;
        rep.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "] (kink)";
        continue;
      }
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        if (!rep.nondifferentiable) {
          rep.worst = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  if (rep.max_rel_error >= tolerance) {
    rep.pass = false;
  }
  return rep;
}

/// Analytic (reverse-mode) vs numeric gradient of a scalar-valued graph builder.
inline GradCheckReport grad_check(const std::function<Var<double>()>& op,
                                  std::vector<Var<double>> inputs, double step = 1e-5,
                                  double tolerance = 1e-4, Index max_coords = 64) {
  for (auto& v : inputs) {
    v.set_requires_grad(true);
    v.zero_grad();
  }
  const Var<double> out = op();
  require(out.size() == 1, "grad_check: op must be scalar-valued");
  backward(out);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& v : inputs) {
    analytic.push_back(v.grad());
  }
  auto f = [&op] {
    NoGradGuard guard;
    return op().value()[0];
  };
  return compare_gradients(f, inputs, analytic, step, tolerance, max_coords);
}

}  // namespace teb
