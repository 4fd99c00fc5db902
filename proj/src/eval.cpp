#include "teb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "teb/optim.hpp"

namespace teb {

namespace {

constexpr std::uint64_t kEvalStream = 0x6576616c;

std::vector<Index> range_indices(Index first, Index count) {
  std::vector<Index> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), first);
  return idx;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return EvalMetrics::kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

Tensor<float> example_noise(Index first, Index count, Index dim, std::uint64_t seed) {
  const CounterRng root(seed, kEvalStream);
  Tensor<float> eps(Shape{count, dim});
  for (Index i = 0; i < count; ++i) {
    CounterRng r = root.substream(static_cast<std::uint64_t>(first + i));
    for (Index j = 0; j < dim; ++j) {
      eps[i * dim + j] = static_cast<float>(r.normal());
    }
  }
  return eps;
}

Predictions predict(const Model<float>& model, const Dataset& data, std::uint64_t seed, int batch_size) {
  require(batch_size >= 1, "predict: batch size must be >= 1");
  NoGradGuard guard;
  const Index n = data.size();
  Predictions p;
  p.kl.reserve(static_cast<std::size_t>(n));
  p.loglik.reserve(static_cast<std::size_t>(n));
  p.output = Tensor<float>(data.y_next.shape());
  const Index per = n > 0 ? data.y_next.size() / n : 0;
  const bool bern = model.output().kind == OutputKind::bernoulli_logits;
  for (Index start = 0; start < n; start += batch_size) {
    const Index count = std::min<Index>(batch_size, n - start);
    const StreamBatch<float> b = data.batch(range_indices(start, count));
    const ForwardPass<float> f = model.forward(b, example_noise(start, count, model.latent_dim(), seed));
    for (Index i = 0; i < count; ++i) {
      p.kl.push_back(f.kl.value()[i]);
      p.loglik.push_back(f.loglik.value()[i]);
    }
    const Tensor<float>& out = f.prediction.value();
    require(out.size() == count * per, "predict: decoder output does not match the target shape");
    for (Index k = 0; k < count * per; ++k) {
      p.output[start * per + k] = bern ? sigmoid_scalar(out[k]) : out[k];
    }
  }
  return p;
}

double te_metric(const Model<float>& model, const Dataset& data, int batch_size) {
  // The KL term is closed-form and does not depend on the latent noise.
  return mean_of(predict(model, data, 0, batch_size).kl);
}

double recon_loglik(const Model<float>& model, const Dataset& data, std::uint64_t seed, int batch_size) {
  return mean_of(predict(model, data, seed, batch_size).loglik);
}

std::vector<int> classify_rotation(const Tensor<float>& frames, const Tensor<float>& templates,
                                   const std::vector<int>& angles) {
  require(templates.rank() == 4 && templates.dim(1) == 8, "classify_rotation: templates must be (K, 8, s, s)");
  const Index k = templates.dim(0);
  const Index px = templates.dim(2) * templates.dim(3);
  const Index n = frames.rows();
  require(frames.size() == n * px, "classify_rotation: frame size does not match templates");
  require(static_cast<Index>(angles.size()) == n, "classify_rotation: one angle per frame");
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int a = angles[static_cast<std::size_t>(i)];
    require(a >= 0 && a < 8, "classify_rotation: angle index out of range");
    const auto f = frames.flat().segment(i * px, px);
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Index c = 0; c < k; ++c) {
      const double d = (f - templates.flat().segment((c * 8 + a) * px, px)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

ColorClassifier::ColorClassifier(const Dataset& train, const Dataset& val, std::uint64_t seed, int max_epochs) {
  require(train.kind == TaskKind::needle_haystack && train.y_next.rank() == 4,
          "ColorClassifier: needs needle-task frames");
  require(train.size() > 0 && val.size() > 0, "ColorClassifier: empty split");
  CounterRng rng(seed, 0x636c66);
  const Index side = train.y_next.dim(2);
  const std::vector<Index> chans{3, 8, 16, 16};
  for (std::size_t i = 0; i + 1 < chans.size(); ++i) {
    blocks_.emplace_back(chans[i], chans[i + 1], 3, PadMode::zeros, rng);
  }
  Index s = side;
  for (std::size_t i = 0; i < blocks_.size(); ++i) s /= 2;
  require(s >= 1, "ColorClassifier: image too small for three pooling blocks");
  head_ = Linear<float>(chans.back() * s * s, 7, rng);

  ParamList<float> params;
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(params, "block" + std::to_string(i));
  head_.collect(params, "head");
  Adam<float> opt(params, {1e-3, 0.9, 0.999, 1e-8});

  const Index n = train.size();
  const Index bs = 64;
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterRng er = rng.substream(static_cast<std::uint64_t>(epoch));
    er.shuffle(order);
    for (Index start = 0; start < n; start += bs) {
      const Index count = std::min(bs, n - start);
      std::vector<Index> idx(order.begin() + start, order.begin() + start + count);
      std::vector<int> labels;
      for (Index i : idx) labels.push_back(train.y_class[static_cast<std::size_t>(i)]);
      opt.zero_grad();
      const Var<float> ll = mean(categorical_log_likelihood(labels, logits(Var<float>(train.y_next.take_rows(idx)))));
      const Var<float> loss = scale(ll, -1.0f);
      backward(loss);
      opt.step();
    }
    const std::vector<int> pred = classify(val.y_next);
    Index hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == val.y_class[i];
    held_out_ = static_cast<double>(hits) / static_cast<double>(pred.size());
    if (held_out_ >= 1.0) break;
  }
}

Var<float> ColorClassifier::logits(const Var<float>& x) const {
  Var<float> h = x;
  for (const auto& b : blocks_) h = maxpool2(relu(b(h)));
  return head_(reshape(h, {h.shape()[0], h.size() / h.shape()[0]}));
}

std::vector<int> ColorClassifier::classify(const Tensor<float>& frames) const {
  require(frames.rank() == 4 && frames.dim(1) == 3, "ColorClassifier: frames must be (N, 3, S, S)");
  NoGradGuard guard;
  const Index n = frames.rows();
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index start = 0; start < n; start += 256) {
    const Index count = std::min<Index>(256, n - start);
    const Tensor<float> lg = logits(Var<float>(frames.take_rows(range_indices(start, count)))).value();
    for (Index i = 0; i < count; ++i) {
      Index arg = 0;
      lg.mat().row(i).maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

double color_accuracy(const Tensor<float>& frames, const std::vector<int>& labels, const ColorClassifier& clf) {
  if (!clf.passes_gate()) {
    throw NumericError("color classifier held-out accuracy " + std::to_string(clf.held_out_accuracy()) +
                       " is below the " + std::to_string(ColorClassifier::kGate) + " gate; metric refused");
  }
  require(static_cast<Index>(labels.size()) == frames.rows(), "color_accuracy: one label per frame");
  const std::vector<int> pred = clf.classify(frames);
  Index hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

Estimate mean_estimate(const std::vector<double>& v) {
  Estimate e;
  e.n = static_cast<Index>(v.size());
  if (v.empty()) return e;
  e.mean = mean_of(v);
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - e.mean) * (x - e.mean);
    e.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return e;
}

Estimate info_yz_given_y(const TebCModel<float>& model, const Dataset& data, std::uint64_t seed, int batch_size) {
  NoGradGuard guard;
  std::vector<double> full, base;
  const Index n = data.size();
  for (Index start = 0; start < n; start += batch_size) {
    const Index count = std::min<Index>(batch_size, n - start);
    const StreamBatch<float> b = data.batch(range_indices(start, count));
    const ForwardPass<float> f = model.forward(b, example_noise(start, count, model.latent_dim(), seed));
    const Var<float> ctx = model.context_loglik(b);
    for (Index i = 0; i < count; ++i) {
      full.push_back(f.loglik.value()[i]);
      base.push_back(ctx.value()[i]);
    }
  }
  return decoder_difference(full, base);
}

Estimate decoder_difference(const std::vector<double>& log_d, const std::vector<double>& log_dy) {
  require(log_d.size() == log_dy.size() && !log_d.empty(), "decoder_difference: need equal, nonempty inputs");
  std::vector<double> diff(log_d.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = log_d[i] - log_dy[i];
  return mean_estimate(diff);
}

EvalMetrics evaluate(const Model<float>& model, const Dataset& data, const EvalContext& ctx) {
  const Predictions p = predict(model, data, ctx.seed, ctx.batch_size);
  EvalMetrics m;
  m.n = data.size();
  m.te_metric = mean_of(p.kl);
  m.recon_loglik = mean_of(p.loglik);
  std::vector<double> ch, un;
  for (std::size_t i = 0; i < p.loglik.size(); ++i) (data.changed[i] ? ch : un).push_back(p.loglik[i]);
  m.n_changed = static_cast<Index>(ch.size());
  m.loglik_changed = mean_of(ch);
  m.loglik_unchanged = mean_of(un);

  std::vector<int> cls;
  if (data.kind == TaskKind::switching_rotation && ctx.templates != nullptr) {
    cls = classify_rotation(p.output, *ctx.templates, data.angle);
  } else if (data.kind == TaskKind::needle_haystack && ctx.classifier != nullptr) {
    color_accuracy(p.output, data.y_class, *ctx.classifier);  // enforces the gate
    cls = ctx.classifier->classify(p.output);
  }
  if (!cls.empty()) {
    std::vector<double> hit, hit_ch;
    for (std::size_t i = 0; i < cls.size(); ++i) {
      const double h = cls[i] == data.y_class[i] ? 1.0 : 0.0;
      hit.push_back(h);
      if (data.changed[i]) hit_ch.push_back(h);
    }
    m.accuracy = mean_of(hit);
    m.accuracy_changed = mean_of(hit_ch);
  }
  if (const auto* tc = dynamic_cast<const TebCModel<float>*>(&model)) {
    m.info_yz_given_y = info_yz_given_y(*tc, data, ctx.seed, ctx.batch_size).mean;
  }
  return m;
}

}  // namespace teb
