#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "teb/autodiff.hpp"

namespace teb {

/// Log-variances are clamped into this range before exponentiation.
inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 20.0;

/// Batch of diagonal Gaussians: mean and log_var are both (B, d).
template <typename S>
struct DiagGaussian {
  Var<S> mean;
  Var<S> log_var;

  Index batch() const { return mean.rows(); }
  Index dim() const { return mean.cols(); }

  void validate() const {
    require(mean.defined() && log_var.defined(), "DiagGaussian: undefined parameters");
    require(mean.shape() == log_var.shape(),
            "DiagGaussian: mean " + shape_str(mean.shape()) + " vs log_var " +
                shape_str(log_var.shape()));
    require(dim() >= 1, "DiagGaussian: latent dimension must be >= 1");
  }

  /// Single-row constant distribution from plain vectors.
  static DiagGaussian constant(const Vec<S>& mu, const Vec<S>& lv) {
    require(mu.size() == lv.size(), "DiagGaussian: mean/log_var length mismatch");
    return {Var<S>(Tensor<S>(Shape{1, mu.size()}, mu)), Var<S>(Tensor<S>(Shape{1, lv.size()}, lv))};
  }

  static DiagGaussian standard(Index batch, Index dim) {
    return {Var<S>(Tensor<S>(Shape{batch, dim})), Var<S>(Tensor<S>(Shape{batch, dim}))};
  }
};

enum class OutputKind { gaussian_fixed_var, bernoulli_logits };

struct OutputDistSpec {
  OutputKind kind = OutputKind::gaussian_fixed_var;
  double fixed_variance = 0.1;

  void validate() const {
    require(fixed_variance > 0.0 && std::isfinite(fixed_variance),
            "OutputDistSpec: fixed_variance must be > 0");
  }
};

inline std::string to_string(OutputKind k) {
  return k == OutputKind::gaussian_fixed_var ? "gaussian_fixed_var" : "bernoulli_logits";
}

inline OutputKind output_kind_from_string(const std::string& s) {
  if (s == "gaussian_fixed_var") {
    return OutputKind::gaussian_fixed_var;
  }
  if (s == "bernoulli_logits") {
    return OutputKind::bernoulli_logits;
  }
  throw ContractError("unknown output distribution '" + s + "'");
}

namespace detail {

template <typename S>
S clamp_lv(S v) {
  return std::min(std::max(v, S(kLogVarMin)), S(kLogVarMax));
}

template <typename S>
bool lv_active(S v) {
  return v >= S(kLogVarMin) && v <= S(kLogVarMax);
}

template <typename S>
void check_finite(const Var<S>& v, const char* what) {
  if (!v.value().all_finite()) {
    throw NumericError(std::string(what) + ": non-finite input");
  }
}

}  // namespace detail

/// Per-example KL(q || p) in nats, summed over latent dimensions: returns (B).
template <typename S>
Var<S> kl_diag_gaussian(const DiagGaussian<S>& q, const DiagGaussian<S>& p) {
  q.validate();
  p.validate();
  require(q.mean.shape() == p.mean.shape(),
          "kl_diag_gaussian: dimension mismatch " + shape_str(q.mean.shape()) + " vs " +
              shape_str(p.mean.shape()));
  detail::check_finite(q.mean, "kl_diag_gaussian");
  detail::check_finite(q.log_var, "kl_diag_gaussian");
  detail::check_finite(p.mean, "kl_diag_gaussian");
  detail::check_finite(p.log_var, "kl_diag_gaussian");
  const Index b = q.batch();
  const Index d = q.dim();
  const auto mq = q.mean.value().mat();
  const auto lq = q.log_var.value().mat();
  const auto mp = p.mean.value().mat();
  const auto lp = p.log_var.value().mat();
  Tensor<S> out(Shape{b});
  for (Index i = 0; i < b; ++i) {
    S acc = 0;
    for (Index j = 0; j < d; ++j) {
      const S lvq = detail::clamp_lv(lq(i, j));
      const S lvp = detail::clamp_lv(lp(i, j));
      const S diff = mq(i, j) - mp(i, j);
      acc += (lvp - lvq) + (std::exp(lvq) + diff * diff) * std::exp(-lvp) - S(1);
    }
    out[i] = S(0.5) * acc;
  }
  return detail::make_op<S>(
      std::move(out), {q.mean, q.log_var, p.mean, p.log_var}, [b, d](Node<S>& n) {
        const auto mq2 = n.parents[0]->value.mat();
        const auto lq2 = n.parents[1]->value.mat();
        const auto mp2 = n.parents[2]->value.mat();
        const auto lp2 = n.parents[3]->value.mat();
        RowMat<S> gmq(b, d), glq(b, d), gmp(b, d), glp(b, d);
        for (Index i = 0; i < b; ++i) {
          const S g = n.grad[i];
          for (Index j = 0; j < d; ++j) {
            const S lvq = detail::clamp_lv(lq2(i, j));
            const S lvp = detail::clamp_lv(lp2(i, j));
            const S inv_vp = std::exp(-lvp);
            const S vq = std::exp(lvq);
            const S diff = mq2(i, j) - mp2(i, j);
            gmq(i, j) = g * diff * inv_vp;
            gmp(i, j) = -gmq(i, j);
            glq(i, j) = detail::lv_active(lq2(i, j)) ? g * S(0.5) * (vq * inv_vp - S(1)) : S(0);
            glp(i, j) = detail::lv_active(lp2(i, j))
                            ? g * S(0.5) * (S(1) - (vq + diff * diff) * inv_vp)
                            : S(0);
          }
        }
        detail::accumulate(n, 0, Eigen::Map<const Vec<S>>(gmq.data(), gmq.size()));
        detail::accumulate(n, 1, Eigen::Map<const Vec<S>>(glq.data(), glq.size()));
        detail::accumulate(n, 2, Eigen::Map<const Vec<S>>(gmp.data(), gmp.size()));
        detail::accumulate(n, 3, Eigen::Map<const Vec<S>>(glp.data(), glp.size()));
      });
}

/// z = mean + exp(log_var / 2) * eps, differentiable in mean and log_var.
template <typename S>
Var<S> reparam_sample(const DiagGaussian<S>& dist, const Tensor<S>& eps) {
  dist.validate();
  require(eps.size() == dist.mean.size(),
          "reparam_sample: noise " + shape_str(eps.shape()) + " vs distribution " +
              shape_str(dist.mean.shape()));
  detail::check_finite(dist.mean, "reparam_sample");
  detail::check_finite(dist.log_var, "reparam_sample");
  const Index n = dist.mean.size();
  Tensor<S> out(dist.mean.shape());
  const auto& mu = dist.mean.value();
  const auto& lv = dist.log_var.value();
  for (Index i = 0; i < n; ++i) {
    out[i] = mu[i] + std::exp(detail::clamp_lv(lv[i]) / S(2)) * eps[i];
  }
  return detail::make_op<S>(std::move(out), {dist.mean, dist.log_var}, [eps](Node<S>& node) {
    detail::accumulate(node, 0, node.grad.flat());
    if (detail::wants(node, 1)) {
      const auto& lv2 = node.parents[1]->value;
      auto& g = node.parents[1]->ensure_grad();
      for (Index i = 0; i < lv2.size(); ++i) {
        if (detail::lv_active(lv2[i])) {
          g[i] += node.grad[i] * S(0.5) * std::exp(lv2[i] / S(2)) * eps[i];
        }
      }
    }
  });
}

/// Per-example log-likelihood summed over all non-batch elements: returns (B).
template <typename S>
Var<S> log_likelihood_per_example(const Tensor<S>& target, const Var<S>& prediction,
                                  const OutputDistSpec& spec) {
  spec.validate();
  require(target.shape() == prediction.shape(),
          "log_likelihood: target " + shape_str(target.shape()) + " vs prediction " +
              shape_str(prediction.shape()));
  const Index b = target.rows();
  const Index m = target.cols();
  const auto t = target.mat();
  const auto y = prediction.value().mat();
  Tensor<S> out(Shape{b});
  if (spec.kind == OutputKind::gaussian_fixed_var) {
    const S v = static_cast<S>(spec.fixed_variance);
    const S norm = S(-0.5) * std::log(S(2) * std::numbers::pi_v<S> * v);
    for (Index i = 0; i < b; ++i) {
      out[i] = norm * static_cast<S>(m) - (t.row(i) - y.row(i)).squaredNorm() / (S(2) * v);
    }
    return detail::make_op<S>(std::move(out), {prediction}, [target, v, b, m](Node<S>& n) {
      RowMat<S> g = (target.mat() - n.parents[0]->value.mat()) / v;
      for (Index i = 0; i < b; ++i) {
        g.row(i) *= n.grad[i];
      }
      (void)m;
      detail::accumulate(n, 0, Eigen::Map<const Vec<S>>(g.data(), g.size()));
    });
  }
  for (Index i = 0; i < target.size(); ++i) {
    require(target[i] >= S(0) && target[i] <= S(1),
            "log_likelihood: bernoulli target outside [0, 1]");
  }
  for (Index i = 0; i < b; ++i) {
    S acc = 0;
    for (Index j = 0; j < m; ++j) {
      const S l = y(i, j);
      const S softplus = std::max(l, S(0)) + std::log1p(std::exp(-std::abs(l)));
      acc += t(i, j) * l - softplus;
    }
    out[i] = acc;
  }
  return detail::make_op<S>(std::move(out), {prediction}, [target, b, m](Node<S>& n) {
    const auto l = n.parents[0]->value.mat();
    const auto t2 = target.mat();
    RowMat<S> g(b, m);
    for (Index i = 0; i < b; ++i) {
      for (Index j = 0; j < m; ++j) {
        g(i, j) = n.grad[i] * (t2(i, j) - sigmoid_scalar(l(i, j)));
      }
    }
    detail::accumulate(n, 0, Eigen::Map<const Vec<S>>(g.data(), g.size()));
  });
}

/// log softmax(logits)[label] per row: (B, K) logits -> (B).
template <typename S>
Var<S> categorical_log_likelihood(const std::vector<int>& labels, const Var<S>& logits) {
  const Index b = logits.rows();
  const Index k = logits.cols();
  require(static_cast<Index>(labels.size()) == b, "categorical_log_likelihood: label count");
  const auto l = logits.value().mat();
  RowMat<S> prob(b, k);
  Tensor<S> out(Shape{b});
  for (Index i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < k, "categorical_log_likelihood: label out of range");
    const S m = l.row(i).maxCoeff();
    const S lse = m + std::log((l.row(i).array() - m).exp().sum());
    prob.row(i) = (l.row(i).array() - lse).exp();
    out[i] = l(i, y) - lse;
  }
  return detail::make_op<S>(std::move(out), {logits}, [labels, prob, b](Node<S>& n) {
    RowMat<S> g = -prob;
    for (Index i = 0; i < b; ++i) {
      g(i, labels[static_cast<std::size_t>(i)]) += S(1);
      g.row(i) *= n.grad[i];
    }
    detail::accumulate(n, 0, Eigen::Map<const Vec<S>>(g.data(), g.size()));
  });
}

/// Log-likelihood summed over elements and averaged over the batch.
template <typename S>
Var<S> log_likelihood(const Tensor<S>& target, const Var<S>& prediction,
                      const OutputDistSpec& spec) {
  return mean(log_likelihood_per_example(target, prediction, spec));
}

}  // namespace teb
