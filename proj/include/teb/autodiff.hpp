#pragma once

// Tape-free reverse-mode automatic differentiation over dense tensors.
//
// Every op builds a node holding its value, its parents and a closure that
// pushes the node's gradient into the parents. Nodes whose inputs do not
// require gradients are recorded as plain constants, so frozen sub-networks
// and data cost nothing on the backward pass.

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "teb/tensor.hpp"

namespace teb {

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<S>& ensure_grad() {
    if (grad.size() != value.size()) {
      grad = Tensor<S>(value.shape());
    }
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && grad.size() > 0; }
};

/// Thread-local switch for graph recording; evaluation code disables it.
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
class Var {
 public:
  using Scalar = S;

  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false)
      : node_(std::make_shared<Node<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var param(Tensor<S> value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index size() const { return node_->value.size(); }
  Index rank() const { return node_->value.rank(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Gradient after backward(); zeros if nothing flowed here.
  const Tensor<S>& grad() const { return node_->ensure_grad(); }
  void zero_grad() {
    if (node_->has_grad()) {
      node_->grad.set_zero();
    }
  }

  const std::shared_ptr<Node<S>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <typename S, typename F>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> inputs, F&& backward) {
  Var<S> out(std::move(value));
  if (!GradMode::enabled()) {
    return out;
  }
  bool any = false;
  for (const auto& in : inputs) {
    any = any || in.requires_grad();
  }
  if (!any) {
    return out;
  }
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (auto& in : inputs) {
    node.parents.push_back(in.node());
  }
  node.backward_fn = std::forward<F>(backward);
  return out;
}

/// Adds `delta` into the gradient of parent `i` when that parent wants one.
template <typename S, typename Expr>
void accumulate(Node<S>& self, std::size_t i, const Expr& delta) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) {
    return;
  }
  p.ensure_grad().flat() += delta;
}

template <typename S>
bool wants(const Node<S>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

}  // namespace detail

/// Backpropagates from `root`. A non-scalar root is seeded with `seed` (ones if omitted).
template <typename S>
void backward(const Var<S>& root, const Tensor<S>* seed = nullptr) {
  if (!root.requires_grad()) {
    return;
  }
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<S>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& g = root.node()->ensure_grad();
  if (seed != nullptr) {
    require(seed->size() == g.size(), "backward seed shape mismatch");
    g.flat() += seed->flat();
  } else {
    g.flat().array() += S(1);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn && n->has_grad()) {
      n->backward_fn(*n);
    }
  }
}

// ---------------------------------------------------------------- elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape(), Vec<S>(a.value().flat() + b.value().flat()));
  return detail::make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
    detail::accumulate(n, 0, n.grad.flat());
    detail::accumulate(n, 1, n.grad.flat());
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require(a.shape() == b.shape(),
          "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape(), Vec<S>(a.value().flat() - b.value().flat()));
  return detail::make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
    detail::accumulate(n, 0, n.grad.flat());
    detail::accumulate(n, 1, (-n.grad.flat()).eval());
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape(), Vec<S>(a.value().flat().cwiseProduct(b.value().flat())));
  return detail::make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
    const auto& av = n.parents[0]->value.flat();
    const auto& bv = n.parents[1]->value.flat();
    detail::accumulate(n, 0, n.grad.flat().cwiseProduct(bv));
    detail::accumulate(n, 1, n.grad.flat().cwiseProduct(av));
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape(), Vec<S>(a.value().flat() * factor));
  return detail::make_op<S>(std::move(out), {a}, [factor](Node<S>& n) {
    detail::accumulate(n, 0, (n.grad.flat() * factor).eval());
  });
}

template <typename S>
Var<S> add_const(const Var<S>& a, S c) {
  Tensor<S> out(a.shape(), Vec<S>(a.value().flat().array() + c));
  return detail::make_op<S>(std::move(out), {a},
                            [](Node<S>& n) { detail::accumulate(n, 0, n.grad.flat()); });
}

template <typename S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S>
Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <typename S>
Var<S> operator*(const Var<S>& a, S s) { return scale(a, s); }
template <typename S>
Var<S> operator*(S s, const Var<S>& a) { return scale(a, s); }

namespace detail {

/// y = f(x) elementwise; `dydx(x, y)` gives the local derivative.
template <typename S, typename F, typename D>
Var<S> unary(const Var<S>& a, F f, D dydx) {
  Tensor<S> out(a.shape(), Vec<S>(a.value().flat().unaryExpr(f)));
  return make_op<S>(std::move(out), {a}, [dydx](Node<S>& n) {
    const auto& x = n.parents[0]->value.flat();
    const auto& y = n.value.flat();
    Vec<S> d(x.size());
    for (Index i = 0; i < x.size(); ++i) {
      d[i] = n.grad[i] * dydx(x[i], y[i]);
    }
    accumulate(n, 0, d);
  });
}

}  // namespace detail

template <typename S>
Var<S> relu(const Var<S>& a) {
  return detail::unary(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
Var<S> tanh(const Var<S>& a) {
  return detail::unary(
      a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
S sigmoid_scalar(S x) {
  if (x >= S(0)) {
    return S(1) / (S(1) + std::exp(-x));
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  return detail::unary(
      a, [](S x) { return sigmoid_scalar(x); }, [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  return detail::unary(
      a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return detail::unary(
      a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
template <typename S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
  return detail::unary(
      a, [lo, hi](S x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](S x, S) { return (x < lo || x > hi) ? S(0) : S(1); });
}

// ---------------------------------------------------------------- reductions

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a.value().flat().sum());
  return detail::make_op<S>(std::move(out), {a}, [](Node<S>& n) {
    auto& p = *n.parents[0];
    p.ensure_grad().flat().array() += n.grad[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.size()));
}

/// Sums every non-batch axis: (N, ...) -> (N).
template <typename S>
Var<S> sum_rows(const Var<S>& a) {
  const Index r = a.rows();
  Tensor<S> out(Shape{r}, Vec<S>(a.value().mat().rowwise().sum()));
  return detail::make_op<S>(std::move(out), {a}, [](Node<S>& n) {
    auto& p = *n.parents[0];
    auto g = p.ensure_grad().mat();
    g.colwise() += n.grad.flat();
  });
}

// ---------------------------------------------------------------- linear algebra

/// (N, K) x (K, M) -> (N, M). Inputs of higher rank are viewed as (dim0, rest).
template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& w) {
  const Index n = a.rows();
  const Index k = a.cols();
  require(w.rank() >= 1, "matmul: bad weight");
  const Index wk = w.value().rows();
  const Index m = w.value().cols();
  require(k == wk, "matmul: inner dimensions " + std::to_string(k) + " vs " + std::to_string(wk));
  Tensor<S> out(Shape{n, m});
  out.mat().noalias() = a.value().mat() * w.value().mat();
  return detail::make_op<S>(std::move(out), {a, w}, [](Node<S>& n) {
    auto& pa = *n.parents[0];
    auto& pw = *n.parents[1];
    const auto g = n.grad.mat();
    if (pa.requires_grad) {
      pa.ensure_grad().mat().noalias() += g * pw.value.mat().transpose();
    }
    if (pw.requires_grad) {
      pw.ensure_grad().mat().noalias() += pa.value.mat().transpose() * g;
    }
  });
}

/// Adds a bias vector of length M to every row of an (N, M) tensor.
template <typename S>
Var<S> add_bias(const Var<S>& a, const Var<S>& b) {
  require(a.cols() == b.size(), "add_bias: width mismatch");
  Tensor<S> out = a.value();
  out.mat().rowwise() += b.value().flat().transpose();
  return detail::make_op<S>(std::move(out), {a, b}, [](Node<S>& n) {
    detail::accumulate(n, 0, n.grad.flat());
    if (detail::wants(n, 1)) {
      n.parents[1]->ensure_grad().flat() += n.grad.mat().colwise().sum().transpose();
    }
  });
}

template <typename S>
Var<S> transpose(const Var<S>& a) {
  const Index r = a.rows();
  const Index c = a.cols();
  Tensor<S> out(Shape{c, r});
  out.mat() = a.value().mat().transpose();
  return detail::make_op<S>(std::move(out), {a}, [](Node<S>& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad().mat() += n.grad.mat().transpose();
    }
  });
}

// ---------------------------------------------------------------- shape ops

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  Tensor<S> out = a.value().reshaped(std::move(shape));
  return detail::make_op<S>(std::move(out), {a},
                            [](Node<S>& n) { detail::accumulate(n, 0, n.grad.flat()); });
}

/// Columns [start, start + len) of the (N, M) view.
template <typename S>
Var<S> slice_cols(const Var<S>& a, Index start, Index len) {
  require(start >= 0 && len > 0 && start + len <= a.cols(), "slice_cols: out of range");
  Tensor<S> out(Shape{a.rows(), len});
  out.mat() = a.value().mat().middleCols(start, len);
  return detail::make_op<S>(std::move(out), {a}, [start, len](Node<S>& n) {
    auto& p = *n.parents[0];
    if (p.requires_grad) {
      p.ensure_grad().mat().middleCols(start, len) += n.grad.mat();
    }
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const Index r = parts.front().rows();
  Index total = 0;
  for (const auto& p : parts) {
    require(p.rows() == r, "concat_cols: row mismatch");
    total += p.cols();
  }
  Tensor<S> out(Shape{r, total});
  Index off = 0;
  for (const auto& p : parts) {
    out.mat().middleCols(off, p.cols()) = p.value().mat();
    off += p.cols();
  }
  return detail::make_op<S>(std::move(out), parts, [](Node<S>& n) {
    Index o = 0;
    for (auto& p : n.parents) {
      const Index c = p->value.cols();
      if (p->requires_grad) {
        p->ensure_grad().mat() += n.grad.mat().middleCols(o, c);
      }
      o += c;
    }
  });
}

/// Rows of the (N, M) view picked by `idx`; used for embeddings and time slicing.
template <typename S>
Var<S> gather_rows(const Var<S>& a, std::vector<Index> idx) {
  Shape shape = a.shape();
  if (shape.size() < 2) {
    shape = {a.rows(), 1};
  }
  shape[0] = static_cast<Index>(idx.size());
  Tensor<S> out(shape);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    require(idx[k] >= 0 && idx[k] < a.rows(), "gather_rows: index out of range");
    out.mat().row(static_cast<Index>(k)) = a.value().mat().row(idx[k]);
  }
  return detail::make_op<S>(std::move(out), {a}, [idx = std::move(idx)](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) {
      return;
    }
    auto g = p.ensure_grad().mat();
    const auto go = n.grad.mat();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      g.row(idx[k]) += go.row(static_cast<Index>(k));
    }
  });
}

// ---------------------------------------------------------------- spatial ops

enum class PadMode { zeros, reflect };

namespace detail {

inline Index reflect_index(Index i, Index n) {
  if (n == 1) {
    return 0;
  }
  while (i < 0 || i >= n) {
    i = i < 0 ? -i : 2 * (n - 1) - i;
  }
  return i;
}

/// For each (output pixel, c, di, dj) the flat source offset inside one image, or -1.
inline std::vector<Index> im2col_table(Index c, Index h, Index w, Index k, PadMode mode) {
  const Index pad = k / 2;
  const Index ckk = c * k * k;
  std::vector<Index> table(static_cast<std::size_t>(h * w * ckk));
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      Index* row = table.data() + (i * w + j) * ckk;
      for (Index ch = 0; ch < c; ++ch) {
        for (Index di = 0; di < k; ++di) {
          for (Index dj = 0; dj < k; ++dj) {
            Index ii = i + di - pad;
            Index jj = j + dj - pad;
            Index src = -1;
            if (mode == PadMode::reflect) {
              src = ch * h * w + reflect_index(ii, h) * w + reflect_index(jj, w);
            } else if (ii >= 0 && ii < h && jj >= 0 && jj < w) {
              src = ch * h * w + ii * w + jj;
            }
            row[(ch * k + di) * k + dj] = src;
          }
        }
      }
    }
  }
  return table;
}

}  // namespace detail

/// Stride-1, size-preserving 2-d convolution. x: (B, C, H, W), weight: (O, C, k, k), bias: (O).
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, PadMode mode) {
  require(x.value().rank() == 4, "conv2d: input must be (B, C, H, W)");
  require(weight.value().rank() == 4, "conv2d: weight must be (O, C, k, k)");
  const Index b = x.value().dim(0);
  const Index c = x.value().dim(1);
  const Index h = x.value().dim(2);
  const Index w = x.value().dim(3);
  const Index o = weight.value().dim(0);
  const Index k = weight.value().dim(2);
  require(weight.value().dim(1) == c, "conv2d: channel mismatch");
  require(k % 2 == 1 && weight.value().dim(3) == k, "conv2d: kernel must be odd and square");
  require(bias.size() == o, "conv2d: bias size mismatch");
  require(mode == PadMode::zeros || (k / 2 < h && k / 2 < w),
          "conv2d: reflection padding wider than the image");
  const Index hw = h * w;
  const Index ckk = c * k * k;
  auto table = std::make_shared<std::vector<Index>>(detail::im2col_table(c, h, w, k, mode));

  auto cols = std::make_shared<RowMat<S>>(b * hw, ckk);
  const S* xd = x.value().data();
  for (Index bi = 0; bi < b; ++bi) {
    const S* img = xd + bi * c * hw;
    for (Index p = 0; p < hw; ++p) {
      S* dst = cols->data() + (bi * hw + p) * ckk;
      const Index* src = table->data() + p * ckk;
      for (Index q = 0; q < ckk; ++q) {
        dst[q] = src[q] >= 0 ? img[src[q]] : S(0);
      }
    }
  }
  const auto wm = weight.value().mat(o, ckk);
  RowMat<S> out_mat = (*cols) * wm.transpose();
  out_mat.rowwise() += bias.value().flat().transpose();
  Tensor<S> out(Shape{b, o, h, w});
  for (Index bi = 0; bi < b; ++bi) {
    MatMap<S>(out.data() + bi * o * hw, o, hw) = out_mat.middleRows(bi * hw, hw).transpose();
  }
  return detail::make_op<S>(
      std::move(out), {x, weight, bias}, [cols, table, b, c, hw, o, ckk](Node<S>& n) {
        RowMat<S> g(b * hw, o);
        for (Index bi = 0; bi < b; ++bi) {
          g.middleRows(bi * hw, hw) = ConstMatMap<S>(n.grad.data() + bi * o * hw, o, hw).transpose();
        }
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        auto& pb = *n.parents[2];
        if (pw.requires_grad) {
          pw.ensure_grad().mat(o, ckk).noalias() += g.transpose() * (*cols);
        }
        if (pb.requires_grad) {
          pb.ensure_grad().flat() += g.colwise().sum().transpose();
        }
        if (px.requires_grad) {
          const RowMat<S> dcols = g * pw.value.mat(o, ckk);
          S* dx = px.ensure_grad().data();
          for (Index bi = 0; bi < b; ++bi) {
            S* img = dx + bi * c * hw;
            for (Index p = 0; p < hw; ++p) {
              const S* src = dcols.data() + (bi * hw + p) * ckk;
              const Index* idx = table->data() + p * ckk;
              for (Index q = 0; q < ckk; ++q) {
                if (idx[q] >= 0) {
                  img[idx[q]] += src[q];
                }
              }
            }
          }
        }
      });
}

/// 2x2 max pooling with stride 2 (odd trailing rows/cols dropped).
template <typename S>
Var<S> maxpool2(const Var<S>& x) {
  require(x.value().rank() == 4, "maxpool2: input must be (B, C, H, W)");
  const Index b = x.value().dim(0);
  const Index c = x.value().dim(1);
  const Index h = x.value().dim(2);
  const Index w = x.value().dim(3);
  const Index oh = h / 2;
  const Index ow = w / 2;
  require(oh > 0 && ow > 0, "maxpool2: input too small");
  Tensor<S> out(Shape{b, c, oh, ow});
  auto arg = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  const S* xd = x.value().data();
  Index q = 0;
  for (Index plane = 0; plane < b * c; ++plane) {
    const Index base = plane * h * w;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j, ++q) {
        Index best = base + (2 * i) * w + 2 * j;
        for (Index di = 0; di < 2; ++di) {
          for (Index dj = 0; dj < 2; ++dj) {
            const Index idx = base + (2 * i + di) * w + 2 * j + dj;
            if (xd[idx] > xd[best]) {
              best = idx;
            }
          }
        }
        (*arg)[static_cast<std::size_t>(q)] = best;
        out[q] = xd[best];
      }
    }
  }
  return detail::make_op<S>(std::move(out), {x}, [arg](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) {
      return;
    }
    auto& g = p.ensure_grad();
    for (std::size_t q2 = 0; q2 < arg->size(); ++q2) {
      g[(*arg)[q2]] += n.grad[static_cast<Index>(q2)];
    }
  });
}

/// out[b, c, i, j] = z[b, c] + pos[c, i, j].
template <typename S>
Var<S> spatial_broadcast_add(const Var<S>& z, const Var<S>& pos) {
  require(pos.value().rank() == 3, "spatial_broadcast_add: pos must be (C, H, W)");
  const Index b = z.rows();
  const Index c = z.cols();
  require(pos.value().dim(0) == c, "spatial_broadcast_add: channel mismatch");
  const Index h = pos.value().dim(1);
  const Index w = pos.value().dim(2);
  const Index hw = h * w;
  Tensor<S> out(Shape{b, c, h, w});
  auto om = out.mat(b * c, hw);
  const auto pm = pos.value().mat(c, hw);
  for (Index bi = 0; bi < b; ++bi) {
    om.middleRows(bi * c, c) = pm;
    om.middleRows(bi * c, c).colwise() += z.value().mat().row(bi).transpose();
  }
  return detail::make_op<S>(std::move(out), {z, pos}, [b, c, hw](Node<S>& n) {
    const auto g = n.grad.mat(b * c, hw);
    if (detail::wants(n, 0)) {
      auto gz = n.parents[0]->ensure_grad().mat();
      for (Index bi = 0; bi < b; ++bi) {
        gz.row(bi) += g.middleRows(bi * c, c).rowwise().sum().transpose();
      }
    }
    if (detail::wants(n, 1)) {
      auto gp = n.parents[1]->ensure_grad().mat(c, hw);
      for (Index bi = 0; bi < b; ++bi) {
        gp += g.middleRows(bi * c, c);
      }
    }
  });
}

}  // namespace teb
