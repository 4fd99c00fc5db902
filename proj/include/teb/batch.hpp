#pragma once

#include <vector>

#include "teb/tensor.hpp"

namespace teb {

/// Paired minibatch: source history X, target history Y, prediction target Y'.
template <typename S>
struct StreamBatch {
  Tensor<S> x_hist;  // (B, T_x, x-step...)
  Tensor<S> y_hist;  // (B, T_y, y-step...)
  Tensor<S> y_next;  // (B, y'-shape...)
  std::vector<int> switched;    // switch event drawn at the prediction step
  std::vector<int> changed;     // the class (or frequency) actually differs after the switch
  std::vector<int> y_class;     // class of Y' where defined, else -1
  std::vector<int> prev_class;  // class of the last Y frame where defined, else -1
  std::vector<int> angle;       // rotation index of Y' (rotation task), else -1

  Index size() const { return y_next.rows(); }

  void validate() const {
    require(x_hist.rank() >= 2 && y_hist.rank() >= 2, "StreamBatch: histories need (B, T, ...)");
    require(x_hist.dim(1) >= 1 && y_hist.dim(1) >= 1, "StreamBatch: empty history");
    require(x_hist.dim(0) == size() && y_hist.dim(0) == size(), "StreamBatch: batch mismatch");
  }

  /// Last observed Y value per example, (B, 1); only for scalar time series.
  Tensor<S> y_last() const {
    const Index b = y_hist.dim(0);
    const Index t = y_hist.dim(1);
    require(y_hist.size() == b * t, "y_last: target stream is not a scalar series");
    Tensor<S> out(Shape{b, 1});
    for (Index i = 0; i < b; ++i) {
      out[i] = y_hist[i * t + t - 1];
    }
    return out;
  }

  template <typename T>
  StreamBatch<T> cast() const {
    return {x_hist.template cast<T>(), y_hist.template cast<T>(), y_next.template cast<T>(),
            switched, changed, y_class, prev_class, angle};
  }
};

}  // namespace teb
