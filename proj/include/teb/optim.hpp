#pragma once

#include <cmath>
#include <vector>

#include "teb/nets.hpp"

namespace teb {

/// Adaptive-moment optimizer with the usual bias correction.
template <typename S>
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(const ParamList<S>& params, Options opt) : opt_(opt) {
    require(opt_.lr > 0.0, "Adam: learning rate must be > 0");
    for (const auto& [name, v] : params) {
      if (v.requires_grad()) {
        params_.push_back(v);
        m_.emplace_back(Vec<S>::Zero(v.size()));
        v_.emplace_back(Vec<S>::Zero(v.size()));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      p.zero_grad();
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const S b1 = static_cast<S>(opt_.beta1);
    const S b2 = static_cast<S>(opt_.beta2);
    const S step = static_cast<S>(opt_.lr / c1);
    const S inv_c2 = static_cast<S>(1.0 / c2);
    const S eps = static_cast<S>(opt_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      const Vec<S>& g = p.grad().flat();
      m_[k] = b1 * m_[k] + (S(1) - b1) * g;
      v_[k] = b2 * v_[k] + (S(1) - b2) * g.cwiseProduct(g);
      p.mutable_value().flat().array() -=
          step * m_[k].array() / ((v_[k].array() * inv_c2).sqrt() + eps);
    }
  }

  void set_lr(double lr) { opt_.lr = lr; }
  long steps() const { return t_; }

 private:
  Options opt_;
  std::vector<Var<S>> params_;
  std::vector<Vec<S>> m_, v_;
  long t_ = 0;
};

}  // namespace teb
