#pragma once

#include <cmath>
#include <vector>

#include "ccomp/param.hpp"

namespace ccomp {

// Adam with global gradient-norm clipping applied before the update.
// Frozen (trainable=false) parameters are never touched and never contribute
// to the clip norm.
template <typename T>
class Adam {
 public:
  explicit Adam(ParamStore<T>& ps, T lr = T(2e-4), T clip_norm = T(2), T beta1 = T(0.9),
                T beta2 = T(0.999), T eps = T(1e-8))
      : ps_(ps), lr_(lr), clip_(clip_norm), b1_(beta1), b2_(beta2), eps_(eps) {
    m_.resize(ps.count());
    v_.resize(ps.count());
    for (size_t i = 0; i < ps.count(); ++i) {
      m_[i] = Tensor<T>(ps[i].value.dims);
      v_[i] = Tensor<T>(ps[i].value.dims);
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  int64_t step_count() const { return step_; }

  void step() {
    double sq = 0;
    for (size_t i = 0; i < ps_.count(); ++i) {
      Parameter<T>& p = ps_[i];
      if (!p.trainable) continue;
      if (p.grad.size() != p.value.size())
        throw ContractError("adam: missing gradient for trainable parameter " + p.name);
      for (const T g : p.grad.v) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    const T gscale = (clip_ > T(0) && norm > static_cast<double>(clip_))
                         ? static_cast<T>(static_cast<double>(clip_) / norm)
                         : T(1);
    ++step_;
    const T bc1 = T(1) - std::pow(b1_, static_cast<T>(step_));
    const T bc2 = T(1) - std::pow(b2_, static_cast<T>(step_));
    for (size_t i = 0; i < ps_.count(); ++i) {
      Parameter<T>& p = ps_[i];
      if (!p.trainable) continue;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (int64_t j = 0; j < p.value.size(); ++j) {
        const T g = p.grad.v[j] * gscale;
        m.v[j] = b1_ * m.v[j] + (T(1) - b1_) * g;
        v.v[j] = b2_ * v.v[j] + (T(1) - b2_) * g * g;
        const T mh = m.v[j] / bc1;
        const T vh = v.v[j] / bc2;
        p.value.v[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

 private:
  ParamStore<T>& ps_;
  T lr_, clip_, b1_, b2_, eps_;
  int64_t step_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Exponential moving average of the float parameter set (pre-training only).
class EmaTracker {
 public:
  EmaTracker(const ParamStore<float>& ps, float decay) : decay_(decay) {
    shadow_.reserve(ps.count());
    for (size_t i = 0; i < ps.count(); ++i) shadow_.push_back(ps[i].value);
  }
  void update(const ParamStore<float>& ps) {
    for (size_t i = 0; i < ps.count(); ++i) {
      const auto& v = ps[i].value.v;
      auto& s = shadow_[i].v;
      for (size_t j = 0; j < v.size(); ++j) s[j] = decay_ * s[j] + (1.0f - decay_) * v[j];
    }
  }
  const Tensor<float>& shadow(size_t i) const { return shadow_[i]; }

 private:
  float decay_;
  std::vector<Tensor<float>> shadow_;
};

}  // namespace ccomp
