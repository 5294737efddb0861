#pragma once

#include <cmath>
#include <vector>

#include "chordgen/autograd.hpp"

namespace chordgen {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with bias-corrected moments. Weight decay is decoupled: it shrinks
/// the parameter directly and never enters the moment estimates. Parameters
/// with `decay == false` (biases, LayerNorm, by convention) are not decayed.
template <class T = double>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }

  void step(std::vector<Parameter<T>*>& params, double lr) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    require_shape(m_.size() == params.size(), "optimizer state does not match parameter list");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      require_shape(p.grad.shape() == p.value.shape() && m_[k].shape() == p.value.shape(),
                    "optimizer state shape mismatch for " + p.name);
      T* w = p.value.data();
      const T* g = p.grad.data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      const T decay = p.decay ? T(1.0 - lr * cfg_.weight_decay) : T(1);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        w[i] *= decay;
        m[i] = T(cfg_.beta1) * m[i] + T(1.0 - cfg_.beta1) * g[i];
        v[i] = T(cfg_.beta2) * v[i] + T(1.0 - cfg_.beta2) * g[i] * g[i];
        const T mhat = m[i] / T(bc1);
        const T vhat = v[i] / T(bc2);
        w[i] -= T(lr) * mhat / (std::sqrt(vhat) + T(cfg_.eps));
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace chordgen
