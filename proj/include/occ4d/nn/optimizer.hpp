#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/nn/param.hpp"

namespace occ4d::nn {

/// Linear warm-up to the peak rate over `warmup_steps`, then cosine decay to
/// `floor` at `total_steps`. Rate 0 at step 0; constant floor past the end.
struct LrSchedule {
  double peak = 2e-4;
  double floor = 2e-6;
  std::int64_t warmup_steps = 50;
  std::int64_t total_steps = 1000;

  double at(std::int64_t step) const {
    if (step < warmup_steps)
      return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return floor;
    const double u = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(total_steps - warmup_steps);
    return floor + (peak - floor) * 0.5 * (1.0 + std::cos(kPi * u));
  }
};

/// AdamW with decoupled weight decay. Moment tensors follow the parameter
/// store's insertion order.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void step(ParameterStore& store, double lr) {
    ensure_state(store);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    std::size_t idx = 0;
    for (Parameter& p : store) {
      Tensor& m = m_[idx];
      Tensor& v = v_[idx];
      ++idx;
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad(i);
        m(i) = beta1 * m(i) + (1.0 - beta1) * g;
        v(i) = beta2 * v(i) + (1.0 - beta2) * g * g;
        const double mhat = m(i) / bc1;
        const double vhat = v(i) / bc2;
        p.value(i) -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.value(i));
      }
    }
  }

  std::int64_t step_count() const { return t_; }

  // Checkpoint access.
  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  void ensure_state(ParameterStore& store) {
    if (m_.size() == store.size()) return;
    m_.clear();
    v_.clear();
    for (Parameter& p : store) {
      m_.emplace_back(p.value.shape);
      v_.emplace_back(p.value.shape);
    }
  }

 private:
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace occ4d::nn
