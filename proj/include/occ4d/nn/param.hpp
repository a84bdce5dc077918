#pragma once

#include <deque>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/nn/tensor.hpp"

namespace occ4d::nn {

/// A learnable tensor with its gradient accumulator and a stable name.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Owns all parameters of a model. Pointers stay valid for the lifetime of
/// the store; iteration order is insertion order (used by the optimizer and
/// the checkpoint format).
class ParameterStore {
 public:
  Parameter* add(const std::string& name, std::vector<std::size_t> shape) {
    for (const Parameter& p : params_)
      if (p.name == name) throw std::invalid_argument("ParameterStore: duplicate name " + name);
    params_.push_back(Parameter{name, Tensor(shape), Tensor(shape)});
    return &params_.back();
  }

  void zero_grads() {
    for (Parameter& p : params_) p.grad.fill(0.0);
  }

  std::size_t size() const { return params_.size(); }
  Parameter& at(std::size_t i) { return params_[i]; }
  const Parameter& at(std::size_t i) const { return params_[i]; }

  Parameter* find(const std::string& name) {
    for (Parameter& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) n += p.value.numel();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
};

inline void fill_normal(Tensor& t, Rng& rng, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (double& v : t.data) v = dist(rng);
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data) v = dist(rng);
}

}  // namespace occ4d::nn
