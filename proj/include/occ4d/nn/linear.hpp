#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "occ4d/nn/param.hpp"
#include "occ4d/nn/tensor.hpp"

namespace occ4d::nn {

// Exact GELU: x * Phi(x) with the error-function CDF. Smooth everywhere,
// which keeps finite-difference gradient checks clean.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
  const double Phi = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  return Phi + x * phi;
}

/// Affine map y = x W + b with hand-written backward.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng, double sigma, bool zero_init = false)
      : in_(in), out_(out) {
    w_ = store.add(name + ".w", {in, out});
    b_ = store.add(name + ".b", {out});
    if (!zero_init) fill_normal(w_->value, rng, sigma);
  }

  struct Ctx {
    Tensor x;
  };

  Tensor forward(const Tensor& x, Ctx* ctx = nullptr) const {
    if (x.ndim() != 2 || x.shape[1] != in_) throw std::invalid_argument("Linear: input shape");
    const std::size_t n = x.shape[0];
    Tensor y({n, out_});
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.row(i);
      double* yi = y.row(i);
      for (std::size_t o = 0; o < out_; ++o) yi[o] = b_->value(o);
      for (std::size_t c = 0; c < in_; ++c) {
        const double xv = xi[c];
        if (xv == 0.0) continue;
        const double* wr = w_->value.row(c);
        for (std::size_t o = 0; o < out_; ++o) yi[o] += xv * wr[o];
      }
    }
    if (ctx) ctx->x = x;
    return y;
  }

  /// Accumulates dW, db into the parameter grads and returns dx.
  Tensor backward(const Ctx& ctx, const Tensor& dy) const {
    const std::size_t n = ctx.x.shape[0];
    Tensor dx({n, in_});
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = ctx.x.row(i);
      const double* dyi = dy.row(i);
      double* dxi = dx.row(i);
      for (std::size_t o = 0; o < out_; ++o) b_->grad(o) += dyi[o];
      for (std::size_t c = 0; c < in_; ++c) {
        const double* wr = w_->value.row(c);
        double* gwr = w_->grad.row(c);
        double acc = 0.0;
        for (std::size_t o = 0; o < out_; ++o) {
          acc += dyi[o] * wr[o];
          gwr[o] += xi[c] * dyi[o];
        }
        dxi[c] = acc;
      }
    }
    return dx;
  }

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  Parameter* weight() { return w_; }
  Parameter* bias() { return b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
};

/// Stack of Linear layers with GELU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& dims,
      Rng& rng, double sigma, bool zero_init_last = false) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
      layers_.emplace_back(store, name + ".l" + std::to_string(l), dims[l], dims[l + 1], rng,
                           sigma, zero_init_last && l + 2 == dims.size());
  }

  struct Ctx {
    std::vector<Linear::Ctx> linear;
    std::vector<Tensor> preact;  // inputs to each GELU
  };

  Tensor forward(const Tensor& x, Ctx* ctx = nullptr) const {
    if (ctx) {
      ctx->linear.resize(layers_.size());
      ctx->preact.clear();
    }
    Tensor h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l].forward(h, ctx ? &ctx->linear[l] : nullptr);
      if (l + 1 < layers_.size()) {
        if (ctx) ctx->preact.push_back(h);
        for (double& v : h.data) v = gelu(v);
      }
    }
    return h;
  }

  Tensor backward(const Ctx& ctx, const Tensor& dy) const {
    Tensor d = dy;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      d = layers_[l].backward(ctx.linear[l], d);
      if (l > 0) {
        const Tensor& pre = ctx.preact[l - 1];
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] *= gelu_grad(pre.data[i]);
      }
    }
    return d;
  }

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }

 private:
  std::vector<Linear> layers_;
};

}  // namespace occ4d::nn
