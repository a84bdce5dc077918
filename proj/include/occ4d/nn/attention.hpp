#pragma once

#include <cassert>
#include <stdexcept>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/nn/linear.hpp"
#include "occ4d/nn/losses.hpp"
#include "occ4d/nn/tensor.hpp"

namespace occ4d::nn {

// Pre-softmax stand-in for -inf in the temporal mask. After the softmax max
// shift the exponential underflows to exactly zero weight.
constexpr double kTemporalMaskValue = -1e9;

/// Attention scores combining semantic similarity, a learned spatial-distance
/// penalty, and a causal temporal mask:
///   A[h][i][j] = <q_i, k_j>_head - tau[h][i} * ||p_i - p_j||^2 + M_ij
/// with M_ij = 0 when t_i >= t_j and a large negative constant otherwise.
/// tau has shape [H, N] (per head per query) or [1, N] (shared across heads).
inline Tensor ts_mhsa_scores(const Tensor& q, const Tensor& k, const Tensor& tau,
                             const Tensor& positions, const std::vector<int>& timestamps,
                             std::size_t n_heads, bool mask_on) {
  const std::size_t n = q.shape[0];
  const std::size_t d = q.shape[1];
  if (k.shape != q.shape) throw std::invalid_argument("ts_mhsa_scores: q/k shape mismatch");
  if (d % n_heads != 0) throw std::invalid_argument("ts_mhsa_scores: D not divisible by heads");
  if (timestamps.size() != n) throw std::invalid_argument("ts_mhsa_scores: timestamps size");
  if (!q.all_finite() || !k.all_finite() || !tau.all_finite() || !positions.all_finite())
    throw std::invalid_argument("ts_mhsa_scores: non-finite input");
  const std::size_t dh = d / n_heads;
  const std::size_t tau_rows = tau.shape[0];

  Tensor scores({n_heads, n, n});
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t th = tau_rows == 1 ? 0 : h;
    for (std::size_t i = 0; i < n; ++i) {
      const double* qi = q.row(i) + h * dh;
      const double ti = tau(th, i);
      for (std::size_t j = 0; j < n; ++j) {
        const double* kj = k.row(j) + h * dh;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        const double sqd =
            squared_distance({positions(i, 0), positions(i, 1), positions(i, 2)},
                             {positions(j, 0), positions(j, 1), positions(j, 2)});
        s -= ti * sqd;
        if (mask_on && timestamps[i] < timestamps[j]) s += kTemporalMaskValue;
        scores(h, i, j) = s;
      }
      assert(!(mask_on && timestamps[i] < timestamps[i]));  // self is never masked
    }
  }
  return scores;
}

struct TsMhsaCtx {
  Tensor q, k, v;
  Tensor tau;
  Tensor positions;
  std::vector<int> timestamps;
  std::size_t n_heads = 1;
  bool mask_on = false;
  Tensor weights;   // [H, N, N]
  Tensor head_out;  // [N, D], heads concatenated, before the output projection
  Linear::Ctx out_ctx;
};

/// Softmax over scores, weighted sum of values per head, heads concatenated,
/// then output-projected through `wo`.
inline Tensor ts_mhsa_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& tau, const Tensor& positions,
                              const std::vector<int>& timestamps, std::size_t n_heads,
                              bool mask_on, const Linear& wo, TsMhsaCtx* ctx) {
  const Tensor scores = ts_mhsa_scores(q, k, tau, positions, timestamps, n_heads, mask_on);
  const std::size_t n = q.shape[0];
  const std::size_t d = q.shape[1];
  const std::size_t dh = d / n_heads;

  Tensor weights({n_heads, n, n});
  Tensor head_out({n, d});
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* srow = scores.data.data() + (h * n + i) * n;
      double* wrow = weights.data.data() + (h * n + i) * n;
      softmax_row(srow, wrow, n);
      double* out = head_out.row(i) + h * dh;
      for (std::size_t j = 0; j < n; ++j) {
        const double w = wrow[j];
        if (w == 0.0) continue;
        const double* vj = v.row(j) + h * dh;
        for (std::size_t c = 0; c < dh; ++c) out[c] += w * vj[c];
      }
    }
  }
  if (ctx) {
    ctx->q = q;
    ctx->k = k;
    ctx->v = v;
    ctx->tau = tau;
    ctx->positions = positions;
    ctx->timestamps = timestamps;
    ctx->n_heads = n_heads;
    ctx->mask_on = mask_on;
    ctx->weights = weights;
    ctx->head_out = head_out;
  }
  return wo.forward(head_out, ctx ? &ctx->out_ctx : nullptr);
}

struct TsMhsaGrads {
  Tensor dq, dk, dv;
  Tensor dtau;
  Tensor dpositions;
};

/// Exact gradients for embeddings, tau, and positions. Masked pairs carry
/// exactly zero weight, so no gradient crosses the causal mask.
inline TsMhsaGrads ts_mhsa_backward(const TsMhsaCtx& ctx, const Linear& wo, const Tensor& dout) {
  const std::size_t n = ctx.q.shape[0];
  const std::size_t d = ctx.q.shape[1];
  const std::size_t heads = ctx.n_heads;
  const std::size_t dh = d / heads;
  const std::size_t tau_rows = ctx.tau.shape[0];

  const Tensor dhead = wo.backward(ctx.out_ctx, dout);

  TsMhsaGrads g;
  g.dq = Tensor({n, d});
  g.dk = Tensor({n, d});
  g.dv = Tensor({n, d});
  g.dtau = Tensor(ctx.tau.shape);
  g.dpositions = Tensor({n, 3});

  std::vector<double> dw(n), ds(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t th = tau_rows == 1 ? 0 : h;
    for (std::size_t i = 0; i < n; ++i) {
      const double* dho = dhead.row(i) + h * dh;
      const double* wrow = ctx.weights.data.data() + (h * n + i) * n;
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        const double* vj = ctx.v.row(j) + h * dh;
        for (std::size_t c = 0; c < dh; ++c) acc += dho[c] * vj[c];
        dw[j] = acc;
        if (wrow[j] != 0.0) {
          double* dvj = g.dv.row(j) + h * dh;
          for (std::size_t c = 0; c < dh; ++c) dvj[c] += wrow[j] * dho[c];
        }
      }
      softmax_backward_row(wrow, dw.data(), ds.data(), n);

      const double tau_i = ctx.tau(th, i);
      const Vec3 pi{ctx.positions(i, 0), ctx.positions(i, 1), ctx.positions(i, 2)};
      double* dqi = g.dq.row(i) + h * dh;
      const double* qi = ctx.q.row(i) + h * dh;
      for (std::size_t j = 0; j < n; ++j) {
        const double dsij = ds[j];
        if (dsij == 0.0) continue;
        const double* kj = ctx.k.row(j) + h * dh;
        double* dkj = g.dk.row(j) + h * dh;
        for (std::size_t c = 0; c < dh; ++c) {
          dqi[c] += dsij * kj[c];
          dkj[c] += dsij * qi[c];
        }
        const Vec3 pj{ctx.positions(j, 0), ctx.positions(j, 1), ctx.positions(j, 2)};
        g.dtau(th, i) += dsij * (-squared_distance(pi, pj));
        const Vec3 diff = pi - pj;
        const double scale = dsij * (-tau_i) * 2.0;
        for (int c = 0; c < 3; ++c) {
          g.dpositions(i, c) += scale * diff[c];
          g.dpositions(j, c) -= scale * diff[c];
        }
      }
    }
  }
  return g;
}

}  // namespace occ4d::nn
