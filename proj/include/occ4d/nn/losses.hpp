#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "occ4d/nn/tensor.hpp"

namespace occ4d::nn {

/// Numerically stable row softmax. Masked scores around -1e9 underflow to
/// exactly zero weight after the max shift.
inline void softmax_row(const double* scores, double* out, std::size_t n) {
  double m = scores[0];
  for (std::size_t j = 1; j < n; ++j) m = std::max(m, scores[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(scores[j] - m);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

/// d(loss)/d(scores) given weights w = softmax(scores) and d(loss)/d(w).
inline void softmax_backward_row(const double* w, const double* dw, double* dscores,
                                 std::size_t n) {
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) acc += w[j] * dw[j];
  for (std::size_t j = 0; j < n; ++j) dscores[j] = w[j] * (dw[j] - acc);
}

struct FocalResult {
  double loss = 0.0;
  Tensor dlogits;
};

/// Mean focal loss -alpha (1-p_t)^gamma log(p_t) over rows, with softmax
/// probabilities. gamma = 0, alpha = 1 reduces to mean cross-entropy.
inline FocalResult focal_loss(const Tensor& logits, const std::vector<int>& targets,
                              double gamma = 2.0, double alpha = 0.25) {
  if (logits.ndim() != 2) throw std::invalid_argument("focal_loss: logits must be 2D");
  const std::size_t n = logits.shape[0];
  const std::size_t c = logits.shape[1];
  if (targets.size() != n) throw std::invalid_argument("focal_loss: targets size mismatch");
  FocalResult res;
  res.dlogits = Tensor({n, c});
  if (n == 0) return res;

  std::vector<double> prob(c);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c)
      throw std::invalid_argument("focal_loss: target id out of range");
    softmax_row(logits.row(i), prob.data(), c);
    const double pt = prob[t];
    const double one_m = 1.0 - pt;
    const double log_pt = std::log(std::max(pt, 1e-300));
    const double pow_g = std::pow(one_m, gamma);
    res.loss += -alpha * pow_g * log_pt * inv_n;

    // dL/dpt, then chain through softmax: dpt/dz_k = pt (delta_tk - p_k).
    const double pow_gm1 = gamma > 0.0 ? std::pow(one_m, gamma - 1.0) : 0.0;
    const double dl_dpt = -alpha * inv_n * (-gamma * pow_gm1 * log_pt + pow_g / pt);
    double* drow = res.dlogits.row(i);
    for (std::size_t k = 0; k < c; ++k) {
      const double delta = (static_cast<std::size_t>(t) == k) ? 1.0 : 0.0;
      drow[k] = dl_dpt * pt * (delta - prob[k]);
    }
  }
  return res;
}

/// Sum of squared errors with gradient on the prediction.
inline double l2_loss(const std::vector<double>& pred, const std::vector<double>& target,
                      std::vector<double>* dpred = nullptr) {
  if (pred.size() != target.size()) throw std::invalid_argument("l2_loss: size mismatch");
  if (dpred) dpred->assign(pred.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    loss += e * e;
    if (dpred) (*dpred)[i] = 2.0 * e;
  }
  return loss;
}

}  // namespace occ4d::nn
