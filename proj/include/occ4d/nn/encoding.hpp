#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/nn/tensor.hpp"

namespace occ4d::nn {

/// Sinusoidal 4D positional encoding. D/4 dims per coordinate (x, y, z, t),
/// alternating sin/cos over a geometric wavelength ladder: 1 m .. 200 m for
/// the spatial axes, 1 .. 16 frames for time. Requires D % 8 == 0.
class PositionalEncoding4d {
 public:
  explicit PositionalEncoding4d(std::size_t dim) : dim_(dim) {
    if (dim % 8 != 0) throw std::invalid_argument("PositionalEncoding4d: D must be divisible by 8");
    const std::size_t pairs = dim / 8;
    spatial_freq_.resize(pairs);
    time_freq_.resize(pairs);
    for (std::size_t k = 0; k < pairs; ++k) {
      const double u = pairs > 1 ? static_cast<double>(k) / (pairs - 1) : 0.0;
      spatial_freq_[k] = 2.0 * kPi / std::pow(200.0, u);  // wavelength 1 -> 200 m
      time_freq_[k] = 2.0 * kPi / std::pow(16.0, u);      // wavelength 1 -> 16 frames
    }
  }

  Tensor forward(const Tensor& positions, const std::vector<int>& timestamps) const {
    const std::size_t n = positions.shape[0];
    if (positions.ndim() != 2 || positions.shape[1] != 3)
      throw std::invalid_argument("PositionalEncoding4d: positions must be [N,3]");
    if (timestamps.size() != n)
      throw std::invalid_argument("PositionalEncoding4d: timestamps size mismatch");
    Tensor out({n, dim_});
    const std::size_t block = dim_ / 4;
    for (std::size_t i = 0; i < n; ++i) {
      double* o = out.row(i);
      for (int axis = 0; axis < 4; ++axis) {
        const double coord =
            axis < 3 ? positions(i, axis) : static_cast<double>(timestamps[i]);
        const auto& freq = axis < 3 ? spatial_freq_ : time_freq_;
        double* blk = o + axis * block;
        for (std::size_t k = 0; k < freq.size(); ++k) {
          blk[2 * k] = std::sin(freq[k] * coord);
          blk[2 * k + 1] = std::cos(freq[k] * coord);
        }
      }
    }
    return out;
  }

  /// Gradient with respect to positions (timestamps are discrete).
  Tensor backward(const Tensor& positions, const std::vector<int>& /*timestamps*/,
                  const Tensor& dout) const {
    const std::size_t n = positions.shape[0];
    Tensor dpos({n, 3});
    const std::size_t block = dim_ / 4;
    for (std::size_t i = 0; i < n; ++i) {
      const double* d = dout.row(i);
      for (int axis = 0; axis < 3; ++axis) {
        const double coord = positions(i, axis);
        const double* blk = d + axis * block;
        double acc = 0.0;
        for (std::size_t k = 0; k < spatial_freq_.size(); ++k) {
          const double w = spatial_freq_[k];
          acc += blk[2 * k] * w * std::cos(w * coord);
          acc += blk[2 * k + 1] * (-w * std::sin(w * coord));
        }
        dpos(i, axis) = acc;
      }
    }
    return dpos;
  }

  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
  std::vector<double> spatial_freq_;
  std::vector<double> time_freq_;
};

}  // namespace occ4d::nn
