#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace occ4d::nn {

/// Dense row-major tensor of 64-bit floats. Shapes are fixed at construction;
/// this is deliberately minimal (no views, no broadcasting).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_) : shape(std::move(shape_)) {
    data.assign(numel_of(shape), 0.0);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> shape_) { return Tensor(std::move(shape_)); }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t ndim() const { return shape.size(); }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    assert(ndim() == 2);
    return data[i * shape[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    assert(ndim() == 2);
    return data[i * shape[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    assert(ndim() == 3);
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    assert(ndim() == 3);
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  double* row(std::size_t i) {
    assert(ndim() == 2);
    return data.data() + i * shape[1];
  }
  const double* row(std::size_t i) const {
    assert(ndim() == 2);
    return data.data() + i * shape[1];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor& operator+=(const Tensor& other) {
    assert(data.size() == other.data.size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
    return *this;
  }

  void check_shape(const std::vector<std::size_t>& expected, const char* what) const {
    if (shape != expected) throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
};

/// Concatenates two 2D tensors along columns.
inline Tensor hcat(const Tensor& a, const Tensor& b) {
  assert(a.ndim() == 2 && b.ndim() == 2 && a.shape[0] == b.shape[0]);
  Tensor out({a.shape[0], a.shape[1] + b.shape[1]});
  for (std::size_t i = 0; i < a.shape[0]; ++i) {
    double* dst = out.row(i);
    const double* ra = a.row(i);
    const double* rb = b.row(i);
    std::copy(ra, ra + a.shape[1], dst);
    std::copy(rb, rb + b.shape[1], dst + a.shape[1]);
  }
  return out;
}

/// Concatenates two 2D tensors along rows.
inline Tensor vcat(const Tensor& a, const Tensor& b) {
  assert(a.ndim() == 2 && b.ndim() == 2 && a.shape[1] == b.shape[1]);
  Tensor out({a.shape[0] + b.shape[0], a.shape[1]});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

}  // namespace occ4d::nn
