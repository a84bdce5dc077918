#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/nn/param.hpp"

namespace occ4d::nn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;

  bool pass(double tol) const { return checked > 0 && max_rel_err < tol; }
};

/// Central finite differences against the analytic gradients already stored
/// in each parameter's grad tensor. `loss` re-runs the forward pass at the
/// current parameter values. An optional `fingerprint` detects non-smooth
/// crossings (e.g. a nearest-neighbor match flip); coordinates whose +/-h
/// fingerprints differ are skipped. Large parameters are subsampled to
/// `max_coords_per_param` deterministic coordinates.
inline GradCheckReport finite_difference_check(
    const std::function<double()>& loss, const std::vector<Parameter*>& params, double h = 1e-4,
    std::size_t max_coords_per_param = 24, Rng* rng = nullptr,
    const std::function<std::string()>& fingerprint = nullptr) {
  GradCheckReport report;
  Rng fallback(12345);
  Rng& gen = rng ? *rng : fallback;

  for (Parameter* p : params) {
    const std::size_t n = p->value.numel();
    std::vector<std::size_t> coords;
    if (n <= max_coords_per_param) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t s = 0; s < max_coords_per_param; ++s)
        coords.push_back(gen() % n);
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (std::size_t idx : coords) {
      const double saved = p->value(idx);
      p->value(idx) = saved + h;
      const std::string fp_plus = fingerprint ? fingerprint() : std::string();
      const double lp = loss();
      p->value(idx) = saved - h;
      const std::string fp_minus = fingerprint ? fingerprint() : std::string();
      const double lm = loss();
      p->value(idx) = saved;
      if (fingerprint && fp_plus != fp_minus) {
        ++report.skipped;
        continue;
      }
      const double fd = (lp - lm) / (2.0 * h);
      const double an = p->grad(idx);
      const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
      const double err = std::abs(fd - an) / denom;
      ++report.checked;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = p->name;
        report.worst_index = idx;
      }
    }
  }
  return report;
}

}  // namespace occ4d::nn
