#pragma once

#include <stdexcept>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/geometry/kdtree.hpp"

namespace occ4d::geo {

/// Symmetric squared-distance Chamfer value plus both nearest-neighbor
/// matchings (total maps; ties already resolved to the smallest index).
struct ChamferResult {
  double value = 0.0;
  std::vector<int> match_p_to_g;
  std::vector<int> match_g_to_p;
};

inline ChamferResult chamfer_distance(const std::vector<Vec3>& p, const std::vector<Vec3>& g) {
  if (p.empty() || g.empty()) throw std::invalid_argument("chamfer_distance: empty point set");
  ChamferResult res;
  res.match_p_to_g.resize(p.size());
  res.match_g_to_p.resize(g.size());

  const KdTree3 tree_g(g);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto hit = tree_g.nearest(p[i]);
    res.match_p_to_g[i] = hit.index;
    res.value += hit.squared_dist;
  }
  const KdTree3 tree_p(p);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const auto hit = tree_p.nearest(g[j]);
    res.match_g_to_p[j] = hit.index;
    res.value += hit.squared_dist;
  }
  return res;
}

/// Subgradient of the Chamfer value with respect to the points of P, holding
/// the matching fixed: grad(p) = 2(p - g_match(p)) + sum over g matched to p
/// of 2(p - g).
inline std::vector<Vec3> chamfer_gradient(const std::vector<Vec3>& p, const std::vector<Vec3>& g,
                                          const ChamferResult& match) {
  if (p.empty() || g.empty()) throw std::invalid_argument("chamfer_gradient: empty point set");
  std::vector<Vec3> grad(p.size(), Vec3{0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Vec3& gm = g[match.match_p_to_g[i]];
    grad[i] += 2.0 * (p[i] - gm);
  }
  for (std::size_t j = 0; j < g.size(); ++j) {
    const int i = match.match_g_to_p[j];
    grad[i] += 2.0 * (p[i] - g[j]);
  }
  return grad;
}

}  // namespace occ4d::geo
