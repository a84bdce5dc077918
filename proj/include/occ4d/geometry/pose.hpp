#pragma once

#include <cmath>

#include "occ4d/common.hpp"

namespace occ4d::geo {

/// Planar ego pose: translation (x, y), heading yaw, and a frame index.
/// z motion is not modeled; transforms pass z through unchanged.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  int frame = 0;
};

/// Local coordinates of `pose` expressed in its parent frame.
inline Vec3 to_parent(const Pose& p, const Vec3& v) {
  const double c = std::cos(p.yaw);
  const double s = std::sin(p.yaw);
  return {p.x + c * v[0] - s * v[1], p.y + s * v[0] + c * v[1], v[2]};
}

/// Parent-frame coordinates expressed in the local frame of `pose`.
inline Vec3 to_local(const Pose& p, const Vec3& v) {
  const double c = std::cos(p.yaw);
  const double s = std::sin(p.yaw);
  const double dx = v[0] - p.x;
  const double dy = v[1] - p.y;
  return {c * dx + s * dy, -s * dx + c * dy, v[2]};
}

/// Composition a ∘ b: pose `b` given in a's local frame, result in a's parent frame.
inline Pose compose(const Pose& a, const Pose& b) {
  const Vec3 t = to_parent(a, {b.x, b.y, 0.0});
  return {t[0], t[1], wrap_angle(a.yaw + b.yaw), b.frame};
}

inline Pose inverse(const Pose& p) {
  const double c = std::cos(p.yaw);
  const double s = std::sin(p.yaw);
  return {-(c * p.x + s * p.y), -(-s * p.x + c * p.y), wrap_angle(-p.yaw), p.frame};
}

/// Pose of `p` expressed in the frame of `ref` (both share a parent frame).
inline Pose relative_to(const Pose& p, const Pose& ref) {
  return compose(inverse(ref), p);
}

}  // namespace occ4d::geo
