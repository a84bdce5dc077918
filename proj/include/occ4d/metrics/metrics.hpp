#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/geometry/grid.hpp"
#include "occ4d/geometry/point_cloud.hpp"
#include "occ4d/geometry/pose.hpp"
#include "occ4d/geometry/voxelize.hpp"
#include "occ4d/nn/tensor.hpp"

namespace occ4d::metrics {

/// Class-agnostic IoU over occupied cells. Both empty -> 1.
inline double occupancy_iou(const geo::SparseOccupancy& pred, const geo::SparseOccupancy& gt) {
  if (pred.empty() && gt.empty()) return 1.0;
  auto key = [](const geo::SparseOccupancy::Cell& c) { return std::array<int, 3>{c.ix, c.iy, c.iz}; };
  std::set<std::array<int, 3>> a, b;
  for (const auto& c : pred.cells) a.insert(key(c));
  for (const auto& c : gt.cells) b.insert(key(c));
  std::size_t inter = 0;
  for (const auto& k : a) inter += b.count(k);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Mean over semantic classes (excluding free = 0) of per-class IoU. Classes
/// absent from both sides are excluded; no class present anywhere -> error.
inline double occupancy_miou(const geo::SparseOccupancy& pred, const geo::SparseOccupancy& gt,
                             int n_classes) {
  double sum = 0.0;
  int counted = 0;
  for (int cls = 1; cls < n_classes; ++cls) {
    std::set<std::array<int, 3>> a, b;
    for (const auto& c : pred.cells)
      if (c.label == cls) a.insert({c.ix, c.iy, c.iz});
    for (const auto& c : gt.cells)
      if (c.label == cls) b.insert({c.ix, c.iy, c.iz});
    if (a.empty() && b.empty()) continue;
    std::size_t inter = 0;
    for (const auto& k : a) inter += b.count(k);
    sum += static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("occupancy_miou: no class present anywhere");
  return sum / counted;
}

/// Bins model outputs for grid metrics: per-point argmax class, free-class
/// points dropped, majority label per cell (ties to the smaller id).
inline geo::SparseOccupancy prediction_to_occupancy(const std::vector<Vec3>& points,
                                                    const nn::Tensor& logits,
                                                    const geo::GridSpec& grid,
                                                    int free_class = 0) {
  geo::LabeledPointCloud cloud;
  const std::size_t c = logits.shape[1];
  for (std::size_t i = 0; i < points.size(); ++i) {
    int best = 0;
    const double* row = logits.row(i);
    for (std::size_t k = 1; k < c; ++k)
      if (row[k] > row[best]) best = static_cast<int>(k);
    if (best == free_class) continue;
    cloud.push_back(points[i], best, 0);
  }
  if (cloud.empty()) return {};
  return geo::revoxelize(cloud, grid).occupancy;
}

/// Euclidean (x, y) error per horizon plus cumulative averages (avg over
/// horizons 1..k, the common planning-benchmark convention).
struct TrajectoryL2 {
  std::vector<double> per_horizon;
  std::vector<double> cumulative_avg;
};

inline TrajectoryL2 trajectory_l2(const std::vector<geo::Pose>& pred,
                                  const std::vector<geo::Pose>& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("trajectory_l2: length mismatch");
  TrajectoryL2 out;
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const double e = std::hypot(pred[t].x - gt[t].x, pred[t].y - gt[t].y);
    out.per_horizon.push_back(e);
    acc += e;
    out.cumulative_avg.push_back(acc / static_cast<double>(t + 1));
  }
  return out;
}

/// Rectangle footprint (length along heading, width across), centered on the
/// pose. A pose collides when any grid cell whose center lies inside the
/// footprint is occupied by a non-drivable class.
inline bool pose_collides(const geo::Pose& pose, const geo::SparseOccupancy& occ,
                          const geo::GridSpec& grid, double length, double width,
                          const std::set<int>& drivable) {
  std::map<std::array<int, 2>, bool> occupied;  // column-occupied by non-drivable
  for (const auto& c : occ.cells)
    if (!drivable.count(c.label)) occupied[{c.ix, c.iy}] = true;

  const double half_diag = 0.5 * std::hypot(length, width);
  const auto lo = grid.cell_of({pose.x - half_diag, pose.y - half_diag, 0.0});
  const auto hi = grid.cell_of({pose.x + half_diag, pose.y + half_diag, 0.0});
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  for (int ix = std::max(lo[0], 0); ix <= std::min(hi[0], grid.dims[0] - 1); ++ix)
    for (int iy = std::max(lo[1], 0); iy <= std::min(hi[1], grid.dims[1] - 1); ++iy) {
      if (!occupied.count({ix, iy})) continue;
      const Vec3 ctr = grid.cell_center(ix, iy, 0);
      const double dx = ctr[0] - pose.x, dy = ctr[1] - pose.y;
      const double lx = c * dx + s * dy;
      const double ly = -s * dx + c * dy;
      if (std::abs(lx) <= 0.5 * length && std::abs(ly) <= 0.5 * width) return true;
    }
  return false;
}

struct EvalAccumulator {
  // indexed by horizon (0 = current frame for occupancy; 1..f for planning)
  std::vector<double> miou_sum, iou_sum, l2_sum;
  std::vector<int> collision_count;
  int samples = 0;

  void init(int horizons) {
    miou_sum.assign(horizons + 1, 0.0);
    iou_sum.assign(horizons + 1, 0.0);
    l2_sum.assign(horizons + 1, 0.0);
    collision_count.assign(horizons + 1, 0);
  }
};

struct EvalReport {
  int future_frames = 0;
  int samples = 0;
  std::vector<double> miou, iou;        // horizon 0..f
  std::vector<double> l2;               // horizon 1..f (index 0 unused)
  std::vector<double> collision_rate;   // horizon 1..f (index 0 unused)
  double runtime_seconds = 0.0;

  double avg(const std::vector<double>& v, int from) const {
    double s = 0;
    int n = 0;
    for (std::size_t t = from; t < v.size(); ++t) {
      s += v[t];
      ++n;
    }
    return n ? s / n : 0.0;
  }

  void write_csv(std::ostream& os) const {
    os << "metric";
    for (int t = 0; t <= future_frames; ++t) os << ",h" << t;
    os << ",avg_future\n";
    auto row = [&](const char* name, const std::vector<double>& v, int from) {
      os << name;
      char buf[64];
      for (int t = 0; t <= future_frames; ++t) {
        if (t < from)
          os << ",";
        else {
          std::snprintf(buf, sizeof(buf), ",%.6f", v[t]);
          os << buf;
        }
      }
      std::snprintf(buf, sizeof(buf), ",%.6f\n", avg(v, std::max(from, 1)));
      os << buf;
    };
    row("miou", miou, 0);
    row("iou", iou, 0);
    row("l2", l2, 1);
    row("collision_rate", collision_rate, 1);
  }

  void write_table(std::ostream& os) const {
    char buf[160];
    os << "horizon        ";
    for (int t = 1; t <= future_frames; ++t) {
      std::snprintf(buf, sizeof(buf), "     h%d", t);
      os << buf;
    }
    os << "    Avg\n";
    auto row = [&](const char* name, const std::vector<double>& v) {
      std::snprintf(buf, sizeof(buf), "%-15s", name);
      os << buf;
      for (int t = 1; t <= future_frames; ++t) {
        std::snprintf(buf, sizeof(buf), " %6.3f", v[t]);
        os << buf;
      }
      std::snprintf(buf, sizeof(buf), " %6.3f\n", avg(v, 1));
      os << buf;
    };
    row("mIoU", miou);
    row("IoU", iou);
    row("L2 (m)", l2);
    row("Collision", collision_rate);
    std::snprintf(buf, sizeof(buf), "current-frame mIoU %.3f, IoU %.3f over %d samples\n",
                  miou.empty() ? 0.0 : miou[0], iou.empty() ? 0.0 : iou[0], samples);
    os << buf;
  }
};

/// Extrapolates the last displacement and yaw rate for f steps (constant
/// velocity, constant turn rate).
inline std::vector<geo::Pose> constant_velocity_baseline(const std::vector<geo::Pose>& past,
                                                         int future_frames) {
  if (past.size() < 2)
    throw std::invalid_argument("constant_velocity_baseline: need at least 2 waypoints");
  const geo::Pose& last = past.back();
  const geo::Pose& prev = past[past.size() - 2];
  const double omega = wrap_angle(last.yaw - prev.yaw);
  // step expressed in the heading frame at the end of each step
  const double c = std::cos(last.yaw), s = std::sin(last.yaw);
  const double gdx = last.x - prev.x, gdy = last.y - prev.y;
  const double step_x = c * gdx + s * gdy;
  const double step_y = -s * gdx + c * gdy;

  std::vector<geo::Pose> out;
  geo::Pose p = last;
  for (int t = 1; t <= future_frames; ++t) {
    const double yaw = wrap_angle(p.yaw + omega);
    p.x += std::cos(yaw) * step_x - std::sin(yaw) * step_y;
    p.y += std::sin(yaw) * step_x + std::cos(yaw) * step_y;
    p.yaw = yaw;
    p.frame = last.frame + t;
    out.push_back(p);
  }
  return out;
}

}  // namespace occ4d::metrics
