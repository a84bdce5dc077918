#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "occ4d/geometry/grid.hpp"
#include "occ4d/geometry/point_cloud.hpp"
#include "occ4d/geometry/pose.hpp"

namespace occ4d::geo {

/// One point per occupied cell, at the cell center. Timestamps are set to
/// `timestamp` (the caller decides frame indices).
inline LabeledPointCloud occupancy_to_points(const SparseOccupancy& occ, const GridSpec& grid,
                                             int timestamp = 0) {
  LabeledPointCloud out;
  out.positions.reserve(occ.size());
  for (const auto& c : occ.cells) out.push_back(grid.cell_center(c.ix, c.iy, c.iz), c.label, timestamp);
  return out;
}

/// Converts each future frame to points (timestamp = frame index), transforms
/// everything into the frame-0 pose, and concatenates. frames[0]/poses[0] is
/// the current frame.
inline LabeledPointCloud union_future_gt(const std::vector<SparseOccupancy>& frames,
                                         const std::vector<Pose>& poses, const GridSpec& grid) {
  if (frames.size() != poses.size())
    throw std::invalid_argument("union_future_gt: frames/poses length mismatch");
  LabeledPointCloud out;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    LabeledPointCloud pts = occupancy_to_points(frames[t], grid, static_cast<int>(t));
    out.append(t == 0 ? pts : transform_points(pts, poses[t], poses[0]));
  }
  return out;
}

struct RevoxelizeResult {
  SparseOccupancy occupancy;
  /// Per-cell timestamp multiset (sorted, duplicates kept), aligned with
  /// occupancy.cells.
  std::vector<std::vector<int>> timestamps;
};

/// Bins points into grid cells (half-open intervals, floor rule). Points
/// outside the grid are dropped. Cell label = majority label, ties to the
/// smallest class id. The timestamp multiset collects every contributing point.
inline RevoxelizeResult revoxelize(const LabeledPointCloud& cloud, const GridSpec& grid) {
  struct CellAccum {
    std::map<int, int> label_counts;
    std::vector<int> timestamps;
  };
  std::map<std::array<int, 3>, CellAccum> cells;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto idx = grid.cell_of(cloud.positions[i]);
    if (!grid.contains(idx[0], idx[1], idx[2])) continue;
    CellAccum& acc = cells[idx];
    acc.label_counts[cloud.labels[i]] += 1;
    acc.timestamps.push_back(cloud.timestamps[i]);
  }
  RevoxelizeResult res;
  res.occupancy.cells.reserve(cells.size());
  res.timestamps.reserve(cells.size());
  for (auto& [idx, acc] : cells) {
    int best_label = -1, best_count = 0;
    for (const auto& [label, count] : acc.label_counts) {
      if (count > best_count) {  // map iterates labels ascending, so ties keep the smaller id
        best_count = count;
        best_label = label;
      }
    }
    std::sort(acc.timestamps.begin(), acc.timestamps.end());
    res.occupancy.cells.push_back({idx[0], idx[1], idx[2], best_label});
    res.timestamps.push_back(std::move(acc.timestamps));
  }
  return res;
}

}  // namespace occ4d::geo
