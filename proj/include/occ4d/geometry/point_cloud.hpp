#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/geometry/pose.hpp"

namespace occ4d::geo {

/// Point cloud with one semantic label and one frame timestamp per point.
struct LabeledPointCloud {
  std::vector<Vec3> positions;
  std::vector<int> labels;
  std::vector<int> timestamps;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  void push_back(const Vec3& p, int label, int timestamp) {
    positions.push_back(p);
    labels.push_back(label);
    timestamps.push_back(timestamp);
  }

  void append(const LabeledPointCloud& other) {
    positions.insert(positions.end(), other.positions.begin(), other.positions.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    timestamps.insert(timestamps.end(), other.timestamps.begin(), other.timestamps.end());
  }

  void check_finite() const {
    for (const Vec3& p : positions)
      if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
        throw std::invalid_argument("LabeledPointCloud: non-finite coordinate");
  }
};

/// Re-expresses every point from the frame of `src` into the frame of `dst`
/// (planar rigid transform; z passes through). Labels and timestamps are kept.
inline LabeledPointCloud transform_points(const LabeledPointCloud& cloud, const Pose& src,
                                          const Pose& dst) {
  LabeledPointCloud out;
  out.positions.reserve(cloud.size());
  out.labels = cloud.labels;
  out.timestamps = cloud.timestamps;
  for (const Vec3& p : cloud.positions) out.positions.push_back(to_local(dst, to_parent(src, p)));
  return out;
}

/// Text export, one point per line: "x y z label t".
inline void write_xyz(std::ostream& os, const LabeledPointCloud& cloud) {
  char buf[128];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %d %d\n", cloud.positions[i][0],
                  cloud.positions[i][1], cloud.positions[i][2], cloud.labels[i],
                  cloud.timestamps[i]);
    os << buf;
  }
}

inline void write_xyz(const std::string& path, const LabeledPointCloud& cloud) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_xyz: cannot open " + path);
  write_xyz(os, cloud);
}

}  // namespace occ4d::geo
