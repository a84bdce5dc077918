#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "occ4d/geometry/grid.hpp"
#include "occ4d/geometry/point_cloud.hpp"
#include "occ4d/geometry/pose.hpp"
#include "occ4d/world/scene.hpp"

namespace occ4d::world {

/// Voxelizes the scene into the ego frame at `frame`. A cell is occupied when
/// its center lies inside any box; overlaps resolve by priority
/// agent > static > ground.
inline geo::SparseOccupancy render_gt_occupancy(const SceneSpec& spec, int frame,
                                                const geo::GridSpec& grid) {
  const std::vector<geo::Pose> traj = ego_trajectory(spec);
  const geo::Pose pose = traj[frame + spec.past_frames];

  std::vector<OrientedBox> agent_boxes;
  agent_boxes.reserve(spec.agents.size());
  for (const auto& a : spec.agents) agent_boxes.push_back(a.at_frame(frame));
  std::vector<const OrientedBox*> statics, grounds;
  for (const auto& b : spec.static_boxes)
    (b.label == spec.ground_class ? grounds : statics).push_back(&b);

  geo::SparseOccupancy occ;
  for (int ix = 0; ix < grid.dims[0]; ++ix) {
    for (int iy = 0; iy < grid.dims[1]; ++iy) {
      for (int iz = 0; iz < grid.dims[2]; ++iz) {
        const Vec3 w = geo::to_parent(pose, grid.cell_center(ix, iy, iz));
        int label = -1;
        for (const auto& b : agent_boxes)
          if (b.contains(w)) {
            label = b.label;
            break;
          }
        if (label < 0)
          for (const auto* b : statics)
            if (b->contains(w)) {
              label = b->label;
              break;
            }
        if (label < 0)
          for (const auto* b : grounds)
            if (b->contains(w)) {
              label = b->label;
              break;
            }
        if (label >= 0) occ.cells.push_back({ix, iy, iz, label});
      }
    }
  }
  return occ;  // loop order keeps cells sorted
}

/// One generated sequence: spec, per-frame ego poses, and per-frame GT
/// occupancy expressed in that frame's ego coordinates.
struct SceneSequence {
  SceneSpec spec;
  geo::GridSpec grid;
  std::vector<geo::Pose> poses;                 // frames -p .. f
  std::vector<geo::SparseOccupancy> occupancy;  // aligned with poses

  const geo::Pose& pose_at(int frame) const { return poses[frame + spec.past_frames]; }
  const geo::SparseOccupancy& occ_at(int frame) const {
    return occupancy[frame + spec.past_frames];
  }
};

inline SceneSequence build_sequence(const SceneSpec& spec, const geo::GridSpec& grid) {
  SceneSequence seq;
  seq.spec = spec;
  seq.grid = grid;
  seq.poses = ego_trajectory(spec);
  seq.occupancy.reserve(spec.frame_count());
  for (int f = -spec.past_frames; f <= spec.future_frames; ++f)
    seq.occupancy.push_back(render_gt_occupancy(spec, f, grid));
  return seq;
}

// ---- Occupancy file format ----

inline void write_occupancy(std::ostream& os, const geo::SparseOccupancy& occ,
                            const geo::GridSpec& grid) {
  char buf[256];
  os << "occ4d occupancy v1\n";
  std::snprintf(buf, sizeof(buf), "origin %.17g %.17g %.17g\n", grid.origin[0], grid.origin[1],
                grid.origin[2]);
  os << buf;
  std::snprintf(buf, sizeof(buf), "voxel_size %.17g\n", grid.voxel_size);
  os << buf;
  std::snprintf(buf, sizeof(buf), "dims %d %d %d\n", grid.dims[0], grid.dims[1], grid.dims[2]);
  os << buf;
  std::snprintf(buf, sizeof(buf), "count %zu\n", occ.size());
  os << buf;
  for (const auto& c : occ.cells) {
    std::snprintf(buf, sizeof(buf), "%d %d %d %d\n", c.ix, c.iy, c.iz, c.label);
    os << buf;
  }
}

inline std::pair<geo::SparseOccupancy, geo::GridSpec> read_occupancy(std::istream& is) {
  std::string header;
  std::getline(is, header);
  if (header != "occ4d occupancy v1") throw ConfigError("occupancy: bad header");
  geo::GridSpec grid;
  std::string key;
  is >> key;
  if (key != "origin") throw ConfigError("occupancy: expected origin");
  is >> grid.origin[0] >> grid.origin[1] >> grid.origin[2];
  is >> key;
  if (key != "voxel_size") throw ConfigError("occupancy: expected voxel_size");
  is >> grid.voxel_size;
  is >> key;
  if (key != "dims") throw ConfigError("occupancy: expected dims");
  is >> grid.dims[0] >> grid.dims[1] >> grid.dims[2];
  is >> key;
  if (key != "count") throw ConfigError("occupancy: expected count");
  std::size_t count = 0;
  is >> count;
  grid.validate();
  geo::SparseOccupancy occ;
  occ.cells.resize(count);
  for (auto& c : occ.cells) is >> c.ix >> c.iy >> c.iz >> c.label;
  if (!is) throw ConfigError("occupancy: truncated cell list");
  occ.normalize();
  return {occ, grid};
}

// ---- Sequence directory layout ----
//   manifest.txt   scene spec (regenerates everything)
//   poses.csv      frame,x,y,yaw
//   frame_<i>.occ  per-frame occupancy, i in [-p, f]

inline void write_sequence(const std::filesystem::path& dir, const SceneSequence& seq) {
  std::filesystem::create_directories(dir);
  write_manifest((dir / "manifest.txt").string(), seq.spec);

  std::ofstream poses(dir / "poses.csv");
  if (!poses) throw std::runtime_error("write_sequence: cannot open poses.csv");
  poses << "frame,x,y,yaw\n";
  char buf[256];
  for (const auto& p : seq.poses) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", p.frame, p.x, p.y, p.yaw);
    poses << buf;
  }
  for (int f = -seq.spec.past_frames; f <= seq.spec.future_frames; ++f) {
    std::ofstream os(dir / ("frame_" + std::to_string(f) + ".occ"));
    if (!os) throw std::runtime_error("write_sequence: cannot open occupancy file");
    write_occupancy(os, seq.occ_at(f), seq.grid);
  }
}

inline SceneSequence load_sequence(const std::filesystem::path& dir) {
  SceneSequence seq;
  seq.spec = parse_manifest_file((dir / "manifest.txt").string());

  std::ifstream poses(dir / "poses.csv");
  if (!poses) throw std::runtime_error("load_sequence: missing poses.csv in " + dir.string());
  std::string line;
  std::getline(poses, line);  // header
  while (std::getline(poses, line)) {
    if (line.empty()) continue;
    geo::Pose p;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &p.frame, &p.x, &p.y, &p.yaw) != 4)
      throw ConfigError("poses.csv: malformed line '" + line + "'");
    seq.poses.push_back(p);
  }
  if (static_cast<int>(seq.poses.size()) != seq.spec.frame_count())
    throw ConfigError("poses.csv: wrong number of poses");

  for (int f = -seq.spec.past_frames; f <= seq.spec.future_frames; ++f) {
    std::ifstream is(dir / ("frame_" + std::to_string(f) + ".occ"));
    if (!is) throw std::runtime_error("load_sequence: missing occupancy frame " +
                                      std::to_string(f));
    auto [occ, grid] = read_occupancy(is);
    if (f == -seq.spec.past_frames) seq.grid = grid;
    seq.occupancy.push_back(std::move(occ));
  }
  return seq;
}

inline std::vector<std::filesystem::path> list_sequence_dirs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  if (!std::filesystem::exists(root)) return dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace occ4d::world
