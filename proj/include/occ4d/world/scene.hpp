#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/geometry/pose.hpp"

namespace occ4d::world {

// Semantic classes at desk scale.
enum ClassId : int {
  kFree = 0,
  kGround = 1,
  kBuilding = 2,
  kVehicle = 3,
  kPedestrian = 4,
  kBarrier = 5,
};

/// Yaw-oriented box in world coordinates.
struct OrientedBox {
  Vec3 center{0, 0, 0};
  Vec3 size{1, 1, 1};
  double yaw = 0.0;
  int label = 0;

  bool contains(const Vec3& w) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    const double dx = w[0] - center[0], dy = w[1] - center[1];
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    const double lz = w[2] - center[2];
    return std::abs(lx) <= 0.5 * size[0] && std::abs(ly) <= 0.5 * size[1] &&
           std::abs(lz) <= 0.5 * size[2];
  }
};

/// Box moving at constant world velocity; `box.center` is its frame-0 position.
struct DynamicAgent {
  OrientedBox box;
  double vx = 0.0, vy = 0.0;

  OrientedBox at_frame(int frame) const {
    OrientedBox b = box;
    b.center[0] += vx * frame;
    b.center[1] += vy * frame;
    return b;
  }
};

/// Full procedural description of one 4D scene. Everything downstream
/// (poses, occupancy, feature field) regenerates deterministically from this.
struct SceneSpec {
  std::uint64_t seed = 0;
  int n_classes = 6;
  int past_frames = 2;
  int future_frames = 4;
  int ground_class = kGround;
  geo::Pose ego_start;             // pose at frame -past_frames
  std::vector<double> speeds;      // m/frame, length >= past+future+1
  std::vector<double> yaw_rates;   // rad/frame, same length
  std::vector<OrientedBox> static_boxes;
  std::vector<DynamicAgent> agents;

  int frame_count() const { return past_frames + future_frames + 1; }

  void validate() const {
    if (static_cast<int>(speeds.size()) < frame_count() ||
        static_cast<int>(yaw_rates.size()) < frame_count())
      throw std::invalid_argument("SceneSpec: speed/yaw profile shorter than frame count");
    for (const auto& b : static_boxes)
      if (b.size[0] <= 0 || b.size[1] <= 0 || b.size[2] <= 0 || b.label >= n_classes)
        throw std::invalid_argument("SceneSpec: bad static box");
    for (const auto& a : agents)
      if (a.box.size[0] <= 0 || a.box.label >= n_classes)
        throw std::invalid_argument("SceneSpec: bad agent");
  }
};

/// Integrates the speed / yaw-rate profile into per-frame ego poses
/// (frames -past_frames .. future_frames, in that order).
inline std::vector<geo::Pose> ego_trajectory(const SceneSpec& spec) {
  std::vector<geo::Pose> poses;
  poses.reserve(spec.frame_count());
  geo::Pose p = spec.ego_start;
  p.frame = -spec.past_frames;
  poses.push_back(p);
  for (int k = 0; k + 1 < spec.frame_count(); ++k) {
    const double yaw = wrap_angle(p.yaw + spec.yaw_rates[k]);
    p.x += std::cos(yaw) * spec.speeds[k];
    p.y += std::sin(yaw) * spec.speeds[k];
    p.yaw = yaw;
    p.frame += 1;
    poses.push_back(p);
  }
  return poses;
}

struct WorldGenConfig {
  int buildings_min = 2, buildings_max = 5;
  int barriers_max = 2;
  int agents_min = 2, agents_max = 4;
  double speed_min = 0.0, speed_max = 2.5;     // ego, m/frame
  double yaw_rate_max = 0.12;                  // rad/frame
  double agent_speed_max = 1.5;                // m/frame
  double road_width = 8.0;
};

/// Reproducible scene generator. Static content and agents are anchored to
/// the ego trajectory so they stay inside the per-frame grids.
inline SceneSpec generate_scene(std::uint64_t seed, const WorldGenConfig& cfg,
                                int past_frames = 2, int future_frames = 4) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto uni_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  SceneSpec spec;
  spec.seed = seed;
  spec.past_frames = past_frames;
  spec.future_frames = future_frames;
  const int frames = spec.frame_count();

  const double base_speed = uni(cfg.speed_min, cfg.speed_max);
  const double w_past = uni(-cfg.yaw_rate_max, cfg.yaw_rate_max) * 0.3;
  const double w_future = uni(-cfg.yaw_rate_max, cfg.yaw_rate_max);
  spec.speeds.resize(frames);
  spec.yaw_rates.resize(frames);
  for (int k = 0; k < frames; ++k) {
    spec.speeds[k] = std::max(0.0, base_speed + uni(-0.15, 0.15));
    spec.yaw_rates[k] = (k < past_frames) ? w_past : w_future;
  }
  spec.ego_start = geo::Pose{0.0, 0.0, 0.0, -past_frames};

  const std::vector<geo::Pose> traj = ego_trajectory(spec);
  auto pose_at = [&](int frame) { return traj[frame + past_frames]; };

  // Road surface: flat slabs along the trajectory, spaced by arc length so
  // they overlap only lightly.
  {
    double since_last = 1e9;
    geo::Pose prev = pose_at(-past_frames);
    for (int f = -past_frames; f <= future_frames; ++f) {
      const geo::Pose p = pose_at(f);
      since_last += std::hypot(p.x - prev.x, p.y - prev.y);
      prev = p;
      if (since_last < 3.0) continue;
      since_last = 0.0;
      spec.static_boxes.push_back(OrientedBox{
          {p.x, p.y, -0.25}, {base_speed + 8.0, cfg.road_width, 0.5}, p.yaw, spec.ground_class});
    }
  }

  const int n_buildings = uni_int(cfg.buildings_min, cfg.buildings_max);
  for (int b = 0; b < n_buildings; ++b) {
    const geo::Pose p = pose_at(uni_int(0, future_frames));
    const double side = rng() % 2 == 0 ? 1.0 : -1.0;
    const double lateral = side * (0.5 * cfg.road_width + uni(1.0, 4.0));
    const double along = uni(-6.0, 8.0);
    const Vec3 c = geo::to_parent(p, {along, lateral, 0.0});
    const double h = uni(1.0, 2.5);
    spec.static_boxes.push_back(OrientedBox{{c[0], c[1], 0.5 * h},
                                            {uni(2.0, 4.5), uni(2.0, 4.5), h},
                                            wrap_angle(p.yaw + uni(-0.3, 0.3)),
                                            kBuilding});
  }

  const int n_barriers = uni_int(0, cfg.barriers_max);
  for (int b = 0; b < n_barriers; ++b) {
    const geo::Pose p = pose_at(uni_int(0, future_frames));
    const double side = rng() % 2 == 0 ? 1.0 : -1.0;
    const Vec3 c = geo::to_parent(p, {uni(-4.0, 6.0), side * (0.5 * cfg.road_width + 0.4), 0.0});
    spec.static_boxes.push_back(
        OrientedBox{{c[0], c[1], 0.4}, {uni(3.0, 7.0), 0.4, 0.8}, p.yaw, kBarrier});
  }

  const int n_agents = uni_int(cfg.agents_min, cfg.agents_max);
  for (int a = 0; a < n_agents; ++a) {
    const bool vehicle = a % 2 == 0;
    const geo::Pose p = pose_at(uni_int(0, future_frames));
    const double lane = vehicle ? uni(-0.3, 0.3) * cfg.road_width : 0.45 * cfg.road_width;
    const double side = rng() % 2 == 0 ? 1.0 : -1.0;
    const Vec3 c = geo::to_parent(p, {uni(2.0, 9.0), side * lane, 0.0});
    const double speed = vehicle ? uni(0.3, cfg.agent_speed_max) : uni(0.1, 0.4);
    const double dir = wrap_angle(p.yaw + (rng() % 2 == 0 ? 0.0 : kPi) + uni(-0.15, 0.15));
    DynamicAgent agent;
    agent.box.size = vehicle ? Vec3{4.2, 1.8, 1.5} : Vec3{0.5, 0.5, 1.7};
    agent.box.label = vehicle ? kVehicle : kPedestrian;
    agent.box.yaw = dir;
    agent.box.center = {c[0], c[1], 0.5 * agent.box.size[2]};
    agent.vx = speed * std::cos(dir);
    agent.vy = speed * std::sin(dir);
    spec.agents.push_back(agent);
  }
  spec.validate();
  return spec;
}

// ---- Manifest (human-readable, regenerates the scene exactly) ----

inline void write_manifest(std::ostream& os, const SceneSpec& spec) {
  char buf[512];
  auto line = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof(buf), fmt, args...);
    os << buf << '\n';
  };
  os << "occ4d scene v1\n";
  line("seed %llu", static_cast<unsigned long long>(spec.seed));
  line("classes %d", spec.n_classes);
  line("past %d", spec.past_frames);
  line("future %d", spec.future_frames);
  line("ground_class %d", spec.ground_class);
  line("ego_start %.17g %.17g %.17g", spec.ego_start.x, spec.ego_start.y, spec.ego_start.yaw);
  os << "speeds";
  for (double s : spec.speeds) {
    std::snprintf(buf, sizeof(buf), " %.17g", s);
    os << buf;
  }
  os << "\nyaw_rates";
  for (double s : spec.yaw_rates) {
    std::snprintf(buf, sizeof(buf), " %.17g", s);
    os << buf;
  }
  os << '\n';
  for (const auto& b : spec.static_boxes)
    line("box %.17g %.17g %.17g %.17g %.17g %.17g %.17g %d", b.center[0], b.center[1],
         b.center[2], b.size[0], b.size[1], b.size[2], b.yaw, b.label);
  for (const auto& a : spec.agents)
    line("agent %.17g %.17g %.17g %.17g %.17g %.17g %.17g %d %.17g %.17g", a.box.center[0],
         a.box.center[1], a.box.center[2], a.box.size[0], a.box.size[1], a.box.size[2], a.box.yaw,
         a.box.label, a.vx, a.vy);
  os << "end\n";
}

inline SceneSpec parse_manifest(std::istream& is) {
  SceneSpec spec;
  std::string header;
  std::getline(is, header);
  if (header != "occ4d scene v1") throw ConfigError("manifest: bad header '" + header + "'");
  std::string text;
  bool done = false;
  while (!done && std::getline(is, text)) {
    if (text.empty()) continue;
    std::istringstream ls(text);
    std::string key;
    ls >> key;
    auto need = [&](auto& v) {
      if (!(ls >> v)) throw ConfigError("manifest: malformed line '" + text + "'");
    };
    if (key == "seed") {
      unsigned long long s;
      need(s);
      spec.seed = s;
    } else if (key == "classes") {
      need(spec.n_classes);
    } else if (key == "past") {
      need(spec.past_frames);
    } else if (key == "future") {
      need(spec.future_frames);
    } else if (key == "ground_class") {
      need(spec.ground_class);
    } else if (key == "ego_start") {
      need(spec.ego_start.x);
      need(spec.ego_start.y);
      need(spec.ego_start.yaw);
      spec.ego_start.frame = -spec.past_frames;
    } else if (key == "speeds") {
      double v;
      while (ls >> v) spec.speeds.push_back(v);
    } else if (key == "yaw_rates") {
      double v;
      while (ls >> v) spec.yaw_rates.push_back(v);
    } else if (key == "box") {
      OrientedBox b;
      need(b.center[0]);
      need(b.center[1]);
      need(b.center[2]);
      need(b.size[0]);
      need(b.size[1]);
      need(b.size[2]);
      need(b.yaw);
      need(b.label);
      spec.static_boxes.push_back(b);
    } else if (key == "agent") {
      DynamicAgent a;
      need(a.box.center[0]);
      need(a.box.center[1]);
      need(a.box.center[2]);
      need(a.box.size[0]);
      need(a.box.size[1]);
      need(a.box.size[2]);
      need(a.box.yaw);
      need(a.box.label);
      need(a.vx);
      need(a.vy);
      spec.agents.push_back(a);
    } else if (key == "end") {
      done = true;
    } else {
      throw ConfigError("manifest: unknown directive '" + key + "'");
    }
  }
  if (!done) throw ConfigError("manifest: missing end marker");
  spec.validate();
  return spec;
}

inline void write_manifest(const std::string& path, const SceneSpec& spec) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_manifest: cannot open " + path);
  write_manifest(os, spec);
}

inline SceneSpec parse_manifest_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("parse_manifest: cannot open " + path);
  return parse_manifest(is);
}

}  // namespace occ4d::world
