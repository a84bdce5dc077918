#pragma once

#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/geometry/grid.hpp"
#include "occ4d/model.hpp"
#include "occ4d/world/scene.hpp"

namespace occ4d {

/// Full experiment configuration. Parsed from a sectioned key/value text
/// file with strict validation: unknown sections or keys are errors.
struct RunConfig {
  // [grid]
  Vec3 origin{-12.0, -12.0, -1.0};
  double voxel_size = 0.5;
  std::array<int, 3> dims{48, 48, 8};
  Vec3 union_origin{-24.0, -24.0, -1.0};
  std::array<int, 3> union_dims{96, 96, 8};

  // [world]
  int classes = 6;
  int past_frames = 2;
  int future_frames = 4;
  world::WorldGenConfig world;

  // [model]
  ModelConfig model;

  // [train]
  int pretrain_epochs = 2;
  int e2e_epochs = 8;
  double lr = 2e-4;
  double lr_floor = 2e-6;
  int warmup_steps = 50;
  double weight_decay = 0.01;
  int sequences = 64;
  int val_sequences = 64;
  int epoch_eval_sequences = 8;
  std::uint64_t seed = 42;

  // [eval]
  double footprint_length = 4.0;
  double footprint_width = 1.8;

  // [paths]
  std::string data_dir = "data";

  std::string raw;  // the parsed file, byte for byte, echoed into outputs

  geo::GridSpec base_grid() const { return geo::GridSpec(origin, voxel_size, dims); }
  geo::GridSpec union_grid() const { return geo::GridSpec(union_origin, voxel_size, union_dims); }

  void validate() const {
    base_grid();
    union_grid();
    if (classes < 2) throw ConfigError("config: classes must be >= 2");
    if (past_frames < 1 || future_frames < 1)
      throw ConfigError("config: past_frames and future_frames must be >= 1");
    if (pretrain_epochs < 0 || e2e_epochs < 0) throw ConfigError("config: negative epoch count");
    if (sequences < 1) throw ConfigError("config: sequences must be >= 1");
    model.validate();
    if (model.rap.n_classes != classes || model.rap.feature_dim != classes)
      throw ConfigError("config: class count mismatch between world and model");
    if (model.scf.future_frames != future_frames)
      throw ConfigError("config: future_frames mismatch between world and model");
  }

  /// Applies the cross-section couplings (classes, horizons) after parsing.
  void finalize() {
    model.rap.n_classes = classes;
    model.rap.feature_dim = classes;
    model.rap.past_frames = past_frames;
    model.scf.past_frames = past_frames;
    model.scf.future_frames = future_frames;
    model.scf.embed_dim = model.rap.embed_dim;
    validate();
  }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for key '" + key + "': " + v);
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
  std::istringstream ss(v);
  T out;
  ss >> out;
  if (ss.fail()) throw ConfigError("config: bad value for key '" + key + "': " + v);
  std::string rest;
  if (ss >> rest) throw ConfigError("config: trailing data for key '" + key + "': " + v);
  return out;
}

inline std::vector<int> parse_ints(const std::string& v, const std::string& key) {
  std::istringstream ss(v);
  std::vector<int> out;
  int x;
  while (ss >> x) out.push_back(x);
  if (out.empty()) throw ConfigError("config: expected integers for key '" + key + "'");
  return out;
}

inline std::vector<double> parse_doubles(const std::string& v, const std::string& key) {
  std::istringstream ss(v);
  std::vector<double> out;
  double x;
  while (ss >> x) out.push_back(x);
  if (out.empty()) throw ConfigError("config: expected numbers for key '" + key + "'");
  return out;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline RunConfig parse_config(std::istream& is) {
  RunConfig cfg;
  std::ostringstream raw;
  std::string section;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    raw << line << '\n';
    ++line_no;
    const std::string text = detail::trim(line);
    if (text.empty() || text[0] == '#') continue;
    if (text.front() == '[' && text.back() == ']') {
      section = text.substr(1, text.size() - 2);
      if (section != "grid" && section != "world" && section != "model" && section != "train" &&
          section != "loss" && section != "eval" && section != "paths")
        throw ConfigError("config: unknown section '" + section + "' (line " +
                          std::to_string(line_no) + ")");
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value (line " + std::to_string(line_no) + ")");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = detail::trim(text.substr(eq + 1));
    const std::string qual = section + "." + key;
    using detail::parse_bool;
    using detail::parse_doubles;
    using detail::parse_ints;
    using detail::parse_num;

    if (qual == "grid.voxel_size") cfg.voxel_size = parse_num<double>(value, qual);
    else if (qual == "grid.dims") {
      auto v = parse_ints(value, qual);
      if (v.size() != 3) throw ConfigError("config: dims needs 3 integers");
      cfg.dims = {v[0], v[1], v[2]};
    } else if (qual == "grid.origin") {
      auto v = parse_doubles(value, qual);
      if (v.size() != 3) throw ConfigError("config: origin needs 3 numbers");
      cfg.origin = {v[0], v[1], v[2]};
    } else if (qual == "grid.union_dims") {
      auto v = parse_ints(value, qual);
      if (v.size() != 3) throw ConfigError("config: union_dims needs 3 integers");
      cfg.union_dims = {v[0], v[1], v[2]};
    } else if (qual == "grid.union_origin") {
      auto v = parse_doubles(value, qual);
      if (v.size() != 3) throw ConfigError("config: union_origin needs 3 numbers");
      cfg.union_origin = {v[0], v[1], v[2]};
    } else if (qual == "world.classes") cfg.classes = parse_num<int>(value, qual);
    else if (qual == "world.past_frames") cfg.past_frames = parse_num<int>(value, qual);
    else if (qual == "world.future_frames") cfg.future_frames = parse_num<int>(value, qual);
    else if (qual == "world.buildings_min") cfg.world.buildings_min = parse_num<int>(value, qual);
    else if (qual == "world.buildings_max") cfg.world.buildings_max = parse_num<int>(value, qual);
    else if (qual == "world.barriers_max") cfg.world.barriers_max = parse_num<int>(value, qual);
    else if (qual == "world.agents_min") cfg.world.agents_min = parse_num<int>(value, qual);
    else if (qual == "world.agents_max") cfg.world.agents_max = parse_num<int>(value, qual);
    else if (qual == "world.speed_min") cfg.world.speed_min = parse_num<double>(value, qual);
    else if (qual == "world.speed_max") cfg.world.speed_max = parse_num<double>(value, qual);
    else if (qual == "world.yaw_rate_max") cfg.world.yaw_rate_max = parse_num<double>(value, qual);
    else if (qual == "world.agent_speed_max")
      cfg.world.agent_speed_max = parse_num<double>(value, qual);
    else if (qual == "world.road_width") cfg.world.road_width = parse_num<double>(value, qual);
    else if (qual == "model.n_queries") cfg.model.rap.n_queries = parse_num<int>(value, qual);
    else if (qual == "model.query_split") cfg.model.rap.query_split = parse_ints(value, qual);
    else if (qual == "model.n_layers") cfg.model.rap.n_layers = parse_num<int>(value, qual);
    else if (qual == "model.points_ladder") cfg.model.rap.points_ladder = parse_ints(value, qual);
    else if (qual == "model.embed_dim") cfg.model.rap.embed_dim = parse_num<int>(value, qual);
    else if (qual == "model.n_heads") cfg.model.rap.n_heads = parse_num<int>(value, qual);
    else if (qual == "model.freeze_scaling")
      cfg.model.rap.freeze_scaling = parse_bool(value, qual);
    else if (qual == "model.tau_per_head") cfg.model.rap.tau_per_head = parse_bool(value, qual);
    else if (qual == "model.use_temporal_mask")
      cfg.model.use_temporal_mask = parse_bool(value, qual);
    else if (qual == "model.use_pe4d") cfg.model.scf.use_pe4d = parse_bool(value, qual);
    else if (qual == "model.use_state_condition")
      cfg.model.scf.use_state_condition = parse_bool(value, qual);
    else if (qual == "model.use_ego_state") cfg.model.scf.use_ego_state = parse_bool(value, qual);
    else if (qual == "model.frozen_queries")
      cfg.model.scf.frozen_queries = parse_bool(value, qual);
    else if (qual == "model.max_step") cfg.model.scf.max_step = parse_num<double>(value, qual);
    else if (qual == "train.pretrain_epochs") cfg.pretrain_epochs = parse_num<int>(value, qual);
    else if (qual == "train.e2e_epochs") cfg.e2e_epochs = parse_num<int>(value, qual);
    else if (qual == "train.lr") cfg.lr = parse_num<double>(value, qual);
    else if (qual == "train.lr_floor") cfg.lr_floor = parse_num<double>(value, qual);
    else if (qual == "train.warmup_steps") cfg.warmup_steps = parse_num<int>(value, qual);
    else if (qual == "train.weight_decay") cfg.weight_decay = parse_num<double>(value, qual);
    else if (qual == "train.sequences") cfg.sequences = parse_num<int>(value, qual);
    else if (qual == "train.val_sequences") cfg.val_sequences = parse_num<int>(value, qual);
    else if (qual == "train.epoch_eval_sequences")
      cfg.epoch_eval_sequences = parse_num<int>(value, qual);
    else if (qual == "train.seed") cfg.seed = parse_num<std::uint64_t>(value, qual);
    else if (qual == "loss.lambda1") cfg.model.weights.lambda1 = parse_num<double>(value, qual);
    else if (qual == "loss.lambda2") cfg.model.weights.lambda2 = parse_num<double>(value, qual);
    else if (qual == "loss.lambda3") cfg.model.weights.lambda3 = parse_num<double>(value, qual);
    else if (qual == "loss.focal_gamma") cfg.model.focal_gamma = parse_num<double>(value, qual);
    else if (qual == "loss.focal_alpha") cfg.model.focal_alpha = parse_num<double>(value, qual);
    else if (qual == "eval.footprint_length")
      cfg.footprint_length = parse_num<double>(value, qual);
    else if (qual == "eval.footprint_width") cfg.footprint_width = parse_num<double>(value, qual);
    else if (qual == "paths.data_dir") cfg.data_dir = value;
    else
      throw ConfigError("config: unknown key '" + qual + "' (line " + std::to_string(line_no) +
                        ")");
  }
  cfg.raw = raw.str();
  cfg.finalize();
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  return parse_config(is);
}

inline RunConfig default_config() {
  RunConfig cfg;
  cfg.finalize();
  return cfg;
}

}  // namespace occ4d
