#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "occ4d/config.hpp"
#include "occ4d/gradcheck_suite.hpp"
#include "occ4d/metrics/metrics.hpp"
#include "occ4d/train/trainer.hpp"

namespace occ4d::cli {

// Exit codes: 0 success, 1 usage/config error, 2 runtime failure, 3 gradcheck failure.

namespace detail {

inline RunConfig load_config(const std::string& path, std::int64_t seed_override) {
  RunConfig cfg = path.empty() ? default_config() : parse_config_file(path);
  if (seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.finalize();
  }
  return cfg;
}

inline void echo_config(const std::filesystem::path& out, const RunConfig& cfg) {
  std::filesystem::create_directories(out);
  std::ofstream os(out / "config_used.cfg", std::ios::binary);
  os << cfg.raw;
}

struct DataSplits {
  std::vector<world::SceneSequence> train, val;
};

inline DataSplits load_data(const RunConfig& cfg) {
  DataSplits d;
  d.train = train::load_split(std::filesystem::path(cfg.data_dir) / "train");
  d.val = train::load_split(std::filesystem::path(cfg.data_dir) / "val");
  return d;
}

inline int cmd_generate(const RunConfig& cfg, const std::string& out) {
  const std::filesystem::path root = out.empty() ? cfg.data_dir : out;
  train::generate_dataset(root, cfg);
  std::cout << "dataset written to " << root.string() << " (" << cfg.sequences << " train, "
            << cfg.val_sequences << " val sequences)\n";
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const std::string& out, const std::string& checkpoint,
                     bool pretrain_only) {
  auto data = load_data(cfg);
  train::Trainer trainer(cfg, std::move(data.train), std::move(data.val));
  const auto outcome = trainer.run(out.empty() ? "run" : out, checkpoint, pretrain_only);
  if (!outcome.logs.empty()) {
    const auto& last = outcome.logs.back();
    std::cout << "finished epoch " << last.epoch << " (" << last.phase
              << "), total loss " << last.total << ", churn " << last.churn << "\n";
  }
  std::cout << "checkpoint: " << outcome.checkpoint_path << "\n";
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& out, const std::string& checkpoint) {
  if (checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  auto data = load_data(cfg);
  WorldModel model(cfg.model, cfg.base_grid(), cfg.seed);
  nn::CheckpointExtras extras = nn::load_checkpoint(checkpoint, model.store());
  if (extras.ints.count("timestamps")) {
    const auto& ts = extras.ints.at("timestamps");
    auto& dst = model.timestamps();
    for (std::size_t i = 0; i < ts.size() && i < dst.size(); ++i)
      dst[i] = static_cast<int>(ts[i]);
  }
  std::vector<Example> examples;
  for (const auto& s : data.val) examples.push_back(prepare_example(s, cfg.union_grid()));
  const auto res = train::evaluate(model, data.val, examples, cfg);

  const std::filesystem::path dir = out.empty() ? "eval" : out;
  std::filesystem::create_directories(dir);
  echo_config(dir, cfg);
  {
    std::ofstream os(dir / "eval_report.csv");
    res.report.write_csv(os);
  }
  {
    std::ofstream os(dir / "eval_table.txt");
    res.report.write_table(os);
  }
  res.report.write_table(std::cout);
  return 0;
}

inline int cmd_gradcheck() {
  const auto suite = run_gradcheck_suite();
  print_gradcheck(suite, std::cout);
  return suite.all_ok ? 0 : 3;
}

inline int cmd_export(const RunConfig& cfg, const std::string& out, const std::string& checkpoint,
                      int seq_index) {
  if (checkpoint.empty()) throw ConfigError("export: --checkpoint is required");
  auto val = train::load_split(std::filesystem::path(cfg.data_dir) / "val");
  if (seq_index < 0 || seq_index >= static_cast<int>(val.size()))
    throw ConfigError("export: sequence index out of range");
  WorldModel model(cfg.model, cfg.base_grid(), cfg.seed);
  auto extras = nn::load_checkpoint(checkpoint, model.store());
  if (extras.ints.count("timestamps")) {
    const auto& ts = extras.ints.at("timestamps");
    auto& dst = model.timestamps();
    for (std::size_t i = 0; i < ts.size() && i < dst.size(); ++i)
      dst[i] = static_cast<int>(ts[i]);
  }
  const auto& seq = val[seq_index];
  const auto ex = prepare_example(seq, cfg.union_grid());
  const auto forecast = model.run_inference(ex);

  const std::filesystem::path dir = out.empty() ? "export" : out;
  std::filesystem::create_directories(dir);
  echo_config(dir, cfg);
  for (std::size_t t = 0; t < forecast.frame_points.size(); ++t) {
    geo::LabeledPointCloud cloud;
    const auto& logits = forecast.frame_logits[t];
    for (std::size_t i = 0; i < forecast.frame_points[t].size(); ++i) {
      int best = 0;
      for (std::size_t k = 1; k < logits.shape[1]; ++k)
        if (logits(i, k) > logits(i, best)) best = static_cast<int>(k);
      cloud.push_back(forecast.frame_points[t][i], best, static_cast<int>(t + 1));
    }
    geo::write_xyz((dir / ("forecast_" + std::to_string(t + 1) + ".xyz")).string(), cloud);
  }
  {
    std::ofstream os(dir / "trajectory.csv");
    os << "t,x,y,yaw\n";
    char buf[128];
    for (std::size_t t = 0; t < forecast.waypoints.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f,%.9f\n", t + 1, forecast.waypoints[t].x,
                    forecast.waypoints[t].y, forecast.waypoints[t].yaw);
      os << buf;
    }
  }
  std::cout << "exported " << forecast.frame_points.size() << " forecast frames + trajectory to "
            << dir.string() << "\n";
  return 0;
}

}  // namespace detail

/// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"sparse-query 4D occupancy world model"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path;
  std::int64_t seed = -1;
  int seq_index = 0;
  app.add_option("--config", config_path, "configuration file");
  app.add_option("--seed", seed, "seed override");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--checkpoint", checkpoint_path, "checkpoint path");

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  auto* pre = app.add_subcommand("pretrain", "run the pretraining phase only");
  auto* trn = app.add_subcommand("train", "run the full two-phase training");
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
  auto* grd = app.add_subcommand("gradcheck", "run the finite-difference suite");
  auto* exp = app.add_subcommand("export", "export forecasts and the planned trajectory");
  exp->add_option("--seq", seq_index, "val sequence index");
  for (auto* sub : {gen, pre, trn, evl, grd, exp}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (grd->parsed()) return detail::cmd_gradcheck();
    const RunConfig cfg = detail::load_config(config_path, seed);
    if (gen->parsed()) return detail::cmd_generate(cfg, out_dir);
    if (pre->parsed()) return detail::cmd_train(cfg, out_dir, checkpoint_path, true);
    if (trn->parsed()) return detail::cmd_train(cfg, out_dir, checkpoint_path, false);
    if (evl->parsed()) return detail::cmd_eval(cfg, out_dir, checkpoint_path);
    if (exp->parsed()) return detail::cmd_export(cfg, out_dir, checkpoint_path, seq_index);
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace occ4d::cli
