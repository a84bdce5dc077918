#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "occ4d/config.hpp"
#include "occ4d/metrics/metrics.hpp"
#include "occ4d/model.hpp"
#include "occ4d/nn/checkpoint.hpp"
#include "occ4d/nn/optimizer.hpp"
#include "occ4d/scheduling/stats.hpp"
#include "occ4d/world/sequence.hpp"

namespace occ4d::train {

// ---- Dataset helpers ----

inline void generate_split(const std::filesystem::path& dir, const RunConfig& cfg, int count,
                           std::uint64_t seed_base) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04d", i);
    const auto spec = world::generate_scene(seed_base + static_cast<std::uint64_t>(i), cfg.world,
                                            cfg.past_frames, cfg.future_frames);
    world::write_sequence(dir / name, world::build_sequence(spec, cfg.base_grid()));
  }
}

/// Writes train/ and val/ splits plus a verbatim config echo.
inline void generate_dataset(const std::filesystem::path& root, const RunConfig& cfg) {
  std::filesystem::create_directories(root);
  generate_split(root / "train", cfg, cfg.sequences, cfg.seed);
  generate_split(root / "val", cfg, cfg.val_sequences, cfg.seed + 100000);
  std::ofstream echo(root / "config_used.cfg", std::ios::binary);
  echo << cfg.raw;
}

inline std::vector<world::SceneSequence> load_split(const std::filesystem::path& dir) {
  std::vector<world::SceneSequence> out;
  for (const auto& d : world::list_sequence_dirs(dir)) out.push_back(world::load_sequence(d));
  if (out.empty()) throw std::runtime_error("dataset: no sequences under " + dir.string());
  return out;
}

// ---- Evaluation ----

/// Full per-horizon evaluation: occupancy scores on the current frame and on
/// every forecast frame (predictions re-expressed in the GT ego frame via the
/// predicted poses), trajectory L2, collision rate, and the constant-velocity
/// reference trajectory.
struct EvalResult {
  metrics::EvalReport report;
  std::vector<double> baseline_l2;  // constant-velocity baseline, horizon 1..f
};

inline EvalResult evaluate(WorldModel& model, const std::vector<world::SceneSequence>& seqs,
                           const std::vector<Example>& examples, const RunConfig& cfg) {
  const int f = cfg.future_frames;
  EvalResult out;
  out.report.future_frames = f;
  out.report.miou.assign(f + 1, 0.0);
  out.report.iou.assign(f + 1, 0.0);
  out.report.l2.assign(f + 1, 0.0);
  out.report.collision_rate.assign(f + 1, 0.0);
  out.baseline_l2.assign(f + 1, 0.0);
  const std::set<int> drivable{world::kGround};

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    const auto& ex = examples[s];
    const auto forecast = model.run_inference(ex);

    const auto cur_occ = metrics::prediction_to_occupancy(forecast.current_points,
                                                          forecast.current_logits, seq.grid);
    out.report.miou[0] += metrics::occupancy_miou(cur_occ, seq.occ_at(0), cfg.classes);
    out.report.iou[0] += metrics::occupancy_iou(cur_occ, seq.occ_at(0));

    std::vector<geo::Pose> past;
    for (int i = -cfg.past_frames; i <= 0; ++i)
      past.push_back(geo::relative_to(seq.pose_at(i), seq.pose_at(0)));
    const auto baseline = metrics::constant_velocity_baseline(past, f);

    for (int t = 1; t <= f; ++t) {
      const geo::Pose& gt_pose = ex.gt_poses[t];
      const geo::Pose& pred_pose = forecast.waypoints[t - 1];
      const geo::Pose align = geo::relative_to(pred_pose, gt_pose);
      std::vector<Vec3> aligned(forecast.frame_points[t - 1].size());
      for (std::size_t r = 0; r < aligned.size(); ++r)
        aligned[r] = geo::to_parent(align, forecast.frame_points[t - 1][r]);
      const auto occ =
          metrics::prediction_to_occupancy(aligned, forecast.frame_logits[t - 1], seq.grid);
      out.report.miou[t] += metrics::occupancy_miou(occ, seq.occ_at(t), cfg.classes);
      out.report.iou[t] += metrics::occupancy_iou(occ, seq.occ_at(t));

      out.report.l2[t] += std::hypot(pred_pose.x - gt_pose.x, pred_pose.y - gt_pose.y);
      out.baseline_l2[t] +=
          std::hypot(baseline[t - 1].x - gt_pose.x, baseline[t - 1].y - gt_pose.y);
      if (metrics::pose_collides(align, seq.occ_at(t), seq.grid, cfg.footprint_length,
                                 cfg.footprint_width, drivable))
        out.report.collision_rate[t] += 1.0;
    }
  }
  const double n = static_cast<double>(seqs.size());
  for (int t = 0; t <= f; ++t) {
    out.report.miou[t] /= n;
    out.report.iou[t] /= n;
    out.report.l2[t] /= n;
    out.report.collision_rate[t] /= n;
    out.baseline_l2[t] /= n;
  }
  out.report.samples = static_cast<int>(seqs.size());
  out.report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---- Training ----

struct EpochLog {
  int epoch = 0;
  std::string phase;  // "pretrain" or "e2e"
  double cd_p0 = 0.0, cd_layers = 0.0, focal_layers = 0.0;
  std::vector<double> cd_frames, focal_frames, l2_frames;  // per horizon sums
  double total = 0.0;
  double churn = 0.0;
  metrics::EvalReport eval;  // on the epoch eval subset
};

struct TrainOutcome {
  std::vector<EpochLog> logs;
  std::vector<std::vector<int>> assignments;  // after each assignment event
  std::string checkpoint_path;
};

/// Two-phase training: pretraining with Eq. 9 and no temporal mask, a
/// timestamp assignment from the accumulated statistics, then end-to-end
/// epochs with the total loss, per-epoch statistics reset and re-assignment.
/// Sequences are visited in fixed order; the whole run is deterministic.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<world::SceneSequence> train_seqs,
          std::vector<world::SceneSequence> val_seqs)
      : cfg_(cfg),
        train_seqs_(std::move(train_seqs)),
        val_seqs_(std::move(val_seqs)),
        model_(cfg.model, cfg.base_grid(), cfg.seed),
        stats_(cfg.model.rap.n_queries, cfg.future_frames + 1) {
    for (const auto& s : train_seqs_) train_ex_.push_back(prepare_example(s, cfg_.union_grid()));
    for (const auto& s : val_seqs_) val_ex_.push_back(prepare_example(s, cfg_.union_grid()));
    opt_.weight_decay = cfg_.weight_decay;
    const std::int64_t total_steps =
        static_cast<std::int64_t>(cfg_.pretrain_epochs + cfg_.e2e_epochs) *
        static_cast<std::int64_t>(train_seqs_.size());
    sched_ = nn::LrSchedule{cfg_.lr, cfg_.lr_floor, cfg_.warmup_steps, std::max<std::int64_t>(
                                                                           total_steps, 1)};
  }

  WorldModel& model() { return model_; }

  /// Checkpoint cadence in epochs; the final epoch is always written.
  int checkpoint_every = 1;

  TrainOutcome run(const std::filesystem::path& out_dir, const std::string& resume_path = "",
                   bool pretrain_only = false) {
    std::filesystem::create_directories(out_dir);
    {
      std::ofstream echo(out_dir / "config_used.cfg", std::ios::binary);
      echo << cfg_.raw;
    }
    int epochs_done = 0;
    if (!resume_path.empty()) {
      auto extras = nn::load_checkpoint(resume_path, model_.store(), &opt_);
      epochs_done = static_cast<int>(extras.int_scalar("epochs_done"));
      const auto& ts = extras.ints.at("timestamps");
      auto& dst = model_.timestamps();
      if (ts.size() != dst.size()) throw std::runtime_error("resume: timestamp count mismatch");
      for (std::size_t i = 0; i < ts.size(); ++i) dst[i] = static_cast<int>(ts[i]);
    }

    TrainOutcome outcome;
    std::ofstream log(out_dir / "train_log.csv", std::ios::binary);
    write_log_header(log);

    const int total_epochs = pretrain_only ? cfg_.pretrain_epochs
                                           : cfg_.pretrain_epochs + cfg_.e2e_epochs;
    for (int epoch = epochs_done; epoch < total_epochs; ++epoch) {
      const bool pretrain_phase = epoch < cfg_.pretrain_epochs;
      EpochLog el = run_epoch(epoch, pretrain_phase);

      if ((pretrain_phase && epoch + 1 == cfg_.pretrain_epochs) || !pretrain_phase) {
        apply_assignment(el, outcome);
        stats_.dump_csv((out_dir / "stat_matrix.csv").string());
      }
      append_log(log, el);
      log.flush();
      outcome.logs.push_back(el);

      if ((epoch + 1) % checkpoint_every == 0 || epoch + 1 == total_epochs) {
        nn::CheckpointExtras extras;
        extras.ints["epochs_done"] = {epoch + 1};
        extras.ints["timestamps"].assign(model_.timestamps().begin(), model_.timestamps().end());
        extras.doubles["last_total"] = {el.total};
        const auto ckpt = out_dir / "checkpoint_latest.bin";
        nn::save_checkpoint(ckpt.string(), model_.store(), &opt_, extras);
        outcome.checkpoint_path = ckpt.string();
      }
    }
    return outcome;
  }

  /// One optimizer pass over the training set. Exposed for tests.
  EpochLog run_epoch(int epoch, bool pretrain_phase) {
    EpochLog el;
    el.epoch = epoch;
    el.phase = pretrain_phase ? "pretrain" : "e2e";
    const int f = cfg_.future_frames;
    el.cd_frames.assign(f, 0.0);
    el.focal_frames.assign(f, 0.0);
    el.l2_frames.assign(f, 0.0);

    stats_.reset();
    for (std::size_t s = 0; s < train_seqs_.size(); ++s) {
      model_.store().zero_grads();
      const LossTerms terms = pretrain_phase ? model_.pretrain_pass(train_ex_[s], true, &stats_)
                                             : model_.total_pass(train_ex_[s], true, &stats_);
      opt_.step(model_.store(), sched_.at(opt_.step_count()));
      el.cd_p0 += terms.cd_p0;
      el.cd_layers += std::accumulate(terms.cd_layers.begin(), terms.cd_layers.end(), 0.0);
      el.focal_layers +=
          std::accumulate(terms.focal_layers.begin(), terms.focal_layers.end(), 0.0);
      for (int t = 0; t < static_cast<int>(terms.cd_frames.size()); ++t) {
        el.cd_frames[t] += terms.cd_frames[t];
        el.focal_frames[t] += terms.focal_frames[t];
        el.l2_frames[t] += terms.l2_frames[t];
      }
    }
    // recombine the epoch total from the logged sums (the exported-log identity)
    el.total = el.cd_p0 + el.cd_layers + el.focal_layers;
    for (int t = 0; t < f; ++t)
      el.total += cfg_.model.weights.lambda1 * el.cd_frames[t] +
                  cfg_.model.weights.lambda2 * el.focal_frames[t] +
                  cfg_.model.weights.lambda3 * el.l2_frames[t];

    const int n_eval = std::min<int>(cfg_.epoch_eval_sequences, val_seqs_.size());
    if (n_eval > 0) {
      std::vector<world::SceneSequence> sub(val_seqs_.begin(), val_seqs_.begin() + n_eval);
      std::vector<Example> sub_ex(val_ex_.begin(), val_ex_.begin() + n_eval);
      el.eval = evaluate(model_, sub, sub_ex, cfg_).report;
    }
    return el;
  }

  const sched::StatMatrix& stats() const { return stats_; }
  std::vector<Example>& train_examples() { return train_ex_; }
  const std::vector<world::SceneSequence>& val_sequences() const { return val_seqs_; }
  std::vector<Example>& val_examples() { return val_ex_; }
  nn::AdamW& optimizer() { return opt_; }
  const RunConfig& config() const { return cfg_; }

 private:
  void apply_assignment(EpochLog& el, TrainOutcome& outcome) {
    const auto assignment = stats_.assign(cfg_.model.rap.query_split);
    el.churn = sched::assignment_churn(assignment, model_.timestamps());
    model_.timestamps() = assignment;
    outcome.assignments.push_back(assignment);
  }

  void write_log_header(std::ostream& os) const {
    os << "epoch,phase,cd_p0,cd_layers,focal_layers";
    for (int t = 1; t <= cfg_.future_frames; ++t)
      os << ",cd_f" << t << ",focal_f" << t << ",l2_f" << t;
    os << ",total,churn";
    for (int t = 0; t <= cfg_.future_frames; ++t) os << ",miou_h" << t;
    for (int t = 0; t <= cfg_.future_frames; ++t) os << ",iou_h" << t;
    for (int t = 1; t <= cfg_.future_frames; ++t) os << ",l2_h" << t;
    for (int t = 1; t <= cfg_.future_frames; ++t) os << ",col_h" << t;
    os << '\n';
  }

  void append_log(std::ostream& os, const EpochLog& el) const {
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      os << buf;
    };
    os << el.epoch << ',' << el.phase;
    num(el.cd_p0);
    num(el.cd_layers);
    num(el.focal_layers);
    for (int t = 0; t < cfg_.future_frames; ++t) {
      num(el.cd_frames[t]);
      num(el.focal_frames[t]);
      num(el.l2_frames[t]);
    }
    num(el.total);
    num(el.churn);
    auto metric = [&](const std::vector<double>& v, int from) {
      for (int t = from; t <= cfg_.future_frames; ++t) num(v.empty() ? 0.0 : v[t]);
    };
    metric(el.eval.miou, 0);
    metric(el.eval.iou, 0);
    metric(el.eval.l2, 1);
    metric(el.eval.collision_rate, 1);
    os << '\n';
  }

  RunConfig cfg_;
  std::vector<world::SceneSequence> train_seqs_, val_seqs_;
  std::vector<Example> train_ex_, val_ex_;
  WorldModel model_;
  sched::StatMatrix stats_;
  nn::AdamW opt_;
  nn::LrSchedule sched_;
};

}  // namespace occ4d::train
