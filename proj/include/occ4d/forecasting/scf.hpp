#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/geometry/pose.hpp"
#include "occ4d/nn/encoding.hpp"
#include "occ4d/nn/linear.hpp"
#include "occ4d/nn/losses.hpp"
#include "occ4d/nn/param.hpp"
#include "occ4d/nn/tensor.hpp"

namespace occ4d::scf {

struct ScfConfig {
  int future_frames = 4;
  int embed_dim = 64;
  int past_frames = 2;
  double max_step = 5.0;          // per-frame migration bound, meters
  bool use_pe4d = true;           // 4D positional encoding in scene augmentation
  bool use_state_condition = true;  // broadcast ego embedding in augmentation
  bool use_ego_state = true;      // encode kinematic history into the initial ego query
  bool frozen_queries = false;    // ablation: no offset regression
};

/// Stable partition of query indices by timestamp (groups 0..f).
inline std::vector<std::vector<int>> partition_by_timestamp(const std::vector<int>& timestamps,
                                                            int future_frames) {
  std::vector<std::vector<int>> groups(future_frames + 1);
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    const int t = timestamps[i];
    if (t < 0 || t > future_frames)
      throw std::invalid_argument("partition_by_timestamp: timestamp out of range");
    groups[t].push_back(static_cast<int>(i));
  }
  return groups;
}

namespace detail {

// Planar to_local with gradient hooks: out = R(-yaw) (v - t), z unchanged.
inline Vec3 to_local(const geo::Pose& p, const Vec3& v) { return geo::to_local(p, v); }

/// Backward of to_local: accumulates into dv and dpose (x, y, yaw).
inline void to_local_backward(const geo::Pose& p, const Vec3& v, const Vec3& dout, Vec3* dv,
                              Vec3* dpose) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  const double dx = v[0] - p.x, dy = v[1] - p.y;
  if (dv) {
    (*dv)[0] += c * dout[0] - s * dout[1];
    (*dv)[1] += s * dout[0] + c * dout[1];
    (*dv)[2] += dout[2];
  }
  if (dpose) {
    (*dpose)[0] += -c * dout[0] + s * dout[1];
    (*dpose)[1] += -s * dout[0] - c * dout[1];
    // d(out0)/dyaw = -s*dx + c*dy = out1; d(out1)/dyaw = -c*dx - s*dy = -out0
    const double out0 = c * dx + s * dy;
    const double out1 = -s * dx + c * dy;
    (*dpose)[2] += dout[0] * out1 - dout[1] * out0;
  }
}

}  // namespace detail

/// State-Conditioned Forecasting: ego-scene spatial cross-attention, scene
/// augmentation across time, bounded offset regression, and recursive
/// waypoint decoding. Emits per-step refined embeddings/positions in the
/// predicted ego frame of each future timestep.
class ScfModel {
 public:
  ScfModel() = default;
  ScfModel(nn::ParameterStore& store, const ScfConfig& cfg, Rng& rng)
      : cfg_(cfg), pe_(static_cast<std::size_t>(cfg.embed_dim)) {
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto hist = static_cast<std::size_t>(3 * (cfg.past_frames + 1));
    ego_embed_ = store.add("scf.ego_embed", {1, d});
    fill_normal(ego_embed_->value, rng, 0.02);
    state_encoder_ = nn::Mlp(store, "scf.state_enc", {hist, 32, d}, rng, 0.1, true);
    ego_value_ = nn::Linear(store, "scf.ego_value", d, d, rng, 0.02);
    ego_tau_ = nn::Mlp(store, "scf.ego_tau", {d, 16, 1}, rng, 0.1, true);
    ego_update_ = nn::Mlp(store, "scf.ego_update", {d, d, d}, rng, 0.02);
    offset_head_ = nn::Mlp(store, "scf.offset", {d, 64, 3}, rng, 0.02, true);
    refine_head_ = nn::Mlp(store, "scf.refine", {d, 64, d}, rng, 0.02, true);
    waypoint_head_ = nn::Mlp(store, "scf.waypoint", {d, 32, 3}, rng, 0.02, true);
  }

  // ---- Ego-scene spatial cross-attention (one step) ----

  struct EgoAttnCtx {
    nn::Tensor e, p;  // scene rows
    nn::Tensor q_in;  // [1, D]
    nn::Mlp::Ctx tau_ctx;
    nn::Tensor tau;  // [M, 1], positive
    std::vector<double> scores, weights;
    nn::Linear::Ctx value_ctx;
    nn::Tensor values;  // [M, D]
    nn::Tensor u;       // [1, D]
    nn::Mlp::Ctx update_ctx;
  };

  /// Scores: <q, e_i> - exp(MLP(e_i)) * ||p_i||^2; softmax-weighted value sum
  /// residual-added to the ego embedding, then a small residual MLP.
  nn::Tensor ego_cross_attention(const nn::Tensor& q, const nn::Tensor& e, const nn::Tensor& p,
                                 EgoAttnCtx* ctx) const {
    const std::size_t m = e.shape[0];
    const std::size_t d = e.shape[1];
    if (m == 0) throw std::invalid_argument("ego_cross_attention: empty scene group");
    EgoAttnCtx local;
    EgoAttnCtx& c = ctx ? *ctx : local;
    c.e = e;
    c.p = p;
    c.q_in = q;

    const nn::Tensor tau_raw = ego_tau_.forward(e, &c.tau_ctx);
    c.tau = nn::Tensor({m, 1});
    c.scores.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      c.tau(i, 0) = std::exp(tau_raw(i, 0));
      double dot_qe = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot_qe += q(0, k) * e(i, k);
      const double sq = p(i, 0) * p(i, 0) + p(i, 1) * p(i, 1) + p(i, 2) * p(i, 2);
      c.scores[i] = dot_qe - c.tau(i, 0) * sq;
    }
    c.weights.resize(m);
    nn::softmax_row(c.scores.data(), c.weights.data(), m);

    c.values = ego_value_.forward(e, &c.value_ctx);
    c.u = q;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < d; ++k) c.u(0, k) += c.weights[i] * c.values(i, k);

    nn::Tensor out = c.u;
    out += ego_update_.forward(c.u, &c.update_ctx);
    return out;
  }

  /// Returns (dq, de, dp) for the step inputs; accumulates parameter grads.
  std::tuple<nn::Tensor, nn::Tensor, nn::Tensor> ego_cross_attention_backward(
      const EgoAttnCtx& c, const nn::Tensor& dq_next) const {
    const std::size_t m = c.e.shape[0];
    const std::size_t d = c.e.shape[1];
    nn::Tensor du = dq_next;
    du += ego_update_.backward(c.update_ctx, dq_next);

    nn::Tensor dq = du;  // residual into the incoming ego query
    nn::Tensor de({m, d});
    nn::Tensor dp({m, 3});

    // u = q + sum w_i v_i
    std::vector<double> dw(m);
    nn::Tensor dvals({m, d});
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        acc += du(0, k) * c.values(i, k);
        dvals(i, k) = c.weights[i] * du(0, k);
      }
      dw[i] = acc;
    }
    de += ego_value_.backward(c.value_ctx, dvals);

    std::vector<double> ds(m);
    nn::softmax_backward_row(c.weights.data(), dw.data(), ds.data(), m);

    nn::Tensor dtau_raw({m, 1});
    for (std::size_t i = 0; i < m; ++i) {
      const double dsi = ds[i];
      for (std::size_t k = 0; k < d; ++k) {
        dq(0, k) += dsi * c.e(i, k);
        de(i, k) += dsi * c.q_in(0, k);
      }
      const double sq = c.p(i, 0) * c.p(i, 0) + c.p(i, 1) * c.p(i, 1) + c.p(i, 2) * c.p(i, 2);
      dtau_raw(i, 0) = -dsi * sq * c.tau(i, 0);  // chain through exp
      for (int a = 0; a < 3; ++a) dp(i, a) += -dsi * c.tau(i, 0) * 2.0 * c.p(i, a);
    }
    de += ego_tau_.backward(c.tau_ctx, dtau_raw);
    return {dq, de, dp};
  }

  // ---- Rollout ----

  struct StepCtx {
    EgoAttnCtx attn;
    nn::Tensor q_next;            // [1, D]
    std::vector<int> incoming;    // query indices joining at this step
    nn::Tensor p_incoming_rap;    // their RAP positions (frame 0)
    geo::Pose pose_before;        // predicted pose at t
    nn::Tensor e_cat, p_cat;
    std::vector<int> ts_cat;
    nn::Tensor e_aug;
    nn::Mlp::Ctx off_ctx, ref_ctx, wp_ctx;
    nn::Tensor off_raw;   // [M, 3]
    nn::Tensor offsets;   // [M, 3] bounded
    Vec3 delta{0, 0, 0};  // decoded (dx, dy, dyaw)
    geo::Pose pose_after;
    nn::Tensor p_moved;  // [M, 3] frame-t coords after migration
  };

  struct RolloutCtx {
    nn::Mlp::Ctx state_ctx;
    nn::Tensor q0;  // [1, D]
    std::vector<int> group0;
    nn::Tensor e0_aug, p0;
    std::vector<int> ts0;
    std::vector<StepCtx> steps;
  };

  struct StepOutput {
    nn::Tensor embeddings;  // refined rows [M, D]
    nn::Tensor positions;   // [M, 3], predicted ego frame t+1
    std::vector<int> timestamps;
    geo::Pose pose;  // predicted ego pose at t+1, frame-0 coordinates
  };

  struct RolloutResult {
    std::vector<StepOutput> steps;   // one per future frame 1..f
    std::vector<geo::Pose> waypoints;  // predicted poses 1..f (frame-0)
  };

  /// Recursion over future steps. `embeddings`/`positions` are the final RAP
  /// outputs (frame-0 ego coordinates); groups partition queries by timestamp.
  RolloutResult rollout(const std::vector<std::vector<int>>& groups,
                        const nn::Tensor& embeddings, const nn::Tensor& positions,
                        const nn::Tensor& waypoint_hist, const std::vector<int>& timestamps,
                        RolloutCtx* ctx) const {
    const std::size_t d = embeddings.shape[1];
    RolloutCtx local;
    RolloutCtx& c = ctx ? *ctx : local;

    c.q0 = ego_embed_->value;
    if (cfg_.use_ego_state) c.q0 += state_encoder_.forward(waypoint_hist, &c.state_ctx);

    c.group0 = groups.at(0);
    if (c.group0.empty()) throw std::invalid_argument("scf rollout: empty timestamp-0 group");
    const std::size_t m0 = c.group0.size();
    nn::Tensor e_state({m0, d});
    nn::Tensor p_state({m0, 3});
    c.ts0.clear();
    for (std::size_t r = 0; r < m0; ++r) {
      const int qi = c.group0[r];
      std::copy(embeddings.row(qi), embeddings.row(qi) + d, e_state.row(r));
      for (int a = 0; a < 3; ++a) p_state(r, a) = positions(qi, a);
      c.ts0.push_back(timestamps[qi]);
    }
    c.p0 = p_state;
    if (cfg_.use_pe4d) e_state += pe_.forward(p_state, c.ts0);
    if (cfg_.use_state_condition)
      for (std::size_t r = 0; r < m0; ++r)
        for (std::size_t k = 0; k < d; ++k) e_state(r, k) += c.q0(0, k);
    c.e0_aug = e_state;

    RolloutResult res;
    nn::Tensor q = c.q0;
    std::vector<int> ts_state = c.ts0;
    geo::Pose pose{0, 0, 0, 0};
    c.steps.clear();
    c.steps.resize(static_cast<std::size_t>(cfg_.future_frames));

    for (int t = 0; t < cfg_.future_frames; ++t) {
      StepCtx& sc = c.steps[t];
      sc.pose_before = pose;

      sc.q_next = ego_cross_attention(q, e_state, p_state, &sc.attn);

      sc.incoming = (t + 1 < static_cast<int>(groups.size())) ? groups[t + 1]
                                                              : std::vector<int>{};
      const std::size_t g = sc.incoming.size();
      nn::Tensor e_inc({g, d});
      nn::Tensor p_inc({g, 3});
      sc.p_incoming_rap = nn::Tensor({g, 3});
      for (std::size_t r = 0; r < g; ++r) {
        const int qi = sc.incoming[r];
        std::copy(embeddings.row(qi), embeddings.row(qi) + d, e_inc.row(r));
        for (int a = 0; a < 3; ++a) sc.p_incoming_rap(r, a) = positions(qi, a);
        const Vec3 local_p = detail::to_local(
            pose, {positions(qi, 0), positions(qi, 1), positions(qi, 2)});
        for (int a = 0; a < 3; ++a) p_inc(r, a) = local_p[a];
      }
      sc.e_cat = g > 0 ? nn::vcat(e_state, e_inc) : e_state;
      sc.p_cat = g > 0 ? nn::vcat(p_state, p_inc) : p_state;
      sc.ts_cat = ts_state;
      for (const int qi : sc.incoming) sc.ts_cat.push_back(timestamps[qi]);
      const std::size_t m = sc.e_cat.shape[0];

      sc.e_aug = sc.e_cat;
      if (cfg_.use_pe4d) sc.e_aug += pe_.forward(sc.p_cat, sc.ts_cat);
      if (cfg_.use_state_condition)
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t k = 0; k < d; ++k) sc.e_aug(r, k) += sc.q_next(0, k);

      sc.off_raw = offset_head_.forward(sc.e_aug, &sc.off_ctx);
      sc.offsets = nn::Tensor({m, 3});
      if (!cfg_.frozen_queries)
        for (std::size_t i = 0; i < sc.offsets.numel(); ++i)
          sc.offsets(i) = cfg_.max_step * std::tanh(sc.off_raw(i) / cfg_.max_step);

      nn::Tensor e_ref = sc.e_aug;
      e_ref += refine_head_.forward(sc.e_aug, &sc.ref_ctx);

      const nn::Tensor delta_raw = waypoint_head_.forward(sc.q_next, &sc.wp_ctx);
      sc.delta = {delta_raw(0, 0), delta_raw(0, 1), delta_raw(0, 2)};
      sc.pose_after = geo::compose(pose, geo::Pose{sc.delta[0], sc.delta[1],
                                                   wrap_angle(sc.delta[2]), t + 1});

      sc.p_moved = sc.p_cat;
      sc.p_moved += sc.offsets;
      const geo::Pose delta_pose{sc.delta[0], sc.delta[1], sc.delta[2], 0};
      nn::Tensor p_next({m, 3});
      for (std::size_t r = 0; r < m; ++r) {
        const Vec3 v = detail::to_local(delta_pose,
                                        {sc.p_moved(r, 0), sc.p_moved(r, 1), sc.p_moved(r, 2)});
        for (int a = 0; a < 3; ++a) p_next(r, a) = v[a];
      }

      StepOutput so;
      so.embeddings = e_ref;
      so.positions = p_next;
      so.timestamps = sc.ts_cat;
      so.pose = sc.pose_after;
      res.steps.push_back(so);
      res.waypoints.push_back(sc.pose_after);

      e_state = std::move(e_ref);
      p_state = std::move(p_next);
      ts_state = sc.ts_cat;
      q = sc.q_next;
      pose = sc.pose_after;
    }
    return res;
  }

  struct StepUpstream {
    nn::Tensor de;  // [M_t, D] on the step's refined embeddings
    nn::Tensor dp;  // [M_t, 3] on the step's positions
    Vec3 dpose{0, 0, 0};  // on the composed predicted pose at t+1 (x, y, yaw)
  };

  /// Reverse pass over the rollout. Returns grads on the RAP final
  /// embeddings/positions; parameter grads accumulate in the store.
  std::pair<nn::Tensor, nn::Tensor> backward(const RolloutCtx& c, const nn::Tensor& embeddings,
                                             const nn::Tensor& positions,
                                             const std::vector<StepUpstream>& upstream) const {
    const std::size_t n = embeddings.shape[0];
    const std::size_t d = embeddings.shape[1];
    nn::Tensor de_rap({n, d});
    nn::Tensor dp_rap({n, 3});

    const int f = cfg_.future_frames;
    nn::Tensor de_state, dp_state;  // grads on the carried state after each step
    nn::Tensor dq({1, d});
    std::vector<Vec3> dpose(f + 1, Vec3{0, 0, 0});

    for (int t = f - 1; t >= 0; --t) {
      const StepCtx& sc = c.steps[t];
      const std::size_t m = sc.e_cat.shape[0];
      nn::Tensor de_after = upstream[t].de;
      nn::Tensor dp_after = upstream[t].dp;
      if (de_state.numel() > 0) {
        de_after += de_state;
        dp_after += dp_state;
      }
      dpose[t + 1] += upstream[t].dpose;

      // p_next = to_local(delta, p_moved)
      const geo::Pose delta_pose{sc.delta[0], sc.delta[1], sc.delta[2], 0};
      nn::Tensor dp_moved({m, 3});
      Vec3 ddelta{0, 0, 0};
      for (std::size_t r = 0; r < m; ++r) {
        Vec3 dv{0, 0, 0};
        detail::to_local_backward(delta_pose,
                                  {sc.p_moved(r, 0), sc.p_moved(r, 1), sc.p_moved(r, 2)},
                                  {dp_after(r, 0), dp_after(r, 1), dp_after(r, 2)}, &dv, &ddelta);
        for (int a = 0; a < 3; ++a) dp_moved(r, a) = dv[a];
      }

      // pose_after = compose(pose_before, delta)
      {
        const Vec3 g = dpose[t + 1];
        const double cy = std::cos(sc.pose_before.yaw), sy = std::sin(sc.pose_before.yaw);
        dpose[t][0] += g[0];
        dpose[t][1] += g[1];
        dpose[t][2] += g[2] + g[0] * (-sy * sc.delta[0] - cy * sc.delta[1]) +
                       g[1] * (cy * sc.delta[0] - sy * sc.delta[1]);
        ddelta[0] += cy * g[0] + sy * g[1];
        ddelta[1] += -sy * g[0] + cy * g[1];
        ddelta[2] += g[2];
      }
      nn::Tensor ddelta_t({1, 3});
      for (int a = 0; a < 3; ++a) ddelta_t(0, a) = ddelta[a];
      nn::Tensor dq_next = waypoint_head_.backward(sc.wp_ctx, ddelta_t);

      // p_moved = p_cat + offsets; offsets = max_step * tanh(off_raw / max_step)
      nn::Tensor dp_cat = dp_moved;
      nn::Tensor de_aug({m, d});
      if (!cfg_.frozen_queries) {
        nn::Tensor doff_raw({m, 3});
        for (std::size_t i = 0; i < doff_raw.numel(); ++i) {
          const double th = std::tanh(sc.off_raw(i) / cfg_.max_step);
          doff_raw(i) = dp_moved(i) * (1.0 - th * th);
        }
        de_aug += offset_head_.backward(sc.off_ctx, doff_raw);
      }

      // e_ref = e_aug + refine(e_aug)
      de_aug += de_after;
      de_aug += refine_head_.backward(sc.ref_ctx, de_after);

      // e_aug = e_cat + PE(p_cat) + broadcast(q_next)
      nn::Tensor de_cat = de_aug;
      if (cfg_.use_pe4d) dp_cat += pe_.backward(sc.p_cat, sc.ts_cat, de_aug);
      if (cfg_.use_state_condition)
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t k = 0; k < d; ++k) dq_next(0, k) += de_aug(r, k);

      // split the concatenation: carried state rows, then incoming rows
      const std::size_t g = sc.incoming.size();
      const std::size_t m_prev = m - g;
      nn::Tensor de_prev({m_prev, d});
      nn::Tensor dp_prev({m_prev, 3});
      for (std::size_t r = 0; r < m_prev; ++r) {
        std::copy(de_cat.row(r), de_cat.row(r) + d, de_prev.row(r));
        for (int a = 0; a < 3; ++a) dp_prev(r, a) = dp_cat(r, a);
      }
      for (std::size_t r = 0; r < g; ++r) {
        const int qi = sc.incoming[r];
        for (std::size_t k = 0; k < d; ++k) de_rap(qi, k) += de_cat(m_prev + r, k);
        // incoming positions were re-expressed via pose_before
        Vec3 dv{0, 0, 0};
        detail::to_local_backward(
            sc.pose_before,
            {sc.p_incoming_rap(r, 0), sc.p_incoming_rap(r, 1), sc.p_incoming_rap(r, 2)},
            {dp_cat(m_prev + r, 0), dp_cat(m_prev + r, 1), dp_cat(m_prev + r, 2)}, &dv,
            &dpose[t]);
        for (int a = 0; a < 3; ++a) dp_rap(qi, a) += dv[a];
      }

      // ego attention consumed the carried state entering this step
      dq_next += dq;
      auto [dq_in, de_attn, dp_attn] = ego_cross_attention_backward(sc.attn, dq_next);
      de_prev += de_attn;
      dp_prev += dp_attn;

      dq = std::move(dq_in);
      de_state = std::move(de_prev);
      dp_state = std::move(dp_prev);
    }

    // bootstrap: e0_aug = E[group0] + PE(p0) + broadcast(q0)
    nn::Tensor de0 = de_state.numel() > 0 ? de_state
                                          : nn::Tensor({c.group0.size(), d});
    nn::Tensor dp0 = dp_state.numel() > 0 ? dp_state : nn::Tensor({c.group0.size(), 3});
    if (cfg_.use_pe4d) dp0 += pe_.backward(c.p0, c.ts0, de0);
    nn::Tensor dq0 = dq;
    if (cfg_.use_state_condition)
      for (std::size_t r = 0; r < c.group0.size(); ++r)
        for (std::size_t k = 0; k < d; ++k) dq0(0, k) += de0(r, k);
    for (std::size_t r = 0; r < c.group0.size(); ++r) {
      const int qi = c.group0[r];
      for (std::size_t k = 0; k < d; ++k) de_rap(qi, k) += de0(r, k);
      for (int a = 0; a < 3; ++a) dp_rap(qi, a) += dp0(r, a);
    }
    ego_embed_->grad += dq0;
    if (cfg_.use_ego_state) state_encoder_.backward(c.state_ctx, dq0);
    return {de_rap, dp_rap};
  }

  const ScfConfig& config() const { return cfg_; }
  const nn::PositionalEncoding4d& pe() const { return pe_; }

 private:
  ScfConfig cfg_;
  nn::PositionalEncoding4d pe_{64};
  nn::Parameter* ego_embed_ = nullptr;
  nn::Mlp state_encoder_;
  nn::Linear ego_value_;
  nn::Mlp ego_tau_;
  nn::Mlp ego_update_;
  nn::Mlp offset_head_;
  nn::Mlp refine_head_;
  nn::Mlp waypoint_head_;
};

}  // namespace occ4d::scf
