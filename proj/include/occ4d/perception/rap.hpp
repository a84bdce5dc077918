#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/geometry/grid.hpp"
#include "occ4d/nn/attention.hpp"
#include "occ4d/nn/linear.hpp"
#include "occ4d/nn/param.hpp"
#include "occ4d/nn/tensor.hpp"
#include "occ4d/world/feature_field.hpp"

namespace occ4d::rap {

struct RapConfig {
  int n_queries = 130;
  std::vector<int> query_split = {90, 10, 10, 10, 10};  // queries per timestamp 0..f
  int n_layers = 4;
  std::vector<int> points_ladder = {1, 4, 8, 16};
  int embed_dim = 64;
  int n_heads = 4;
  bool freeze_scaling = false;
  bool tau_per_head = true;
  int feature_dim = 6;
  int n_classes = 6;
  int past_frames = 2;
  double init_sigma = 0.02;

  void validate() const {
    if (n_queries < 1) throw ConfigError("n_queries must be positive");
    if (std::accumulate(query_split.begin(), query_split.end(), 0) != n_queries)
      throw ConfigError("query_split must sum to n_queries");
    if (static_cast<int>(points_ladder.size()) != n_layers)
      throw ConfigError("points_ladder length must equal n_layers");
    for (std::size_t l = 1; l < points_ladder.size(); ++l)
      if (points_ladder[l] < points_ladder[l - 1])
        throw ConfigError("points_ladder must be non-decreasing");
    if (embed_dim % 8 != 0) throw ConfigError("embed_dim must be divisible by 8");
    if (embed_dim % n_heads != 0) throw ConfigError("embed_dim must be divisible by n_heads");
  }
};

/// Learnable query state. Embeddings and base positions live in the parameter
/// store; timestamps are integers managed by the scheduling module.
struct QuerySet {
  nn::Parameter* embeddings = nullptr;      // [N, D]
  nn::Parameter* base_positions = nullptr;  // [N, 3]
  std::vector<int> timestamps;
};

namespace detail {
inline double halton(int index, int base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * (index % base);
    index /= base;
  }
  return r;
}
}  // namespace detail

/// Ego-conditioned Adaptive Scaling: one shared positive 3-vector gamma from
/// an MLP over the flattened relative waypoint history, applied element-wise
/// to every base query position.
class AdaptiveScaling {
 public:
  AdaptiveScaling() = default;
  AdaptiveScaling(nn::ParameterStore& store, int past_frames, Rng& rng)
      : input_dim_(3 * (past_frames + 1)),
        mlp_(store, "rap.scale", {static_cast<std::size_t>(input_dim_), 32, 3}, rng, 0.1,
             /*zero_init_last=*/true) {}

  struct Ctx {
    nn::Mlp::Ctx mlp;
    Vec3 gamma{1, 1, 1};
    nn::Tensor p0;
  };

  nn::Tensor forward(const nn::Tensor& waypoints_rel, const nn::Tensor& p0, bool frozen,
                     Ctx* ctx) const {
    if (waypoints_rel.ndim() != 2 || waypoints_rel.shape[0] != 1 ||
        static_cast<int>(waypoints_rel.shape[1]) != input_dim_)
      throw std::invalid_argument("adaptive_scaling: wrong waypoint count");
    Vec3 gamma{1, 1, 1};
    if (!frozen) {
      const nn::Tensor raw = mlp_.forward(waypoints_rel, ctx ? &ctx->mlp : nullptr);
      for (int a = 0; a < 3; ++a) gamma[a] = std::exp(raw(0, a));
    }
    const std::size_t n = p0.shape[0];
    nn::Tensor scaled({n, 3});
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) scaled(i, a) = gamma[a] * p0(i, a);
    if (ctx) {
      ctx->gamma = gamma;
      ctx->p0 = p0;
    }
    return scaled;
  }

  /// Returns dP0; accumulates MLP gradients unless frozen.
  nn::Tensor backward(const Ctx& ctx, const nn::Tensor& dscaled, bool frozen) const {
    const std::size_t n = ctx.p0.shape[0];
    nn::Tensor dp0({n, 3});
    Vec3 dgamma{0, 0, 0};
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) {
        dp0(i, a) = ctx.gamma[a] * dscaled(i, a);
        dgamma[a] += ctx.p0(i, a) * dscaled(i, a);
      }
    if (!frozen) {
      nn::Tensor draw({1, 3});
      for (int a = 0; a < 3; ++a) draw(0, a) = dgamma[a] * ctx.gamma[a];  // chain through exp
      mlp_.backward(ctx.mlp, draw);
    }
    return dp0;
  }

  Vec3 gamma_for(const nn::Tensor& waypoints_rel) const {
    const nn::Tensor raw = mlp_.forward(waypoints_rel);
    return {std::exp(raw(0, 0)), std::exp(raw(0, 1)), std::exp(raw(0, 2))};
  }

 private:
  int input_dim_ = 9;
  nn::Mlp mlp_;
};

struct LayerOutput {
  nn::Tensor points;  // [N*m, 3], row i*m+k belongs to query i
  nn::Tensor logits;  // [N*m, C]
  int points_out = 0;
};

/// One decoder layer: feature sampling + mixing, TS-MHSA, a point head
/// emitting offsets around the query position, and a per-point class head.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(nn::ParameterStore& store, const std::string& name, const RapConfig& cfg,
               int points_out, Rng& rng)
      : points_out_(points_out), heads_(cfg.n_heads) {
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto df = static_cast<std::size_t>(cfg.feature_dim);
    const double s = cfg.init_sigma;
    mix_ = nn::Mlp(store, name + ".mix", {d + df, d, d}, rng, s);
    wq_ = nn::Linear(store, name + ".wq", d, d, rng, s);
    wk_ = nn::Linear(store, name + ".wk", d, d, rng, s);
    wv_ = nn::Linear(store, name + ".wv", d, d, rng, s);
    wo_ = nn::Linear(store, name + ".wo", d, d, rng, s);
    raw_tau_ = store.add(name + ".raw_tau",
                         {cfg.tau_per_head ? static_cast<std::size_t>(cfg.n_heads) : 1,
                          static_cast<std::size_t>(cfg.n_queries)});
    point_head_ = nn::Mlp(store, name + ".point",
                          {d, 64, static_cast<std::size_t>(3 * points_out)}, rng, s);
    cls_head_ = nn::Mlp(store, name + ".cls",
                        {d + 3, 64, static_cast<std::size_t>(cfg.n_classes)}, rng, s);
  }

  struct EmitCtx {
    nn::Tensor e, p;  // [M, D], [M, 3]
    nn::Mlp::Ctx point_ctx, cls_ctx;
    nn::Tensor points;  // [M*m, 3]
    nn::Tensor logits;  // [M*m, C]
  };

  /// Point + class emission shared between the layer and forecast decoding.
  void emit(const nn::Tensor& e, const nn::Tensor& p, EmitCtx* ctx) const {
    const std::size_t m = static_cast<std::size_t>(points_out_);
    const std::size_t n = e.shape[0];
    const std::size_t d = e.shape[1];
    EmitCtx local;
    EmitCtx& c = ctx ? *ctx : local;
    c.e = e;
    c.p = p;
    const nn::Tensor offsets = point_head_.forward(e, &c.point_ctx);
    c.points = nn::Tensor({n * m, 3});
    nn::Tensor cls_in({n * m, d + 3});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t r = i * m + k;
        for (int a = 0; a < 3; ++a) c.points(r, a) = p(i, a) + offsets(i, 3 * k + a);
        double* row = cls_in.row(r);
        std::copy(e.row(i), e.row(i) + d, row);
        for (int a = 0; a < 3; ++a) row[d + a] = c.points(r, a);
      }
    c.logits = cls_head_.forward(cls_in, &c.cls_ctx);
  }

  /// Backward through emission. Returns (dE, dP); accumulates head grads.
  std::pair<nn::Tensor, nn::Tensor> emit_backward(const EmitCtx& ctx, const nn::Tensor& dpoints,
                                                  const nn::Tensor& dlogits) const {
    const std::size_t m = static_cast<std::size_t>(points_out_);
    const std::size_t n = ctx.e.shape[0];
    const std::size_t d = ctx.e.shape[1];
    nn::Tensor de({n, d});
    nn::Tensor dp({n, 3});
    nn::Tensor dpoints_total = dpoints;

    const nn::Tensor dcls_in = cls_head_.backward(ctx.cls_ctx, dlogits);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t r = i * m + k;
        const double* row = dcls_in.row(r);
        for (std::size_t c = 0; c < d; ++c) de(i, c) += row[c];
        for (int a = 0; a < 3; ++a) dpoints_total(r, a) += row[d + a];
      }
    nn::Tensor doffsets({n, 3 * m});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < m; ++k)
        for (int a = 0; a < 3; ++a) {
          doffsets(i, 3 * k + a) = dpoints_total(i * m + k, a);
          dp(i, a) += dpoints_total(i * m + k, a);
        }
    de += point_head_.backward(ctx.point_ctx, doffsets);
    return {de, dp};
  }

  struct Ctx {
    nn::Tensor e_in, p_in;
    nn::Tensor feat;               // [N, Df]
    std::vector<double> feat_jac;  // N * Df * 3
    nn::Mlp::Ctx mix_ctx;
    nn::Tensor e1;
    nn::Linear::Ctx q_ctx, k_ctx, v_ctx;
    nn::TsMhsaCtx attn_ctx;
    nn::Tensor e2;
    EmitCtx emit_ctx;
    nn::Tensor p_out;
  };

  struct Result {
    LayerOutput output;
    nn::Tensor e_out;  // updated query embeddings [N, D]
    nn::Tensor p_out;  // updated query positions [N, 3]
  };

  Result forward(const nn::Tensor& e_in, const nn::Tensor& p_in,
                 const std::vector<int>& timestamps, const world::FeatureField& field,
                 bool mask_on, Ctx* ctx) const {
    const std::size_t n = e_in.shape[0];
    const std::size_t d = e_in.shape[1];
    const std::size_t df = static_cast<std::size_t>(field.dim());
    Ctx local;
    Ctx& c = ctx ? *ctx : local;
    c.e_in = e_in;
    c.p_in = p_in;

    c.feat = nn::Tensor({n, df});
    c.feat_jac.assign(n * df * 3, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      field.eval_with_grad({p_in(i, 0), p_in(i, 1), p_in(i, 2)}, c.feat.row(i),
                           c.feat_jac.data() + i * df * 3);

    const nn::Tensor mix_out = mix_.forward(nn::hcat(e_in, c.feat), &c.mix_ctx);
    c.e1 = e_in;
    c.e1 += mix_out;

    const nn::Tensor q = wq_.forward(c.e1, &c.q_ctx);
    const nn::Tensor k = wk_.forward(c.e1, &c.k_ctx);
    const nn::Tensor v = wv_.forward(c.e1, &c.v_ctx);
    nn::Tensor tau(raw_tau_->value.shape);
    for (std::size_t i = 0; i < tau.numel(); ++i) tau(i) = std::exp(raw_tau_->value(i));
    const nn::Tensor attn = nn::ts_mhsa_forward(q, k, v, tau, p_in, timestamps, heads_, mask_on,
                                                wo_, &c.attn_ctx);
    c.e2 = c.e1;
    c.e2 += attn;

    emit(c.e2, p_in, &c.emit_ctx);

    // query position update: mean of the emitted points
    const std::size_t m = static_cast<std::size_t>(points_out_);
    c.p_out = nn::Tensor({n, 3});
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a) {
        double acc = 0.0;
        for (std::size_t kk = 0; kk < m; ++kk) acc += c.emit_ctx.points(i * m + kk, a);
        c.p_out(i, a) = acc / static_cast<double>(m);
      }

    Result res;
    res.output.points = c.emit_ctx.points;
    res.output.logits = c.emit_ctx.logits;
    res.output.points_out = points_out_;
    res.e_out = c.e2;
    res.p_out = c.p_out;
    (void)d;
    return res;
  }

  /// Backward through the whole layer. Upstream: per-point grads, plus grads
  /// on the updated embeddings/positions from the next stage.
  std::pair<nn::Tensor, nn::Tensor> backward(const Ctx& c, const nn::Tensor& dpoints,
                                             const nn::Tensor& dlogits, const nn::Tensor& de_next,
                                             const nn::Tensor& dp_next) const {
    const std::size_t n = c.e_in.shape[0];
    const std::size_t d = c.e_in.shape[1];
    const std::size_t df = c.feat.shape[1];
    const std::size_t m = static_cast<std::size_t>(points_out_);

    // position update: spread dp_next uniformly over the emitted points
    nn::Tensor dpoints_all = dpoints;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < m; ++k)
        for (int a = 0; a < 3; ++a)
          dpoints_all(i * m + k, a) += dp_next(i, a) / static_cast<double>(m);

    auto [de2, dp_in] = emit_backward(c.emit_ctx, dpoints_all, dlogits);
    de2 += de_next;

    // e2 = e1 + attn(e1)
    nn::Tensor tau(raw_tau_->value.shape);
    for (std::size_t i = 0; i < tau.numel(); ++i) tau(i) = std::exp(raw_tau_->value(i));
    const nn::TsMhsaGrads ag = nn::ts_mhsa_backward(c.attn_ctx, wo_, de2);
    for (std::size_t i = 0; i < tau.numel(); ++i) raw_tau_->grad(i) += ag.dtau(i) * tau(i);
    nn::Tensor de1 = de2;
    de1 += wq_.backward(c.q_ctx, ag.dq);
    de1 += wk_.backward(c.k_ctx, ag.dk);
    de1 += wv_.backward(c.v_ctx, ag.dv);
    dp_in += ag.dpositions;

    // e1 = e_in + mix([e_in, feat])
    const nn::Tensor dmix_in = mix_.backward(c.mix_ctx, de1);
    nn::Tensor de_in = de1;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = dmix_in.row(i);
      double* dst = de_in.row(i);
      for (std::size_t cidx = 0; cidx < d; ++cidx) dst[cidx] += row[cidx];
      // feature part chains through the field jacobian into positions
      const double* jac = c.feat_jac.data() + i * df * 3;
      for (std::size_t f = 0; f < df; ++f) {
        const double dfv = row[d + f];
        if (dfv == 0.0) continue;
        for (int a = 0; a < 3; ++a) dp_in(i, a) += dfv * jac[f * 3 + a];
      }
    }
    return {de_in, dp_in};
  }

  int points_out() const { return points_out_; }
  nn::Parameter* raw_tau() { return raw_tau_; }

 private:
  nn::Mlp mix_;
  nn::Linear wq_, wk_, wv_, wo_;
  nn::Parameter* raw_tau_ = nullptr;
  nn::Mlp point_head_;
  nn::Mlp cls_head_;
  int points_out_ = 1;
  std::size_t heads_ = 1;
};

/// Range-Adaptive Perception: adaptive scaling followed by stacked decoder
/// layers with per-layer point emission and query-position updates.
class RapModel {
 public:
  RapModel(nn::ParameterStore& store, const RapConfig& cfg, const geo::GridSpec& grid, Rng& rng)
      : cfg_(cfg), scaling_(store, cfg.past_frames, rng) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.n_queries);
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    queries_.embeddings = store.add("rap.query_embed", {n, d});
    fill_normal(queries_.embeddings->value, rng, cfg.init_sigma);
    queries_.base_positions = store.add("rap.query_pos", {n, 3});
    for (std::size_t i = 0; i < n; ++i) {
      static const int bases[3] = {2, 3, 5};
      for (int a = 0; a < 3; ++a)
        queries_.base_positions->value(i, a) =
            grid.origin[a] + detail::halton(static_cast<int>(i) + 1, bases[a]) * grid.extent(a);
    }
    queries_.timestamps.assign(n, 0);
    for (int l = 0; l < cfg.n_layers; ++l)
      layers_.emplace_back(store, "rap.layer" + std::to_string(l), cfg, cfg.points_ladder[l],
                           rng);
  }

  struct ForwardCtx {
    AdaptiveScaling::Ctx scale_ctx;
    std::vector<DecoderLayer::Ctx> layers;
  };

  struct ForwardResult {
    nn::Tensor p0_scaled;  // [N, 3]
    std::vector<LayerOutput> layers;
    nn::Tensor final_embeddings;  // [N, D]
    nn::Tensor final_positions;   // [N, 3]
  };

  ForwardResult forward(const nn::Tensor& waypoints_rel, const world::FeatureField& field,
                        bool mask_on, ForwardCtx* ctx) const {
    ForwardResult res;
    AdaptiveScaling::Ctx local_scale;
    res.p0_scaled = scaling_.forward(waypoints_rel, queries_.base_positions->value,
                                     cfg_.freeze_scaling, ctx ? &ctx->scale_ctx : &local_scale);
    nn::Tensor e = queries_.embeddings->value;
    nn::Tensor p = res.p0_scaled;
    if (ctx) ctx->layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto lr = layers_[l].forward(e, p, queries_.timestamps, field, mask_on,
                                   ctx ? &ctx->layers[l] : nullptr);
      res.layers.push_back(std::move(lr.output));
      e = std::move(lr.e_out);
      p = std::move(lr.p_out);
    }
    res.final_embeddings = e;
    res.final_positions = p;
    return res;
  }

  /// Full backward. dlayers holds per-layer (dpoints, dlogits); dp0_scaled is
  /// the grad on the scaled base positions (from the first Chamfer term);
  /// de_final/dp_final arrive from the forecasting stage (may be empty).
  void backward(const ForwardCtx& ctx, const std::vector<std::pair<nn::Tensor, nn::Tensor>>& dlayers,
                const nn::Tensor& dp0_scaled, nn::Tensor de_final, nn::Tensor dp_final) const {
    const std::size_t n = static_cast<std::size_t>(cfg_.n_queries);
    if (de_final.numel() == 0) de_final = nn::Tensor({n, static_cast<std::size_t>(cfg_.embed_dim)});
    if (dp_final.numel() == 0) dp_final = nn::Tensor({n, 3});
    for (std::size_t l = layers_.size(); l-- > 0;) {
      auto [de, dp] = layers_[l].backward(ctx.layers[l], dlayers[l].first, dlayers[l].second,
                                          de_final, dp_final);
      de_final = std::move(de);
      dp_final = std::move(dp);
    }
    dp_final += dp0_scaled;
    const nn::Tensor dp0 = scaling_.backward(ctx.scale_ctx, dp_final, cfg_.freeze_scaling);
    queries_.base_positions->grad += dp0;
    queries_.embeddings->grad += de_final;
  }

  const DecoderLayer& final_layer() const { return layers_.back(); }
  QuerySet& queries() { return queries_; }
  const QuerySet& queries() const { return queries_; }
  const RapConfig& config() const { return cfg_; }
  const AdaptiveScaling& scaling() const { return scaling_; }

 private:
  RapConfig cfg_;
  AdaptiveScaling scaling_;
  QuerySet queries_;
  std::vector<DecoderLayer> layers_;
};

}  // namespace occ4d::rap
