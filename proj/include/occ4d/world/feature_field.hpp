#pragma once

#include <cmath>
#include <vector>

#include "occ4d/common.hpp"
#include "occ4d/geometry/pose.hpp"
#include "occ4d/world/scene.hpp"

namespace occ4d::world {

/// Stand-in for an image backbone: a deterministic, everywhere-smooth map
/// from 3D position (ego frame of one frame) to per-class feature channels.
/// Channel c = tanh(gain * prox_c(p) + noise), where prox_c is a softmax-
/// weighted maximum over class-c boxes of exp(-d(p)), d is a softened box
/// distance (exactly differentiable), and the noise is a seeded band-limited
/// sinusoid product of amplitude 0.05. The soft maximum keeps overlapping
/// boxes from inflating the channel. Outputs are bounded in [-1, 1]; the
/// analytic position gradient is exposed for backpropagation through sampling.
class FeatureField {
 public:
  FeatureField(const SceneSpec& spec, int frame) : n_classes_(spec.n_classes) {
    boxes_by_class_.resize(n_classes_);
    const std::vector<geo::Pose> traj = ego_trajectory(spec);
    const geo::Pose pose = traj[frame + spec.past_frames];
    auto add_box = [&](const OrientedBox& b) {
      // Re-express the box in the ego frame: rotate the center, shift the yaw.
      const Vec3 c = geo::to_local(pose, b.center);
      SmoothBox sb;
      sb.center = c;
      sb.half = {0.5 * b.size[0], 0.5 * b.size[1], 0.5 * b.size[2]};
      const double yaw = b.yaw - pose.yaw;
      sb.cos_yaw = std::cos(yaw);
      sb.sin_yaw = std::sin(yaw);
      boxes_by_class_[b.label].push_back(sb);
    };
    for (const auto& b : spec.static_boxes) add_box(b);
    for (const auto& a : spec.agents) add_box(a.at_frame(frame));

    Rng rng(spec.seed ^ (0xc2b2ae3d27d4eb4fULL + static_cast<std::uint64_t>(frame + 16)));
    std::uniform_real_distribution<double> freq(0.3, 1.2);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    noise_.resize(n_classes_);
    for (auto& ch : noise_) {
      ch.freq = {freq(rng), freq(rng), freq(rng)};
      ch.phase = {phase(rng), phase(rng), phase(rng)};
    }
  }

  int dim() const { return n_classes_; }

  void eval(const Vec3& p, double* out) const { eval_impl(p, out, nullptr); }

  /// `jac` is row-major [dim][3]: d out[c] / d p.
  void eval_with_grad(const Vec3& p, double* out, double* jac) const { eval_impl(p, out, jac); }

 private:
  struct SmoothBox {
    Vec3 center;
    Vec3 half;
    double cos_yaw = 1.0, sin_yaw = 0.0;
  };
  struct NoiseChannel {
    Vec3 freq;
    Vec3 phase;
  };

  static constexpr double kGain = 3.0;
  static constexpr double kSoftness = 8.0;     // softplus sharpness
  static constexpr double kSoftMax = 12.0;     // softmax-weighted max sharpness
  static constexpr double kSmoothAbsEps = 0.01;
  static constexpr double kNoiseAmp = 0.05;

  static double softplus(double t) {
    const double kt = kSoftness * t;
    return kt > 30.0 ? t : std::log1p(std::exp(kt)) / kSoftness;
  }
  static double softplus_grad(double t) {
    const double kt = kSoftness * t;
    return kt > 30.0 ? 1.0 : 1.0 / (1.0 + std::exp(-kt));
  }
  static double smooth_abs(double t) { return std::sqrt(t * t + kSmoothAbsEps * kSmoothAbsEps); }

  /// exp(-softened box distance) and its ego-frame gradient.
  static double box_proximity(const SmoothBox& b, const Vec3& p, Vec3* grad) {
    const double dx = p[0] - b.center[0];
    const double dy = p[1] - b.center[1];
    const double lz = p[2] - b.center[2];
    const double lx = b.cos_yaw * dx + b.sin_yaw * dy;
    const double ly = -b.sin_yaw * dx + b.cos_yaw * dy;
    const double local[3] = {lx, ly, lz};

    double u[3], du_dl[3];
    double d2 = 1e-12;
    for (int a = 0; a < 3; ++a) {
      const double sa = smooth_abs(local[a]);
      const double t = sa - b.half[a];
      u[a] = softplus(t);
      d2 += u[a] * u[a];
      du_dl[a] = softplus_grad(t) * (local[a] / sa);
    }
    const double d = std::sqrt(d2);
    const double e = std::exp(-d);
    if (grad) {
      double g[3];
      for (int a = 0; a < 3; ++a) g[a] = e * (-u[a] / d) * du_dl[a];
      (*grad)[0] = b.cos_yaw * g[0] - b.sin_yaw * g[1];
      (*grad)[1] = b.sin_yaw * g[0] + b.cos_yaw * g[1];
      (*grad)[2] = g[2];
    }
    return e;
  }

  void eval_impl(const Vec3& p, double* out, double* jac) const {
    std::vector<double> pre(n_classes_, 0.0);
    std::vector<double> dpre(jac ? n_classes_ * 3 : 0, 0.0);

    std::vector<double> prox;
    std::vector<Vec3> prox_grad;
    for (int c = 0; c < n_classes_; ++c) {
      const auto& boxes = boxes_by_class_[c];
      if (boxes.empty()) continue;
      prox.resize(boxes.size());
      if (jac) prox_grad.resize(boxes.size());
      double amax = -1.0;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        prox[b] = box_proximity(boxes[b], p, jac ? &prox_grad[b] : nullptr);
        amax = std::max(amax, prox[b]);
      }
      // softmax-weighted maximum: equal contributions collapse instead of summing
      double z = 0.0, m = 0.0;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const double w = std::exp(kSoftMax * (prox[b] - amax));
        z += w;
        m += w * prox[b];
      }
      m /= z;
      pre[c] = kGain * m;
      if (jac) {
        double* row = &dpre[c * 3];
        for (std::size_t b = 0; b < boxes.size(); ++b) {
          const double w = std::exp(kSoftMax * (prox[b] - amax)) / z;
          const double coeff = kGain * w * (1.0 + kSoftMax * (prox[b] - m));
          for (int a = 0; a < 3; ++a) row[a] += coeff * prox_grad[b][a];
        }
      }
    }

    for (int c = 0; c < n_classes_; ++c) {
      const NoiseChannel& ch = noise_[c];
      const double sx = std::sin(ch.freq[0] * p[0] + ch.phase[0]);
      const double sy = std::sin(ch.freq[1] * p[1] + ch.phase[1]);
      const double sz = std::sin(ch.freq[2] * p[2] + ch.phase[2]);
      pre[c] += kNoiseAmp * sx * sy * sz;
      if (jac) {
        const double cx = std::cos(ch.freq[0] * p[0] + ch.phase[0]);
        const double cy = std::cos(ch.freq[1] * p[1] + ch.phase[1]);
        const double cz = std::cos(ch.freq[2] * p[2] + ch.phase[2]);
        double* row = &dpre[c * 3];
        row[0] += kNoiseAmp * ch.freq[0] * cx * sy * sz;
        row[1] += kNoiseAmp * ch.freq[1] * sx * cy * sz;
        row[2] += kNoiseAmp * ch.freq[2] * sx * sy * cz;
      }
    }

    for (int c = 0; c < n_classes_; ++c) {
      const double t = std::tanh(pre[c]);
      out[c] = t;
      if (jac) {
        const double dt = 1.0 - t * t;
        for (int a = 0; a < 3; ++a) jac[c * 3 + a] = dt * dpre[c * 3 + a];
      }
    }
  }

  std::vector<std::vector<SmoothBox>> boxes_by_class_;
  std::vector<NoiseChannel> noise_;
  int n_classes_;
};

inline FeatureField build_feature_field(const SceneSpec& spec, int frame) {
  return FeatureField(spec, frame);
}

}  // namespace occ4d::world
