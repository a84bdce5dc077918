#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "occ4d/geometry/chamfer.hpp"

namespace occ4d::sched {

struct LossWeights {
  double lambda1 = 1.0;  // future Chamfer
  double lambda2 = 1.0;  // future focal
  double lambda3 = 0.1;  // waypoint L2
};

/// Per-query, per-timestamp counters of Chamfer-matched output points.
/// Drives the self-scheduling timestamp assignment.
class StatMatrix {
 public:
  StatMatrix() = default;
  StatMatrix(int n_queries, int n_timestamps)
      : n_(n_queries), t_(n_timestamps), counts_(static_cast<std::size_t>(n_queries) * n_timestamps, 0) {}

  int queries() const { return n_; }
  int timestamps() const { return t_; }
  std::int64_t& at(int q, int t) { return counts_[static_cast<std::size_t>(q) * t_ + t]; }
  std::int64_t at(int q, int t) const { return counts_[static_cast<std::size_t>(q) * t_ + t]; }

  void reset() { std::fill(counts_.begin(), counts_.end(), 0); }

  /// For every predicted point matched forward to a GT point, increments the
  /// source query's counter once per distinct timestamp carried by that GT
  /// point (multi-timestamp voxels credit each of their timestamps once).
  void accumulate(const geo::ChamferResult& match, const std::vector<int>& point_sources,
                  const std::vector<std::vector<int>>& gt_timestamps) {
    if (match.match_p_to_g.size() != point_sources.size())
      throw std::invalid_argument("StatMatrix: point_sources size mismatch");
    for (std::size_t p = 0; p < match.match_p_to_g.size(); ++p) {
      const int q = point_sources[p];
      if (q < 0 || q >= n_) throw std::out_of_range("StatMatrix: query index out of range");
      const auto& ts = gt_timestamps.at(match.match_p_to_g[p]);
      int last = -1;  // timestamps arrive sorted; skip duplicates
      for (const int t : ts) {
        if (t == last) continue;
        last = t;
        if (t < 0 || t >= t_) throw std::out_of_range("StatMatrix: timestamp out of range");
        at(q, t) += 1;
      }
    }
  }

  /// Max-proportion prioritized assignment under exact per-timestamp quotas.
  /// Repeatedly assigns the unassigned query with the globally largest
  /// row-proportion entry among timestamps with remaining quota; ties go to
  /// the smaller query index, then the smaller timestamp. Rows with zero
  /// counts are assigned last, smallest timestamp first.
  std::vector<int> assign(const std::vector<int>& quota) const {
    if (static_cast<int>(quota.size()) != t_)
      throw std::invalid_argument("assign_timestamps: quota length mismatch");
    if (std::accumulate(quota.begin(), quota.end(), 0) != n_)
      throw std::invalid_argument("assign_timestamps: quota must sum to the query count");

    std::vector<double> prop(static_cast<std::size_t>(n_) * t_, -1.0);
    std::vector<bool> zero_row(n_, false);
    for (int q = 0; q < n_; ++q) {
      std::int64_t sum = 0;
      for (int t = 0; t < t_; ++t) sum += at(q, t);
      if (sum == 0) {
        zero_row[q] = true;
        continue;
      }
      for (int t = 0; t < t_; ++t)
        prop[static_cast<std::size_t>(q) * t_ + t] =
            static_cast<double>(at(q, t)) / static_cast<double>(sum);
    }

    std::vector<int> remaining = quota;
    std::vector<int> assignment(n_, -1);
    int n_nonzero = n_ - static_cast<int>(std::count(zero_row.begin(), zero_row.end(), true));
    for (int round = 0; round < n_nonzero; ++round) {
      int best_q = -1, best_t = -1;
      double best_p = -1.0;
      for (int q = 0; q < n_; ++q) {
        if (assignment[q] >= 0 || zero_row[q]) continue;
        for (int t = 0; t < t_; ++t) {
          if (remaining[t] == 0) continue;
          const double p = prop[static_cast<std::size_t>(q) * t_ + t];
          if (p > best_p) {
            best_p = p;
            best_q = q;
            best_t = t;
          }
        }
      }
      assignment[best_q] = best_t;
      remaining[best_t] -= 1;
    }
    for (int q = 0; q < n_; ++q) {
      if (assignment[q] >= 0) continue;
      for (int t = 0; t < t_; ++t)
        if (remaining[t] > 0) {
          assignment[q] = t;
          remaining[t] -= 1;
          break;
        }
    }
    return assignment;
  }

  /// Integer CSV dump, one row per query.
  void dump_csv(std::ostream& os) const {
    for (int q = 0; q < n_; ++q) {
      for (int t = 0; t < t_; ++t) {
        if (t) os << ',';
        os << at(q, t);
      }
      os << '\n';
    }
  }
  void dump_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("StatMatrix: cannot open " + path);
    dump_csv(os);
  }

  const std::vector<std::int64_t>& raw() const { return counts_; }
  std::vector<std::int64_t>& raw() { return counts_; }

 private:
  int n_ = 0, t_ = 0;
  std::vector<std::int64_t> counts_;
};

/// Fraction of queries whose assignment changed.
inline double assignment_churn(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("assignment_churn: size mismatch");
  if (a.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

}  // namespace occ4d::sched
