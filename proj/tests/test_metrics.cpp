#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "occ4d/metrics/metrics.hpp"

using namespace occ4d;
using namespace occ4d::metrics;

namespace {

geo::SparseOccupancy make_occ(std::initializer_list<geo::SparseOccupancy::Cell> cells) {
  geo::SparseOccupancy occ;
  occ.cells = cells;
  occ.normalize();
  return occ;
}

// independent set-arithmetic oracle for per-class IoU
double miou_oracle(const geo::SparseOccupancy& pred, const geo::SparseOccupancy& gt,
                   int n_classes) {
  double sum = 0;
  int counted = 0;
  for (int cls = 1; cls < n_classes; ++cls) {
    std::vector<std::array<int, 3>> a, b;
    for (const auto& c : pred.cells)
      if (c.label == cls) a.push_back({c.ix, c.iy, c.iz});
    for (const auto& c : gt.cells)
      if (c.label == cls) b.push_back({c.ix, c.iy, c.iz});
    if (a.empty() && b.empty()) continue;
    int inter = 0;
    for (const auto& x : a)
      for (const auto& y : b)
        if (x == y) ++inter;
    sum += static_cast<double>(inter) / (a.size() + b.size() - inter);
    ++counted;
  }
  return sum / counted;
}

}  // namespace

TEST_CASE("occupancy IoU", "[metrics]") {
  auto a = make_occ({{0, 0, 0, 1}, {1, 0, 0, 1}});
  SECTION("identical sets give 1") { CHECK(occupancy_iou(a, a) == 1.0); }
  SECTION("disjoint equal-size sets give 0") {
    auto b = make_occ({{5, 5, 0, 1}, {6, 5, 0, 1}});
    CHECK(occupancy_iou(a, b) == 0.0);
  }
  SECTION("half-contained subset gives 0.5") {
    auto half = make_occ({{0, 0, 0, 1}});
    CHECK(occupancy_iou(half, a) == 0.5);
  }
  SECTION("labels are ignored") {
    auto relabeled = make_occ({{0, 0, 0, 3}, {1, 0, 0, 4}});
    CHECK(occupancy_iou(relabeled, a) == 1.0);
  }
  SECTION("both empty defined as 1") {
    CHECK(occupancy_iou({}, {}) == 1.0);
  }
  SECTION("symmetry") {
    auto b = make_occ({{0, 0, 0, 1}, {2, 0, 0, 1}, {3, 0, 0, 1}});
    CHECK(occupancy_iou(a, b) == occupancy_iou(b, a));
  }
}

TEST_CASE("occupancy mIoU", "[metrics]") {
  SECTION("perfect prediction gives 1") {
    auto a = make_occ({{0, 0, 0, 1}, {1, 0, 0, 2}});
    CHECK(occupancy_miou(a, a, 6) == 1.0);
  }
  SECTION("one of two classes perfect, other missed -> 0.5") {
    auto gt = make_occ({{0, 0, 0, 1}, {1, 0, 0, 2}});
    auto pred = make_occ({{0, 0, 0, 1}, {1, 0, 0, 3}});
    // class 1 IoU = 1; class 2 IoU = 0 (missed); class 3 IoU = 0 (spurious)
    CHECK(occupancy_miou(pred, gt, 6) == Catch::Approx(1.0 / 3.0));
    auto pred2 = make_occ({{0, 0, 0, 1}});
    CHECK(occupancy_miou(pred2, gt, 6) == 0.5);
  }
  SECTION("no class present anywhere is an error") {
    CHECK_THROWS_AS(occupancy_miou({}, {}, 6), std::invalid_argument);
  }
  SECTION("random grids match the set-arithmetic oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      auto gen = [&]() {
        geo::SparseOccupancy occ;
        std::set<std::array<int, 3>> seen;
        const int n = 1 + static_cast<int>(rng() % 30);
        for (int i = 0; i < n; ++i) {
          std::array<int, 3> k{static_cast<int>(rng() % 6), static_cast<int>(rng() % 6),
                               static_cast<int>(rng() % 3)};
          if (!seen.insert(k).second) continue;
          occ.cells.push_back({k[0], k[1], k[2], 1 + static_cast<int>(rng() % 5)});
        }
        occ.normalize();
        return occ;
      };
      auto pred = gen();
      auto gt = gen();
      REQUIRE(occupancy_miou(pred, gt, 6) == Catch::Approx(miou_oracle(pred, gt, 6)).margin(1e-12));
    }
  }
  SECTION("symmetry") {
    auto a = make_occ({{0, 0, 0, 1}, {1, 0, 0, 2}});
    auto b = make_occ({{0, 0, 0, 1}, {2, 0, 0, 2}, {3, 0, 0, 4}});
    CHECK(occupancy_miou(a, b, 6) == occupancy_miou(b, a, 6));
  }
}

TEST_CASE("prediction_to_occupancy", "[metrics]") {
  geo::GridSpec grid({0, 0, 0}, 1.0, {4, 4, 4});
  SECTION("single confident point gives a single cell") {
    nn::Tensor logits({1, 3});
    logits(0, 2) = 5.0;
    auto occ = prediction_to_occupancy({{1.5, 1.5, 0.5}}, logits, grid);
    REQUIRE(occ.size() == 1);
    CHECK(occ.cells[0] == geo::SparseOccupancy::Cell{1, 1, 0, 2});
  }
  SECTION("free-class points are dropped") {
    nn::Tensor logits({1, 3});
    logits(0, 0) = 5.0;
    CHECK(prediction_to_occupancy({{1.5, 1.5, 0.5}}, logits, grid).empty());
  }
  SECTION("majority and tie rules apply per cell") {
    nn::Tensor logits({3, 4});
    logits(0, 3) = 5.0;
    logits(1, 3) = 5.0;
    logits(2, 2) = 5.0;
    auto occ = prediction_to_occupancy({{0.2, 0.2, 0.2}, {0.4, 0.4, 0.4}, {0.6, 0.6, 0.6}},
                                       logits, grid);
    REQUIRE(occ.size() == 1);
    CHECK(occ.cells[0].label == 3);
  }
}

TEST_CASE("trajectory L2", "[metrics]") {
  std::vector<geo::Pose> gt{{1, 0, 0, 1}, {2, 0, 0, 2}, {3, 0, 0, 3}};
  SECTION("identical trajectories give zero") {
    auto r = trajectory_l2(gt, gt);
    for (double v : r.per_horizon) CHECK(v == 0.0);
  }
  SECTION("constant offset shows at every horizon") {
    auto pred = gt;
    for (auto& p : pred) p.y += 0.5;
    auto r = trajectory_l2(pred, gt);
    for (double v : r.per_horizon) CHECK(v == Catch::Approx(0.5));
    for (double v : r.cumulative_avg) CHECK(v == Catch::Approx(0.5));
  }
  SECTION("length mismatch is an error") {
    CHECK_THROWS_AS(trajectory_l2({{0, 0, 0, 1}}, gt), std::invalid_argument);
  }
}

TEST_CASE("collision detection", "[metrics]") {
  geo::GridSpec grid({-8, -8, -1}, 0.5, {32, 32, 4});
  std::set<int> drivable{1};

  SECTION("open space does not collide") {
    auto occ = make_occ({{0, 0, 1, 2}});
    CHECK_FALSE(pose_collides({5.0, 5.0, 0.0, 1}, occ, grid, 4.0, 1.8, drivable));
  }
  SECTION("pose centered on an occupied building cell collides") {
    auto occ = make_occ({{16, 16, 1, 2}});  // center (0.25, 0.25)
    CHECK(pose_collides({0.25, 0.25, 0.0, 1}, occ, grid, 4.0, 1.8, drivable));
  }
  SECTION("drivable cells never collide") {
    auto occ = make_occ({{16, 16, 1, 1}});
    CHECK_FALSE(pose_collides({0.25, 0.25, 0.0, 1}, occ, grid, 4.0, 1.8, drivable));
  }
  SECTION("footprint straddling a corner: collision iff a covered center is occupied") {
    // brute-force rasterization oracle over all cells
    Rng rng(9);
    auto occ = make_occ({{20, 16, 0, 2}});
    for (int trial = 0; trial < 200; ++trial) {
      geo::Pose pose{-6.0 + 0.06 * trial, 0.1 * (trial % 17), 0.37 * (trial % 9), 1};
      bool oracle = false;
      const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
      for (int ix = 0; ix < 32 && !oracle; ++ix)
        for (int iy = 0; iy < 32 && !oracle; ++iy) {
          bool occ_here = false;
          for (const auto& cell : occ.cells)
            if (cell.ix == ix && cell.iy == iy && cell.label != 1) occ_here = true;
          if (!occ_here) continue;
          const Vec3 ctr = grid.cell_center(ix, iy, 0);
          const double dx = ctr[0] - pose.x, dy = ctr[1] - pose.y;
          const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
          if (std::abs(lx) <= 2.0 && std::abs(ly) <= 0.9) oracle = true;
        }
      REQUIRE(pose_collides(pose, occ, grid, 4.0, 1.8, drivable) == oracle);
    }
  }
  SECTION("collision is monotone in added occupancy") {
    auto small = make_occ({{20, 16, 0, 2}});
    auto more = make_occ({{20, 16, 0, 2}, {21, 16, 0, 2}, {10, 10, 0, 3}});
    for (int trial = 0; trial < 50; ++trial) {
      geo::Pose pose{-6.0 + 0.2 * trial, 0.15 * (trial % 11), 0.5 * (trial % 7), 1};
      if (pose_collides(pose, small, grid, 4.0, 1.8, drivable))
        REQUIRE(pose_collides(pose, more, grid, 4.0, 1.8, drivable));
    }
  }
}

TEST_CASE("constant velocity baseline", "[metrics]") {
  SECTION("stationary history stays put") {
    std::vector<geo::Pose> past{{1, 2, 0.3, -1}, {1, 2, 0.3, 0}};
    auto pred = constant_velocity_baseline(past, 3);
    for (const auto& p : pred) {
      CHECK(p.x == Catch::Approx(1.0));
      CHECK(p.y == Catch::Approx(2.0));
    }
  }
  SECTION("uniform motion continues exactly") {
    std::vector<geo::Pose> past{{0, 0, 0, -2}, {1.5, 0, 0, -1}, {3.0, 0, 0, 0}};
    auto pred = constant_velocity_baseline(past, 2);
    CHECK(pred[0].x == Catch::Approx(4.5));
    CHECK(pred[1].x == Catch::Approx(6.0));
    CHECK(pred[0].y == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("turning history continues on a circular arc (kinematic oracle)") {
    // constant speed v, constant yaw rate w: chord length 2 r sin(w/2)
    const double v = 1.0, w = 0.2;
    std::vector<geo::Pose> past;
    geo::Pose p{0, 0, 0, -3};
    past.push_back(p);
    for (int i = 0; i < 3; ++i) {
      const double yaw = p.yaw + w;
      p.x += std::cos(yaw) * v;
      p.y += std::sin(yaw) * v;
      p.yaw = yaw;
      p.frame += 1;
      past.push_back(p);
    }
    auto pred = constant_velocity_baseline(past, 3);
    geo::Pose q = past.back();
    for (int i = 0; i < 3; ++i) {  // independent continuation of the same integrator
      const double yaw = q.yaw + w;
      q.x += std::cos(yaw) * v;
      q.y += std::sin(yaw) * v;
      q.yaw = yaw;
      CHECK(pred[i].x == Catch::Approx(q.x).margin(1e-9));
      CHECK(pred[i].y == Catch::Approx(q.y).margin(1e-9));
      CHECK(pred[i].yaw == Catch::Approx(q.yaw).margin(1e-9));
    }
  }
  SECTION("too few waypoints is an error") {
    CHECK_THROWS_AS(constant_velocity_baseline({{0, 0, 0, 0}}, 2), std::invalid_argument);
  }
}

TEST_CASE("eval report formatting", "[metrics]") {
  EvalReport r;
  r.future_frames = 2;
  r.samples = 4;
  r.miou = {0.8, 0.6, 0.5};
  r.iou = {0.9, 0.7, 0.6};
  r.l2 = {0.0, 0.3, 0.5};
  r.collision_rate = {0.0, 0.0, 0.25};
  std::ostringstream csv;
  r.write_csv(csv);
  CHECK(csv.str().find("miou,0.800000,0.600000,0.500000,0.550000") != std::string::npos);
  std::ostringstream table;
  r.write_table(table);
  CHECK(table.str().find("mIoU") != std::string::npos);
}

TEST_CASE("adding a correct cell never decreases any per-class IoU", "[metrics]") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    geo::SparseOccupancy gt, pred;
    std::set<std::array<int, 3>> cells;
    for (int i = 0; i < 20; ++i) {
      std::array<int, 3> k{static_cast<int>(rng() % 5), static_cast<int>(rng() % 5), 0};
      if (!cells.insert(k).second) continue;
      gt.cells.push_back({k[0], k[1], 0, 1 + static_cast<int>(rng() % 3)});
    }
    gt.normalize();
    // predict a strict subset, then add one more correct cell
    for (std::size_t i = 0; i + 1 < gt.cells.size(); i += 2) pred.cells.push_back(gt.cells[i]);
    if (pred.empty() || pred.cells.size() == gt.cells.size()) continue;
    const double before = occupancy_miou(pred, gt, 6);
    pred.cells.push_back(gt.cells.back());
    pred.normalize();
    const double after = occupancy_miou(pred, gt, 6);
    REQUIRE(after >= before - 1e-12);
  }
}
