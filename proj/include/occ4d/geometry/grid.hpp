#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "occ4d/common.hpp"

namespace occ4d::geo {

/// Axis-aligned voxel grid: origin corner, uniform voxel size, cell counts per axis.
struct GridSpec {
  Vec3 origin{0.0, 0.0, 0.0};
  double voxel_size = 1.0;
  std::array<int, 3> dims{1, 1, 1};

  GridSpec() = default;
  GridSpec(const Vec3& origin_, double voxel_size_, const std::array<int, 3>& dims_)
      : origin(origin_), voxel_size(voxel_size_), dims(dims_) {
    validate();
  }

  void validate() const {
    if (!(voxel_size > 0.0)) throw std::invalid_argument("GridSpec: voxel_size must be > 0");
    for (int d : dims)
      if (d < 1) throw std::invalid_argument("GridSpec: dims must be >= 1");
  }

  std::int64_t num_cells() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }

  bool contains(int ix, int iy, int iz) const {
    return ix >= 0 && iy >= 0 && iz >= 0 && ix < dims[0] && iy < dims[1] && iz < dims[2];
  }

  Vec3 cell_center(int ix, int iy, int iz) const {
    return {origin[0] + (ix + 0.5) * voxel_size, origin[1] + (iy + 0.5) * voxel_size,
            origin[2] + (iz + 0.5) * voxel_size};
  }

  /// Half-open binning [lo, hi) per cell; boundary points go to the higher cell.
  std::array<int, 3> cell_of(const Vec3& p) const {
    return {static_cast<int>(std::floor((p[0] - origin[0]) / voxel_size)),
            static_cast<int>(std::floor((p[1] - origin[1]) / voxel_size)),
            static_cast<int>(std::floor((p[2] - origin[2]) / voxel_size))};
  }

  double extent(int axis) const { return dims[axis] * voxel_size; }
};

/// Sparse set of occupied, semantically labeled cells. Cells are kept sorted
/// by (ix, iy, iz) and unique.
struct SparseOccupancy {
  struct Cell {
    int ix = 0, iy = 0, iz = 0;
    int label = 0;

    friend bool operator<(const Cell& a, const Cell& b) {
      if (a.ix != b.ix) return a.ix < b.ix;
      if (a.iy != b.iy) return a.iy < b.iy;
      return a.iz < b.iz;
    }
    friend bool operator==(const Cell& a, const Cell& b) {
      return a.ix == b.ix && a.iy == b.iy && a.iz == b.iz && a.label == b.label;
    }
  };

  std::vector<Cell> cells;

  std::size_t size() const { return cells.size(); }
  bool empty() const { return cells.empty(); }

  /// Sorts cells and rejects duplicate coordinates.
  void normalize() {
    std::sort(cells.begin(), cells.end());
    for (std::size_t i = 1; i < cells.size(); ++i) {
      const Cell& a = cells[i - 1];
      const Cell& b = cells[i];
      if (a.ix == b.ix && a.iy == b.iy && a.iz == b.iz)
        throw std::invalid_argument("SparseOccupancy: duplicate cell");
    }
  }

  void validate(const GridSpec& grid, int n_classes) const {
    for (const Cell& c : cells) {
      if (!grid.contains(c.ix, c.iy, c.iz))
        throw std::invalid_argument("SparseOccupancy: cell outside grid");
      if (c.label < 0 || c.label >= n_classes)
        throw std::invalid_argument("SparseOccupancy: label out of range");
    }
  }
};

inline bool operator==(const SparseOccupancy& a, const SparseOccupancy& b) {
  return a.cells == b.cells;
}

}  // namespace occ4d::geo
