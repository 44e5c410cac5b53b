#pragma once

// Point-region quadtree (2D) / octree (3D) over embedding positions, with the
// two traversals the engine and the emulator need: Barnes-Hut force
// summarization and the focus-kernel neighbourhood walk.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sstsne/types.hpp"

namespace sstsne {

inline constexpr int kMaxTreeDepth = 64;

struct Cell {
  Point lower;
  Point upper;
  Point centroid;
  Index count = 0;
  double diameter = 0.0;
  // First sample inserted into this cell; never reassigned when the cell splits.
  Index anchor = -1;
  int depth = 0;
  std::int32_t parent = -1;
  std::array<std::int32_t, 8> children{-1, -1, -1, -1, -1, -1, -1, -1};
  bool leaf = true;
  std::vector<Index> points;  // leaf members, insertion order
};

struct NeighborCell {
  Index anchor = -1;
  std::int32_t cell = -1;
  Index count = 0;
  double diameter = 0.0;
};

class PartitionTree {
 public:
  PartitionTree() = default;

  int dims() const { return dims_; }
  Index num_points() const { return positions_.rows(); }
  const std::vector<Cell>& cells() const { return cells_; }
  const Cell& root() const { return cells_.front(); }
  std::int32_t leaf_of(Index i) const { return leaf_of_[static_cast<std::size_t>(i)]; }
  const Matrix& positions() const { return positions_; }
  int num_slots() const { return 1 << dims_; }

  // Cells on the root-to-leaf path of sample i, indexed by depth.
  void path_to(Index i, std::array<std::int32_t, kMaxTreeDepth + 1>& path) const;

  friend PartitionTree build_tree(const Matrix& points, Index leaf_capacity);

 private:
  void insert(std::int32_t cell, Index i, const Point& p);
  void insert_into_child(std::int32_t cell, Index i, const Point& p);

  int dims_ = 0;
  Index leaf_capacity_ = 1;
  Matrix positions_;
  std::vector<Cell> cells_;
  std::vector<std::int32_t> leaf_of_;
};

/// Builds the tree by inserting samples in index order. Root bounds are the
/// tight bounding box grown by 1e-6 on each side. Throws NumericalError on
/// non-finite coordinates.
PartitionTree build_tree(const Matrix& points, Index leaf_capacity = 1);

/// Depth-first Barnes-Hut walk for sample `target`. A cell is opened when
/// diameter / |y_target - centroid| > theta (or the distance is zero);
/// otherwise it is emitted as one (centroid, count) contribution. Opened
/// leaves emit their members individually. The target itself is never
/// emitted: it is skipped in leaves and subtracted from pruned summaries.
///
/// `visit(const Point& position, double count)`.
template <typename Visit>
void bh_summarize(const PartitionTree& tree, Index target, double theta, Visit&& visit) {
  const auto& cells = tree.cells();
  const Matrix& pos = tree.positions();
  const int d = tree.dims();
  const Point y = pos.row(target).transpose();

  std::array<std::int32_t, kMaxTreeDepth + 1> path;
  tree.path_to(target, path);
  const int target_depth = cells[static_cast<std::size_t>(tree.leaf_of(target))].depth;

  std::int32_t stack[kMaxTreeDepth * 8 + 8];
  int top = 0;
  stack[top++] = 0;
  Point member(d);
  while (top > 0) {
    const Cell& cell = cells[static_cast<std::size_t>(stack[--top])];
    const std::int32_t id = static_cast<std::int32_t>(&cell - cells.data());
    const bool holds_target = cell.depth <= target_depth && path[static_cast<std::size_t>(cell.depth)] == id;
    if (holds_target && cell.count == 1) continue;

    const double dist = (y - cell.centroid).norm();
    const bool open = dist == 0.0 || cell.diameter / dist > theta;
    if (!open) {
      if (holds_target) {
        const double rest = static_cast<double>(cell.count - 1);
        const Point c = (cell.centroid * static_cast<double>(cell.count) - y) / rest;
        visit(c, rest);
      } else {
        visit(cell.centroid, static_cast<double>(cell.count));
      }
      continue;
    }
    if (cell.leaf) {
      for (Index m : cell.points) {
        if (m == target) continue;
        member = pos.row(m).transpose();
        visit(member, 1.0);
      }
      continue;
    }
    // Push in reverse so children are visited in slot order.
    for (int s = tree.num_slots() - 1; s >= 0; --s) {
      const auto child = cell.children[static_cast<std::size_t>(s)];
      if (child >= 0) stack[top++] = child;
    }
  }
}

/// Focus-kernel neighbourhood of sample i: breadth-first walk from the root
/// entering every cell with diameter / |y_i - centroid| > theta_k, returning
/// the anchor of each entered cell (cells anchored at i are omitted). The
/// same anchor appears once per entered cell it anchors.
std::vector<NeighborCell> bh_neighbors(const PartitionTree& tree, Index i, double theta_k = 0.8);

}  // namespace sstsne
