#include "sstsne/spatial.hpp"

#include <deque>

namespace sstsne {

namespace {

int child_slot(const Cell& cell, const Point& p) {
  int slot = 0;
  for (Index k = 0; k < p.size(); ++k) {
    const double mid = 0.5 * (cell.lower(k) + cell.upper(k));
    if (p(k) >= mid) slot |= 1 << k;
  }
  return slot;
}

}  // namespace

void PartitionTree::path_to(Index i, std::array<std::int32_t, kMaxTreeDepth + 1>& path) const {
  std::int32_t c = leaf_of(i);
  while (c >= 0) {
    const Cell& cell = cells_[static_cast<std::size_t>(c)];
    path[static_cast<std::size_t>(cell.depth)] = c;
    c = cell.parent;
  }
}

void PartitionTree::insert(std::int32_t id, Index i, const Point& p) {
  {
    Cell& cell = cells_[static_cast<std::size_t>(id)];
    ++cell.count;
    cell.centroid += p;  // running sum; divided by count once the build is done
    if (cell.leaf) {
      if (static_cast<Index>(cell.points.size()) < leaf_capacity_ || cell.depth >= kMaxTreeDepth) {
        cell.points.push_back(i);
        leaf_of_[static_cast<std::size_t>(i)] = id;
        return;
      }
      cell.leaf = false;
    }
  }
  std::vector<Index> existing = std::move(cells_[static_cast<std::size_t>(id)].points);
  cells_[static_cast<std::size_t>(id)].points.clear();
  for (Index e : existing) insert_into_child(id, e, positions_.row(e).transpose());
  insert_into_child(id, i, p);
}

void PartitionTree::insert_into_child(std::int32_t id, Index i, const Point& p) {
  const int slot = child_slot(cells_[static_cast<std::size_t>(id)], p);
  std::int32_t child = cells_[static_cast<std::size_t>(id)].children[static_cast<std::size_t>(slot)];
  if (child < 0) {
    const Cell& parent = cells_[static_cast<std::size_t>(id)];
    Cell c;
    c.lower = parent.lower;
    c.upper = parent.upper;
    for (int k = 0; k < dims_; ++k) {
      const double mid = 0.5 * (parent.lower(k) + parent.upper(k));
      if (slot & (1 << k))
        c.lower(k) = mid;
      else
        c.upper(k) = mid;
    }
    c.centroid = Point::Zero(dims_);
    c.diameter = (c.upper - c.lower).norm();
    c.anchor = i;
    c.depth = parent.depth + 1;
    c.parent = id;
    child = static_cast<std::int32_t>(cells_.size());
    cells_[static_cast<std::size_t>(id)].children[static_cast<std::size_t>(slot)] = child;
    cells_.push_back(std::move(c));
  }
  insert(child, i, p);
}

PartitionTree build_tree(const Matrix& points, Index leaf_capacity) {
  const Index n = points.rows();
  const int d = static_cast<int>(points.cols());
  if (n < 1) throw DataError("build_tree: need at least one point");
  if (d != 2 && d != 3) throw DataError("build_tree: points must be 2D or 3D");
  if (leaf_capacity < 1) throw ConfigError("build_tree: leaf capacity must be >= 1");
  if (!points.allFinite()) throw NumericalError("build_tree: non-finite coordinate");

  PartitionTree tree;
  tree.dims_ = d;
  tree.leaf_capacity_ = leaf_capacity;
  tree.positions_ = points;
  tree.leaf_of_.assign(static_cast<std::size_t>(n), -1);
  tree.cells_.reserve(static_cast<std::size_t>(2 * n + 1));

  constexpr double kMargin = 1e-6;
  Cell root;
  root.lower = points.colwise().minCoeff().transpose().array() - kMargin;
  root.upper = points.colwise().maxCoeff().transpose().array() + kMargin;
  root.centroid = Point::Zero(d);
  root.diameter = (root.upper - root.lower).norm();
  root.anchor = 0;
  tree.cells_.push_back(std::move(root));

  for (Index i = 0; i < n; ++i) tree.insert(0, i, points.row(i).transpose());
  for (Cell& c : tree.cells_) c.centroid /= static_cast<double>(c.count);
  return tree;
}

std::vector<NeighborCell> bh_neighbors(const PartitionTree& tree, Index i, double theta_k) {
  const auto& cells = tree.cells();
  const Point y = tree.positions().row(i).transpose();
  std::vector<NeighborCell> out;
  std::deque<std::int32_t> queue{0};
  while (!queue.empty()) {
    const std::int32_t id = queue.front();
    queue.pop_front();
    const Cell& cell = cells[static_cast<std::size_t>(id)];
    const double dist = (y - cell.centroid).norm();
    if (!(dist == 0.0 || cell.diameter / dist > theta_k)) continue;
    if (cell.anchor != i) out.push_back({cell.anchor, id, cell.count, cell.diameter});
    for (int s = 0; s < tree.num_slots(); ++s) {
      const auto child = cell.children[static_cast<std::size_t>(s)];
      if (child >= 0) queue.push_back(child);
    }
  }
  return out;
}

}  // namespace sstsne
