#include "sstsne/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>

namespace sstsne {

namespace {

// Vote among the ordered neighbours; ties resolve to the earliest-ranked class.
ClassId vote(std::span<const Index> neighbours, std::span<const ClassId> labels) {
  std::map<ClassId, int> votes;
  int top = 0;
  for (Index j : neighbours) top = std::max(top, ++votes[labels[static_cast<std::size_t>(j)]]);
  for (Index j : neighbours) {
    const ClassId c = labels[static_cast<std::size_t>(j)];
    if (votes[c] == top) return c;
  }
  return -1;
}

std::vector<Index> nearest(const Matrix& y, Index i, std::span<const Index> candidates, int k) {
  std::vector<std::pair<double, Index>> dist;
  dist.reserve(candidates.size());
  for (Index j : candidates)
    if (j != i) dist.emplace_back((y.row(i) - y.row(j)).squaredNorm(), j);
  const std::size_t take = std::min(dist.size(), static_cast<std::size_t>(k));
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
  std::vector<Index> out;
  for (std::size_t t = 0; t < take; ++t) out.push_back(dist[t].second);
  return out;
}

}  // namespace

KnnReport KnnReport::from_per_class(std::vector<double> per_class, int k) {
  KnnReport r;
  r.k = k;
  r.per_class_accuracy = std::move(per_class);
  if (r.per_class_accuracy.empty()) return r;
  double sum = 0.0;
  for (double a : r.per_class_accuracy) sum += a;
  r.mean = sum / static_cast<double>(r.per_class_accuracy.size());
  double var = 0.0;
  for (double a : r.per_class_accuracy) var += (a - r.mean) * (a - r.mean);
  r.std = std::sqrt(var / static_cast<double>(r.per_class_accuracy.size()));
  return r;
}

KnnReport knn_accuracy(const Matrix& y, std::span<const ClassId> labels, int k) {
  const Index n = y.rows();
  if (n <= k) throw DataError("knn_accuracy: need more samples than k");
  if (static_cast<Index>(labels.size()) != n) throw DataError("knn_accuracy: label count mismatch");
  const ClassId classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<Index> all(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;

  std::vector<Index> total(static_cast<std::size_t>(classes), 0), correct(static_cast<std::size_t>(classes), 0);
  for (Index i = 0; i < n; ++i) {
    const ClassId truth = labels[static_cast<std::size_t>(i)];
    ++total[static_cast<std::size_t>(truth)];
    if (vote(nearest(y, i, all, k), labels) == truth) ++correct[static_cast<std::size_t>(truth)];
  }
  std::vector<double> per_class;
  for (ClassId c = 0; c < classes; ++c)
    if (total[static_cast<std::size_t>(c)] > 0)
      per_class.push_back(static_cast<double>(correct[static_cast<std::size_t>(c)]) /
                          static_cast<double>(total[static_cast<std::size_t>(c)]));
  return KnnReport::from_per_class(std::move(per_class), k);
}

KnnReport knn_accuracy_folds(const Matrix& y, std::span<const ClassId> labels, std::span<const FoldSplit> folds,
                             int k) {
  const ClassId classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<double> pooled;
  for (const auto& fold : folds) {
    if (static_cast<Index>(fold.train_indices.size()) < k) throw DataError("knn_accuracy_folds: train split too small");
    std::vector<Index> total(static_cast<std::size_t>(classes), 0), correct(static_cast<std::size_t>(classes), 0);
    for (Index i : fold.validation_indices) {
      const ClassId truth = labels[static_cast<std::size_t>(i)];
      ++total[static_cast<std::size_t>(truth)];
      if (vote(nearest(y, i, fold.train_indices, k), labels) == truth) ++correct[static_cast<std::size_t>(truth)];
    }
    for (ClassId c = 0; c < classes; ++c)
      if (total[static_cast<std::size_t>(c)] > 0)
        pooled.push_back(static_cast<double>(correct[static_cast<std::size_t>(c)]) /
                         static_cast<double>(total[static_cast<std::size_t>(c)]));
  }
  return KnnReport::from_per_class(std::move(pooled), k);
}

std::vector<EfficiencyPoint> efficiency_curve(const ActionLog& log) {
  std::vector<EfficiencyPoint> out;
  out.reserve(log.events().size());
  EfficiencyPoint running;
  for (const auto& e : log.events()) {
    running.actions += e.actions_spent;
    running.labels += e.labels_applied;
    out.push_back(running);
  }
  return out;
}

void SnapshotRecorder::operator()(const Engine& engine) {
  const int epoch = engine.state().epoch;
  if (stride_ > 0 && epoch > 0 && epoch % stride_ == 0) snapshots_.push_back({epoch, engine.state().y});
}

std::vector<std::pair<int, double>> knn_over_epochs(std::span<const Snapshot> snapshots,
                                                    std::span<const ClassId> labels, int k) {
  std::vector<std::pair<int, double>> out;
  out.reserve(snapshots.size());
  for (const auto& s : snapshots) out.emplace_back(s.epoch, knn_accuracy(s.y, labels, k).mean);
  return out;
}

void write_knn_table(std::ostream& out, std::span<const KnnTableCell> cells) {
  std::vector<std::string> rows, cols;
  for (const auto& c : cells) {
    if (std::find(rows.begin(), rows.end(), c.feature_set) == rows.end()) rows.push_back(c.feature_set);
    if (std::find(cols.begin(), cols.end(), c.dataset) == cols.end()) cols.push_back(c.dataset);
  }
  out << "features";
  for (const auto& c : cols) out << ',' << c;
  out << '\n';
  for (const auto& r : rows) {
    out << r;
    for (const auto& col : cols) {
      out << ',';
      for (const auto& c : cells) {
        if (c.feature_set == r && c.dataset == col) {
          out << std::fixed << std::setprecision(1) << 100.0 * c.report.mean << "±" << 100.0 * c.report.std;
          break;
        }
      }
    }
    out << '\n';
  }
}

}  // namespace sstsne
