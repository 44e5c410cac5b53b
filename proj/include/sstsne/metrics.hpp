#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sstsne/dataset.hpp"
#include "sstsne/emulator.hpp"

namespace sstsne {

struct KnnReport {
  std::vector<double> per_class_accuracy;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over per_class_accuracy
  int k = 4;

  static KnnReport from_per_class(std::vector<double> per_class, int k);
};

/// Leave-one-out kNN classification in the embedding. Votes are majority;
/// tied classes resolve to the class of the nearest tied neighbour.
/// Neighbour distance ties go to the lower index. Per-class accuracy is
/// reported for every class that has members.
KnnReport knn_accuracy(const Matrix& y, std::span<const ClassId> labels, int k = 4);

/// Cross-validated variant: validation points of each fold are classified
/// against that fold's train points; per-class accuracies of all folds are
/// pooled into one report.
KnnReport knn_accuracy_folds(const Matrix& y, std::span<const ClassId> labels, std::span<const FoldSplit> folds,
                             int k = 4);

struct EfficiencyPoint {
  Index actions = 0;
  Index labels = 0;
  bool operator==(const EfficiencyPoint&) const = default;
};

/// Cumulative (actions, labels), one entry per event.
std::vector<EfficiencyPoint> efficiency_curve(const ActionLog& log);

struct Snapshot {
  int epoch = 0;
  Matrix y;
};

/// Collects copies of the embedding at every epoch divisible by `stride`.
class SnapshotRecorder {
 public:
  explicit SnapshotRecorder(int stride) : stride_(stride) {}
  void operator()(const Engine& engine);
  const std::vector<Snapshot>& snapshots() const { return snapshots_; }

 private:
  int stride_;
  std::vector<Snapshot> snapshots_;
};

std::vector<std::pair<int, double>> knn_over_epochs(std::span<const Snapshot> snapshots,
                                                    std::span<const ClassId> labels, int k = 4);

struct KnnTableCell {
  std::string feature_set;
  std::string dataset;
  KnnReport report;
};

/// Rows = feature sets, columns = datasets, cells "mean±std" in percent.
void write_knn_table(std::ostream& out, std::span<const KnnTableCell> cells);

}  // namespace sstsne
