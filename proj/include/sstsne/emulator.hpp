#pragma once

// Emulated annotator: picks the focus sample with the most groupwise
// labeling opportunity inside its Barnes-Hut focus kernel, sweeps a kNN
// size slider to the most label-per-action efficient k, deselects samples
// of a different class, and applies one group label per epoch.

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "sstsne/engine.hpp"
#include "sstsne/spatial.hpp"

namespace sstsne {

struct LabelingEvent {
  int epoch = 0;
  Index focus = -1;
  Index chosen_k = 0;
  Index labels_applied = 0;
  Index actions_spent = 0;
  // Samples whose annotation this event actually wrote.
  std::vector<Index> assigned;

  double efficiency() const {
    return actions_spent > 0 ? static_cast<double>(labels_applied) / static_cast<double>(actions_spent) : 0.0;
  }
};

class ActionLog {
 public:
  void append(LabelingEvent event);
  const std::vector<LabelingEvent>& events() const { return events_; }
  bool empty() const { return events_.empty(); }
  Index cumulative_labels() const { return cumulative_labels_; }
  Index cumulative_actions() const { return cumulative_actions_; }

  /// epoch,focus,chosen_k,labels,actions,cumulative_labels,cumulative_actions
  void write_csv(std::ostream& out) const;

 private:
  std::vector<LabelingEvent> events_;
  Index cumulative_labels_ = 0;
  Index cumulative_actions_ = 0;
};

/// Exact k nearest neighbours of v (v excluded), ascending distance, ties by
/// lower index.
std::vector<Index> exact_knn(const Matrix& y, Index v, Index k_max);

/// Number of entered focus-kernel cells around i whose anchor is unlabeled
/// and shares i's true class.
Index count_opportunities(const PartitionTree& tree, Index i, std::span<const ClassId> true_labels,
                          const AnnotationState& annotations, double theta_k);

std::vector<Index> count_all_opportunities(const PartitionTree& tree, std::span<const ClassId> true_labels,
                                           const AnnotationState& annotations, double theta_k);

/// Argmax of `opportunities`, lowest index on ties. When every count is zero
/// the lowest-index unlabeled sample is returned; nullopt means everything
/// is labeled.
std::optional<Index> select_focus(std::span<const Index> opportunities, const AnnotationState& annotations);

/// Slider cap: min(N - 1, max(2 * n_v, floor)).
Index slider_limit(Index n, Index focus_opportunities, Index floor = 50);

/// Slider sweep for focus v over its k_max exact neighbours. Returns the
/// event with counters evaluated at the chosen k and the samples to label.
/// Does not modify `annotations`.
LabelingEvent emulate_group_label(const Matrix& y, Index v, std::span<const ClassId> true_labels,
                                  const AnnotationState& annotations, Index k_max);

struct SessionOptions {
  Index slider_floor = 50;
  // Called after every engine step (before any labeling in that epoch).
  std::function<void(const Engine&)> on_epoch;
  // Called after each labeling event has been applied.
  std::function<void(const Engine&, const LabelingEvent&)> on_event;
  // Checked after each event; returning true ends the session.
  std::function<bool(const Engine&, const ActionLog&)> stop;
};

/// Steps the engine to the labeling start epoch, then performs one labeling
/// event per epoch until e_max or until every sample is labeled.
ActionLog run_session(Engine& engine, std::span<const ClassId> true_labels, const SessionOptions& options = {});

}  // namespace sstsne
