#include "sstsne/emulator.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace sstsne {

void ActionLog::append(LabelingEvent event) {
  cumulative_labels_ += event.labels_applied;
  cumulative_actions_ += event.actions_spent;
  events_.push_back(std::move(event));
}

void ActionLog::write_csv(std::ostream& out) const {
  out << "epoch,focus,chosen_k,labels,actions,cumulative_labels,cumulative_actions\n";
  Index labels = 0;
  Index actions = 0;
  for (const auto& e : events_) {
    labels += e.labels_applied;
    actions += e.actions_spent;
    out << e.epoch << ',' << e.focus << ',' << e.chosen_k << ',' << e.labels_applied << ',' << e.actions_spent << ','
        << labels << ',' << actions << '\n';
  }
}

std::vector<Index> exact_knn(const Matrix& y, Index v, Index k_max) {
  const Index n = y.rows();
  k_max = std::min(k_max, n - 1);
  std::vector<std::pair<double, Index>> dist;
  dist.reserve(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j)
    if (j != v) dist.emplace_back((y.row(j) - y.row(v)).squaredNorm(), j);
  const auto mid = dist.begin() + k_max;
  std::partial_sort(dist.begin(), mid, dist.end());
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(k_max));
  for (auto it = dist.begin(); it != mid; ++it) out.push_back(it->second);
  return out;
}

Index count_opportunities(const PartitionTree& tree, Index i, std::span<const ClassId> true_labels,
                          const AnnotationState& annotations, double theta_k) {
  const ClassId own = true_labels[static_cast<std::size_t>(i)];
  Index n = 0;
  for (const auto& cell : bh_neighbors(tree, i, theta_k))
    if (!annotations.is_labeled(cell.anchor) && true_labels[static_cast<std::size_t>(cell.anchor)] == own) ++n;
  return n;
}

std::vector<Index> count_all_opportunities(const PartitionTree& tree, std::span<const ClassId> true_labels,
                                           const AnnotationState& annotations, double theta_k) {
  std::vector<Index> out(static_cast<std::size_t>(tree.num_points()));
  for (Index i = 0; i < tree.num_points(); ++i)
    out[static_cast<std::size_t>(i)] = count_opportunities(tree, i, true_labels, annotations, theta_k);
  return out;
}

std::optional<Index> select_focus(std::span<const Index> opportunities, const AnnotationState& annotations) {
  if (opportunities.empty()) return std::nullopt;
  const auto best = std::max_element(opportunities.begin(), opportunities.end());
  if (*best > 0) return static_cast<Index>(best - opportunities.begin());
  for (Index i = 0; i < annotations.size(); ++i)
    if (!annotations.is_labeled(i)) return i;
  return std::nullopt;
}

Index slider_limit(Index n, Index focus_opportunities, Index floor) {
  return std::min(n - 1, std::max(2 * focus_opportunities, floor));
}

LabelingEvent emulate_group_label(const Matrix& y, Index v, std::span<const ClassId> true_labels,
                                  const AnnotationState& annotations, Index k_max) {
  if (y.rows() < 2) throw DataError("emulate_group_label: focus sample has no neighbours");
  const std::vector<Index> w = exact_knn(y, v, k_max);
  const ClassId focus_class = true_labels[static_cast<std::size_t>(v)];

  Index actions = 1;
  Index labels = 1;
  Index best_k = 0;
  Index best_labels = labels;
  Index best_actions = actions;
  for (std::size_t r = 0; r < w.size(); ++r) {
    if (r == 0) ++actions;  // slider
    const Index j = w[r];
    if (!annotations.is_labeled(j)) {
      if (true_labels[static_cast<std::size_t>(j)] == focus_class)
        ++labels;
      else
        ++actions;  // deselect
    }
    // h_k >= h_best, compared exactly; ties go to the larger k.
    if (best_k == 0 || labels * best_actions >= best_labels * actions) {
      best_k = static_cast<Index>(r) + 1;
      best_labels = labels;
      best_actions = actions;
    }
  }

  LabelingEvent event;
  event.focus = v;
  event.chosen_k = best_k;
  event.labels_applied = best_labels;
  event.actions_spent = best_actions;
  if (!annotations.is_labeled(v)) event.assigned.push_back(v);
  for (Index r = 0; r < best_k; ++r) {
    const Index j = w[static_cast<std::size_t>(r)];
    if (!annotations.is_labeled(j) && true_labels[static_cast<std::size_t>(j)] == focus_class)
      event.assigned.push_back(j);
  }
  return event;
}

ActionLog run_session(Engine& engine, std::span<const ClassId> true_labels, const SessionOptions& options) {
  const TsneConfig& config = engine.config();
  if (static_cast<Index>(true_labels.size()) != engine.state().size())
    throw DataError("run_session: label count does not match the embedding");

  ActionLog log;
  while (!engine.finished() && !engine.annotations().all_labeled()) {
    engine.step();
    if (options.on_epoch) options.on_epoch(engine);
    if (engine.state().epoch <= config.s) continue;

    const PartitionTree tree = build_tree(engine.state().y, 1);
    const auto opportunities = count_all_opportunities(tree, true_labels, engine.annotations(), config.theta_k);
    const auto focus = select_focus(opportunities, engine.annotations());
    if (!focus) break;
    const Index k_max = slider_limit(engine.state().size(), opportunities[static_cast<std::size_t>(*focus)],
                                     options.slider_floor);
    LabelingEvent event = emulate_group_label(engine.state().y, *focus, true_labels, engine.annotations(), k_max);
    event.epoch = engine.state().epoch;
    for (Index j : event.assigned) engine.apply_label(j, true_labels[static_cast<std::size_t>(j)]);
    if (options.on_event) options.on_event(engine, event);
    log.append(std::move(event));
    if (options.stop && options.stop(engine, log)) break;
  }
  return log;
}

}  // namespace sstsne
