#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "helpers.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"
#include "sstsne/emulator.hpp"

using namespace sstsne;

TEST_CASE("exact_knn") {
  Matrix y(3, 2);
  y << 0, 0, 1, 0, 3, 0;
  CHECK(exact_knn(y, 1, 2) == std::vector<Index>{0, 2});

  Matrix eq(3, 2);
  eq << 0, 0, 1, 0, -1, 0;
  CHECK(exact_knn(eq, 0, 2) == std::vector<Index>{1, 2});

  const Matrix r = testing_support::random_matrix(500, 3, 4);
  for (Index v : {0, 250, 499}) {
    const auto got = exact_knn(r, v, 60);
    const auto want = oracle::knn(r, v, 60);
    CHECK(std::equal(got.begin(), got.end(), want.begin(), want.end()));
  }
}

TEST_CASE("count_opportunities") {
  SUBCASE("two points walked by hand") {
    Matrix y(2, 2);
    y << 0, 0, 1, 1;
    const auto tree = build_tree(y);
    const std::vector<ClassId> truth{0, 0};
    const AnnotationState ann(2);
    // i=0 enters root (anchor 0, itself), its own leaf, and the leaf of 1
    CHECK(count_opportunities(tree, 0, truth, ann, 0.01) == 1);
    // i=1 sees anchor 0 twice: the root and the leaf of 0
    CHECK(count_opportunities(tree, 1, truth, ann, 0.01) == 2);
  }
  SUBCASE("nothing left when everything is labeled") {
    const Matrix y = testing_support::random_matrix(30, 2, 1);
    std::vector<ClassId> truth(30);
    AnnotationState ann(30);
    for (Index i = 0; i < 30; ++i) {
      truth[i] = static_cast<ClassId>(i % 3);
      ann.apply_label(i, truth[i], 0);
    }
    for (Index n : count_all_opportunities(build_tree(y), truth, ann, 0.8)) CHECK(n == 0);
  }
  SUBCASE("an impostor sees fewer opportunities than a native") {
    Matrix y = testing_support::random_matrix(100, 2, 2, 0.3);
    std::vector<ClassId> truth(100);
    for (Index i = 0; i < 100; ++i) {
      truth[i] = i < 50 ? 0 : 1;
      if (i >= 50) y(i, 0) += 10.0;
    }
    truth[10] = 1;  // lives among class 0
    const auto tree = build_tree(y);
    const AnnotationState ann(100);
    CHECK(count_opportunities(tree, 10, truth, ann, 0.8) < count_opportunities(tree, 11, truth, ann, 0.8));
  }
}

TEST_CASE("select_focus") {
  const AnnotationState three(3);
  CHECK(*select_focus(std::vector<Index>{0, 5, 3}, three) == 1);
  CHECK(*select_focus(std::vector<Index>{4, 4}, AnnotationState(2)) == 0);
  AnnotationState partly(3);
  partly.apply_label(0, 0, 0);
  CHECK(*select_focus(std::vector<Index>{0, 0, 0}, partly) == 1);
  AnnotationState all(2);
  all.apply_label(0, 0, 0);
  all.apply_label(1, 0, 0);
  CHECK_FALSE(select_focus(std::vector<Index>{0, 0}, all).has_value());
}

TEST_CASE("slider limit") {
  CHECK(slider_limit(1000, 10) == 50);
  CHECK(slider_limit(1000, 40) == 80);
  CHECK(slider_limit(20, 40) == 19);
}

TEST_CASE("emulate_group_label hand walks") {
  SUBCASE("same, different, same") {
    const auto ev = scenarios::four_point_event();
    CHECK(ev.chosen_k == 3);
    CHECK(ev.labels_applied == 3);
    CHECK(ev.actions_spent == 3);
    CHECK(ev.assigned == std::vector<Index>{0, 1, 3});
    CHECK(ev.efficiency() == 1.0);
  }
  SUBCASE("homogeneous neighbourhood") {
    Matrix y = testing_support::random_matrix(8, 2, 3);
    const std::vector<ClassId> truth(8, 2);
    const auto ev = emulate_group_label(y, 0, truth, AnnotationState(8), 7);
    CHECK(ev.chosen_k == 7);
    CHECK(ev.labels_applied == 8);
    CHECK(ev.actions_spent == 2);
  }
  SUBCASE("lone different neighbour") {
    Matrix y(2, 2);
    y << 0, 0, 1, 0;
    const auto ev = emulate_group_label(y, 0, std::vector<ClassId>{0, 1}, AnnotationState(2), 1);
    CHECK(ev.chosen_k == 1);
    CHECK(ev.labels_applied == 1);
    CHECK(ev.actions_spent == 3);
    CHECK(ev.assigned == std::vector<Index>{0});
  }
  SUBCASE("labeled neighbours are free and never rewritten") {
    Matrix y(4, 2);
    y << 0, 0, 1, 0, 2, 0, 3, 0;
    AnnotationState ann(4);
    ann.apply_label(1, 1, 0);  // deliberately "wrong" stored label
    const auto ev = emulate_group_label(y, 0, std::vector<ClassId>{0, 0, 1, 0}, ann, 3);
    CHECK(std::find(ev.assigned.begin(), ev.assigned.end(), 1) == ev.assigned.end());
    // walk: k=1 (2,2) h=1; k=2 (2,3); k=3 (3,3) h=1 -> k*=3
    CHECK(ev.chosen_k == 3);
    CHECK(ev.labels_applied == 2);
    CHECK(ev.actions_spent == 3);
  }
  SUBCASE("already labeled focus is counted but not rewritten") {
    Matrix y(2, 2);
    y << 0, 0, 1, 0;
    AnnotationState ann(2);
    ann.apply_label(0, 0, 0);
    const auto ev = emulate_group_label(y, 0, std::vector<ClassId>{0, 0}, ann, 1);
    CHECK(ev.labels_applied == 2);
    CHECK(ev.assigned == std::vector<Index>{1});
  }
  SUBCASE("single point has no neighbours") {
    CHECK_THROWS_AS(emulate_group_label(Matrix::Zero(1, 2), 0, std::vector<ClassId>{0}, AnnotationState(1), 0),
                    DataError);
  }
  SUBCASE("the chosen k maximises efficiency") {
    const Matrix y = testing_support::random_matrix(60, 2, 7);
    std::vector<ClassId> truth(60);
    for (Index i = 0; i < 60; ++i) truth[i] = static_cast<ClassId>((i * 7) % 3);
    const auto ev = emulate_group_label(y, 5, truth, AnnotationState(60), 40);
    const auto w = exact_knn(y, 5, 40);
    Index labels = 1, actions = 2;
    for (std::size_t r = 0; r < w.size(); ++r) {
      (truth[w[r]] == truth[5] ? labels : actions) += 1;
      CHECK(ev.labels_applied * actions >= labels * ev.actions_spent);
    }
  }
}

TEST_CASE("scripted twenty point session matches the brute force walk") {
  for (double theta_k : {0.8, 0.5, 0.0}) {
    std::vector<LabelingEvent> events;
    const auto res = scenarios::scripted_twenty_point(theta_k, &events);
    INFO(res.detail);
    CHECK(res.pass);
    Index labels = 0;
    for (const auto& e : events) labels += static_cast<Index>(e.assigned.size());
    CHECK(labels == 20);
  }
}

TEST_CASE("action log") {
  ActionLog log;
  LabelingEvent a;
  a.epoch = 201;
  a.focus = 3;
  a.chosen_k = 2;
  a.labels_applied = 3;
  a.actions_spent = 3;
  LabelingEvent b = a;
  b.epoch = 202;
  b.labels_applied = 2;
  b.actions_spent = 4;
  log.append(a);
  log.append(b);
  CHECK(log.cumulative_labels() == 5);
  CHECK(log.cumulative_actions() == 7);
  std::ostringstream out;
  log.write_csv(out);
  CHECK(out.str() ==
        "epoch,focus,chosen_k,labels,actions,cumulative_labels,cumulative_actions\n"
        "201,3,2,3,3,3,3\n202,3,2,2,4,5,7\n");
}

namespace {

TsneConfig session_config(int e_max) {
  TsneConfig c;
  c.out_dims = 2;
  c.e_max = e_max;
  c.f = 0.1;
  c.r = 0.1;
  c.ramp_epochs = 10;
  return c;
}

}  // namespace

TEST_CASE("run_session") {
  SUBCASE("fully labeled input produces no events") {
    const Dataset ds = make_synthetic_gaussians(2, 20, 5, 10.0, 1.0, 1);
    Engine e(ds.features, session_config(300));
    for (Index i = 0; i < ds.size(); ++i) e.apply_label(i, ds.labels[i]);
    CHECK(run_session(e, ds.labels).empty());
  }
  SUBCASE("separated two class data is labeled quickly, correctly and without rewrites") {
    const Dataset ds = make_synthetic_gaussians(2, 100, 10, 10.0, 1.0, 2);
    Engine e(ds.features, session_config(400));
    AnnotationState before = e.annotations();
    Index last_actions = 0;
    bool ok = true;
    SessionOptions opts;
    opts.on_epoch = [&](const Engine& eng) { before = eng.annotations(); };
    opts.on_event = [&](const Engine& eng, const LabelingEvent& ev) {
      for (Index i = 0; i < ds.size(); ++i) {
        if (before.is_labeled(i) && eng.annotations().label(i) != before.label(i)) ok = false;
        if (eng.annotations().is_labeled(i) && *eng.annotations().label(i) != ds.labels[i]) ok = false;
      }
      CHECK(ev.actions_spent >= 2);
      CHECK(ev.labels_applied >= 1);
    };
    const ActionLog log = run_session(e, ds.labels, opts);
    CHECK(ok);
    REQUIRE_FALSE(log.empty());
    CHECK(log.events().front().epoch == 201);
    Index labels_after_50 = 0;
    for (std::size_t k = 0; k < log.events().size() && k < 50; ++k) labels_after_50 += log.events()[k].labels_applied;
    CHECK(labels_after_50 >= 180);
    Index run = 0;
    for (const auto& ev : log.events()) {
      run += ev.actions_spent;
      CHECK(run >= last_actions + 2);
      last_actions = run;
    }
    CHECK(run == log.cumulative_actions());
  }
  SUBCASE("events replay exactly through the brute force walk") {
    const Dataset ds = make_synthetic_gaussians(3, 20, 6, 5.0, 1.5, 3);
    Engine e(ds.features, session_config(260));
    const std::vector<int> truth(ds.labels.begin(), ds.labels.end());
    oracle::Event expected;
    SessionOptions opts;
    opts.on_epoch = [&](const Engine& eng) {
      std::vector<int> annotated(truth.size(), -1);
      for (Index i = 0; i < ds.size(); ++i)
        if (eng.annotations().is_labeled(i)) annotated[i] = *eng.annotations().label(i);
      if (eng.state().epoch > eng.config().s)
        expected = oracle::algorithm1_event(eng.state().y, truth, annotated, eng.config().theta_k);
    };
    int events = 0;
    opts.on_event = [&](const Engine&, const LabelingEvent& ev) {
      ++events;
      CHECK(ev.focus == expected.focus);
      CHECK(ev.chosen_k == expected.k);
      CHECK(ev.labels_applied == expected.labels);
      CHECK(ev.actions_spent == expected.actions);
    };
    run_session(e, ds.labels, opts);
    CHECK(events > 0);
  }
}
