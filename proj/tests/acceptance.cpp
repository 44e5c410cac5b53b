// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"
#include "sstsne/activelearn.hpp"
#include "sstsne/metrics.hpp"

using namespace sstsne;
using clk = std::chrono::steady_clock;

namespace {

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Verdict()>& check) {
  Verdict v;
  const auto t0 = clk::now();
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::printf("%s  %-28s %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

template <typename... T>
std::string fmt(const char* f, T... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Verdict gradient_oracle() {
  const auto t0 = clk::now();
  double worst = 0.0;
  for (int d : {2, 3}) {
    const auto aff = compute_affinities(testing_support::random_matrix(64, 16, 100 + d), 20.0);
    const Matrix y = testing_support::random_matrix(64, d, 200 + d);
    TsneConfig cfg;
    cfg.out_dims = d;
    cfg.theta = 0.0;
    const Matrix g = gradient(y, aff, nullptr, cfg, 1.0);
    worst = std::max(worst, (g - oracle::classic_gradient(y, aff.p)).cwiseAbs().maxCoeff());
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && t < 5.0, fmt("max abs diff %.2e (tol 1e-9), %.3fs (limit 5s)", worst, t)};
}

Verdict semi_supervised_oracle() {
  const Index n = 32;
  double worst = 0.0;
  for (int d : {2, 3}) {
    const auto aff = compute_affinities(testing_support::random_matrix(n, 8, 300 + d), 20.0);
    const Matrix y = testing_support::random_matrix(n, d, 400 + d);
    AnnotationState ann(n);
    std::vector<int> labels(n, -1);
    for (int k = 0; k < 10; ++k) {
      const Index i = (7 * k + 3) % n;
      const int c = k % 3;
      ann.apply_label(i, c, 2 * k);
      labels[static_cast<std::size_t>(i)] = c;
    }
    ann.update_point_rates(14, 10);
    std::vector<double> u(n);
    for (Index i = 0; i < n; ++i) u[static_cast<std::size_t>(i)] = ann.rate(i);
    TsneConfig cfg;
    cfg.out_dims = d;
    cfg.theta = 0.0;
    cfg.f = 0.01;
    cfg.r = 0.1;
    for (double alpha : {1.0, 4.0}) {
      const ForceTerms ft = compute_forces(y, aff, &ann, cfg, alpha);
      const auto ref = oracle::direct_forces(y, aff.p, labels, u, cfg.f, cfg.r, alpha);
      worst = std::max({worst, (ft.attraction - ref.attraction).cwiseAbs().maxCoeff(),
                        (ft.repulsion - ref.repulsion).cwiseAbs().maxCoeff()});
    }
  }
  return {worst <= 1e-9, fmt("max abs diff %.2e (tol 1e-9)", worst)};
}

Verdict bh_accuracy() {
  const Dataset ds = make_synthetic_gaussians(5, 200, 32, 10.0, 1.0, 7);
  TsneConfig cfg;
  Engine engine(ds.features, cfg);
  engine.run_until(cfg.e_max);
  const Matrix& y = engine.state().y;
  TsneConfig exact = cfg;
  exact.theta = 0.0;
  const ForceTerms bh = compute_forces(y, engine.affinities(), nullptr, cfg, 1.0);
  const ForceTerms ex = compute_forces(y, engine.affinities(), nullptr, exact, 1.0);
  double sum = 0.0;
  for (Index i = 0; i < y.rows(); ++i)
    sum += (bh.repulsion.row(i) - ex.repulsion.row(i)).norm() / ex.repulsion.row(i).norm();
  const double mean = sum / static_cast<double>(y.rows());
  return {mean < 0.05, fmt("mean relative repulsion error %.3f%% at theta=0.5 (limit 5%%), N=%ld after %d epochs",
                           100.0 * mean, static_cast<long>(y.rows()), cfg.e_max)};
}

Verdict degeneration() {
  const Dataset ds = make_synthetic_gaussians(3, 50, 10, 6.0, 1.0, 8);
  TsneConfig cfg;
  cfg.e_max = 320;
  cfg.ramp_epochs = 10;
  Engine plain(ds.features, cfg);
  Engine labeled(ds.features, cfg);
  for (Index i = 0; i < ds.size(); i += 2) labeled.apply_label(i, ds.labels[static_cast<std::size_t>(i)]);
  plain.run_until(250);
  labeled.run_until(250);
  for (Index i = 1; i < ds.size(); i += 4) labeled.apply_label(i, ds.labels[static_cast<std::size_t>(i)]);
  plain.run_until(cfg.e_max);
  labeled.run_until(cfg.e_max);
  const bool same = plain.state().y == labeled.state().y && plain.state().velocity == labeled.state().velocity &&
                    plain.state().gains == labeled.state().gains;
  return {same, fmt("%s after %d epochs with %ld labeled points", same ? "bitwise identical" : "trajectories differ",
                    cfg.e_max, static_cast<long>(labeled.annotations().num_labeled()))};
}

Verdict perplexity() {
  const Matrix x = testing_support::random_matrix(500, 20, 9);
  const Matrix c = conditional_probs<double>(pairwise_sq_distances(x), 20.0);
  double worst = 0.0;
  for (Index i = 0; i < c.rows(); ++i)
    worst = std::max(worst, std::abs(oracle::perplexity_of_row(c.row(i).transpose(), i) - 20.0));
  return {worst <= 1e-5, fmt("max |2^H - 20| = %.2e over 500 rows (tol 1e-5)", worst)};
}

Verdict schedule_values() {
  const TsneConfig cfg;
  bool ok = schedules(100, cfg).alpha == 4.0 && schedules(100, cfg).momentum == 0.5 &&
            schedules(250, cfg).alpha == 1.0 && schedules(250, cfg).momentum == 0.8 && schedules(0, cfg).alpha == 4.0 &&
            schedules(1000, cfg).momentum == 0.8;
  double worst = 0.0;
  for (int e = 101; e < 250; ++e) {
    const double t = (e - 100) / 150.0;
    worst = std::max({worst, std::abs(schedules(e, cfg).alpha - (4.0 - 3.0 * t)),
                      std::abs(schedules(e, cfg).momentum - (0.5 + 0.3 * t))});
  }
  ok = ok && worst <= 1e-15 && schedules(175, cfg).alpha == 2.5;
  return {ok, fmt("endpoints exact, max interpolation error %.1e", worst)};
}

Verdict algorithm1() {
  const LabelingEvent ev = scenarios::four_point_event();
  std::string detail =
      fmt("4-point: labels=%ld actions=%ld k*=%ld", static_cast<long>(ev.labels_applied),
          static_cast<long>(ev.actions_spent), static_cast<long>(ev.chosen_k));
  bool ok = ev.labels_applied == 3 && ev.actions_spent == 3 && ev.chosen_k == 3;
  std::vector<LabelingEvent> events;
  const auto scripted = scenarios::scripted_twenty_point(0.8, &events);
  ok = ok && scripted.pass;
  detail += fmt("; 20-point: %zu events %s", events.size(), scripted.pass ? "match brute force" : "MISMATCH");
  if (!scripted.pass) detail += " (" + scripted.detail + ")";
  return {ok, detail};
}

Verdict trend() {
  const auto t0 = clk::now();
  const Dataset ds = make_synthetic_gaussians(5, 200, 32, 10.0, 1.0, 11);
  const auto folds = kfold_split(ds.size(), 5, 11);
  ALConfig al;
  al.seed = 11;
  TsneConfig tc;
  tc.f = 0.1;
  tc.r = 0.1;
  tc.ramp_epochs = 10;
  tc.seed = 11;

  std::vector<double> reference;
  for (const auto& f : folds) reference.push_back(reference_accuracy(ds, f, al));
  auto mean_actions = [&](const std::vector<ALCurve>& curves) {
    double s = 0.0;
    for (std::size_t f = 0; f < curves.size(); ++f) s += actions_to_fraction(curves[f], reference[f], 0.8);
    return s / static_cast<double>(curves.size());
  };
  const double tsne = mean_actions(run_tsne_strategy(ds, folds, tc, al));
  const double margin = mean_actions(run_active_learning(ds, folds, Strategy::margin, al));
  const double uncertainty = mean_actions(run_active_learning(ds, folds, Strategy::uncertainty, al));
  const double entropy = mean_actions(run_active_learning(ds, folds, Strategy::entropy, al));
  const double random = mean_actions(run_active_learning(ds, folds, Strategy::random, al));
  const double t = seconds_since(t0);
  const bool ok = tsne < margin && margin <= uncertainty && margin <= entropy && tsne < 100.0 && t < 1800.0;
  const double ref = std::accumulate(reference.begin(), reference.end(), 0.0) / 5.0;
  return {ok, fmt("mean actions to 80%%: tsne %.1f, margin %.1f, uncertainty %.1f, entropy %.1f (random %.1f); "
                  "reference acc %.3f; %.0fs",
                  tsne, margin, uncertainty, entropy, random, ref, t)};
}

Verdict knn_metric() {
  const Dataset ds = make_synthetic_gaussians(4, 100, 16, 10.0, 1.0, 12);
  TsneConfig cfg;
  Engine engine(ds.features, cfg);
  engine.run_until(cfg.e_max);
  const KnnReport sep = knn_accuracy(engine.state().y, ds.labels);
  const KnnReport imp = knn_accuracy(scenarios::impostor_points(), scenarios::impostor_labels());
  const bool ok = sep.mean == 1.0 && sep.std == 0.0 && imp.per_class_accuracy.size() == 2 &&
                  imp.per_class_accuracy[0] == 0.0 && std::abs(imp.per_class_accuracy[1] - 2.0 / 3.0) < 1e-15 &&
                  std::abs(imp.mean - 1.0 / 3.0) < 1e-15;
  return {ok, fmt("separated: %.1f±%.1f%%; impostor fixture: per class %.3f / %.3f (hand count 0 / 0.667)",
                  100 * sep.mean, 100 * sep.std, imp.per_class_accuracy.at(0), imp.per_class_accuracy.at(1))};
}

Verdict classifier() {
  MlpClassifier clf(8, 3, 5);
  const Matrix x = testing_support::random_matrix(12, 8, 13);
  std::vector<ClassId> y(12);
  for (Index i = 0; i < 12; ++i) y[static_cast<std::size_t>(i)] = static_cast<ClassId>(i % 3);
  const auto g = clf.loss_gradient(x, y);
  auto& p = clf.mutable_parameters();
  double worst = 0.0;
  auto probe = [&](double& w, double analytic) {
    const double h = 1e-6, keep = w;
    w = keep + h;
    const double up = clf.loss(x, y);
    w = keep - h;
    const double down = clf.loss(x, y);
    w = keep;
    const double numeric = (up - down) / (2 * h);
    if (std::abs(analytic) < 1e-7 && std::abs(numeric) < 1e-7) return;
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric)));
  };
  for (Index i = 0; i < p.w1.size(); ++i) probe(p.w1.data()[i], g.w1.data()[i]);
  for (Index i = 0; i < p.b1.size(); ++i) probe(p.b1(i), g.b1(i));
  for (Index i = 0; i < p.w2.size(); ++i) probe(p.w2.data()[i], g.w2.data()[i]);
  for (Index i = 0; i < p.b2.size(); ++i) probe(p.b2(i), g.b2(i));

  const MlpClassifier big(512, 10, 1);
  const Matrix probs = big.predict_proba(testing_support::random_matrix(200, 512, 14, 3.0));
  const double row_err = (probs.rowwise().sum().array() - 1.0).abs().maxCoeff();
  const Index expected = 512 * 128 + 128 + 128 * 10 + 10;
  const bool ok = worst <= 1e-4 && row_err <= 1e-6 && big.parameter_count() == expected;
  return {ok, fmt("FD rel err %.1e (tol 1e-4); row sum err %.1e (tol 1e-6); params %ld (512->128->10: %ld)", worst,
                  row_err, static_cast<long>(big.parameter_count()), static_cast<long>(expected))};
}

Verdict performance() {
  const auto t0 = clk::now();
  const Matrix x = testing_support::random_matrix(3000, 512, 15);
  TsneConfig cfg;
  Engine engine(x, cfg);
  engine.run_until(cfg.e_max);
  const double full = seconds_since(t0);

  // tree build scaling
  std::vector<double> ns, ts;
  for (Index n : {500, 1000, 2000, 4000}) {
    const Matrix pts = testing_support::random_matrix(n, 3, 16 + n);
    const int reps = static_cast<int>(400000 / n);
    double best = 1e300;
    for (int trial = 0; trial < 5; ++trial) {
      const auto s = clk::now();
      for (int r = 0; r < reps; ++r) {
        const auto tree = build_tree(pts);
        if (tree.cells().empty()) std::abort();
      }
      best = std::min(best, seconds_since(s) / reps);
    }
    ns.push_back(std::log(static_cast<double>(n)));
    ts.push_back(std::log(best));
  }
  const double mx = std::accumulate(ns.begin(), ns.end(), 0.0) / 4, my = std::accumulate(ts.begin(), ts.end(), 0.0) / 4;
  double sxy = 0, sxx = 0;
  for (int k = 0; k < 4; ++k) {
    sxy += (ns[k] - mx) * (ts[k] - my);
    sxx += (ns[k] - mx) * (ns[k] - mx);
  }
  const double slope = sxy / sxx;
  const bool ok = full <= 300.0 && engine.state().y.allFinite() && slope < 1.25;
  return {ok, fmt("N=3000 D=512 1000 epochs in %.1fs (limit 300s, 1 thread); tree build log-log slope %.2f "
                  "over N=500..4000 (near-linear < 1.25)",
                  full, slope)};
}

Verdict parity() {
  const auto res = scenarios::service_parity();
  return {res.pass, res.pass ? "scripted session and emulator agree on (labels, actions) for every event" : res.detail};
}

}  // namespace

int main() {
  report("gradient-oracle", gradient_oracle);
  report("semi-supervised-oracle", semi_supervised_oracle);
  report("bh-accuracy", bh_accuracy);
  report("degeneration", degeneration);
  report("perplexity", perplexity);
  report("schedules", schedule_values);
  report("algorithm1-step-oracle", algorithm1);
  report("trend-reproduction", trend);
  report("knn-metric", knn_metric);
  report("classifier", classifier);
  report("performance", performance);
  report("service-emulator-parity", parity);
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
