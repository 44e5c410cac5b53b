#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "helpers.hpp"
#include "oracles.hpp"
#include "sstsne/spatial.hpp"

using namespace sstsne;

TEST_CASE("build_tree basics") {
  SUBCASE("single point") {
    Matrix p(1, 3);
    p << 1, 2, 3;
    const auto t = build_tree(p);
    CHECK(t.cells().size() == 1);
    CHECK(t.root().leaf);
    CHECK(t.root().anchor == 0);
    CHECK((t.root().centroid - p.row(0).transpose()).norm() == 0.0);
  }
  SUBCASE("octant corners") {
    Matrix p(8, 3);
    for (int s = 0; s < 8; ++s) p.row(s) << (s & 1 ? 1 : -1), (s & 2 ? 1 : -1), (s & 4 ? 1 : -1);
    const auto t = build_tree(p);
    CHECK(t.cells().size() == 9);
    CHECK(t.root().count == 8);
    CHECK(t.root().centroid.norm() < 1e-15);
    for (int s = 0; s < 8; ++s) {
      const auto& leaf = t.cells()[static_cast<std::size_t>(t.root().children[static_cast<std::size_t>(s)])];
      CHECK(leaf.leaf);
      CHECK(leaf.count == 1);
      CHECK(leaf.anchor == s);
    }
  }
  SUBCASE("random 200 points") {
    const Matrix p = testing_support::random_matrix(200, 2, 3);
    const auto t = build_tree(p);
    Index leaves = 0;
    for (const auto& c : t.cells()) {
      if (c.leaf) leaves += c.count;
      for (Index k = 0; k < 2; ++k) CHECK(c.lower(k) < c.upper(k));
      CHECK(c.diameter == doctest::Approx((c.upper - c.lower).norm()));
      if (!c.leaf) {
        Index sum = 0;
        for (auto ch : c.children)
          if (ch >= 0) sum += t.cells()[static_cast<std::size_t>(ch)].count;
        CHECK(sum == c.count);
      }
    }
    CHECK(leaves == 200);
    CHECK((t.root().centroid - p.colwise().mean().transpose()).norm() < 1e-9);
    for (Index i = 0; i < 200; ++i) {
      const auto& leaf = t.cells()[static_cast<std::size_t>(t.leaf_of(i))];
      for (Index k = 0; k < 2; ++k) {
        CHECK(p(i, k) >= leaf.lower(k));
        CHECK(p(i, k) <= leaf.upper(k));
      }
    }
  }
  SUBCASE("duplicates stay together at max depth") {
    Matrix p = Matrix::Zero(4, 2);
    p(3, 0) = 1.0;
    const auto t = build_tree(p);
    Index deepest = 0;
    for (const auto& c : t.cells()) deepest = std::max<Index>(deepest, c.depth);
    CHECK(deepest == kMaxTreeDepth);
    const auto& leaf = t.cells()[static_cast<std::size_t>(t.leaf_of(0))];
    CHECK(leaf.points == std::vector<Index>{0, 1, 2});
  }
  SUBCASE("non finite rejected") {
    Matrix p = Matrix::Zero(2, 2);
    p(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(build_tree(p), NumericalError);
  }
  SUBCASE("deterministic") {
    const Matrix p = testing_support::random_matrix(300, 3, 9);
    const auto a = build_tree(p);
    const auto b = build_tree(p);
    REQUIRE(a.cells().size() == b.cells().size());
    for (std::size_t c = 0; c < a.cells().size(); ++c) {
      CHECK(a.cells()[c].anchor == b.cells()[c].anchor);
      CHECK(a.cells()[c].children == b.cells()[c].children);
      CHECK(a.cells()[c].centroid == b.cells()[c].centroid);
    }
  }
}

TEST_CASE("tree agrees with an independent top-down build") {
  const Matrix p = testing_support::random_matrix(150, 2, 21);
  const auto t = build_tree(p);
  const auto nodes = oracle::build(p);
  CHECK(nodes.size() == t.cells().size());
  std::multiset<std::pair<long, long>> ours, theirs;
  for (const auto& c : t.cells()) ours.insert({c.anchor, c.count});
  for (const auto& n : nodes) theirs.insert({n.anchor, static_cast<long>(n.members.size())});
  CHECK(ours == theirs);
}

TEST_CASE("bh_summarize") {
  const Matrix p = testing_support::random_matrix(120, 3, 4);
  const auto t = build_tree(p);

  SUBCASE("theta 0 emits every other point individually") {
    for (Index target : {0, 17, 119}) {
      Index emitted = 0;
      double total = 0.0;
      bh_summarize(t, target, 0.0, [&](const Point&, double count) {
        ++emitted;
        total += count;
        CHECK(count == 1.0);
      });
      CHECK(emitted == 119);
      CHECK(total == 119.0);
    }
  }
  SUBCASE("infinite theta gives one root summary without the target") {
    Index emitted = 0;
    Point c;
    double n = 0;
    bh_summarize(t, 5, std::numeric_limits<double>::infinity(), [&](const Point& pos, double count) {
      ++emitted;
      c = pos;
      n = count;
    });
    CHECK(emitted == 1);
    CHECK(n == 119.0);
    const Point expected = (p.colwise().sum() - p.row(5)).transpose() / 119.0;
    CHECK((c - expected).norm() < 1e-12);
  }
  SUBCASE("partition property for any theta") {
    for (double theta : {0.2, 0.5, 1.0, 3.0}) {
      for (Index target : {3, 60}) {
        double total = 0.0;
        Point weighted = Point::Zero(3);
        bh_summarize(t, target, theta, [&](const Point& pos, double count) {
          total += count;
          weighted += count * pos;
        });
        CHECK(total == 119.0);
        CHECK((weighted - (p.colwise().sum() - p.row(target)).transpose()).norm() < 1e-9);
      }
    }
  }
  SUBCASE("exact mode repulsion equals the pair loop") {
    for (Index i = 0; i < 120; i += 13) {
      double z = 0.0;
      Point f = Point::Zero(3);
      const Point yi = p.row(i).transpose();
      bh_summarize(t, i, 0.0, [&](const Point& pos, double count) {
        const double q = 1.0 / (1.0 + (yi - pos).squaredNorm());
        z += count * q;
        f += count * q * q * (yi - pos);
      });
      double z2 = 0.0;
      Point f2 = Point::Zero(3);
      for (Index j = 0; j < 120; ++j) {
        if (j == i) continue;
        const Point d = yi - p.row(j).transpose();
        const double q = 1.0 / (1.0 + d.squaredNorm());
        z2 += q;
        f2 += q * q * d;
      }
      CHECK(std::abs(z - z2) < 1e-9);
      CHECK((f - f2).norm() < 1e-9);
    }
  }
  SUBCASE("opening rule is the ratio test") {
    // two points: the root has diameter ~ the box diagonal, the far point
    // is at distance ~1.5 diagonals from the other child's centroid
    Matrix q(3, 2);
    q << 0, 0, 0.1, 0.1, 3, 0;
    const auto tq = build_tree(q);
    // at theta just above diameter/distance of the far cell, it is summarised
    int emitted = 0;
    bh_summarize(tq, 2, 100.0, [&](const Point&, double) { ++emitted; });
    CHECK(emitted == 1);
    emitted = 0;
    bh_summarize(tq, 2, 0.0, [&](const Point&, double) { ++emitted; });
    CHECK(emitted == 2);
  }
}

TEST_CASE("bh_neighbors") {
  SUBCASE("two points") {
    Matrix p(2, 2);
    p << 0, 0, 1, 1;
    // the far leaf has diameter/distance = 0.5, so it is entered below that
    const auto n = bh_neighbors(build_tree(p), 0, 0.4);
    REQUIRE(n.size() == 1);
    CHECK(n[0].anchor == 1);
  }
  SUBCASE("theta 0 reaches every point") {
    const Matrix p = testing_support::random_matrix(80, 3, 8);
    const auto t = build_tree(p);
    for (Index i : {0, 40}) {
      std::set<Index> anchors;
      for (const auto& c : bh_neighbors(t, i, 0.0)) anchors.insert(c.anchor);
      CHECK(anchors.size() == 79);
      CHECK(anchors.count(i) == 0);
    }
  }
  SUBCASE("agrees with the independent tree walk") {
    const Matrix p = testing_support::random_matrix(200, 2, 31);
    const auto t = build_tree(p);
    const auto nodes = oracle::build(p);
    for (Index i = 0; i < 200; i += 7) {
      std::multiset<long> ours, theirs;
      for (const auto& c : bh_neighbors(t, i, 0.8)) ours.insert(c.anchor);
      for (long a : oracle::entered_anchors(nodes, p, i, 0.8)) theirs.insert(a);
      CHECK(ours == theirs);
    }
  }
  SUBCASE("tighter theta gives smaller neighbourhoods on clustered data") {
    Matrix p = testing_support::random_matrix(300, 3, 5, 0.5);
    for (Index i = 0; i < 300; ++i) p(i, i % 3) += 10.0 * static_cast<double>(i % 3 + 1);
    const auto t = build_tree(p);
    double at08 = 0, at05 = 0;
    for (Index i = 0; i < 300; ++i) {
      at08 += static_cast<double>(bh_neighbors(t, i, 0.8).size());
      at05 += static_cast<double>(bh_neighbors(t, i, 0.5).size());
    }
    CHECK(at08 < at05);
  }
}
