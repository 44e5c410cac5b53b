#pragma once

// Perplexity-calibrated Gaussian affinities in feature space. Dense N x N;
// intended for N up to a few thousand.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sstsne/types.hpp"

namespace sstsne {

template <typename Scalar>
struct AffinityMatrix {
  MatrixX<Scalar> p;
  Scalar perplexity_used = Scalar(0);

  Index size() const { return p.rows(); }
};

/// Squared Euclidean distances. Features are centred first and negative
/// round-off from the expansion identity is clamped to zero.
template <typename Derived>
MatrixX<typename Derived::Scalar> pairwise_sq_distances(const Eigen::MatrixBase<Derived>& features) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> x = features.rowwise() - features.colwise().mean();
  const VectorX<Scalar> norms = x.rowwise().squaredNorm();
  MatrixX<Scalar> d = Scalar(-2) * (x * x.transpose());
  d.colwise() += norms;
  d.rowwise() += norms.transpose();
  const Index n = d.rows();
  for (Index i = 0; i < n; ++i) {
    d(i, i) = Scalar(0);
    for (Index j = i + 1; j < n; ++j) {
      const Scalar v = std::max(Scalar(0), d(i, j));
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

namespace detail {

// Fills row with p_{j|i} for precision beta and returns exp(H) (natural-log
// entropy), i.e. the perplexity of the row. `shifted` holds d2 - min_j d2.
template <typename Scalar>
Scalar gaussian_row(const VectorX<Scalar>& shifted, Index self, Scalar beta, VectorX<Scalar>& row) {
  row = (-beta * shifted.array()).exp().matrix();
  row(self) = Scalar(0);
  const Scalar sum = row.sum();
  row /= sum;
  Scalar weighted = Scalar(0);
  for (Index j = 0; j < row.size(); ++j) weighted += row(j) * shifted(j);
  return std::exp(std::log(sum) + beta * weighted);
}

}  // namespace detail

/// Row-stochastic conditional similarities p_{j|i}. Each row's precision is
/// found by bracketed bisection so that 2^H matches `perplexity` to within
/// `tolerance` (200 evaluations at most; the best one is kept otherwise).
/// Rows whose distances are all equal fall back to uniform and are
/// reported through `degenerate_rows`.
template <typename Scalar>
MatrixX<Scalar> conditional_probs(const MatrixX<Scalar>& sq_distances, Scalar perplexity = Scalar(20),
                                  std::vector<Index>* degenerate_rows = nullptr, Scalar tolerance = Scalar(1e-5)) {
  const Index n = sq_distances.rows();
  if (sq_distances.cols() != n) throw ConfigError("conditional_probs: distance matrix must be square");
  if (!(perplexity > Scalar(1)) || !(perplexity < Scalar(n)))
    throw ConfigError("conditional_probs: perplexity must satisfy 1 < perplexity < N");

  constexpr int kMaxEvaluations = 200;
  const Scalar kBetaLimit = std::ldexp(Scalar(1), 60);
  MatrixX<Scalar> out(n, n);
  VectorX<Scalar> shifted(n), row(n), best_row(n);

  for (Index i = 0; i < n; ++i) {
    Scalar dmin = std::numeric_limits<Scalar>::infinity();
    Scalar dmax = Scalar(0);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dmin = std::min(dmin, sq_distances(i, j));
      dmax = std::max(dmax, sq_distances(i, j));
    }
    if (!(dmax > dmin)) {
      out.row(i).setConstant(Scalar(1) / Scalar(n - 1));
      out(i, i) = Scalar(0);
      if (degenerate_rows) degenerate_rows->push_back(i);
      continue;
    }
    shifted = sq_distances.row(i).transpose().array() - dmin;
    shifted(i) = Scalar(0);

    Scalar beta = Scalar(1);
    Scalar lo = Scalar(0);
    Scalar hi = std::numeric_limits<Scalar>::infinity();
    Scalar best_err = std::numeric_limits<Scalar>::infinity();
    for (int it = 0; it < kMaxEvaluations; ++it) {
      const Scalar perp = detail::gaussian_row(shifted, i, beta, row);
      const Scalar err = std::abs(perp - perplexity);
      if (err < best_err) {
        best_err = err;
        best_row = row;
      }
      if (err <= tolerance) break;
      // Perplexity decreases monotonically in beta.
      if (perp > perplexity) {
        lo = beta;
        beta = std::isinf(hi) ? std::min(beta * Scalar(2), kBetaLimit) : (lo + hi) / Scalar(2);
      } else {
        hi = beta;
        beta = lo == Scalar(0) ? std::max(beta / Scalar(2), Scalar(1) / kBetaLimit) : (lo + hi) / Scalar(2);
      }
    }
    out.row(i) = best_row.transpose();
  }
  return out;
}

/// p_ij = (p_{j|i} + p_{i|j}) / 2N; exactly symmetric by construction.
template <typename Scalar>
AffinityMatrix<Scalar> symmetrize(const MatrixX<Scalar>& conditional, Scalar perplexity_used = Scalar(0)) {
  const Index n = conditional.rows();
  AffinityMatrix<Scalar> out;
  out.p = (conditional + conditional.transpose()) / (Scalar(2) * Scalar(n));
  out.p.diagonal().setZero();
  out.perplexity_used = perplexity_used;
  return out;
}

template <typename Derived>
AffinityMatrix<typename Derived::Scalar> compute_affinities(const Eigen::MatrixBase<Derived>& features,
                                                            typename Derived::Scalar perplexity = 20,
                                                            std::vector<Index>* degenerate_rows = nullptr) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> sq = pairwise_sq_distances(features);
  return symmetrize<Scalar>(conditional_probs<Scalar>(sq, perplexity, degenerate_rows), perplexity);
}

}  // namespace sstsne
