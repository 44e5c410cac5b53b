#include "sstsne/engine.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sstsne/spatial.hpp"

namespace sstsne {

void TsneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid t-SNE config: " + msg); };
  if (out_dims != 2 && out_dims != 3) fail("out_dims must be 2 or 3");
  if (!(perplexity > 1.0)) fail("perplexity must be > 1");
  if (!(theta >= 0.0) || !(theta_k >= 0.0)) fail("theta and theta_k must be >= 0");
  if (!(f >= 0.0) || !(r >= 0.0)) fail("f and r must be >= 0");
  if (s < 0 || s >= e_max) fail("need 0 <= s < e_max");
  if (ramp_epochs < 0) fail("ramp_epochs must be >= 0");
  if (!(eta > 0.0)) fail("eta must be > 0");
  if (alpha_epochs.first < 0 || alpha_epochs.first >= alpha_epochs.second || alpha_epochs.second > e_max)
    fail("need 0 <= alpha_epochs.first < alpha_epochs.second <= e_max");
}

Schedule schedules(int epoch, const TsneConfig& config) {
  const auto [start, stop] = config.alpha_epochs;
  if (epoch <= start) return {config.alpha_hi, config.momentum_lo};
  if (epoch >= stop) return {config.alpha_lo, config.momentum_hi};
  const double t = static_cast<double>(epoch - start) / static_cast<double>(stop - start);
  return {config.alpha_hi + t * (config.alpha_lo - config.alpha_hi),
          config.momentum_lo + t * (config.momentum_hi - config.momentum_lo)};
}

// --- annotations ---------------------------------------------------------

AnnotationState::AnnotationState(Index n)
    : labels_(static_cast<std::size_t>(n)),
      label_epochs_(static_cast<std::size_t>(n)),
      rates_(static_cast<std::size_t>(n), 0.0) {}

std::vector<Index> AnnotationState::labeled_indices() const {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(num_labeled_));
  for (Index i = 0; i < size(); ++i)
    if (is_labeled(i)) out.push_back(i);
  return out;
}

void AnnotationState::apply_label(Index i, ClassId class_id, int epoch, bool force) {
  if (i < 0 || i >= size()) throw ConfigError("apply_label: sample index out of range");
  if (class_id < 0) throw ConfigError("apply_label: invalid class id");
  auto& slot = labels_[static_cast<std::size_t>(i)];
  if (slot && !force) throw ConfigError("apply_label: sample " + std::to_string(i) + " is already labeled");
  if (!slot) ++num_labeled_;
  slot = class_id;
  label_epochs_[static_cast<std::size_t>(i)] = epoch;
}

void AnnotationState::update_point_rates(int epoch, int ramp_epochs) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!labels_[i]) {
      rates_[i] = 0.0;
    } else if (ramp_epochs <= 0) {
      rates_[i] = 1.0;
    } else {
      const double elapsed = static_cast<double>(epoch - *label_epochs_[i] + 1);
      rates_[i] = std::clamp(elapsed / static_cast<double>(ramp_epochs), 0.0, 1.0);
    }
  }
}

AnnotationState apply_label(AnnotationState annotations, Index i, ClassId class_id, int epoch, bool force) {
  annotations.apply_label(i, class_id, epoch, force);
  return annotations;
}

AnnotationState update_point_rates(AnnotationState annotations, int epoch, int ramp_epochs) {
  annotations.update_point_rates(epoch, ramp_epochs);
  return annotations;
}

ClassCounts ClassCounts::from(const AnnotationState& annotations) {
  ClassCounts counts;
  for (Index i = 0; i < annotations.size(); ++i) {
    const auto c = annotations.label(i);
    if (!c) continue;
    if (*c >= static_cast<ClassId>(counts.per_class.size())) counts.per_class.resize(static_cast<std::size_t>(*c) + 1, 0);
    ++counts.per_class[static_cast<std::size_t>(*c)];
    ++counts.labeled;
  }
  return counts;
}

double attraction_prior(Index i, Index j, const AnnotationState& annotations, double f, const ClassCounts& counts) {
  const double base = 1.0 / static_cast<double>(annotations.size());
  const auto ci = annotations.label(i);
  const auto cj = annotations.label(j);
  if (!ci || !cj) return base;
  const double uu = annotations.rate(i) * annotations.rate(j);
  if (*ci == *cj) {
    const Index same = counts.same(*ci);
    return same == 0 ? base : base + uu * f / static_cast<double>(same);
  }
  const Index other = counts.other(*ci);
  return other == 0 ? base : std::max(0.0, base - uu * f / static_cast<double>(other));
}

double repulsion_prior(Index i, Index j, const AnnotationState& annotations, double r) {
  const auto ci = annotations.label(i);
  const auto cj = annotations.label(j);
  if (!ci || !cj || *ci == *cj) return 1.0;
  return 1.0 + annotations.rate(i) * annotations.rate(j) * r;
}

// --- embedding -------------------------------------------------------------

EmbeddingState init_embedding(const Matrix& features, const TsneConfig& config, std::string* warning) {
  config.validate();
  const Index n = features.rows();
  const int d = config.out_dims;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);

  EmbeddingState state;
  state.y.resize(n, d);
  bool use_pca = config.init_mode == InitMode::pca;
  if (use_pca && features.cols() < d) {
    use_pca = false;
    if (warning) *warning = "feature dimension below output dimension; using random initialization";
  }
  if (use_pca) {
    const Matrix centred = features.rowwise() - features.colwise().mean();
    const Matrix cov = (centred.transpose() * centred) / std::max<double>(1.0, static_cast<double>(n - 1));
    Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
    const Index D = features.cols();
    Matrix basis(D, d);
    for (int k = 0; k < d; ++k) {
      Vector v = solver.eigenvectors().col(D - 1 - k);
      Index arg = 0;
      v.cwiseAbs().maxCoeff(&arg);
      if (v(arg) < 0) v = -v;
      basis.col(k) = v;
    }
    state.y = centred * basis;
    for (int k = 0; k < d; ++k) {
      auto col = state.y.col(k);
      const double sd = std::sqrt(col.squaredNorm() / std::max<double>(1.0, static_cast<double>(n - 1)));
      if (sd > 0.0) {
        col *= 1e-2 / sd;
      } else {
        // Rank-deficient direction: a flat axis would never move.
        for (Index i = 0; i < n; ++i) col(i) = normal(rng);
      }
    }
  } else {
    for (Index i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) state.y(i, k) = normal(rng);
  }
  state.velocity = Matrix::Zero(n, d);
  state.gains = Matrix::Ones(n, d);
  state.epoch = 0;
  const Schedule sc = schedules(0, config);
  state.alpha = sc.alpha;
  state.momentum = sc.momentum;
  return state;
}

// --- forces ----------------------------------------------------------------

namespace {

// Unlabeled attraction sum_j p_ij t_ij (y_i - y_j) over all pairs, returning sum p.
template <int D>
double base_attraction(const Matrix& y, const Matrix& p, Matrix& out) {
  const Index n = y.rows();
  const double* Y = y.data();
  const double* P = p.data();
  double* F = out.data();
  double psum = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double* yi = Y + i * D;
    double fi[D] = {};
    for (Index j = i + 1; j < n; ++j) {
      const double pij = P[i * n + j];
      psum += pij;
      if (pij == 0.0) continue;
      const double* yj = Y + j * D;
      double diff[D];
      double sq = 0.0;
      for (int k = 0; k < D; ++k) {
        diff[k] = yi[k] - yj[k];
        sq += diff[k] * diff[k];
      }
      const double w = pij / (1.0 + sq);
      double* fj = F + j * D;
      for (int k = 0; k < D; ++k) {
        fi[k] += w * diff[k];
        fj[k] -= w * diff[k];
      }
    }
    for (int k = 0; k < D; ++k) F[i * D + k] += fi[k];
  }
  return 2.0 * psum;
}

double student_t(const Matrix& y, Index i, Index j, Point& diff) {
  diff = (y.row(i) - y.row(j)).transpose();
  return 1.0 / (1.0 + diff.squaredNorm());
}

}  // namespace

ForceTerms compute_forces(const Matrix& y, const AffinityMatrix<double>& affinities,
                          const AnnotationState* annotations, const TsneConfig& config, double alpha) {
  const Index n = y.rows();
  const int d = static_cast<int>(y.cols());
  if (affinities.size() != n) throw ConfigError("compute_forces: affinity size does not match embedding");
  ForceTerms out;
  out.attraction = Matrix::Zero(n, d);
  out.repulsion = Matrix::Zero(n, d);

  // Everything on the attraction side is scaled by N so that default pairs
  // carry weight 1 and only labeled pairs add (N a_ij - 1) p_ij terms.
  double psum = d == 2 ? base_attraction<2>(y, affinities.p, out.attraction)
                       : base_attraction<3>(y, affinities.p, out.attraction);

  const bool labels = annotations != nullptr && annotations->num_labeled() > 0;
  const std::vector<Index> labeled = labels ? annotations->labeled_indices() : std::vector<Index>{};
  Point diff(d);

  if (labels && config.f > 0.0) {
    const ClassCounts counts = ClassCounts::from(*annotations);
    const double scale = static_cast<double>(n);
    for (Index i : labeled) {
      for (Index j : labeled) {
        if (i == j) continue;
        const double delta = scale * attraction_prior(i, j, *annotations, config.f, counts) - 1.0;
        const double w = delta * affinities.p(i, j);
        if (w == 0.0) continue;
        const double t = student_t(y, i, j, diff);
        out.attraction.row(i) += (w * t) * diff.transpose();
        psum += w;
      }
    }
  }
  if (!(psum > 0.0)) throw NumericalError("attraction normalizer is not positive");
  out.attraction_normalizer = psum;
  out.attraction *= alpha / psum;

  const PartitionTree tree = build_tree(y, 1);
  double z = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Point yi = y.row(i).transpose();
    double zi = 0.0;
    Point rep = Point::Zero(d);
    bh_summarize(tree, i, config.theta, [&](const Point& pos, double count) {
      const Point delta = yi - pos;
      const double t = 1.0 / (1.0 + delta.squaredNorm());
      zi += count * t;
      rep += (count * t * t) * delta;
    });
    out.repulsion.row(i) = rep.transpose();
    z += zi;
  }

  if (labels && config.r > 0.0) {
    for (Index i : labeled) {
      for (Index j : labeled) {
        if (i == j || *annotations->label(i) == *annotations->label(j)) continue;
        const double w = annotations->rate(i) * annotations->rate(j) * config.r;
        if (w == 0.0) continue;
        const double t = student_t(y, i, j, diff);
        out.repulsion.row(i) += (w * t * t) * diff.transpose();
        z += w * t;
      }
    }
  }
  out.repulsion_normalizer = z;
  out.repulsion /= z;
  return out;
}

Matrix gradient(const Matrix& y, const AffinityMatrix<double>& affinities, const AnnotationState* annotations,
                const TsneConfig& config, double alpha) {
  const ForceTerms terms = compute_forces(y, affinities, annotations, config, alpha);
  return 4.0 * (terms.attraction - terms.repulsion);
}

void apply_update(EmbeddingState& state, const Matrix& grad, const TsneConfig& config, const Schedule& schedule) {
  auto sign = [](double x) { return x == 0.0 ? 0.0 : (x < 0.0 ? -1.0 : 1.0); };
  for (Index i = 0; i < grad.rows(); ++i) {
    for (Index k = 0; k < grad.cols(); ++k) {
      double& gain = state.gains(i, k);
      double& v = state.velocity(i, k);
      const double g = grad(i, k);
      gain = sign(g) != sign(v) ? gain + 0.2 : gain * 0.8;
      if (gain < 0.01) gain = 0.01;
      v = schedule.momentum * v - config.eta * gain * g;
      state.y(i, k) += v;
    }
  }
  state.y.rowwise() -= state.y.colwise().mean();
  state.alpha = schedule.alpha;
  state.momentum = schedule.momentum;
  ++state.epoch;
}

void step(EmbeddingState& state, const AffinityMatrix<double>& affinities, AnnotationState& annotations,
          const TsneConfig& config) {
  if (state.epoch >= config.e_max) throw ConfigError("step: epoch already at e_max");
  const Schedule sc = schedules(state.epoch, config);
  annotations.update_point_rates(state.epoch, config.ramp_epochs);
  const bool labels_active = state.epoch >= config.s && annotations.num_labeled() > 0;
  const Matrix grad = gradient(state.y, affinities, labels_active ? &annotations : nullptr, config, sc.alpha);
  if (!grad.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite gradient at epoch " << state.epoch << " (N=" << state.y.rows()
        << ", max |y|=" << state.y.cwiseAbs().maxCoeff() << ")";
    throw NumericalError(msg.str());
  }
  apply_update(state, grad, config, sc);
}

double kl_divergence(const Matrix& y, const AffinityMatrix<double>& affinities) {
  const Index n = y.rows();
  Matrix t(n, n);
  double z = 0.0;
  for (Index i = 0; i < n; ++i) {
    t(i, i) = 0.0;
    for (Index j = i + 1; j < n; ++j) {
      const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
      t(i, j) = v;
      t(j, i) = v;
      z += 2.0 * v;
    }
  }
  double c = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double p = affinities.p(i, j);
      if (i == j || p <= 0.0) continue;
      c += p * std::log(p * z / t(i, j));
    }
  }
  return c;
}

// --- engine ----------------------------------------------------------------

Engine::Engine(const Matrix& features, TsneConfig config) : config_(std::move(config)) {
  config_.validate();
  if (!(config_.perplexity < static_cast<double>(features.rows())))
    throw ConfigError("perplexity must be smaller than the number of samples");
  affinities_ = std::make_shared<const AffinityMatrix<double>>(compute_affinities(features, config_.perplexity));
  state_ = init_embedding(features, config_, &init_warning_);
  annotations_ = AnnotationState(features.rows());
}

Engine::Engine(std::shared_ptr<const AffinityMatrix<double>> affinities, EmbeddingState state, TsneConfig config)
    : config_(std::move(config)), affinities_(std::move(affinities)), state_(std::move(state)) {
  config_.validate();
  if (!affinities_ || affinities_->size() != state_.size())
    throw ConfigError("engine: affinities do not match the embedding state");
  annotations_ = AnnotationState(state_.size());
}

void Engine::step() { sstsne::step(state_, *affinities_, annotations_, config_); }

void Engine::run_until(int epoch) {
  const int stop = std::min(epoch, config_.e_max);
  while (state_.epoch < stop) step();
}

void Engine::apply_label(Index i, ClassId class_id, bool force) {
  annotations_.apply_label(i, class_id, state_.epoch, force);
}

}  // namespace sstsne
