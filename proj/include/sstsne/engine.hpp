#pragma once

// Semi-supervised Barnes-Hut t-SNE. Labels enter the gradient through
// pairwise attraction priors a_ij and repulsion weights b_ij:
//
//   dC/dy_i = 4 * ( alpha * sum_j a_ij p_ij t_ij (y_i - y_j) / sum_kl a_kl p_kl
//                         - sum_j b_ij t_ij^2 (y_i - y_j) / sum_kl b_kl t_kl )
//
// with t_ij = 1 / (1 + |y_i - y_j|^2). Unlabeled pairs use a_ij = 1/N and
// b_ij = 1, which reduces to exaggerated t-SNE.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sstsne/affinity.hpp"
#include "sstsne/dataset.hpp"
#include "sstsne/types.hpp"

namespace sstsne {

enum class InitMode { pca, random };

struct TsneConfig {
  int out_dims = 3;
  double perplexity = 20.0;
  double theta = 0.5;
  double theta_k = 0.8;
  double f = 0.0;  // labeling importance
  double r = 0.0;  // repulsion emphasis
  int s = 200;     // first epoch at which labels exert force
  int ramp_epochs = 0;
  int e_max = 1000;
  double eta = 200.0;
  double alpha_hi = 4.0;
  double alpha_lo = 1.0;
  std::pair<int, int> alpha_epochs{100, 250};
  double momentum_lo = 0.5;
  double momentum_hi = 0.8;
  std::uint64_t seed = 0;
  InitMode init_mode = InitMode::pca;

  /// Throws ConfigError on the first violated constraint.
  void validate() const;
};

struct Schedule {
  double alpha = 1.0;
  double momentum = 0.8;
};

/// Exaggeration and momentum: flat before the first scheduled epoch, flat
/// after the second, linear in between.
Schedule schedules(int epoch, const TsneConfig& config);

/// Partial annotations c_i with their assignment epoch and the per-point
/// learning rate u_i that ramps the label's influence in.
class AnnotationState {
 public:
  AnnotationState() = default;
  explicit AnnotationState(Index n);

  Index size() const { return static_cast<Index>(labels_.size()); }
  bool is_labeled(Index i) const { return labels_[static_cast<std::size_t>(i)].has_value(); }
  std::optional<ClassId> label(Index i) const { return labels_[static_cast<std::size_t>(i)]; }
  std::optional<int> label_epoch(Index i) const { return label_epochs_[static_cast<std::size_t>(i)]; }
  double rate(Index i) const { return rates_[static_cast<std::size_t>(i)]; }
  Index num_labeled() const { return num_labeled_; }
  bool all_labeled() const { return num_labeled_ == size(); }
  std::vector<Index> labeled_indices() const;

  /// Records c_i = class_id at `epoch`. u_i stays unchanged until the next
  /// update_point_rates. Throws ConfigError when i is already labeled and
  /// `force` is not set.
  void apply_label(Index i, ClassId class_id, int epoch, bool force = false);

  /// u_i = min(1, (epoch - label_epoch_i + 1) / ramp_epochs), or 1 for
  /// ramp_epochs == 0; unlabeled points get 0.
  void update_point_rates(int epoch, int ramp_epochs);

  bool operator==(const AnnotationState&) const = default;

 private:
  std::vector<std::optional<ClassId>> labels_;
  std::vector<std::optional<int>> label_epochs_;
  std::vector<double> rates_;
  Index num_labeled_ = 0;
};

AnnotationState apply_label(AnnotationState annotations, Index i, ClassId class_id, int epoch, bool force = false);
AnnotationState update_point_rates(AnnotationState annotations, int epoch, int ramp_epochs);

/// Labeled-sample counts per class, the basis for N_s and N_o.
struct ClassCounts {
  std::vector<Index> per_class;
  Index labeled = 0;

  static ClassCounts from(const AnnotationState& annotations);
  Index same(ClassId c) const {
    return c < static_cast<ClassId>(per_class.size()) ? per_class[static_cast<std::size_t>(c)] : 0;
  }
  Index other(ClassId c) const { return labeled - same(c); }
};

/// a_ij for a set of N samples, clamped below at zero.
double attraction_prior(Index i, Index j, const AnnotationState& annotations, double f, const ClassCounts& counts);

/// b_ij = 1 + u_i u_j r for labeled pairs with different classes, else 1.
double repulsion_prior(Index i, Index j, const AnnotationState& annotations, double r);

struct EmbeddingState {
  Matrix y;
  Matrix velocity;
  Matrix gains;
  int epoch = 0;
  double alpha = 1.0;
  double momentum = 0.5;

  Index size() const { return y.rows(); }
  int dims() const { return static_cast<int>(y.cols()); }
};

/// PCA mode projects onto the top principal directions and rescales each
/// axis to standard deviation 1e-2; random mode draws N(0, 1e-4^2). Falls
/// back to random (setting `warning`) when there are fewer feature columns
/// than output dimensions.
EmbeddingState init_embedding(const Matrix& features, const TsneConfig& config, std::string* warning = nullptr);

/// Attraction and repulsion terms; the gradient is 4 * (attraction - repulsion).
struct ForceTerms {
  Matrix attraction;
  Matrix repulsion;
  double attraction_normalizer = 0.0;
  double repulsion_normalizer = 0.0;
};

/// `annotations` may be null (labels inactive). Labeled mismatch repulsion
/// corrections are evaluated pair-exactly on top of the Barnes-Hut sum.
ForceTerms compute_forces(const Matrix& y, const AffinityMatrix<double>& affinities,
                          const AnnotationState* annotations, const TsneConfig& config, double alpha);

Matrix gradient(const Matrix& y, const AffinityMatrix<double>& affinities, const AnnotationState* annotations,
                const TsneConfig& config, double alpha);

/// Gain-adapted momentum update followed by recentring. Increments epoch.
void apply_update(EmbeddingState& state, const Matrix& grad, const TsneConfig& config, const Schedule& schedule);

/// One optimization epoch. Point rates are refreshed for the current epoch;
/// labels only take part once epoch >= config.s.
void step(EmbeddingState& state, const AffinityMatrix<double>& affinities, AnnotationState& annotations,
          const TsneConfig& config);

/// Exact KL(P || Q) with q_ij = t_ij / sum_kl t_kl.
double kl_divergence(const Matrix& y, const AffinityMatrix<double>& affinities);

/// One optimization session: affinities, embedding, and annotations.
class Engine {
 public:
  Engine(const Matrix& features, TsneConfig config);
  Engine(std::shared_ptr<const AffinityMatrix<double>> affinities, EmbeddingState state, TsneConfig config);

  void step();
  /// Runs until `epoch` or e_max, whichever comes first.
  void run_until(int epoch);
  bool finished() const { return state_.epoch >= config_.e_max; }

  /// Labels sample i at the current epoch.
  void apply_label(Index i, ClassId class_id, bool force = false);

  double kl() const { return kl_divergence(state_.y, *affinities_); }

  const TsneConfig& config() const { return config_; }
  const EmbeddingState& state() const { return state_; }
  EmbeddingState& mutable_state() { return state_; }
  const AnnotationState& annotations() const { return annotations_; }
  AnnotationState& mutable_annotations() { return annotations_; }
  const AffinityMatrix<double>& affinities() const { return *affinities_; }
  std::shared_ptr<const AffinityMatrix<double>> shared_affinities() const { return affinities_; }
  const std::string& init_warning() const { return init_warning_; }

 private:
  TsneConfig config_;
  std::shared_ptr<const AffinityMatrix<double>> affinities_;
  EmbeddingState state_;
  AnnotationState annotations_;
  std::string init_warning_;
};

}  // namespace sstsne
