#pragma once

// Classifier-in-the-loop active learning: a small dropout MLP, pool-based
// sampling strategies, and an adapter that retrains on labels produced by
// the emulated t-SNE annotator.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sstsne/dataset.hpp"
#include "sstsne/emulator.hpp"
#include "sstsne/engine.hpp"

namespace sstsne {

/// input (D) -> dropout 0.25 -> dense (max(4, ceil(D/4))) ReLU -> dropout
/// 0.25 -> dense (K) softmax. Inverted dropout, Adam (lr 1e-3), batch 32.
class MlpClassifier {
 public:
  struct Parameters {
    Matrix w1;  // D x H
    Vector b1;
    Matrix w2;  // H x K
    Vector b2;
  };

  // Keep-masks for the two dropout stages, already scaled by 1/keep.
  struct DropoutMasks {
    Matrix input;
    Matrix hidden;
  };

  static constexpr double kDropout = 0.25;
  static constexpr double kLearningRate = 1e-3;
  static constexpr Index kBatchSize = 32;

  MlpClassifier(Index input_dim, int num_classes, std::uint64_t seed);

  Index input_dim() const { return params_.w1.rows(); }
  Index hidden_dim() const { return params_.w1.cols(); }
  int num_classes() const { return static_cast<int>(params_.w2.cols()); }
  Index parameter_count() const;

  const Parameters& parameters() const { return params_; }
  Parameters& mutable_parameters() { return params_; }

  /// Softmax outputs with dropout disabled.
  Matrix predict_proba(const Matrix& features) const;

  /// Mean cross-entropy; dropout disabled unless masks are given.
  double loss(const Matrix& features, std::span<const ClassId> labels, const DropoutMasks* masks = nullptr) const;
  Parameters loss_gradient(const Matrix& features, std::span<const ClassId> labels,
                           const DropoutMasks* masks = nullptr) const;

  /// Continues training from the current parameters on rows `indices` of
  /// `features` with class targets `labels` (same length as `indices`).
  /// Returns the mean training loss of each epoch.
  std::vector<double> train_incremental(const Matrix& features, std::span<const Index> indices,
                                        std::span<const ClassId> labels, int epochs, std::uint64_t seed);

  static Index hidden_width(Index input_dim);

 private:
  Parameters params_;
  Parameters adam_m_;
  Parameters adam_v_;
  std::uint64_t adam_steps_ = 0;
  std::uint64_t train_calls_ = 0;
};

double accuracy(const MlpClassifier& clf, const Matrix& features, std::span<const Index> indices,
                std::span<const ClassId> true_labels);

enum class Strategy { random, uncertainty, margin, entropy, tsne };

Strategy parse_strategy(const std::string& name);
std::string to_string(Strategy s);

/// Natural-log entropy of one probability row.
double row_entropy(const Eigen::Ref<const Vector>& p);

/// Picks min(batch, |pool|) samples from `pool`; `probs` rows are indexed by
/// sample id. Score ties resolve to the lower sample id.
std::vector<Index> select_batch(Strategy strategy, const Matrix& probs, std::span<const Index> pool, Index batch,
                                std::uint64_t seed);

struct CurvePoint {
  Index actions = 0;
  double accuracy = 0.0;
};

struct ALCurve {
  std::string strategy;
  int fold = 0;
  std::vector<CurvePoint> points;
};

struct ALConfig {
  int epochs_per_round = 50;
  Index batch = 10;
  Index budget = 400;
  int reference_epochs = 500;
  std::uint64_t seed = 0;
  int jobs = 1;
};

/// Validation accuracy of a classifier trained on the whole train split.
double reference_accuracy(const Dataset& dataset, const FoldSplit& fold, const ALConfig& config);

std::vector<ALCurve> run_active_learning(const Dataset& dataset, std::span<const FoldSplit> folds, Strategy strategy,
                                         const ALConfig& config);

/// Emulated t-SNE labeling on each fold's train split. The classifier is
/// retrained whenever cumulative actions pass a multiple of the batch size,
/// and once more when the session ends.
std::vector<ALCurve> run_tsne_strategy(const Dataset& dataset, std::span<const FoldSplit> folds,
                                       const TsneConfig& engine_config, const ALConfig& config);

inline constexpr double kNeverReached = std::numeric_limits<double>::infinity();

/// Actions at the first checkpoint reaching fraction * reference_accuracy,
/// or kNeverReached.
double actions_to_fraction(const ALCurve& curve, double reference_accuracy, double fraction = 0.8);

/// strategy,fold,actions,accuracy
void write_curves_csv(std::ostream& out, std::span<const ALCurve> curves, bool header = true);

}  // namespace sstsne
