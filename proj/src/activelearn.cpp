#include "sstsne/activelearn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <mutex>
#include <thread>

namespace sstsne {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void softmax_rows(Matrix& logits) {
  for (Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

struct Forward {
  Matrix x;       // input after dropout
  Matrix h_pre;   // hidden pre-activation
  Matrix h;       // hidden after ReLU and dropout
  Matrix probs;
};

Forward forward(const MlpClassifier::Parameters& p, const Matrix& x, const MlpClassifier::DropoutMasks* masks) {
  Forward f;
  f.x = masks ? Matrix(x.cwiseProduct(masks->input)) : x;
  f.h_pre = (f.x * p.w1).rowwise() + p.b1.transpose();
  f.h = f.h_pre.cwiseMax(0.0);
  if (masks) f.h = f.h.cwiseProduct(masks->hidden);
  f.probs = (f.h * p.w2).rowwise() + p.b2.transpose();
  softmax_rows(f.probs);
  return f;
}

template <typename Fn>
void for_each_param(MlpClassifier::Parameters& a, const MlpClassifier::Parameters& b,
                    const MlpClassifier::Parameters& c, Fn&& fn) {
  fn(a.w1.array(), b.w1.array(), c.w1.array());
  fn(a.b1.array(), b.b1.array(), c.b1.array());
  fn(a.w2.array(), b.w2.array(), c.w2.array());
  fn(a.b2.array(), b.b2.array(), c.b2.array());
}

MlpClassifier::Parameters zeros_like(const MlpClassifier::Parameters& p) {
  return {Matrix::Zero(p.w1.rows(), p.w1.cols()), Vector::Zero(p.b1.size()), Matrix::Zero(p.w2.rows(), p.w2.cols()),
          Vector::Zero(p.b2.size())};
}

template <typename Job>
void run_folds(std::size_t count, int jobs, Job&& job) {
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), 1, count);
  if (workers <= 1) {
    for (std::size_t f = 0; f < count; ++f) job(f);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t f = next++; f < count; f = next++) {
        try {
          job(f);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<Index> seed_per_class(const Dataset& dataset, std::span<const Index> train, std::mt19937_64& rng) {
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(dataset.num_classes()));
  for (Index i : train) members[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])].push_back(i);
  std::vector<Index> seeds;
  for (const auto& m : members) {
    if (m.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
    seeds.push_back(m[pick(rng)]);
  }
  return seeds;
}

std::vector<ClassId> labels_of(const Dataset& dataset, std::span<const Index> indices) {
  std::vector<ClassId> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(dataset.labels[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

// --- classifier -------------------------------------------------------------

Index MlpClassifier::hidden_width(Index input_dim) { return std::max<Index>(4, (input_dim + 3) / 4); }

MlpClassifier::MlpClassifier(Index input_dim, int num_classes, std::uint64_t seed) {
  if (input_dim < 1 || num_classes < 1) throw ConfigError("MlpClassifier: empty input or output layer");
  const Index hidden = hidden_width(input_dim);
  std::mt19937_64 rng(seed);
  auto glorot = [&](Index fan_in, Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix w(fan_in, fan_out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    return w;
  };
  params_.w1 = glorot(input_dim, hidden);
  params_.b1 = Vector::Zero(hidden);
  params_.w2 = glorot(hidden, num_classes);
  params_.b2 = Vector::Zero(num_classes);
  adam_m_ = zeros_like(params_);
  adam_v_ = zeros_like(params_);
}

Index MlpClassifier::parameter_count() const {
  return params_.w1.size() + params_.b1.size() + params_.w2.size() + params_.b2.size();
}

Matrix MlpClassifier::predict_proba(const Matrix& features) const { return forward(params_, features, nullptr).probs; }

double MlpClassifier::loss(const Matrix& features, std::span<const ClassId> labels, const DropoutMasks* masks) const {
  const Matrix probs = forward(params_, features, masks).probs;
  double total = 0.0;
  for (Index i = 0; i < probs.rows(); ++i)
    total -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
  return total / static_cast<double>(probs.rows());
}

MlpClassifier::Parameters MlpClassifier::loss_gradient(const Matrix& features, std::span<const ClassId> labels,
                                                       const DropoutMasks* masks) const {
  const Forward f = forward(params_, features, masks);
  const double batch = static_cast<double>(features.rows());
  Matrix dlogits = f.probs;
  for (Index i = 0; i < dlogits.rows(); ++i) dlogits(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  dlogits /= batch;

  Parameters g;
  g.w2 = f.h.transpose() * dlogits;
  g.b2 = dlogits.colwise().sum().transpose();
  Matrix dh = dlogits * params_.w2.transpose();
  if (masks) dh = dh.cwiseProduct(masks->hidden);
  dh = dh.cwiseProduct((f.h_pre.array() > 0.0).cast<double>().matrix());
  g.w1 = f.x.transpose() * dh;
  g.b1 = dh.colwise().sum().transpose();
  return g;
}

std::vector<double> MlpClassifier::train_incremental(const Matrix& features, std::span<const Index> indices,
                                                     std::span<const ClassId> labels, int epochs,
                                                     std::uint64_t seed) {
  if (indices.empty()) throw DataError("train_incremental: no labeled samples");
  if (indices.size() != labels.size()) throw DataError("train_incremental: index/label length mismatch");
  for (ClassId c : labels)
    if (c < 0 || c >= num_classes()) throw DataError("train_incremental: class id out of range");

  std::mt19937_64 rng(mix(seed, train_calls_++));
  std::bernoulli_distribution keep(1.0 - kDropout);
  const double scale = 1.0 / (1.0 - kDropout);
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;

  std::vector<std::size_t> order(indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> epoch_losses;
  epoch_losses.reserve(static_cast<std::size_t>(std::max(epochs, 0)));

  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(kBatchSize)) {
      const std::size_t len = std::min(order.size() - start, static_cast<std::size_t>(kBatchSize));
      Matrix x(static_cast<Index>(len), input_dim());
      std::vector<ClassId> y(len);
      for (std::size_t b = 0; b < len; ++b) {
        x.row(static_cast<Index>(b)) = features.row(indices[order[start + b]]);
        y[b] = labels[order[start + b]];
      }
      DropoutMasks masks{Matrix(x.rows(), x.cols()), Matrix(x.rows(), hidden_dim())};
      for (Index i = 0; i < masks.input.size(); ++i) masks.input.data()[i] = keep(rng) ? scale : 0.0;
      for (Index i = 0; i < masks.hidden.size(); ++i) masks.hidden.data()[i] = keep(rng) ? scale : 0.0;

      loss_sum += loss(x, y, &masks) * static_cast<double>(len);
      const Parameters g = loss_gradient(x, y, &masks);

      ++adam_steps_;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(adam_steps_));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(adam_steps_));
      for_each_param(adam_m_, g, g, [&](auto m, auto grad, auto) { m = beta1 * m + (1.0 - beta1) * grad; });
      for_each_param(adam_v_, g, g, [&](auto v, auto grad, auto) { v = beta2 * v + (1.0 - beta2) * grad.square(); });
      for_each_param(params_, adam_m_, adam_v_, [&](auto w, auto m, auto v) {
        w -= kLearningRate * (m / c1) / ((v / c2).sqrt() + eps);
      });
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
  }
  return epoch_losses;
}

double accuracy(const MlpClassifier& clf, const Matrix& features, std::span<const Index> indices,
                std::span<const ClassId> true_labels) {
  if (indices.empty()) return 0.0;
  Matrix x(static_cast<Index>(indices.size()), features.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) x.row(static_cast<Index>(r)) = features.row(indices[r]);
  const Matrix probs = clf.predict_proba(x);
  Index correct = 0;
  for (Index r = 0; r < probs.rows(); ++r) {
    Index arg = 0;
    probs.row(r).maxCoeff(&arg);
    if (static_cast<ClassId>(arg) == true_labels[static_cast<std::size_t>(indices[static_cast<std::size_t>(r)])])
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

// --- strategies ---------------------------------------------------------------

Strategy parse_strategy(const std::string& name) {
  if (name == "random") return Strategy::random;
  if (name == "uncertainty") return Strategy::uncertainty;
  if (name == "margin") return Strategy::margin;
  if (name == "entropy") return Strategy::entropy;
  if (name == "tsne") return Strategy::tsne;
  throw ConfigError("unknown strategy '" + name + "' (expected random|uncertainty|margin|entropy|tsne)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::uncertainty: return "uncertainty";
    case Strategy::margin: return "margin";
    case Strategy::entropy: return "entropy";
    case Strategy::tsne: return "tsne";
  }
  return "unknown";
}

double row_entropy(const Eigen::Ref<const Vector>& p) {
  double h = 0.0;
  for (Index k = 0; k < p.size(); ++k)
    if (p(k) > 0.0) h -= p(k) * std::log(p(k));
  return h;
}

std::vector<Index> select_batch(Strategy strategy, const Matrix& probs, std::span<const Index> pool, Index batch,
                                std::uint64_t seed) {
  if (pool.empty()) throw DataError("select_batch: empty pool");
  const std::size_t take = std::min(static_cast<std::size_t>(std::max<Index>(batch, 0)), pool.size());

  if (strategy == Strategy::random) {
    std::vector<Index> shuffled(pool.begin(), pool.end());
    std::mt19937_64 rng(seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    shuffled.resize(take);
    return shuffled;
  }
  if (strategy == Strategy::tsne) throw ConfigError("select_batch: the tsne strategy does not sample from a pool");

  // Lower score = picked first.
  std::vector<std::pair<double, Index>> scored;
  scored.reserve(pool.size());
  for (Index i : pool) {
    const Vector row = probs.row(i).transpose();
    double score = 0.0;
    switch (strategy) {
      case Strategy::uncertainty: score = row.maxCoeff(); break;
      case Strategy::margin: {
        double top1 = -1.0, top2 = 0.0;
        for (Index k = 0; k < row.size(); ++k) {
          if (row(k) > top1) {
            top2 = std::max(top2, top1);
            top1 = row(k);
          } else if (row(k) > top2) {
            top2 = row(k);
          }
        }
        score = top1 - top2;
        break;
      }
      case Strategy::entropy: score = -row_entropy(row); break;
      default: break;
    }
    scored.emplace_back(score, i);
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end());
  std::vector<Index> out;
  out.reserve(take);
  for (std::size_t t = 0; t < take; ++t) out.push_back(scored[t].second);
  return out;
}

// --- experiment loops ---------------------------------------------------------

double reference_accuracy(const Dataset& dataset, const FoldSplit& fold, const ALConfig& config) {
  MlpClassifier clf(dataset.dim(), dataset.num_classes(), mix(config.seed, 1000 + fold.fold_id));
  const auto y = labels_of(dataset, fold.train_indices);
  clf.train_incremental(dataset.features, fold.train_indices, y, config.reference_epochs,
                        mix(config.seed, 2000 + fold.fold_id));
  return accuracy(clf, dataset.features, fold.validation_indices, dataset.labels);
}

std::vector<ALCurve> run_active_learning(const Dataset& dataset, std::span<const FoldSplit> folds, Strategy strategy,
                                         const ALConfig& config) {
  if (!dataset.has_labels()) throw DataError("active learning needs ground-truth labels");
  if (strategy == Strategy::tsne) throw ConfigError("use run_tsne_strategy for the tsne strategy");
  std::vector<ALCurve> curves(folds.size());

  run_folds(folds.size(), config.jobs, [&](std::size_t f) {
    const FoldSplit& fold = folds[f];
    std::mt19937_64 rng(mix(config.seed, 3000 + fold.fold_id));
    std::vector<Index> labeled = seed_per_class(dataset, fold.train_indices, rng);
    std::vector<char> is_labeled(static_cast<std::size_t>(dataset.size()), 0);
    for (Index i : labeled) is_labeled[static_cast<std::size_t>(i)] = 1;

    MlpClassifier clf(dataset.dim(), dataset.num_classes(), mix(config.seed, 4000 + fold.fold_id));
    ALCurve curve{to_string(strategy), fold.fold_id, {}};
    for (std::uint64_t round = 0;; ++round) {
      clf.train_incremental(dataset.features, labeled, labels_of(dataset, labeled), config.epochs_per_round,
                            mix(config.seed, 5000 + fold.fold_id));
      const auto actions = static_cast<Index>(labeled.size());
      curve.points.push_back({actions, accuracy(clf, dataset.features, fold.validation_indices, dataset.labels)});

      std::vector<Index> pool;
      for (Index i : fold.train_indices)
        if (!is_labeled[static_cast<std::size_t>(i)]) pool.push_back(i);
      if (actions >= config.budget || pool.empty()) break;

      const Matrix probs = strategy == Strategy::random ? Matrix() : clf.predict_proba(dataset.features);
      const Index batch = std::min(config.batch, config.budget - actions);
      for (Index i : select_batch(strategy, probs, pool, batch, mix(config.seed, (round << 8) + fold.fold_id))) {
        labeled.push_back(i);
        is_labeled[static_cast<std::size_t>(i)] = 1;
      }
    }
    curves[f] = std::move(curve);
  });
  return curves;
}

std::vector<ALCurve> run_tsne_strategy(const Dataset& dataset, std::span<const FoldSplit> folds,
                                       const TsneConfig& engine_config, const ALConfig& config) {
  if (!dataset.has_labels()) throw DataError("active learning needs ground-truth labels");
  std::vector<ALCurve> curves(folds.size());

  run_folds(folds.size(), config.jobs, [&](std::size_t f) {
    const FoldSplit& fold = folds[f];
    const Dataset train = dataset.subset(fold.train_indices);
    TsneConfig cfg = engine_config;
    cfg.seed = mix(engine_config.seed, 6000 + fold.fold_id);
    Engine engine(train.features, cfg);

    MlpClassifier clf(dataset.dim(), dataset.num_classes(), mix(config.seed, 4000 + fold.fold_id));
    ALCurve curve{to_string(Strategy::tsne), fold.fold_id, {}};
    Index last_recorded = 0;

    auto retrain_and_record = [&](const Engine& eng, Index actions) {
      std::vector<Index> rows;
      std::vector<ClassId> targets;
      for (Index i = 0; i < eng.annotations().size(); ++i) {
        if (const auto c = eng.annotations().label(i)) {
          rows.push_back(fold.train_indices[static_cast<std::size_t>(i)]);
          targets.push_back(*c);
        }
      }
      clf.train_incremental(dataset.features, rows, targets, config.epochs_per_round,
                            mix(config.seed, 5000 + fold.fold_id));
      curve.points.push_back({actions, accuracy(clf, dataset.features, fold.validation_indices, dataset.labels)});
      last_recorded = actions;
    };

    SessionOptions options;
    options.stop = [&](const Engine& eng, const ActionLog& log) {
      const Index actions = log.cumulative_actions();
      const Index before = actions - log.events().back().actions_spent;
      if (actions / config.batch > before / config.batch) retrain_and_record(eng, actions);
      return actions >= config.budget;
    };
    const ActionLog log = run_session(engine, train.labels, options);
    if (log.cumulative_actions() > last_recorded) retrain_and_record(engine, log.cumulative_actions());
    curves[f] = std::move(curve);
  });
  return curves;
}

double actions_to_fraction(const ALCurve& curve, double reference_accuracy, double fraction) {
  if (curve.points.empty()) throw DataError("actions_to_fraction: empty curve");
  const double target = fraction * reference_accuracy;
  for (const auto& p : curve.points)
    if (p.accuracy >= target) return static_cast<double>(p.actions);
  return kNeverReached;
}

void write_curves_csv(std::ostream& out, std::span<const ALCurve> curves, bool header) {
  if (header) out << "strategy,fold,actions,accuracy\n";
  for (const auto& c : curves)
    for (const auto& p : c.points) out << c.strategy << ',' << c.fold << ',' << p.actions << ',' << p.accuracy << '\n';
}

}  // namespace sstsne
