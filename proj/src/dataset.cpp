#include "sstsne/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace sstsne {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  while (!lines.empty() && trim_cr(lines.back()).empty()) lines.pop_back();
  return lines;
}

}  // namespace

Dataset Dataset::subset(std::span<const Index> indices) const {
  Dataset out;
  out.name = name;
  out.class_names = class_names;
  out.features.resize(static_cast<Index>(indices.size()), dim());
  for (std::size_t r = 0; r < indices.size(); ++r) out.features.row(static_cast<Index>(r)) = features.row(indices[r]);
  if (has_labels()) {
    out.labels.reserve(indices.size());
    for (Index i : indices) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

void Dataset::validate() const {
  if (size() < 1 || dim() < 1) throw DataError("dataset must have at least one row and one column");
  if (!features.allFinite()) throw DataError("dataset contains non-finite feature values");
  if (has_labels()) {
    if (static_cast<Index>(labels.size()) != size()) throw DataError("label count does not match row count");
    for (ClassId c : labels)
      if (c < 0 || c >= num_classes()) throw DataError("label id out of range");
  }
}

Dataset load_features(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty feature file");

  std::vector<double> values;
  std::size_t width = 0;
  for (std::size_t row = 0; row < lines.size(); ++row) {
    const auto tokens = split_tabs(trim_cr(lines[row]));
    if (row == 0) width = tokens.size();
    if (tokens.size() != width) {
      throw DataError(path.string() + ": ragged row " + std::to_string(row + 1) + " (expected " +
                      std::to_string(width) + " columns, got " + std::to_string(tokens.size()) + ")");
    }
    for (auto tok : tokens) {
      tok = trim_cr(tok);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size()) {
        throw DataError(path.string() + ": non-numeric token '" + std::string(tok) + "' on row " +
                        std::to_string(row + 1));
      }
      if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite value on row " + std::to_string(row + 1));
      values.push_back(v);
    }
  }

  Dataset ds;
  ds.name = path.stem().string();
  ds.features = Eigen::Map<const Matrix>(values.data(), static_cast<Index>(lines.size()), static_cast<Index>(width));
  return ds;
}

LabelTable load_labels(const std::filesystem::path& path, Index n_expected) {
  const auto lines = read_lines(path);
  if (static_cast<Index>(lines.size()) != n_expected) {
    throw DataError(path.string() + ": label count mismatch (expected " + std::to_string(n_expected) + ", got " +
                    std::to_string(lines.size()) + ")");
  }
  LabelTable table;
  std::unordered_map<std::string, ClassId> lookup;
  table.ids.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string token(trim_cr(lines[i]));
    if (token.empty()) throw DataError(path.string() + ": empty label on line " + std::to_string(i + 1));
    auto [it, inserted] = lookup.try_emplace(token, static_cast<ClassId>(table.names.size()));
    if (inserted) table.names.push_back(token);
    table.ids.push_back(it->second);
  }
  return table;
}

void write_features(const std::filesystem::path& path, const Matrix& features) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (Index i = 0; i < features.rows(); ++i) {
    for (Index j = 0; j < features.cols(); ++j) {
      if (j) out << '\t';
      out << features(i, j);
    }
    out << '\n';
  }
}

void write_labels(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (ClassId c : dataset.labels) out << dataset.class_names[static_cast<std::size_t>(c)] << '\n';
}

Dataset stratified_subsample(const Dataset& dataset, Index max_n, std::uint64_t seed) {
  const int k = dataset.num_classes();
  if (!dataset.has_labels()) throw DataError("stratified_subsample needs labels");
  if (max_n < k) throw DataError("max_n must be at least the number of classes");
  const Index n = dataset.size();
  if (n <= max_n) return dataset;

  std::vector<std::vector<Index>> members(static_cast<std::size_t>(k));
  for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])].push_back(i);

  // Largest-remainder quotas; equal remainders are ordered by a seeded permutation.
  std::vector<Index> quota(static_cast<std::size_t>(k));
  std::vector<Index> remainder_num(static_cast<std::size_t>(k));
  Index assigned = 0;
  for (int c = 0; c < k; ++c) {
    const Index share = max_n * static_cast<Index>(members[static_cast<std::size_t>(c)].size());
    quota[static_cast<std::size_t>(c)] = share / n;
    remainder_num[static_cast<std::size_t>(c)] = share % n;
    assigned += quota[static_cast<std::size_t>(c)];
  }
  std::mt19937_64 rng(seed);
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return remainder_num[static_cast<std::size_t>(a)] > remainder_num[static_cast<std::size_t>(b)];
  });
  for (std::size_t t = 0; assigned < max_n; ++t, ++assigned) ++quota[static_cast<std::size_t>(order[t % order.size()])];

  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(max_n));
  for (int c = 0; c < k; ++c) {
    auto pool = members[static_cast<std::size_t>(c)];
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(quota[static_cast<std::size_t>(c)]));
    picked.insert(picked.end(), pool.begin(), pool.end());
  }
  std::sort(picked.begin(), picked.end());
  return dataset.subset(picked);
}

Dataset make_synthetic_gaussians(int k_classes, Index n_per_class, Index dim, double separation, double noise,
                                 std::uint64_t seed) {
  if (k_classes < 2) throw DataError("synthetic data needs at least 2 classes");
  if (dim < 2) throw DataError("synthetic data needs dim >= 2");
  if (n_per_class < 1) throw DataError("synthetic data needs at least one sample per class");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Matrix centers(k_classes, dim);
  for (Index c = 0; c < k_classes; ++c) {
    for (Index j = 0; j < dim; ++j) centers(c, j) = normal(rng);
    centers.row(c).normalize();
  }
  double min_dist = std::numeric_limits<double>::infinity();
  for (Index a = 0; a < k_classes; ++a)
    for (Index b = a + 1; b < k_classes; ++b) min_dist = std::min(min_dist, (centers.row(a) - centers.row(b)).norm());
  centers *= separation / min_dist;

  Dataset ds;
  ds.name = "synthetic";
  ds.features.resize(k_classes * n_per_class, dim);
  ds.labels.reserve(static_cast<std::size_t>(k_classes * n_per_class));
  for (int c = 0; c < k_classes; ++c) {
    ds.class_names.push_back("c" + std::to_string(c));
    for (Index s = 0; s < n_per_class; ++s) {
      const Index row = c * n_per_class + s;
      for (Index j = 0; j < dim; ++j) ds.features(row, j) = centers(c, j) + noise * normal(rng);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

std::vector<FoldSplit> kfold_split(Index n, int k, std::uint64_t seed) {
  if (k < 1) throw DataError("kfold_split needs k >= 1");
  if (n < k) throw DataError("kfold_split needs n >= k");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  const Index base = n / k;
  const Index extra = n % k;
  Index start = 0;
  for (int f = 0; f < k; ++f) {
    const Index len = base + (f < extra ? 1 : 0);
    auto& fold = folds[static_cast<std::size_t>(f)];
    fold.fold_id = f;
    fold.validation_indices.assign(perm.begin() + start, perm.begin() + start + len);
    std::sort(fold.validation_indices.begin(), fold.validation_indices.end());
    fold.train_indices.reserve(static_cast<std::size_t>(n - len));
    fold.train_indices.insert(fold.train_indices.end(), perm.begin(), perm.begin() + start);
    fold.train_indices.insert(fold.train_indices.end(), perm.begin() + start + len, perm.end());
    std::sort(fold.train_indices.begin(), fold.train_indices.end());
    start += len;
  }
  return folds;
}

}  // namespace sstsne
