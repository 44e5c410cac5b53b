#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sstsne/types.hpp"

namespace sstsne {

/// Feature matrix plus optional ground-truth labels. Labels are consumed by
/// the emulator and the metrics only; the embedding engine never sees them.
struct Dataset {
  std::string name;
  Matrix features;
  std::vector<ClassId> labels;
  std::vector<std::string> class_names;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
  bool has_labels() const { return !labels.empty(); }

  /// Rows (and labels) at the given indices, in the given order. The class
  /// name table is kept as-is so ids stay comparable with the parent.
  Dataset subset(std::span<const Index> indices) const;

  /// Throws DataError if any invariant is violated.
  void validate() const;
};

struct FoldSplit {
  std::vector<Index> train_indices;
  std::vector<Index> validation_indices;
  int fold_id = 0;
};

struct LabelTable {
  std::vector<ClassId> ids;
  std::vector<std::string> names;
};

/// Tab-separated decimals, one row per sample, no header.
Dataset load_features(const std::filesystem::path& path);

/// One token per line; ids assigned by first appearance.
LabelTable load_labels(const std::filesystem::path& path, Index n_expected);

void write_features(const std::filesystem::path& path, const Matrix& features);
void write_labels(const std::filesystem::path& path, const Dataset& dataset);

Dataset stratified_subsample(const Dataset& dataset, Index max_n, std::uint64_t seed);

Dataset make_synthetic_gaussians(int k_classes, Index n_per_class, Index dim, double separation,
                                 double noise, std::uint64_t seed);

std::vector<FoldSplit> kfold_split(Index n, int k, std::uint64_t seed);

}  // namespace sstsne
