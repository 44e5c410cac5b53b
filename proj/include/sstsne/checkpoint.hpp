#pragma once

#include <filesystem>
#include <iosfwd>

#include "sstsne/engine.hpp"

namespace sstsne {

/// Binary checkpoint, all fields little-endian:
///
///   "SSTSNE01"                       8 bytes magic
///   N u64, d u32, epoch u32
///   y, velocity, gains               N*d f64 each, row-major
///   L u64, then L x (index u64, class u32, label_epoch u32)
struct Checkpoint {
  EmbeddingState state;
  AnnotationState annotations;
};

void write_checkpoint(std::ostream& out, const EmbeddingState& state, const AnnotationState& annotations);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const EmbeddingState& state,
                     const AnnotationState& annotations);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sstsne
