#include "sstsne/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace sstsne {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'T', 'S', 'N', 'E', '0', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void put_matrix(std::ostream& out, const Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) put<double>(out, m.data()[i]);
}

Matrix get_matrix(std::istream& in, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = get<double>(in);
  return m;
}

}  // namespace

void write_checkpoint(std::ostream& out, const EmbeddingState& state, const AnnotationState& annotations) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(state.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.dims()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.epoch));
  put_matrix(out, state.y);
  put_matrix(out, state.velocity);
  put_matrix(out, state.gains);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(annotations.num_labeled()));
  for (Index i : annotations.labeled_indices()) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(i));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(*annotations.label(i)));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(*annotations.label_epoch(i)));
  }
  if (!out) throw DataError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic");
  const auto n = static_cast<Index>(get<std::uint64_t>(in));
  const auto d = static_cast<Index>(get<std::uint32_t>(in));
  const auto epoch = get<std::uint32_t>(in);
  if (d != 2 && d != 3) throw DataError("checkpoint: unsupported dimension");

  Checkpoint cp;
  cp.state.y = get_matrix(in, n, d);
  cp.state.velocity = get_matrix(in, n, d);
  cp.state.gains = get_matrix(in, n, d);
  cp.state.epoch = static_cast<int>(epoch);
  cp.annotations = AnnotationState(n);
  const auto labeled = get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < labeled; ++k) {
    const auto index = static_cast<Index>(get<std::uint64_t>(in));
    const auto cls = static_cast<ClassId>(get<std::uint32_t>(in));
    const auto at = static_cast<int>(get<std::uint32_t>(in));
    if (index >= n) throw DataError("checkpoint: annotation index out of range");
    cp.annotations.apply_label(index, cls, at);
  }
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const EmbeddingState& state,
                     const AnnotationState& annotations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_checkpoint(out, state, annotations);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace sstsne
