#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gfn/core_math.h"

namespace gfn {

enum class EmbeddingKind { kPerson, kScene };

// Row-major count x dim matrix of f32 embeddings keyed by id.
//
// On disk this is a JSON manifest plus a raw little-endian f32 payload:
//   foo.json  {"kind", "dim", "count", "dtype": "f32le", "ids", "payload"}
//   foo.bin   count * dim * 4 bytes
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(EmbeddingKind kind, std::size_t dim);

  EmbeddingKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return ids_.size(); }
  const std::vector<std::int64_t>& ids() const { return ids_; }
  const std::vector<float>& payload() const { return data_; }

  // Appends a row; ids must be unique and rows must have `dim` entries.
  void add(std::int64_t id, std::span<const float> row);
  void add(std::int64_t id, std::span<const double> row);

  bool contains(std::int64_t id) const { return index_.count(id) != 0; }
  std::span<const float> row(std::int64_t id) const;  // LookupError if absent
  Embedding embedding(std::int64_t id) const;          // widened to double

  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
    return a.kind_ == b.kind_ && a.dim_ == b.dim_ && a.ids_ == b.ids_ &&
           a.data_ == b.data_;
  }

 private:
  EmbeddingKind kind_ = EmbeddingKind::kPerson;
  std::size_t dim_ = 0;
  std::vector<std::int64_t> ids_;
  std::vector<float> data_;
  std::map<std::int64_t, std::size_t> index_;
};

// Writes `manifest_path` and its sibling payload (same stem, ".bin").
void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& manifest_path);

// Throws CorruptionError when the payload size disagrees with the manifest.
EmbeddingStore load_embeddings(const std::filesystem::path& manifest_path);

}  // namespace gfn
