#include "gfn/embedding_store.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gfn/data.h"
#include "gfn/errors.h"
#include "json.hpp"

namespace gfn {

using nlohmann::json;

EmbeddingStore::EmbeddingStore(EmbeddingKind kind, std::size_t dim)
    : kind_(kind), dim_(dim) {
  if (dim == 0) throw ContractError("embedding store dim must be > 0");
}

void EmbeddingStore::add(std::int64_t id, std::span<const float> row) {
  if (row.size() != dim_) {
    throw ContractError("embedding row for id " + std::to_string(id) + " has dim " +
                        std::to_string(row.size()) + ", expected " + std::to_string(dim_));
  }
  if (!index_.emplace(id, ids_.size()).second) {
    throw ContractError("duplicate embedding id " + std::to_string(id));
  }
  ids_.push_back(id);
  data_.insert(data_.end(), row.begin(), row.end());
}

void EmbeddingStore::add(std::int64_t id, std::span<const double> row) {
  std::vector<float> f(row.begin(), row.end());
  add(id, std::span<const float>(f));
}

std::span<const float> EmbeddingStore::row(std::int64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw LookupError("no embedding for id " + std::to_string(id));
  }
  return std::span<const float>(data_).subspan(it->second * dim_, dim_);
}

Embedding EmbeddingStore::embedding(std::int64_t id) const {
  auto r = row(id);
  return Embedding(r.begin(), r.end());
}

namespace {

std::filesystem::path payload_path(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p.replace_extension(".bin");
  return p;
}

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& manifest_path) {
  const auto bin = payload_path(manifest_path);
  json manifest = {{"kind", store.kind() == EmbeddingKind::kPerson ? "person" : "scene"},
                   {"dim", store.dim()},
                   {"count", store.count()},
                   {"dtype", "f32le"},
                   {"ids", store.ids()},
                   {"payload", bin.filename().string()}};
  write_text_file(manifest_path, manifest.dump(1) + "\n");

  std::string bytes(store.payload().size() * 4, '\0');
  for (std::size_t i = 0; i < store.payload().size(); ++i) {
    const std::uint32_t le = to_little_endian(std::bit_cast<std::uint32_t>(store.payload()[i]));
    std::memcpy(bytes.data() + 4 * i, &le, 4);
  }
  write_text_file(bin, bytes);
}

EmbeddingStore load_embeddings(const std::filesystem::path& manifest_path) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw LoadError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<std::int64_t> ids;
  std::string kind;
  std::string payload_name;
  try {
    dim = manifest.at("dim").get<std::size_t>();
    count = manifest.at("count").get<std::size_t>();
    ids = manifest.at("ids").get<std::vector<std::int64_t>>();
    kind = manifest.at("kind").get<std::string>();
    payload_name = manifest.value("payload", payload_path(manifest_path).filename().string());
    if (manifest.at("dtype").get<std::string>() != "f32le") {
      throw LoadError(manifest_path.string() + ": unsupported dtype");
    }
  } catch (const json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }
  if (kind != "person" && kind != "scene") {
    throw LoadError(manifest_path.string() + ": kind must be person or scene");
  }
  if (ids.size() != count) {
    throw CorruptionError(manifest_path.string() + ": id list length " +
                          std::to_string(ids.size()) + " != count " + std::to_string(count));
  }

  const std::string bytes = read_text_file(manifest_path.parent_path() / payload_name);
  if (bytes.size() != count * dim * 4) {
    throw CorruptionError(manifest_path.string() + ": payload has " +
                          std::to_string(bytes.size()) + " bytes, manifest implies " +
                          std::to_string(count * dim * 4));
  }

  EmbeddingStore store(kind == "person" ? EmbeddingKind::kPerson : EmbeddingKind::kScene, dim);
  std::vector<float> row(dim);
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      std::uint32_t le;
      std::memcpy(&le, bytes.data() + 4 * (r * dim + c), 4);
      row[c] = std::bit_cast<float>(to_little_endian(le));
    }
    try {
      store.add(ids[r], std::span<const float>(row));
    } catch (const ContractError& e) {
      throw CorruptionError(manifest_path.string() + ": " + e.what());
    }
  }
  return store;
}

}  // namespace gfn
