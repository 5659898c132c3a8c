#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gfn/core_math.h"
#include "gfn/data.h"
#include "gfn/embedding_store.h"

namespace gfn {

// Per-identity prototype table plus a circular queue of unlabeled
// embeddings. Prototypes start at zero and become unit vectors on their
// first update.
class OimTable {
 public:
  static constexpr double kDefaultMomentum = 0.5;
  static constexpr double kDefaultScalar = 30.0;
  static constexpr std::size_t kDefaultQueueSize = 5000;

  OimTable() = default;
  OimTable(std::size_t dim, std::span<const PersonId> identities,
           std::size_t queue_capacity = kDefaultQueueSize,
           double momentum = kDefaultMomentum, double scalar = kDefaultScalar);

  std::size_t dim() const { return dim_; }
  double momentum() const { return momentum_; }
  double scalar() const { return scalar_; }
  std::size_t queue_capacity() const { return capacity_; }
  std::size_t num_identities() const { return ids_.size(); }
  const std::vector<PersonId>& identities() const { return ids_; }
  const std::vector<Embedding>& prototypes() const { return prototypes_; }

  bool contains(PersonId id) const { return index_.count(id) != 0; }
  // Row of `id` in prototypes(); ContractError if absent.
  std::size_t index_of(PersonId id) const;

  // Queue contents, oldest first.
  std::vector<Embedding> queue() const;
  std::size_t queue_size() const { return queue_.size(); }

  // prototype <- normalize(m * prototype + (1 - m) * embedding)
  void update(PersonId id, std::span<const double> embedding);
  void push_unlabeled(std::span<const double> embedding);

  // Labeled rows update their prototype, unlabeled rows enter the queue, in
  // row order.
  void apply_batch(std::span<const Embedding> embeddings,
                   std::span<const std::optional<PersonId>> labels);

  // Prototypes keyed by person id; queue rows keyed 0..n-1, oldest first.
  std::pair<EmbeddingStore, EmbeddingStore> to_stores() const;
  static OimTable from_stores(const EmbeddingStore& prototypes, const EmbeddingStore& queue,
                              std::size_t queue_capacity = kDefaultQueueSize,
                              double momentum = kDefaultMomentum,
                              double scalar = kDefaultScalar);

 private:
  std::size_t dim_ = 0;
  double momentum_ = kDefaultMomentum;
  double scalar_ = kDefaultScalar;
  std::size_t capacity_ = kDefaultQueueSize;
  std::vector<PersonId> ids_;
  std::map<PersonId, std::size_t> index_;
  std::vector<Embedding> prototypes_;
  std::vector<Embedding> queue_;  // ring storage
  std::size_t head_ = 0;          // next write slot once full
};

void oim_update(OimTable& table, std::span<const double> embedding, PersonId identity);

// Current prototype, by value (no gradient path). LookupError if unknown.
Embedding prototype_lookup(const OimTable& table, PersonId identity);

struct OimLossResult {
  double loss = 0.0;
  std::size_t num_labeled = 0;
  std::vector<Embedding> grad_embeddings;  // zero rows for unlabeled inputs
};

// Mean over labeled rows of the cross-entropy of
//   scalar * [cos(e, prototypes) || cos(e, queue)]
// against the row's own prototype. Embeddings are normalized here; the table
// is read-only. Unlabeled rows contribute nothing.
OimLossResult oim_loss(std::span<const Embedding> embeddings,
                       std::span<const std::optional<PersonId>> labels,
                       const OimTable& table);

}  // namespace gfn
