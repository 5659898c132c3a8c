#include "gfn/oim.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "gfn/errors.h"

namespace gfn {

OimTable::OimTable(std::size_t dim, std::span<const PersonId> identities,
                   std::size_t queue_capacity, double momentum, double scalar)
    : dim_(dim), momentum_(momentum), scalar_(scalar), capacity_(queue_capacity) {
  if (dim == 0) throw ContractError("OimTable: dim must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw ContractError("OimTable: momentum must lie in [0, 1]");
  }
  if (!(scalar > 0.0)) throw ContractError("OimTable: scalar must be positive");
  for (PersonId id : identities) {
    if (!index_.emplace(id, ids_.size()).second) {
      throw ContractError("OimTable: duplicate identity " + std::to_string(id));
    }
    ids_.push_back(id);
  }
  prototypes_.assign(ids_.size(), Embedding(dim_, 0.0));
}

std::size_t OimTable::index_of(PersonId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw ContractError("identity " + std::to_string(id) + " is not in the OIM table");
  }
  return it->second;
}

std::vector<Embedding> OimTable::queue() const {
  if (queue_.size() < capacity_) return queue_;
  std::vector<Embedding> out;
  out.reserve(queue_.size());
  for (std::size_t n = 0; n < queue_.size(); ++n) {
    out.push_back(queue_[(head_ + n) % queue_.size()]);
  }
  return out;
}

void OimTable::update(PersonId id, std::span<const double> embedding) {
  if (embedding.size() != dim_) throw ContractError("OIM update: dimension mismatch");
  check_finite(embedding, "OIM update embedding");
  Embedding& p = prototypes_[index_of(id)];
  const Embedding e = normalized(embedding);
  for (std::size_t c = 0; c < dim_; ++c) p[c] = momentum_ * p[c] + (1.0 - momentum_) * e[c];
  p = normalized(p);
}

void OimTable::push_unlabeled(std::span<const double> embedding) {
  if (embedding.size() != dim_) throw ContractError("OIM queue: dimension mismatch");
  if (capacity_ == 0) return;
  Embedding e = normalized(embedding);
  if (queue_.size() < capacity_) {
    queue_.push_back(std::move(e));
  } else {
    queue_[head_] = std::move(e);
    head_ = (head_ + 1) % capacity_;
  }
}

void OimTable::apply_batch(std::span<const Embedding> embeddings,
                           std::span<const std::optional<PersonId>> labels) {
  if (embeddings.size() != labels.size()) {
    throw ContractError("OIM batch: embeddings and labels differ in length");
  }
  for (std::size_t n = 0; n < embeddings.size(); ++n) {
    if (labels[n]) {
      update(*labels[n], embeddings[n]);
    } else {
      push_unlabeled(embeddings[n]);
    }
  }
}

std::pair<EmbeddingStore, EmbeddingStore> OimTable::to_stores() const {
  EmbeddingStore protos(EmbeddingKind::kPerson, dim_);
  for (std::size_t r = 0; r < ids_.size(); ++r) protos.add(ids_[r], prototypes_[r]);
  EmbeddingStore q(EmbeddingKind::kPerson, dim_);
  const auto rows = queue();
  for (std::size_t r = 0; r < rows.size(); ++r) q.add(static_cast<std::int64_t>(r), rows[r]);
  return {std::move(protos), std::move(q)};
}

OimTable OimTable::from_stores(const EmbeddingStore& prototypes, const EmbeddingStore& queue,
                               std::size_t queue_capacity, double momentum, double scalar) {
  if (queue.count() > 0 && queue.dim() != prototypes.dim()) {
    throw ContractError("OIM stores disagree on dimension");
  }
  OimTable t(prototypes.dim(), prototypes.ids(), queue_capacity, momentum, scalar);
  for (std::size_t r = 0; r < t.ids_.size(); ++r) {
    t.prototypes_[r] = prototypes.embedding(t.ids_[r]);
  }
  for (std::int64_t id : queue.ids()) {
    const Embedding e = queue.embedding(id);
    if (l2_norm(e) > 0.0) t.push_unlabeled(e);
  }
  return t;
}

void oim_update(OimTable& table, std::span<const double> embedding, PersonId identity) {
  table.update(identity, embedding);
}

Embedding prototype_lookup(const OimTable& table, PersonId identity) {
  if (!table.contains(identity)) {
    throw LookupError("no prototype for identity " + std::to_string(identity));
  }
  return table.prototypes()[table.index_of(identity)];
}

OimLossResult oim_loss(std::span<const Embedding> embeddings,
                       std::span<const std::optional<PersonId>> labels,
                       const OimTable& table) {
  if (embeddings.size() != labels.size()) {
    throw ContractError("oim_loss: embeddings and labels differ in length");
  }
  const std::size_t d = table.dim();
  const auto& protos = table.prototypes();
  const std::vector<Embedding> queue = table.queue();
  const std::size_t np = protos.size();
  const double s = table.scalar();

  OimLossResult r;
  r.grad_embeddings.assign(embeddings.size(), Embedding(d, 0.0));
  std::vector<double> logits(np + queue.size());
  for (std::size_t n = 0; n < embeddings.size(); ++n) {
    if (!labels[n]) continue;
    const std::size_t target = table.index_of(*labels[n]);
    const Embedding& e = embeddings[n];
    if (e.size() != d) throw ContractError("oim_loss: dimension mismatch");
    check_finite(e, "oim_loss embedding");
    const double norm = l2_norm(e);
    if (norm == 0.0) throw DegenerateInputError("oim_loss: zero-norm embedding");
    Embedding u(d);
    for (std::size_t c = 0; c < d; ++c) u[c] = e[c] / norm;

    for (std::size_t k = 0; k < np; ++k) logits[k] = s * dot(u, protos[k]);
    for (std::size_t k = 0; k < queue.size(); ++k) logits[np + k] = s * dot(u, queue[k]);
    const auto top = std::max_element(logits.begin(), logits.end());
    const double mx = *top;
    double rest = 0.0;
    for (auto it = logits.begin(); it != logits.end(); ++it) {
      if (it != top) rest += std::exp(*it - mx);
    }
    const double z = 1.0 + rest;
    r.loss += (mx - logits[target]) + std::log1p(rest);
    ++r.num_labeled;

    // dL/du = s * sum_k (p_k - [k == target]) * v_k
    Embedding gu(d, 0.0);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      double w = std::exp(logits[k] - mx) / z;
      if (k == target) w -= 1.0;
      const Embedding& v = k < np ? protos[k] : queue[k - np];
      for (std::size_t c = 0; c < d; ++c) gu[c] += s * w * v[c];
    }
    const double proj = dot(u, gu);
    for (std::size_t c = 0; c < d; ++c) {
      r.grad_embeddings[n][c] = (gu[c] - u[c] * proj) / norm;
    }
  }
  if (r.num_labeled > 0) {
    const double inv = 1.0 / static_cast<double>(r.num_labeled);
    r.loss *= inv;
    for (auto& g : r.grad_embeddings) {
      for (double& v : g) v *= inv;
    }
  }
  return r;
}

}  // namespace gfn
