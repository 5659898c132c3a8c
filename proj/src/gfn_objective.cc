#include "gfn/gfn_objective.h"

#include <algorithm>
#include <map>
#include <utility>

#include "gfn/errors.h"

namespace gfn {

const char* to_string(GfnObjective objective) {
  switch (objective) {
    case GfnObjective::kBaseline:
      return "baseline";
    case GfnObjective::kCombined:
      return "combined";
    case GfnObjective::kSceneOnly:
      return "scene_only";
  }
  return "combined";
}

const char* to_string(QuerySource source) {
  return source == QuerySource::kBatch ? "batch" : "prototype";
}

const char* to_string(LogisticOrientation orientation) {
  return orientation == LogisticOrientation::kIncreasing ? "increasing" : "paper_literal";
}

GfnObjective parse_objective(const std::string& name) {
  if (name == "baseline") return GfnObjective::kBaseline;
  if (name == "combined") return GfnObjective::kCombined;
  if (name == "scene_only") return GfnObjective::kSceneOnly;
  throw ConfigError("unknown GFN objective '" + name + "'");
}

QuerySource parse_query_source(const std::string& name) {
  if (name == "batch") return QuerySource::kBatch;
  if (name == "prototype") return QuerySource::kPrototype;
  throw ConfigError("unknown query source '" + name + "'");
}

LogisticOrientation parse_orientation(const std::string& name) {
  if (name == "increasing") return LogisticOrientation::kIncreasing;
  if (name == "paper_literal") return LogisticOrientation::kDecreasing;
  throw ConfigError("unknown logistic orientation '" + name + "'");
}

void GfnConfig::validate() const {
  if (!(tau > 0.0) || !(beta > 0.0) || !(alpha > 0.0)) {
    throw ConfigError("GFN temperatures tau, beta and alpha must be > 0");
  }
}

int indicator_qs(const DatasetBundle& bundle, AnnId person, SceneId scene) {
  const auto& ann = bundle.annotation(person);
  if (!ann.person_id) {
    throw ContractError("indicator_qs: annotation " + std::to_string(person) +
                        " has no known identity");
  }
  return bundle.identities_in(scene).count(*ann.person_id) ? 1 : 0;
}

int indicator_ss(const DatasetBundle& bundle, SceneId a, SceneId b) {
  const auto& ia = bundle.identities_in(a);
  const auto& ib = bundle.identities_in(b);
  for (PersonId pid : ia) {
    if (ib.count(pid)) return 1;
  }
  return 0;
}

IndicatorMatrix query_scene_indicator(std::span<const PersonId> anchor_identities,
                                      std::span<const std::set<PersonId>> scene_identities) {
  IndicatorMatrix m(anchor_identities.size(),
                    std::vector<std::uint8_t>(scene_identities.size(), 0));
  for (std::size_t i = 0; i < anchor_identities.size(); ++i) {
    for (std::size_t k = 0; k < scene_identities.size(); ++k) {
      m[i][k] = scene_identities[k].count(anchor_identities[i]) ? 1 : 0;
    }
  }
  return m;
}

IndicatorMatrix scene_scene_indicator(std::span<const std::set<PersonId>> scene_identities) {
  const std::size_t m = scene_identities.size();
  IndicatorMatrix out(m, std::vector<std::uint8_t>(m, 0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      for (PersonId pid : scene_identities[i]) {
        if (scene_identities[j].count(pid)) {
          out[i][j] = 1;
          break;
        }
      }
    }
  }
  return out;
}

PairIndex query_scene_pairs(const IndicatorMatrix& indicator) {
  PairIndex index;
  for (std::size_t i = 0; i < indicator.size(); ++i) {
    const auto& row = indicator[i];
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!row[j]) continue;
      PositivePair p{i, j, {}};
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (k == j || !row[k]) p.candidates.push_back(k);
      }
      index.pairs.push_back(std::move(p));
    }
  }
  return index;
}

PairIndex scene_scene_pairs(const IndicatorMatrix& indicator) {
  PairIndex index;
  for (std::size_t i = 0; i < indicator.size(); ++i) {
    const auto& row = indicator[i];
    if (row.size() != indicator.size()) {
      throw ContractError("scene_scene_pairs: indicator must be square");
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (i == j || !row[j]) continue;
      PositivePair p{i, j, {}};
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (k == i) continue;
        if (k == j || !row[k]) p.candidates.push_back(k);
      }
      index.pairs.push_back(std::move(p));
    }
  }
  return index;
}

namespace {

std::size_t positive_slot(const PositivePair& p, std::size_t num_candidates_total) {
  std::size_t slot = p.candidates.size();
  for (std::size_t c = 0; c < p.candidates.size(); ++c) {
    if (p.candidates[c] >= num_candidates_total) {
      throw ContractError("pair index references candidate " +
                          std::to_string(p.candidates[c]) + " beyond the candidate pool");
    }
    if (p.candidates[c] == p.positive) slot = c;
  }
  if (slot == p.candidates.size()) {
    throw ContractError("positive " + std::to_string(p.positive) +
                        " is absent from its candidate set");
  }
  return slot;
}

void check_mask(std::span<const std::uint8_t> mask, std::size_t n, const char* what) {
  if (!mask.empty() && mask.size() != n) {
    throw ContractError(std::string(what) + " stop mask size mismatch");
  }
}

bool stopped(std::span<const std::uint8_t> mask, std::size_t i) {
  return !mask.empty() && mask[i] != 0;
}

void add_into(Embedding& acc, const Embedding& g, double scale) {
  for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += scale * g[c];
}

// Shared path for the two single-space objectives: anchors and candidates
// are plain embeddings (persons vs scenes, or scenes vs scenes).
void accumulate_plain(std::span<const Embedding> anchors, std::span<const Embedding> pool,
                      const PairIndex& pairs, double tau, std::span<const std::uint8_t> pool_stop,
                      double& loss, std::vector<Embedding>& grad_anchor,
                      std::vector<Embedding>& grad_pool) {
  std::vector<Embedding> cands;
  StopMask mask;
  for (const auto& p : pairs.pairs) {
    if (p.anchor >= anchors.size()) throw ContractError("pair anchor out of range");
    const std::size_t slot = positive_slot(p, pool.size());
    cands.clear();
    mask.clear();
    for (std::size_t k : p.candidates) {
      cands.push_back(pool[k]);
      mask.push_back(stopped(pool_stop, k) ? 1 : 0);
    }
    const PairLossResult r = contrastive_pair_loss(anchors[p.anchor], cands, slot, tau, mask);
    loss += r.loss;
    add_into(grad_anchor[p.anchor], r.grad_anchor, 1.0);
    for (std::size_t c = 0; c < p.candidates.size(); ++c) {
      add_into(grad_pool[p.candidates[c]], r.grad_candidates[c], 1.0);
    }
  }
}

void apply_reduction(GfnLossResult& r, Reduction reduction) {
  if (reduction != Reduction::kMean || r.num_pairs == 0) return;
  const double s = 1.0 / static_cast<double>(r.num_pairs);
  r.loss *= s;
  for (auto* group : {&r.grad_persons, &r.grad_scenes}) {
    for (auto& g : *group) {
      for (double& v : g) v *= s;
    }
  }
  for (double& v : r.grad_gamma) v *= s;
  for (double& v : r.grad_delta) v *= s;
}

std::size_t common_dim(std::span<const Embedding> a, std::span<const Embedding> b) {
  std::size_t d = 0;
  for (auto group : {a, b}) {
    for (const auto& e : group) {
      if (d == 0) d = e.size();
      if (e.size() != d || d == 0) throw ContractError("embedding dimension mismatch");
    }
  }
  return d;
}

}  // namespace

GfnLossResult baseline_gfn_loss(std::span<const Embedding> persons,
                                std::span<const Embedding> scenes, const PairIndex& pairs,
                                double tau, Reduction reduction,
                                std::span<const std::uint8_t> person_stop,
                                std::span<const std::uint8_t> scene_stop) {
  check_mask(person_stop, persons.size(), "person");
  check_mask(scene_stop, scenes.size(), "scene");
  const std::size_t d = common_dim(persons, scenes);
  GfnLossResult r;
  r.num_pairs = pairs.pairs.size();
  r.grad_persons.assign(persons.size(), Embedding(d, 0.0));
  r.grad_scenes.assign(scenes.size(), Embedding(d, 0.0));
  accumulate_plain(persons, scenes, pairs, tau, scene_stop, r.loss, r.grad_persons,
                   r.grad_scenes);
  for (std::size_t i = 0; i < persons.size(); ++i) {
    if (stopped(person_stop, i)) std::fill(r.grad_persons[i].begin(), r.grad_persons[i].end(), 0.0);
  }
  apply_reduction(r, reduction);
  return r;
}

GfnLossResult scene_only_gfn_loss(std::span<const Embedding> scenes, const PairIndex& pairs,
                                  double tau, Reduction reduction,
                                  std::span<const std::uint8_t> scene_stop) {
  check_mask(scene_stop, scenes.size(), "scene");
  const std::size_t d = common_dim(scenes, {});
  GfnLossResult r;
  r.num_pairs = pairs.pairs.size();
  r.grad_scenes.assign(scenes.size(), Embedding(d, 0.0));
  std::vector<Embedding> grad_anchor(scenes.size(), Embedding(d, 0.0));
  accumulate_plain(scenes, scenes, pairs, tau, scene_stop, r.loss, grad_anchor, r.grad_scenes);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (stopped(scene_stop, i)) {
      std::fill(r.grad_scenes[i].begin(), r.grad_scenes[i].end(), 0.0);
    } else {
      add_into(r.grad_scenes[i], grad_anchor[i], 1.0);
    }
  }
  apply_reduction(r, reduction);
  return r;
}

GfnLossResult combined_gfn_loss(std::span<const Embedding> persons,
                                std::span<const Embedding> scenes,
                                std::span<const std::size_t> own_scene,
                                const PairIndex& pairs, const FusionParams& params,
                                double tau, double beta, Reduction reduction,
                                std::span<const std::uint8_t> person_stop,
                                std::span<const std::uint8_t> scene_stop) {
  check_mask(person_stop, persons.size(), "person");
  check_mask(scene_stop, scenes.size(), "scene");
  const std::size_t d = common_dim(persons, scenes);
  if (own_scene.size() != persons.size()) {
    throw ContractError("combined_gfn_loss: own_scene must map every person");
  }

  GfnLossResult r;
  r.num_pairs = pairs.pairs.size();
  r.grad_persons.assign(persons.size(), Embedding(d, 0.0));
  r.grad_scenes.assign(scenes.size(), Embedding(d, 0.0));
  r.grad_gamma.assign(params.dim(), 0.0);
  r.grad_delta.assign(params.dim(), 0.0);
  if (pairs.pairs.empty()) return r;

  // Distinct (person, scene) fusion inputs, in key order.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> rows;
  std::vector<std::size_t> slots(pairs.pairs.size());
  for (std::size_t n = 0; n < pairs.pairs.size(); ++n) {
    const auto& p = pairs.pairs[n];
    if (p.anchor >= persons.size()) throw ContractError("pair anchor out of range");
    if (own_scene[p.anchor] >= scenes.size()) {
      throw ContractError("own scene of person " + std::to_string(p.anchor) + " out of range");
    }
    slots[n] = positive_slot(p, scenes.size());
    rows.emplace(std::make_pair(p.anchor, own_scene[p.anchor]), 0);
    for (std::size_t k : p.candidates) rows.emplace(std::make_pair(p.anchor, k), 0);
  }
  std::vector<Embedding> xs;
  std::vector<Embedding> ys;
  xs.reserve(rows.size());
  ys.reserve(rows.size());
  for (auto& [key, row] : rows) {
    row = xs.size();
    xs.push_back(persons[key.first]);
    ys.push_back(scenes[key.second]);
  }

  FusionBatch trace = fuse_forward(xs, ys, params, beta);
  std::vector<Embedding> grad_fused(rows.size(), Embedding(d, 0.0));

  std::vector<Embedding> cands;
  for (std::size_t n = 0; n < pairs.pairs.size(); ++n) {
    const auto& p = pairs.pairs[n];
    const std::size_t anchor_row = rows.at({p.anchor, own_scene[p.anchor]});
    cands.clear();
    for (std::size_t k : p.candidates) cands.push_back(trace.output[rows.at({p.anchor, k})]);
    const PairLossResult pr = contrastive_pair_loss(trace.output[anchor_row], cands, slots[n], tau);
    r.loss += pr.loss;
    add_into(grad_fused[anchor_row], pr.grad_anchor, 1.0);
    for (std::size_t c = 0; c < p.candidates.size(); ++c) {
      add_into(grad_fused[rows.at({p.anchor, p.candidates[c]})], pr.grad_candidates[c], 1.0);
    }
  }

  const FusionGrads fg = fuse_backward(trace, xs, ys, params, beta, grad_fused);
  for (const auto& [key, row] : rows) {
    if (!stopped(person_stop, key.first)) add_into(r.grad_persons[key.first], fg.grad_x[row], 1.0);
    if (!stopped(scene_stop, key.second)) add_into(r.grad_scenes[key.second], fg.grad_y[row], 1.0);
  }
  r.grad_gamma = fg.grad_gamma;
  r.grad_delta = fg.grad_delta;
  if (trace.mode == FusionMode::kTrain) r.fusion = std::move(trace);
  apply_reduction(r, reduction);
  return r;
}

double gfn_score(std::span<const double> query_person, std::span<const double> query_scene,
                 std::span<const double> gallery_scene, const GfnConfig& cfg,
                 const FusionParams& params) {
  switch (cfg.objective) {
    case GfnObjective::kBaseline:
      return cosine_sim(query_person, gallery_scene);
    case GfnObjective::kSceneOnly:
      return cosine_sim(query_scene, gallery_scene);
    case GfnObjective::kCombined: {
      const Embedding w = fuse(query_person, query_scene, params, cfg.beta);
      const Embedding z = fuse(query_person, gallery_scene, params, cfg.beta);
      return cosine_sim(w, z);
    }
  }
  return 0.0;
}

}  // namespace gfn
