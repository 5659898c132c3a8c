#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gfn/core_math.h"
#include "gfn/data.h"
#include "gfn/fusion.h"

namespace gfn {

enum class GfnObjective { kBaseline, kCombined, kSceneOnly };
enum class QuerySource { kBatch, kPrototype };

const char* to_string(GfnObjective objective);
const char* to_string(QuerySource source);
const char* to_string(LogisticOrientation orientation);
GfnObjective parse_objective(const std::string& name);
QuerySource parse_query_source(const std::string& name);
LogisticOrientation parse_orientation(const std::string& name);

struct GfnConfig {
  double tau = 0.1;          // contrastive training temperature
  double beta = 0.2;         // excitation temperature
  double alpha = 0.2;        // inference weighting temperature
  double lambda_gfn = -1.0;  // scenes scoring below are filtered; -1 keeps all
  GfnObjective objective = GfnObjective::kCombined;
  QuerySource query_source = QuerySource::kBatch;
  LogisticOrientation orientation = LogisticOrientation::kIncreasing;

  void validate() const;
};

// 1 iff a known annotation of the query's identity is present in `scene`.
// Throws ContractError when the query annotation has no identity.
int indicator_qs(const DatasetBundle& bundle, AnnId person, SceneId scene);

// 1 iff the two scenes share a known identity. Symmetric; a scene matches
// itself whenever it holds at least one known person.
int indicator_ss(const DatasetBundle& bundle, SceneId a, SceneId b);

// Row-major 0/1 matrix; rows are anchors, columns are scenes.
using IndicatorMatrix = std::vector<std::vector<std::uint8_t>>;

IndicatorMatrix query_scene_indicator(std::span<const PersonId> anchor_identities,
                                      std::span<const std::set<PersonId>> scene_identities);
IndicatorMatrix scene_scene_indicator(std::span<const std::set<PersonId>> scene_identities);

// One positive (anchor, positive) pair and its candidate set: the positive
// plus every index the anchor is negative with. Indices are ascending.
struct PositivePair {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> candidates;
};

struct PairIndex {
  std::vector<PositivePair> pairs;
};

// For each I[i][j] = 1: candidates { k : k == j or I[i][k] == 0 }.
PairIndex query_scene_pairs(const IndicatorMatrix& indicator);

// Square scene indicator. Self pairs are never positives and an anchor scene
// never appears in its own candidate set.
PairIndex scene_scene_pairs(const IndicatorMatrix& indicator);

enum class Reduction { kSum, kMean };

struct GfnLossResult {
  double loss = 0.0;
  std::size_t num_pairs = 0;
  std::vector<Embedding> grad_persons;
  std::vector<Embedding> grad_scenes;
  Embedding grad_gamma;  // combined objective only
  Embedding grad_delta;
  std::optional<FusionBatch> fusion;  // train-mode trace for running stats
};

// Sum (or mean) over positive query-scene pairs of the contrastive loss of
// person x_i against scenes y_k, k in K^Q_{i,j}.
GfnLossResult baseline_gfn_loss(std::span<const Embedding> persons,
                                std::span<const Embedding> scenes, const PairIndex& pairs,
                                double tau, Reduction reduction = Reduction::kSum,
                                std::span<const std::uint8_t> person_stop = {},
                                std::span<const std::uint8_t> scene_stop = {});

// Query-scene objective on fused embeddings: anchor w_i = f(x_i, y_own(i)),
// candidates z_{i,k} = f(x_i, y_k). z_{i,own(i)} and w_i are one node. All
// distinct fused vectors of the call form the normalization batch.
GfnLossResult combined_gfn_loss(std::span<const Embedding> persons,
                                std::span<const Embedding> scenes,
                                std::span<const std::size_t> own_scene,
                                const PairIndex& pairs, const FusionParams& params,
                                double tau, double beta,
                                Reduction reduction = Reduction::kSum,
                                std::span<const std::uint8_t> person_stop = {},
                                std::span<const std::uint8_t> scene_stop = {});

// Scene-scene objective; pairs from scene_scene_pairs.
GfnLossResult scene_only_gfn_loss(std::span<const Embedding> scenes, const PairIndex& pairs,
                                  double tau, Reduction reduction = Reduction::kSum,
                                  std::span<const std::uint8_t> scene_stop = {});

// Inference-time scene score:
//   baseline   -> sim(x_q, y_g)
//   combined   -> sim(f(x_q, y_q), f(x_q, y_g))
//   scene_only -> sim(y_q, y_g)
double gfn_score(std::span<const double> query_person, std::span<const double> query_scene,
                 std::span<const double> gallery_scene, const GfnConfig& cfg,
                 const FusionParams& params);

}  // namespace gfn
