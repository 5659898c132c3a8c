#pragma once

#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "gfn/data.h"

namespace gfn {

// Undirected scene graph: two scenes are adjacent when they share a known
// identity that survived the top-k frequency filter.
struct SceneGraph {
  std::vector<SceneId> nodes;                      // ascending
  std::set<std::pair<SceneId, SceneId>> edges;     // (a, b) with a < b
  std::set<PersonId> ignored_identities;
  std::set<PersonId> used_identities;

  // Connected components, each sorted ascending; components ordered by size
  // descending, ties by smallest scene id.
  std::vector<std::vector<SceneId>> components() const;
};

// Frequency of an identity is the number of distinct scenes containing it;
// the ignore_top_k most frequent (ties: ascending person_id) are dropped.
SceneGraph build_identity_graph(const DatasetBundle& bundle, std::size_t ignore_top_k);

struct SceneSplit {
  std::set<SceneId> train;
  std::set<SceneId> val;
  std::size_t num_components = 0;
};

// Band around the target val fraction accepted by split_components.
inline constexpr double kSplitTolerance = 0.05;

// Assigns whole components to train or val. Components are visited in
// descending size (ties: smallest scene id); runs of equal-size components are
// shuffled with `seed`. A component goes to val while val is still below the
// target and adding it keeps val inside the tolerance band.
//
// Throws SplitInfeasibleError when one component holds more than
// (1 - target) of all scenes, or when the greedy fill cannot land inside the
// band.
SceneSplit split_components(const SceneGraph& graph, double target_val_fraction,
                            std::uint64_t seed);

// Identities (from graph.used_identities) present on both sides; empty for a
// sound split.
std::set<PersonId> leaked_identities(const DatasetBundle& bundle,
                                     const SceneGraph& graph,
                                     const SceneSplit& split);

}  // namespace gfn
