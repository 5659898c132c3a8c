#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gfn/data.h"
#include "gfn/gfn_objective.h"

namespace gfn {

enum class NodeType { kPerson, kScene, kFusedAnchor, kFusedCandidate };

const char* to_string(NodeType type);

struct GraphNode {
  NodeType type = NodeType::kScene;
  std::string name;  // x_<pid>, y_<scene>, w_<ann>, z_<ann>_<scene>
};

using NodePair = std::pair<std::size_t, std::size_t>;  // stored with first <= second

// Attraction (positive pair) and repulsion (negative pair) relations over
// the embeddings an objective compares.
struct ObjectiveGraph {
  std::vector<GraphNode> nodes;
  std::set<NodePair> attractions;
  std::set<NodePair> repulsions;

  // Index of the node called `name`; ContractError if none.
  std::size_t node(const std::string& name) const;
  bool attracts(const std::string& a, const std::string& b) const;
  bool repels(const std::string& a, const std::string& b) const;
};

// baseline:   identity nodes x_p and scene nodes y_s.
// combined:   per known annotation i an anchor w_i and candidates z_{i,s};
//             z_{i,own} is w_i itself, giving a self-attraction.
// scene_only: scene nodes only; self pairs are never attractions.
ObjectiveGraph build_objective_graph(GfnObjective objective, const DatasetBundle& bundle);

// Union-find closure over attractions. Groups are sorted, and ordered by
// their smallest node index.
std::vector<std::vector<std::size_t>> attraction_groups(const ObjectiveGraph& g);

struct WellPosedness {
  bool well_posed = true;
  std::vector<NodePair> conflicts;  // repulsions inside one attraction group
};

WellPosedness is_well_posed(const ObjectiveGraph& g);

// Every connected component (attractions plus repulsions, self-loops
// ignored) is a star.
bool is_star_forest(const ObjectiveGraph& g);

// "name\ttype" per node.
std::string export_nodes(const ObjectiveGraph& g);
// "src\tdst\tkind" per relation, kind in {attraction, repulsion}.
std::string export_edges(const ObjectiveGraph& g);

}  // namespace gfn
