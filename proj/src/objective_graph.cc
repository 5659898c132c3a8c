#include "gfn/objective_graph.h"

#include <algorithm>
#include <map>

#include "gfn/errors.h"
#include "gfn/union_find.h"

namespace gfn {

const char* to_string(NodeType type) {
  switch (type) {
    case NodeType::kPerson:
      return "person";
    case NodeType::kScene:
      return "scene";
    case NodeType::kFusedAnchor:
      return "fused_anchor";
    case NodeType::kFusedCandidate:
      return "fused_candidate";
  }
  return "scene";
}

std::size_t ObjectiveGraph::node(const std::string& name) const {
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    if (nodes[n].name == name) return n;
  }
  throw ContractError("objective graph has no node " + name);
}

namespace {

NodePair ordered(std::size_t a, std::size_t b) { return {std::min(a, b), std::max(a, b)}; }

class Builder {
 public:
  explicit Builder(ObjectiveGraph& g) : g_(g) {}

  std::size_t add(NodeType type, const std::string& name) {
    auto [it, inserted] = by_name_.emplace(name, g_.nodes.size());
    if (inserted) g_.nodes.push_back({type, name});
    return it->second;
  }
  void attract(std::size_t a, std::size_t b) { g_.attractions.insert(ordered(a, b)); }
  void repel(std::size_t a, std::size_t b) { g_.repulsions.insert(ordered(a, b)); }

 private:
  ObjectiveGraph& g_;
  std::map<std::string, std::size_t> by_name_;
};

std::string scene_name(SceneId s) { return "y_" + std::to_string(s); }

}  // namespace

bool ObjectiveGraph::attracts(const std::string& a, const std::string& b) const {
  return attractions.count(ordered(node(a), node(b))) != 0;
}

bool ObjectiveGraph::repels(const std::string& a, const std::string& b) const {
  return repulsions.count(ordered(node(a), node(b))) != 0;
}

ObjectiveGraph build_objective_graph(GfnObjective objective, const DatasetBundle& bundle) {
  ObjectiveGraph g;
  Builder b(g);
  const std::vector<SceneId> scenes = bundle.scene_ids();

  switch (objective) {
    case GfnObjective::kBaseline: {
      for (PersonId p : bundle.identities()) {
        const std::size_t x = b.add(NodeType::kPerson, "x_" + std::to_string(p));
        for (SceneId s : scenes) {
          const std::size_t y = b.add(NodeType::kScene, scene_name(s));
          if (bundle.identities_in(s).count(p)) {
            b.attract(x, y);
          } else {
            b.repel(x, y);
          }
        }
      }
      break;
    }
    case GfnObjective::kCombined: {
      for (const auto& ann : bundle.annotations()) {
        if (!ann.person_id) continue;
        const std::string w_name = "w_" + std::to_string(ann.ann_id);
        const std::size_t w = b.add(NodeType::kFusedAnchor, w_name);
        for (SceneId s : scenes) {
          const std::size_t z =
              s == ann.scene_id
                  ? w
                  : b.add(NodeType::kFusedCandidate, "z_" + std::to_string(ann.ann_id) + "_" +
                                                         std::to_string(s));
          if (bundle.identities_in(s).count(*ann.person_id)) {
            b.attract(w, z);
          } else {
            b.repel(w, z);
          }
        }
      }
      break;
    }
    case GfnObjective::kSceneOnly: {
      for (SceneId s : scenes) b.add(NodeType::kScene, scene_name(s));
      for (SceneId i : scenes) {
        const std::size_t yi = b.add(NodeType::kScene, scene_name(i));
        bool has_positive = false;
        for (SceneId j : scenes) {
          if (j != i && indicator_ss(bundle, i, j)) {
            has_positive = true;
            b.attract(yi, b.add(NodeType::kScene, scene_name(j)));
          }
        }
        if (!has_positive) continue;
        for (SceneId k : scenes) {
          if (k != i && !indicator_ss(bundle, i, k)) {
            b.repel(yi, b.add(NodeType::kScene, scene_name(k)));
          }
        }
      }
      break;
    }
  }
  return g;
}

std::vector<std::vector<std::size_t>> attraction_groups(const ObjectiveGraph& g) {
  UnionFind uf(g.nodes.size());
  for (const auto& [a, b] : g.attractions) uf.unite(a, b);
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> slot(g.nodes.size(), g.nodes.size());
  for (std::size_t n = 0; n < g.nodes.size(); ++n) {
    const std::size_t r = uf.find(n);
    if (slot[r] == g.nodes.size()) {
      slot[r] = groups.size();
      groups.emplace_back();
    }
    groups[slot[r]].push_back(n);
  }
  return groups;
}

WellPosedness is_well_posed(const ObjectiveGraph& g) {
  UnionFind uf(g.nodes.size());
  for (const auto& [a, b] : g.attractions) uf.unite(a, b);
  WellPosedness out;
  for (const auto& e : g.repulsions) {
    if (uf.same(e.first, e.second)) out.conflicts.push_back(e);
  }
  out.well_posed = out.conflicts.empty();
  return out;
}

bool is_star_forest(const ObjectiveGraph& g) {
  const std::size_t n = g.nodes.size();
  std::vector<std::set<std::size_t>> adj(n);
  UnionFind uf(n);
  for (const auto* rel : {&g.attractions, &g.repulsions}) {
    for (const auto& [a, b] : *rel) {
      if (a == b) continue;
      adj[a].insert(b);
      adj[b].insert(a);
      uf.unite(a, b);
    }
  }
  std::map<std::size_t, std::vector<std::size_t>> components;
  for (std::size_t v = 0; v < n; ++v) components[uf.find(v)].push_back(v);
  for (const auto& [root, members] : components) {
    if (members.size() <= 2) continue;
    std::size_t centers = 0;
    bool leaves_ok = true;
    for (std::size_t v : members) {
      if (adj[v].size() == members.size() - 1) {
        ++centers;
      } else if (adj[v].size() != 1) {
        leaves_ok = false;
      }
    }
    if (centers != 1 || !leaves_ok) return false;
  }
  return true;
}

std::string export_nodes(const ObjectiveGraph& g) {
  std::string out;
  for (const auto& node : g.nodes) {
    out += node.name + "\t" + to_string(node.type) + "\n";
  }
  return out;
}

std::string export_edges(const ObjectiveGraph& g) {
  std::string out;
  for (const auto& [a, b] : g.attractions) {
    out += g.nodes[a].name + "\t" + g.nodes[b].name + "\tattraction\n";
  }
  for (const auto& [a, b] : g.repulsions) {
    out += g.nodes[a].name + "\t" + g.nodes[b].name + "\trepulsion\n";
  }
  return out;
}

}  // namespace gfn
