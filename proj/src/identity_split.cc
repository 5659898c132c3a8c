#include "gfn/identity_split.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "gfn/errors.h"
#include "gfn/rng.h"
#include "gfn/union_find.h"

namespace gfn {

SceneGraph build_identity_graph(const DatasetBundle& bundle, std::size_t ignore_top_k) {
  SceneGraph g;
  g.nodes = bundle.scene_ids();

  std::vector<std::pair<std::size_t, PersonId>> freq;
  for (PersonId pid : bundle.identities()) {
    freq.emplace_back(bundle.scenes_with(pid).size(), pid);
  }
  std::sort(freq.begin(), freq.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t i = 0; i < freq.size(); ++i) {
    (i < ignore_top_k ? g.ignored_identities : g.used_identities).insert(freq[i].second);
  }

  for (PersonId pid : g.used_identities) {
    const auto& scenes = bundle.scenes_with(pid);
    for (std::size_t a = 0; a < scenes.size(); ++a) {
      for (std::size_t b = a + 1; b < scenes.size(); ++b) {
        g.edges.emplace(scenes[a], scenes[b]);
      }
    }
  }
  return g;
}

std::vector<std::vector<SceneId>> SceneGraph::components() const {
  std::map<SceneId, std::size_t> index;
  for (std::size_t i = 0; i < nodes.size(); ++i) index[nodes[i]] = i;
  UnionFind uf(nodes.size());
  for (const auto& [a, b] : edges) uf.unite(index.at(a), index.at(b));

  std::map<std::size_t, std::vector<SceneId>> by_root;
  for (std::size_t i = 0; i < nodes.size(); ++i) by_root[uf.find(i)].push_back(nodes[i]);

  std::vector<std::vector<SceneId>> out;
  for (auto& [root, members] : by_root) {
    std::sort(members.begin(), members.end());
    out.push_back(std::move(members));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() > b.size() : a.front() < b.front();
  });
  return out;
}

SceneSplit split_components(const SceneGraph& graph, double target_val_fraction,
                            std::uint64_t seed) {
  if (!(target_val_fraction > 0.0 && target_val_fraction < 1.0)) {
    throw ContractError("split_components: target fraction must be in (0, 1)");
  }
  auto comps = graph.components();
  SceneSplit split;
  split.num_components = comps.size();
  const double total = static_cast<double>(graph.nodes.size());
  if (comps.empty()) return split;

  if (static_cast<double>(comps.front().size()) > (1.0 - target_val_fraction) * total) {
    throw SplitInfeasibleError(
        "largest connected component holds " + std::to_string(comps.front().size()) +
        " of " + std::to_string(graph.nodes.size()) +
        " scenes; increase ignore_top_k to break it up");
  }

  Rng rng(seed);
  for (std::size_t i = 0; i < comps.size();) {
    std::size_t j = i;
    while (j < comps.size() && comps[j].size() == comps[i].size()) ++j;
    std::vector<std::vector<SceneId>> run(comps.begin() + i, comps.begin() + j);
    rng.shuffle(run);
    std::move(run.begin(), run.end(), comps.begin() + i);
    i = j;
  }

  const double target = target_val_fraction * total;
  const double upper = (target_val_fraction + kSplitTolerance) * total;
  const double lower = (target_val_fraction - kSplitTolerance) * total;
  double val_count = 0.0;
  for (const auto& comp : comps) {
    const double n = static_cast<double>(comp.size());
    if (val_count < target && val_count + n <= upper) {
      split.val.insert(comp.begin(), comp.end());
      val_count += n;
    } else {
      split.train.insert(comp.begin(), comp.end());
    }
  }
  if (val_count < lower || val_count > upper) {
    throw SplitInfeasibleError(
        "component sizes do not allow a val fraction within " +
        std::to_string(kSplitTolerance) + " of the target; increase ignore_top_k");
  }
  return split;
}

std::set<PersonId> leaked_identities(const DatasetBundle& bundle,
                                     const SceneGraph& graph,
                                     const SceneSplit& split) {
  std::set<PersonId> leaked;
  for (PersonId pid : graph.used_identities) {
    bool in_train = false;
    bool in_val = false;
    for (SceneId s : bundle.scenes_with(pid)) {
      in_train |= split.train.count(s) != 0;
      in_val |= split.val.count(s) != 0;
    }
    if (in_train && in_val) leaked.insert(pid);
  }
  return leaked;
}

}  // namespace gfn
