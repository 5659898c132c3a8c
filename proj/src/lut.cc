#include "gfn/lut.h"

#include <string>

#include "gfn/errors.h"
#include "gfn/rng.h"

namespace gfn {

const Embedding& GfnLut::scene(SceneId id) const {
  auto it = scenes_.find(id);
  if (it == scenes_.end()) throw LookupError("LUT has no scene " + std::to_string(id));
  return it->second;
}

const Embedding& GfnLut::person(AnnId id) const {
  auto it = persons_.find(id);
  if (it == persons_.end()) throw LookupError("LUT has no person " + std::to_string(id));
  return it->second;
}

void GfnLut::refresh(long epoch, std::map<SceneId, Embedding> scenes,
                     std::map<AnnId, Embedding> persons) {
  epoch_ = epoch;
  scenes_ = std::move(scenes);
  persons_ = std::move(persons);
}

void SamplePlan::validate() const {
  if (positives_per_person < 0 || hard_negatives_per_person < 0) {
    throw ConfigError("sample plan counts must be non-negative");
  }
  if (use_lut && positives_per_person + hard_negatives_per_person < 1) {
    throw ConfigError("a LUT sample plan must draw at least one scene");
  }
}

std::vector<SceneId> hard_negative_scenes(const DatasetBundle& bundle, SceneId own_scene,
                                          PersonId identity) {
  std::set<SceneId> out;
  for (PersonId other : bundle.identities_in(own_scene)) {
    if (other == identity) continue;
    for (SceneId s : bundle.scenes_with(other)) {
      if (!bundle.identities_in(s).count(identity)) out.insert(s);
    }
  }
  return {out.begin(), out.end()};
}

std::vector<PersonSample> sample_for_batch(const SamplePlan& plan,
                                           std::span<const AnnId> batch_persons,
                                           const DatasetBundle& bundle, const GfnLut& lut,
                                           std::uint64_t seed,
                                           const std::set<SceneId>& batch_scenes) {
  plan.validate();
  Rng rng(seed);
  auto in_pool = [&](SceneId s) {
    return plan.use_lut ? lut.has_scene(s) : batch_scenes.count(s) != 0;
  };
  std::vector<PersonSample> out;
  for (AnnId a : batch_persons) {
    const PersonAnnotation& ann = bundle.annotation(a);
    if (!ann.person_id) continue;
    PersonSample ps{a, ann.scene_id, {}, {}};
    std::vector<SceneId> pos;
    for (SceneId s : bundle.scenes_with(*ann.person_id)) {
      if (in_pool(s)) pos.push_back(s);
    }
    std::vector<SceneId> neg;
    for (SceneId s : hard_negative_scenes(bundle, ann.scene_id, *ann.person_id)) {
      if (in_pool(s)) neg.push_back(s);
    }
    ps.positives = rng.sample(std::move(pos), static_cast<std::size_t>(plan.positives_per_person));
    ps.hard_negatives =
        rng.sample(std::move(neg), static_cast<std::size_t>(plan.hard_negatives_per_person));
    out.push_back(std::move(ps));
  }
  return out;
}

}  // namespace gfn
