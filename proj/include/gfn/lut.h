#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "gfn/core_math.h"
#include "gfn/data.h"

namespace gfn {

// Snapshot of scene and person embeddings taken once per epoch. Entries never
// carry gradients; the trainer treats them as constants.
class GfnLut {
 public:
  long epoch() const { return epoch_; }
  bool has_scene(SceneId id) const { return scenes_.count(id) != 0; }
  bool has_person(AnnId id) const { return persons_.count(id) != 0; }
  const Embedding& scene(SceneId id) const;   // LookupError if absent
  const Embedding& person(AnnId id) const;    // LookupError if absent
  const std::map<SceneId, Embedding>& scenes() const { return scenes_; }
  const std::map<AnnId, Embedding>& persons() const { return persons_; }

  // Replaces every entry and stamps the epoch.
  void refresh(long epoch, std::map<SceneId, Embedding> scenes,
               std::map<AnnId, Embedding> persons);

 private:
  long epoch_ = -1;
  std::map<SceneId, Embedding> scenes_;
  std::map<AnnId, Embedding> persons_;
};

// PxNy: x positive scenes and y hard-negative scenes per batch person.
struct SamplePlan {
  int positives_per_person = 1;
  int hard_negatives_per_person = 1;
  bool use_lut = true;

  void validate() const;
};

struct PersonSample {
  AnnId ann_id = 0;
  SceneId own_scene = 0;
  std::vector<SceneId> positives;       // contain the person's identity
  std::vector<SceneId> hard_negatives;  // share an identity with own_scene, lack the person's
};

// Scenes that share a known identity with `own_scene` but do not hold
// `identity`, ascending.
std::vector<SceneId> hard_negative_scenes(const DatasetBundle& bundle, SceneId own_scene,
                                          PersonId identity);

// Draws samples for each known batch person in order (unknown persons are
// skipped). With use_lut the pool is every scene in the LUT; otherwise only
// `batch_scenes`. Short pools yield everything they have.
std::vector<PersonSample> sample_for_batch(const SamplePlan& plan,
                                           std::span<const AnnId> batch_persons,
                                           const DatasetBundle& bundle, const GfnLut& lut,
                                           std::uint64_t seed,
                                           const std::set<SceneId>& batch_scenes = {});

}  // namespace gfn
