#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "gfn/core_math.h"
#include "gfn/data.h"

namespace gfn {

// Generative toy world. The embedding space splits into an identity block,
// a camera block and a clutter block:
//   [0, identity_dims) | camera_dims | clutter_dims
struct SynthConfig {
  int num_identities = 50;
  int num_scenes = 200;
  int persons_min = 1;  // known persons per scene
  int persons_max = 3;
  int dim = 32;
  double identity_noise_std = 0.3;
  double scene_context_std = 3.0;  // clutter strength
  int cameras = 4;
  std::uint64_t seed = 7;

  int camera_dims = 4;
  int clutter_dims = 8;
  double camera_affinity = 0.5;  // chance a roster slot draws from the home camera
  int group_size = 3;            // identities p with equal (p - 1) / group_size travel together
  double group_cohesion = 1.0;   // chance each group mate joins a drawn identity
  double scene_noise_std = 0.05;
  int unknowns_per_scene = 1;
  double holdout_fraction = 0.2;  // identities reserved for evaluation queries

  int identity_dims() const { return dim - camera_dims - clutter_dims; }
  void validate() const;
};

struct SynthWorld {
  SynthConfig config;
  DatasetBundle bundle;                       // every identity labeled
  std::map<PersonId, Embedding> prototypes;   // unit norm, identity block only
  std::map<AnnId, Embedding> person_features;
  std::map<SceneId, Embedding> scene_features;
  std::map<AnnId, double> detection_scores;   // s_det of each annotation box
  std::set<PersonId> heldout;

  // The bundle with held-out identities turned into unknown persons.
  DatasetBundle training_bundle() const;
};

// Throws ConfigError when the roster cannot be drawn.
SynthWorld generate_world(const SynthConfig& cfg);

}  // namespace gfn
