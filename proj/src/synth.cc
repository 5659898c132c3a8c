#include "gfn/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gfn/errors.h"
#include "gfn/rng.h"

namespace gfn {

void SynthConfig::validate() const {
  if (num_identities < 1 || num_scenes < 1 || cameras < 1) {
    throw ConfigError("synth: identity, scene and camera counts must be >= 1");
  }
  if (dim < 2) throw ConfigError("synth: dim must be >= 2");
  if (camera_dims < 0 || clutter_dims < 0 || identity_dims() < 1) {
    throw ConfigError("synth: camera_dims + clutter_dims must leave an identity block");
  }
  if (persons_min < 1 || persons_max < persons_min) {
    throw ConfigError("synth: need 1 <= persons_min <= persons_max");
  }
  if (persons_max > num_identities) {
    throw ConfigError("synth: persons_max exceeds the number of identities");
  }
  if (unknowns_per_scene < 0) throw ConfigError("synth: unknowns_per_scene must be >= 0");
  if (identity_noise_std < 0 || scene_context_std < 0 || scene_noise_std < 0) {
    throw ConfigError("synth: noise levels must be >= 0");
  }
  if (group_size < 1) throw ConfigError("synth: group_size must be >= 1");
  if (group_cohesion < 0 || group_cohesion > 1) {
    throw ConfigError("synth: group_cohesion must lie in [0, 1]");
  }
  if (camera_affinity < 0 || camera_affinity > 1) {
    throw ConfigError("synth: camera_affinity must lie in [0, 1]");
  }
  if (holdout_fraction < 0 || holdout_fraction >= 1) {
    throw ConfigError("synth: holdout_fraction must lie in [0, 1)");
  }
}

DatasetBundle SynthWorld::training_bundle() const {
  std::vector<PersonAnnotation> anns = bundle.annotations();
  for (auto& a : anns) {
    if (a.person_id && heldout.count(*a.person_id)) {
      a.person_id.reset();
      a.is_known = false;
    }
  }
  return DatasetBundle(bundle.scenes(), std::move(anns), bundle.partition_name() + "_train");
}

namespace {

Embedding gaussian_block(Rng& rng, int dim, int begin, int count, double scale) {
  Embedding v(static_cast<std::size_t>(dim), 0.0);
  for (int c = begin; c < begin + count; ++c) v[static_cast<std::size_t>(c)] = scale * rng.normal();
  return v;
}

}  // namespace

SynthWorld generate_world(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int d = cfg.dim;
  const int id_dims = cfg.identity_dims();
  const int cam_begin = id_dims;
  const int clutter_begin = id_dims + cfg.camera_dims;

  SynthWorld w;
  w.config = cfg;
  for (PersonId p = 1; p <= cfg.num_identities; ++p) {
    w.prototypes[p] = normalized(gaussian_block(rng, d, 0, id_dims, 1.0));
  }
  std::vector<Embedding> backgrounds;
  for (int c = 0; c < cfg.cameras; ++c) {
    Embedding bg = gaussian_block(rng, d, cam_begin, cfg.camera_dims, 1.0);
    backgrounds.push_back(cfg.camera_dims > 0 ? normalized(bg) : bg);
  }
  std::vector<std::vector<PersonId>> by_camera(static_cast<std::size_t>(cfg.cameras));
  for (PersonId p = 1; p <= cfg.num_identities; ++p) {
    by_camera[static_cast<std::size_t>(((p - 1) / cfg.group_size) % cfg.cameras)].push_back(p);
  }

  const int slots = cfg.persons_max + cfg.unknowns_per_scene;
  const int width = std::max(640, 80 * slots + 32);
  const int height = 480;
  std::vector<SceneRecord> scenes;
  std::vector<PersonAnnotation> anns;
  AnnId next_ann = 1;
  for (SceneId s = 1; s <= cfg.num_scenes; ++s) {
    const int cam = static_cast<int>((s - 1) % cfg.cameras);
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%05lld.jpg", static_cast<long long>(s));
    scenes.push_back({s, name, width, height, cam});

    const int k = cfg.persons_min +
                  static_cast<int>(rng.index(static_cast<std::size_t>(cfg.persons_max - cfg.persons_min + 1)));
    std::vector<PersonId> roster;
    auto taken = [&](PersonId p) { return std::find(roster.begin(), roster.end(), p) != roster.end(); };
    while (static_cast<int>(roster.size()) < k) {
      std::vector<PersonId> pool;
      if (rng.uniform() < cfg.camera_affinity) {
        for (PersonId p : by_camera[static_cast<std::size_t>(cam)]) {
          if (!taken(p)) pool.push_back(p);
        }
      }
      if (pool.empty()) {
        for (PersonId p = 1; p <= cfg.num_identities; ++p) {
          if (!taken(p)) pool.push_back(p);
        }
      }
      const PersonId drawn = pool[rng.index(pool.size())];
      roster.push_back(drawn);
      const PersonId first = (drawn - 1) / cfg.group_size * cfg.group_size + 1;
      for (PersonId m = first; m < first + cfg.group_size && m <= cfg.num_identities; ++m) {
        if (static_cast<int>(roster.size()) >= cfg.persons_max) break;
        if (m != drawn && !taken(m) && rng.uniform() < cfg.group_cohesion) roster.push_back(m);
      }
    }

    Embedding raw = backgrounds[static_cast<std::size_t>(cam)];
    const Embedding clutter = gaussian_block(rng, d, clutter_begin, cfg.clutter_dims, cfg.scene_context_std);
    for (int c = 0; c < d; ++c) raw[c] += clutter[c];
    int slot = 0;
    auto place = [&](std::optional<PersonId> pid, const Embedding& feature) {
      PersonAnnotation a;
      a.ann_id = next_ann++;
      a.scene_id = s;
      a.bbox = {16.0 + 80.0 * slot, 120.0, 64.0, 160.0};
      a.person_id = pid;
      a.is_known = pid.has_value();
      ++slot;
      w.person_features[a.ann_id] = feature;
      w.detection_scores[a.ann_id] = 0.6 + 0.4 * rng.uniform();
      anns.push_back(a);
    };
    for (PersonId p : roster) {
      Embedding f = w.prototypes[p];
      if (cfg.identity_noise_std > 0) {
        for (int c = 0; c < d; ++c) f[c] += cfg.identity_noise_std * rng.normal();
      }
      place(p, normalized(f));
      for (int c = 0; c < d; ++c) raw[c] += w.prototypes[p][c] / static_cast<double>(roster.size());
    }
    for (int u = 0; u < cfg.unknowns_per_scene; ++u) {
      place(std::nullopt, normalized(gaussian_block(rng, d, 0, id_dims, 1.0)));
    }
    if (cfg.scene_noise_std > 0) {
      for (int c = 0; c < d; ++c) raw[c] += cfg.scene_noise_std * rng.normal();
    }
    w.scene_features[s] = normalized(raw);
  }
  w.bundle = DatasetBundle(std::move(scenes), std::move(anns), "synth");

  std::vector<PersonId> ids;
  for (PersonId p = 1; p <= cfg.num_identities; ++p) ids.push_back(p);
  const auto n_hold = static_cast<std::size_t>(std::lround(cfg.holdout_fraction * cfg.num_identities));
  for (PersonId p : rng.sample(ids, n_hold)) w.heldout.insert(p);
  return w;
}

}  // namespace gfn
