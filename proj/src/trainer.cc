#include "gfn/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "gfn/errors.h"
#include "gfn/rng.h"
#include "json.hpp"

namespace gfn {

using nlohmann::json;

TrainableParams TrainableParams::init(std::size_t dim, std::uint64_t seed, double init_noise,
                                      FusionMode mode) {
  TrainableParams p;
  p.dim = dim;
  p.projection.assign(dim * dim, 0.0);
  Rng rng(seed);
  for (std::size_t r = 0; r < dim; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      p.projection[r * dim + c] = (r == c ? 1.0 : 0.0) + init_noise * rng.normal();
    }
  }
  p.bias.assign(dim, 0.0);
  p.fusion = FusionParams::identity(dim, mode);
  return p;
}

Embedding TrainableParams::project(std::span<const double> raw) const {
  if (raw.size() != dim) throw ContractError("scene head: dimension mismatch");
  Embedding y = bias;
  for (std::size_t r = 0; r < dim; ++r) {
    const double* row = &projection[r * dim];
    double acc = 0.0;
    for (std::size_t c = 0; c < dim; ++c) acc += row[c] * raw[c];
    y[r] += acc;
  }
  return y;
}

FusionParams TrainableParams::inference_fusion() const {
  FusionParams f = fusion;
  if (f.mode == FusionMode::kTrain) f.mode = FusionMode::kInference;
  return f;
}

void TrainableParams::validate() const {
  if (dim == 0 || projection.size() != dim * dim || bias.size() != dim) {
    throw ContractError("trainable params: inconsistent shapes");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  for (double v : projection) {
    if (!std::isfinite(v)) throw ContractError("trainable params: non-finite projection");
  }
  check_finite(bias, "scene head bias");
  fusion.validate();
}

void refresh_lut(GfnLut& lut, long epoch, const SynthWorld& world, const TrainableParams& params) {
  std::map<SceneId, Embedding> scenes;
  for (const auto& [id, raw] : world.scene_features) scenes.emplace(id, params.project(raw));
  lut.refresh(epoch, std::move(scenes), world.person_features);
}

namespace {

// Anchors and scenes of one step. LUT-sourced entries are constants.
struct StepPlan {
  std::vector<AnnId> anchors;
  std::vector<std::uint8_t> anchor_from_lut;
  std::vector<SceneId> scenes;
  std::vector<std::uint8_t> scene_from_lut;
  std::vector<std::size_t> own;  // anchor -> index into scenes
};

StepPlan build_step(std::span<const AnnId> batch, std::span<const PersonSample> samples,
                    const DatasetBundle& bundle) {
  StepPlan plan;
  std::map<SceneId, std::size_t> scene_index;
  auto add_scene = [&](SceneId s, bool from_lut) {
    auto [it, inserted] = scene_index.emplace(s, plan.scenes.size());
    if (inserted) {
      plan.scenes.push_back(s);
      plan.scene_from_lut.push_back(from_lut ? 1 : 0);
    }
    return it->second;
  };
  std::set<AnnId> seen;
  for (AnnId a : batch) {
    const auto& ann = bundle.annotation(a);
    if (!ann.person_id || !seen.insert(a).second) continue;
    plan.anchors.push_back(a);
    plan.anchor_from_lut.push_back(0);
    plan.own.push_back(add_scene(ann.scene_id, false));
  }
  for (const auto& ps : samples) {
    for (SceneId s : ps.positives) add_scene(s, true);
    for (SceneId s : ps.hard_negatives) add_scene(s, true);
  }
  for (const auto& ps : samples) {
    for (SceneId s : ps.positives) {
      for (AnnId a : bundle.annotations_in(s)) {
        if (!bundle.annotation(a).person_id || !seen.insert(a).second) continue;
        plan.anchors.push_back(a);
        plan.anchor_from_lut.push_back(1);
        plan.own.push_back(scene_index.at(s));
      }
    }
  }
  return plan;
}

struct StepGrads {
  double loss = 0.0;
  std::size_t num_pairs = 0;
  std::vector<double> projection;
  Embedding bias;
  Embedding gamma;
  Embedding delta;
  std::optional<FusionBatch> fusion;
  double max_person_grad = 0.0;
};

StepGrads gfn_step(const StepPlan& plan, const SynthWorld& world, const DatasetBundle& bundle,
                   const TrainableParams& params, const GfnLut& lut, const OimTable& table,
                   const GfnConfig& cfg) {
  const std::size_t d = params.dim;
  StepGrads out;
  out.projection.assign(d * d, 0.0);
  out.bias.assign(d, 0.0);
  out.gamma.assign(d, 0.0);
  out.delta.assign(d, 0.0);

  std::vector<Embedding> scenes;
  std::vector<std::set<PersonId>> scene_ids;
  for (std::size_t j = 0; j < plan.scenes.size(); ++j) {
    const SceneId s = plan.scenes[j];
    scenes.push_back(plan.scene_from_lut[j] ? lut.scene(s)
                                            : params.project(world.scene_features.at(s)));
    scene_ids.push_back(bundle.identities_in(s));
  }
  const StopMask& scene_stop = plan.scene_from_lut;

  GfnLossResult r;
  if (cfg.objective == GfnObjective::kSceneOnly) {
    const PairIndex pairs = scene_scene_pairs(scene_scene_indicator(scene_ids));
    r = scene_only_gfn_loss(scenes, pairs, cfg.tau, Reduction::kMean, scene_stop);
  } else {
    std::vector<Embedding> persons;
    std::vector<PersonId> person_ids;
    std::vector<std::size_t> own;
    StopMask person_stop;
    for (std::size_t i = 0; i < plan.anchors.size(); ++i) {
      const PersonId pid = *bundle.annotation(plan.anchors[i]).person_id;
      Embedding x;
      if (cfg.query_source == QuerySource::kPrototype) {
        if (!table.contains(pid)) continue;
        x = prototype_lookup(table, pid);
        if (l2_norm(x) == 0.0) continue;  // identity not seen yet
      } else {
        x = plan.anchor_from_lut[i] ? lut.person(plan.anchors[i])
                                    : world.person_features.at(plan.anchors[i]);
      }
      persons.push_back(std::move(x));
      person_ids.push_back(pid);
      own.push_back(plan.own[i]);
      person_stop.push_back(cfg.query_source == QuerySource::kPrototype || plan.anchor_from_lut[i]
                                ? 1
                                : 0);
    }
    const PairIndex pairs = query_scene_pairs(query_scene_indicator(person_ids, scene_ids));
    if (cfg.objective == GfnObjective::kBaseline) {
      r = baseline_gfn_loss(persons, scenes, pairs, cfg.tau, Reduction::kMean, person_stop,
                            scene_stop);
    } else {
      r = combined_gfn_loss(persons, scenes, own, pairs, params.fusion, cfg.tau, cfg.beta,
                            Reduction::kMean, person_stop, scene_stop);
    }
    for (const auto& g : r.grad_persons) {
      for (double v : g) out.max_person_grad = std::max(out.max_person_grad, std::abs(v));
    }
  }

  out.loss = r.loss;
  out.num_pairs = r.num_pairs;
  if (r.num_pairs == 0) return out;
  for (std::size_t j = 0; j < plan.scenes.size(); ++j) {
    if (plan.scene_from_lut[j]) continue;
    const Embedding& g = r.grad_scenes[j];
    const Embedding& s = world.scene_features.at(plan.scenes[j]);
    for (std::size_t row = 0; row < d; ++row) {
      out.bias[row] += g[row];
      for (std::size_t c = 0; c < d; ++c) out.projection[row * d + c] += g[row] * s[c];
    }
  }
  if (!r.grad_gamma.empty()) out.gamma = r.grad_gamma;
  if (!r.grad_delta.empty()) out.delta = r.grad_delta;
  out.fusion = std::move(r.fusion);
  return out;
}

std::vector<AnnId> known_annotations(const DatasetBundle& bundle) {
  std::vector<AnnId> out;
  for (const auto& a : bundle.annotations()) {
    if (a.person_id) out.push_back(a.ann_id);
  }
  return out;
}

std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  return seed * 1000003ULL + static_cast<std::uint64_t>(step);
}

double block_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0;
  double na = 0.0;
  double nn = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
    na += analytic[k] * analytic[k];
    nn += numeric[k] * numeric[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

// Persons of `batch` plus unlabeled persons of their scenes, for the re-id loss.
void reid_inputs(std::span<const AnnId> batch, const SynthWorld& world,
                 const DatasetBundle& bundle, std::vector<Embedding>& embeddings,
                 std::vector<std::optional<PersonId>>& labels) {
  std::set<SceneId> scenes;
  for (AnnId a : batch) {
    embeddings.push_back(world.person_features.at(a));
    labels.push_back(bundle.annotation(a).person_id);
    scenes.insert(bundle.annotation(a).scene_id);
  }
  for (SceneId s : scenes) {
    for (AnnId a : bundle.annotations_in(s)) {
      if (bundle.annotation(a).person_id) continue;
      embeddings.push_back(world.person_features.at(a));
      labels.emplace_back(std::nullopt);
    }
  }
}

}  // namespace

double audit_gradients(GfnObjective objective, FusionMode mode, QuerySource source,
                       std::uint64_t seed, double h) {
  SynthConfig sc;
  sc.num_identities = 4;
  sc.num_scenes = 6;
  sc.persons_min = 1;
  sc.persons_max = 3;
  sc.dim = 8;
  sc.camera_dims = 2;
  sc.clutter_dims = 2;
  sc.cameras = 2;
  sc.camera_affinity = 0.5;
  sc.identity_noise_std = 0.2;
  sc.scene_context_std = 0.5;
  sc.holdout_fraction = 0.0;
  sc.seed = seed;
  const SynthWorld world = generate_world(sc);
  const DatasetBundle& bundle = world.bundle;

  TrainableParams params = TrainableParams::init(8, seed + 1, 0.3, mode);
  Rng rng(seed + 2);
  if (mode != FusionMode::kBypass) {
    for (auto& g : params.fusion.gamma) g = 1.0 + 0.2 * rng.normal();
    for (auto& v : params.fusion.delta) v = 0.2 * rng.normal();
    for (auto& v : params.fusion.running_mean) v = 0.1 * rng.normal();
    for (auto& v : params.fusion.running_var) v = 0.5 + rng.uniform();
  }
  for (auto& v : params.bias) v = 0.1 * rng.normal();

  GfnLut lut;
  refresh_lut(lut, 0, world, params);
  std::vector<AnnId> batch = known_annotations(bundle);
  if (batch.size() > 6) batch.resize(6);
  OimTable table(8, bundle.identities(), 50);
  for (AnnId a : known_annotations(bundle)) {
    table.update(*bundle.annotation(a).person_id, world.person_features.at(a));
  }
  SamplePlan sp;
  const auto samples = sample_for_batch(sp, batch, bundle, lut, seed);
  const StepPlan plan = build_step(batch, samples, bundle);

  GfnConfig cfg;
  cfg.objective = objective;
  cfg.query_source = source;
  const StepGrads g = gfn_step(plan, world, bundle, params, lut, table, cfg);

  auto loss_at = [&](const TrainableParams& p) {
    return gfn_step(plan, world, bundle, p, lut, table, cfg).loss;
  };
  auto numeric = [&](auto member) {
    TrainableParams p = params;
    std::vector<double>& block = member(p);
    std::vector<double> out(block.size());
    for (std::size_t k = 0; k < block.size(); ++k) {
      const double keep = block[k];
      block[k] = keep + h;
      const double up = loss_at(p);
      block[k] = keep - h;
      const double down = loss_at(p);
      block[k] = keep;
      out[k] = (up - down) / (2.0 * h);
    }
    return out;
  };
  double worst = 0.0;
  worst = std::max(worst, block_error(g.projection, numeric([](TrainableParams& p) -> std::vector<double>& { return p.projection; })));
  worst = std::max(worst, block_error(g.bias, numeric([](TrainableParams& p) -> std::vector<double>& { return p.bias; })));
  worst = std::max(worst, block_error(g.gamma, numeric([](TrainableParams& p) -> std::vector<double>& { return p.fusion.gamma; })));
  worst = std::max(worst, block_error(g.delta, numeric([](TrainableParams& p) -> std::vector<double>& { return p.fusion.delta; })));
  return worst;
}

TrainResult train_gfn(const SynthWorld& world, TrainableParams params, const TrainConfig& cfg) {
  params.validate();
  cfg.gfn.validate();
  cfg.plan.validate();
  if (params.dim != static_cast<std::size_t>(world.config.dim)) {
    throw ContractError("trainable params and world disagree on dimension");
  }
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");

  const DatasetBundle bundle = world.training_bundle();
  std::vector<AnnId> persons = known_annotations(bundle);
  Rng rng(cfg.seed);
  rng.shuffle(persons);

  TrainResult result;
  result.table = OimTable(params.dim, bundle.identities(), cfg.oim_queue_size);
  result.audit_max_rel_error =
      cfg.audit ? audit_gradients(cfg.gfn.objective, params.fusion.mode, cfg.gfn.query_source,
                                  cfg.seed)
                : -1.0;

  GfnLut lut;
  std::size_t global_step = 0;
  const double lr = params.learning_rate;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    refresh_lut(lut, epoch, world, params);
    EpochLoss el;
    el.epoch = epoch;
    for (std::size_t start = 0; start < persons.size(); start += cfg.batch_size, ++global_step) {
      const std::size_t end = std::min(persons.size(), start + cfg.batch_size);
      const std::span<const AnnId> batch(persons.data() + start, end - start);
      std::set<SceneId> batch_scenes;
      for (AnnId a : batch) batch_scenes.insert(bundle.annotation(a).scene_id);

      std::vector<Embedding> reid_x;
      std::vector<std::optional<PersonId>> reid_y;
      reid_inputs(batch, world, bundle, reid_x, reid_y);
      const double reid = oim_loss(reid_x, reid_y, result.table).loss;
      result.table.apply_batch(reid_x, reid_y);

      const auto samples = sample_for_batch(cfg.plan, batch, bundle, lut,
                                            step_seed(cfg.seed, start / cfg.batch_size),
                                            batch_scenes);
      const StepPlan plan = build_step(batch, samples, bundle);
      StepGrads g = gfn_step(plan, world, bundle, params, lut, result.table, cfg.gfn);
      if (!std::isfinite(g.loss) || !std::isfinite(reid)) {
        throw TrainingError("loss is not finite", static_cast<long>(global_step));
      }
      result.max_person_grad = std::max(result.max_person_grad, g.max_person_grad);

      for (std::size_t k = 0; k < params.projection.size(); ++k) {
        params.projection[k] -= lr * g.projection[k];
      }
      for (std::size_t k = 0; k < params.dim; ++k) {
        params.bias[k] -= lr * g.bias[k];
        params.fusion.gamma[k] -= lr * g.gamma[k];
        params.fusion.delta[k] -= lr * g.delta[k];
      }
      if (g.fusion && g.fusion->output.size() > 1) update_running_stats(params.fusion, *g.fusion);

      el.gfn += g.loss;
      el.reid += reid;
      ++el.steps;
    }
    if (el.steps > 0) {
      el.gfn /= static_cast<double>(el.steps);
      el.reid /= static_cast<double>(el.steps);
    }
    el.total = el.gfn + el.reid;
    result.curve.push_back(el);
  }
  result.params = std::move(params);
  return result;
}

std::vector<RetrievalTask> toy_tasks(const SynthWorld& world, const TrainableParams& params) {
  const DatasetBundle& bundle = world.bundle;
  const std::vector<SceneId> all = bundle.scene_ids();
  std::vector<RetrievalTask> tasks;
  for (const auto& ann : bundle.annotations()) {
    if (!ann.person_id || !world.heldout.count(*ann.person_id)) continue;
    RetrievalTask t;
    t.query.query_ann_id = ann.ann_id;
    t.query.query_scene_id = ann.scene_id;
    t.query.person_id = *ann.person_id;
    for (SceneId s : all) {
      if (s != ann.scene_id) t.query.gallery_scene_ids.push_back(s);
    }
    t.query_embedding = world.person_features.at(ann.ann_id);
    t.query_scene_embedding = params.project(world.scene_features.at(ann.scene_id));
    tasks.push_back(std::move(t));
  }
  return tasks;
}

InMemoryDetectionProvider toy_detections(const SynthWorld& world) {
  InMemoryDetectionProvider p;
  for (const auto& ann : world.bundle.annotations()) {
    p.add({ann.scene_id, ann.bbox, world.person_features.at(ann.ann_id),
           world.detection_scores.at(ann.ann_id)});
  }
  return p;
}

SceneEmbeddings toy_scene_embeddings(const SynthWorld& world, const TrainableParams& params) {
  SceneEmbeddings out;
  for (const auto& [id, raw] : world.scene_features) out.emplace(id, params.project(raw));
  return out;
}

std::string ToyReport::to_json() const {
  json j;
  auto part = [](const MetricReport& r) { return json::parse(r.to_json()); };
  j["gfn_scene"] = part(gfn_scene);
  j["person_plain"] = part(person_plain);
  j["person_weight"] = part(person_weight);
  j["person_filter"] = part(person_filter);
  j["person_both"] = part(person_both);
  j["deltas"] = deltas;
  return j.dump(2) + "\n";
}

ToyReport evaluate_toy(const SynthWorld& world, const TrainableParams& params,
                       const GfnConfig& cfg, unsigned threads) {
  const std::vector<RetrievalTask> tasks = toy_tasks(world, params);
  const InMemoryDetectionProvider provider = toy_detections(world);
  const SceneEmbeddings scenes = toy_scene_embeddings(world, params);
  const FusionParams fusion = params.inference_fusion();

  ToyReport r;
  std::vector<std::map<SceneId, double>> scores;
  std::vector<ResolvedQuery> queries;
  for (const auto& t : tasks) {
    scores.push_back(score_gallery_scenes(t, scenes, cfg, fusion));
    queries.push_back(t.query);
  }
  r.gfn_scene = gfn_scene_metrics(scores, queries, world.bundle);
  r.gfn_scene.metadata["objective"] = to_string(cfg.objective);

  auto run = [&](bool filter, bool weight) {
    return evaluate_person_search(tasks, world.bundle, provider, scenes, cfg, fusion,
                                  {filter, weight}, threads);
  };
  r.person_plain = run(false, false);
  r.person_weight = run(false, true);
  r.person_filter = run(true, false);
  r.person_both = run(true, true);
  for (const auto& [name, rep] : {std::pair<const char*, const MetricReport*>{"weight", &r.person_weight},
                                  {"filter", &r.person_filter},
                                  {"both", &r.person_both}}) {
    for (const char* m : {"mAP", "top-1"}) {
      r.deltas[std::string(name) + "." + m] = rep->metrics.at(m) - r.person_plain.metrics.at(m);
    }
  }
  return r;
}

std::string loss_curve_csv(const std::vector<EpochLoss>& curve) {
  std::string out = "epoch,gfn_loss,reid_loss,total_loss,steps\n";
  char buf[160];
  for (const auto& e : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%zu\n", e.epoch, e.gfn, e.reid, e.total,
                  e.steps);
    out += buf;
  }
  return out;
}

void save_params(const TrainableParams& params, const std::filesystem::path& manifest) {
  const std::size_t d = params.dim;
  EmbeddingStore store(EmbeddingKind::kScene, d);
  for (std::size_t r = 0; r < d; ++r) {
    store.add(static_cast<std::int64_t>(r),
              std::span<const double>(params.projection.data() + r * d, d));
  }
  const auto& f = params.fusion;
  std::int64_t id = static_cast<std::int64_t>(d);
  for (const Embedding* v : {&params.bias, &f.gamma, &f.delta, &f.running_mean, &f.running_var}) {
    store.add(id++, *v);
  }
  save_embeddings(store, manifest);
  json j;
  j["dim"] = d;
  j["fusion_mode"] = f.mode == FusionMode::kTrain       ? "train"
                     : f.mode == FusionMode::kInference ? "inference"
                                                        : "bypass";
  j["momentum"] = f.momentum;
  j["eps"] = f.eps;
  j["learning_rate"] = params.learning_rate;
  j["epochs"] = params.epochs;
  std::filesystem::path side = manifest;
  side.replace_extension(".params.json");
  write_text_file(side, j.dump(2) + "\n");
}

TrainableParams load_params(const std::filesystem::path& manifest) {
  const EmbeddingStore store = load_embeddings(manifest);
  std::filesystem::path side = manifest;
  side.replace_extension(".params.json");
  json j;
  try {
    j = json::parse(read_text_file(side));
  } catch (const json::exception& e) {
    throw LoadError(side.string() + ": " + e.what());
  }
  const std::size_t d = store.dim();
  if (store.count() != d + 5 || j.value("dim", std::size_t{0}) != d) {
    throw CorruptionError("parameter checkpoint " + manifest.string() + " has the wrong shape");
  }
  const std::string mode = j.value("fusion_mode", "train");
  TrainableParams p = TrainableParams::init(
      d, 0, 0.0,
      mode == "bypass" ? FusionMode::kBypass
                       : (mode == "inference" ? FusionMode::kInference : FusionMode::kTrain));
  for (std::size_t r = 0; r < d; ++r) {
    const Embedding row = store.embedding(static_cast<std::int64_t>(r));
    std::copy(row.begin(), row.end(), p.projection.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::int64_t id = static_cast<std::int64_t>(d);
  for (Embedding* v : {&p.bias, &p.fusion.gamma, &p.fusion.delta, &p.fusion.running_mean,
                       &p.fusion.running_var}) {
    *v = store.embedding(id++);
  }
  p.fusion.momentum = j.value("momentum", 0.1);
  p.fusion.eps = j.value("eps", 1e-5);
  p.learning_rate = j.value("learning_rate", 2.0);
  p.epochs = j.value("epochs", 400);
  p.validate();
  return p;
}

}  // namespace gfn
