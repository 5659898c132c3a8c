#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gfn/evaluation.h"
#include "gfn/fusion.h"
#include "gfn/gfn_objective.h"
#include "gfn/lut.h"
#include "gfn/oim.h"
#include "gfn/synth.h"

namespace gfn {

// Scene head y = P s + b followed by the fusion normalization.
struct TrainableParams {
  std::size_t dim = 0;
  std::vector<double> projection;  // dim x dim, row-major
  Embedding bias;
  FusionParams fusion;
  double learning_rate = 2.0;
  int epochs = 400;

  // P = I + init_noise * N(0, 1), b = 0, identity fusion.
  static TrainableParams init(std::size_t dim, std::uint64_t seed, double init_noise,
                              FusionMode mode);

  Embedding project(std::span<const double> raw) const;
  // Fusion parameters for scoring: train mode switches to running stats.
  FusionParams inference_fusion() const;
  void validate() const;
};

struct TrainConfig {
  GfnConfig gfn;
  SamplePlan plan;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
  bool audit = true;
  std::size_t oim_queue_size = 500;
};

struct EpochLoss {
  int epoch = 0;
  double gfn = 0.0;
  double reid = 0.0;
  double total = 0.0;
  std::size_t steps = 0;
};

struct TrainResult {
  TrainableParams params;
  std::vector<EpochLoss> curve;
  OimTable table;
  double audit_max_rel_error = 0.0;  // -1 when not audited
  double max_person_grad = 0.0;      // largest |dL/dx| seen on the person side
};

// Norm-wise relative error |a - n| / max(|a|, |n|, 1e-12) per parameter block,
// maximized over P, b, gamma, delta, for one training step on a dim-8 world.
double audit_gradients(GfnObjective objective, FusionMode mode, QuerySource source,
                       std::uint64_t seed, double h = 1e-5);

// Gradient descent on L_reid + L_gfn. Throws TrainingError naming the step at
// which the loss stops being finite.
TrainResult train_gfn(const SynthWorld& world, TrainableParams params, const TrainConfig& cfg);

// Re-embeds every scene through the current head; persons keep their fixed
// features.
void refresh_lut(GfnLut& lut, long epoch, const SynthWorld& world, const TrainableParams& params);

struct ToyReport {
  MetricReport gfn_scene;
  MetricReport person_plain;   // no GFN
  MetricReport person_weight;  // score weighting only
  MetricReport person_filter;  // filtering only
  MetricReport person_both;
  std::map<std::string, double> deltas;  // e.g. "weight.top-1" = weighted minus plain

  std::string to_json() const;
};

// Held-out identities' annotations as queries, gallery = every other scene,
// detections = ground-truth boxes with the world's scores.
std::vector<RetrievalTask> toy_tasks(const SynthWorld& world, const TrainableParams& params);
InMemoryDetectionProvider toy_detections(const SynthWorld& world);
SceneEmbeddings toy_scene_embeddings(const SynthWorld& world, const TrainableParams& params);

ToyReport evaluate_toy(const SynthWorld& world, const TrainableParams& params,
                       const GfnConfig& cfg, unsigned threads = 1);

std::string loss_curve_csv(const std::vector<EpochLoss>& curve);

// Projection, bias and fusion vectors as an embedding store pair.
void save_params(const TrainableParams& params, const std::filesystem::path& manifest);
TrainableParams load_params(const std::filesystem::path& manifest);

}  // namespace gfn
