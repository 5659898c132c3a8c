#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "gfn/core_math.h"
#include "gfn/data.h"
#include "gfn/embedding_store.h"
#include "gfn/fusion.h"
#include "gfn/gfn_objective.h"
#include "gfn/retrieval_spec.h"

namespace gfn {

struct GalleryDetection {
  SceneId scene_id = 0;
  Box bbox;
  Embedding embedding;
  double s_det = 1.0;  // in [0, 1]
};

// Source of per-scene detections. Implementations must tolerate concurrent
// calls.
class DetectionProvider {
 public:
  virtual ~DetectionProvider() = default;
  virtual std::vector<GalleryDetection> detections(SceneId scene) const = 0;
};

class InMemoryDetectionProvider : public DetectionProvider {
 public:
  // Throws ContractError when s_det is outside [0, 1] or not finite.
  void add(GalleryDetection det);
  std::vector<GalleryDetection> detections(SceneId scene) const override;
  std::size_t size() const;

 private:
  std::map<SceneId, std::vector<GalleryDetection>> by_scene_;
};

// Wraps a provider and records every requested scene, in call order.
class LoggingDetectionProvider : public DetectionProvider {
 public:
  explicit LoggingDetectionProvider(const DetectionProvider& inner) : inner_(inner) {}
  std::vector<GalleryDetection> detections(SceneId scene) const override;
  std::vector<SceneId> calls() const;

 private:
  const DetectionProvider& inner_;
  mutable std::mutex mu_;
  mutable std::vector<SceneId> calls_;
};

// JSON lines {"scene_id", "bbox": [x, y, w, h], "s_det", "embedding_id"} with
// embeddings resolved through `store`. Throws DataError naming the line.
InMemoryDetectionProvider load_detections(const std::filesystem::path& jsonl,
                                          const EmbeddingStore& store);
void save_detections(const std::filesystem::path& jsonl,
                     std::span<const GalleryDetection> detections,
                     std::span<const std::int64_t> embedding_ids);

using SceneEmbeddings = std::map<SceneId, Embedding>;
SceneEmbeddings scene_embeddings_from_store(const EmbeddingStore& store);

struct RetrievalTask {
  ResolvedQuery query;
  Embedding query_embedding;
  Embedding query_scene_embedding;

  const std::vector<SceneId>& gallery() const { return query.gallery_scene_ids; }
};

// s_gfn for every distinct gallery scene. DataError names a missing scene.
std::map<SceneId, double> score_gallery_scenes(const RetrievalTask& task,
                                               const SceneEmbeddings& scenes,
                                               const GfnConfig& cfg,
                                               const FusionParams& params);

struct FilterResult {
  std::vector<SceneId> kept;      // s_gfn >= lambda, ascending
  std::vector<SceneId> filtered;  // ascending
};

FilterResult filter_gallery(const std::map<SceneId, double>& scores, double lambda_gfn);

// s_reid * s_det * logistic_weight(s_gfn, alpha, orientation)
double final_score(double s_reid, double s_det, double s_gfn, double alpha,
                   LogisticOrientation orientation = LogisticOrientation::kIncreasing);

struct RankedEntry {
  SceneId scene_id = 0;
  Box bbox;
  double s_reid = 0.0;
  double s_det = 0.0;
  std::optional<double> s_gfn;  // absent when the scene was never scored
  double s_final = 0.0;
};

struct RankedResult {
  std::vector<RankedEntry> entries;
  std::set<SceneId> filtered_scene_ids;
};

struct SearchFlags {
  bool use_gfn_filter = false;
  bool use_gfn_weight = false;
};

// Ranking order: s_final descending, then scene_id, then bbox x ascending.
bool ranks_before(const RankedEntry& a, const RankedEntry& b);

// Scores the gallery (only when a flag needs it), drops scenes below
// lambda_gfn when filtering, then asks the provider for the remaining
// scenes' detections, one call per gallery listing.
RankedResult two_phase_search(const RetrievalTask& task, const DetectionProvider& provider,
                              const SceneEmbeddings& scenes, const GfnConfig& cfg,
                              const FusionParams& params, SearchFlags flags);

// Keeps every gallery scene holding the query identity and fills the rest up
// to `size` with a seeded uniform draw; original gallery order is kept.
RetrievalTask subsample_gallery(const RetrievalTask& task, const DatasetBundle& bundle,
                                std::size_t size, std::uint64_t seed);

}  // namespace gfn
