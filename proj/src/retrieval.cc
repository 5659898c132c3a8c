#include "gfn/retrieval.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "gfn/errors.h"
#include "gfn/rng.h"
#include "json.hpp"

namespace gfn {

using nlohmann::json;

void InMemoryDetectionProvider::add(GalleryDetection det) {
  if (!std::isfinite(det.s_det) || det.s_det < 0.0 || det.s_det > 1.0) {
    throw ContractError("detection score must lie in [0, 1]");
  }
  by_scene_[det.scene_id].push_back(std::move(det));
}

std::vector<GalleryDetection> InMemoryDetectionProvider::detections(SceneId scene) const {
  auto it = by_scene_.find(scene);
  if (it == by_scene_.end()) return {};
  return it->second;
}

std::size_t InMemoryDetectionProvider::size() const {
  std::size_t n = 0;
  for (const auto& [s, dets] : by_scene_) n += dets.size();
  return n;
}

std::vector<GalleryDetection> LoggingDetectionProvider::detections(SceneId scene) const {
  {
    std::lock_guard<std::mutex> lock(mu_);
    calls_.push_back(scene);
  }
  return inner_.detections(scene);
}

std::vector<SceneId> LoggingDetectionProvider::calls() const {
  std::lock_guard<std::mutex> lock(mu_);
  return calls_;
}

InMemoryDetectionProvider load_detections(const std::filesystem::path& jsonl,
                                          const EmbeddingStore& store) {
  std::ifstream in(jsonl);
  if (!in) throw LoadError("cannot open detections file " + jsonl.string());
  InMemoryDetectionProvider provider;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = jsonl.string() + ":" + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      GalleryDetection det;
      det.scene_id = j.at("scene_id").get<SceneId>();
      const auto& b = j.at("bbox");
      if (!b.is_array() || b.size() != 4) throw DataError("bbox must have 4 numbers");
      det.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                  b[3].get<double>()};
      det.s_det = j.at("s_det").get<double>();
      const std::int64_t eid = j.at("embedding_id").get<std::int64_t>();
      if (!store.contains(eid)) {
        throw DataError("embedding_id " + std::to_string(eid) + " not in store");
      }
      det.embedding = store.embedding(eid);
      provider.add(std::move(det));
    } catch (const json::exception& e) {
      throw LoadError(where + ": " + e.what());
    } catch (const Error& e) {
      throw LoadError(where + ": " + e.what());
    }
  }
  return provider;
}

void save_detections(const std::filesystem::path& jsonl,
                     std::span<const GalleryDetection> detections,
                     std::span<const std::int64_t> embedding_ids) {
  if (detections.size() != embedding_ids.size()) {
    throw ContractError("save_detections: one embedding id per detection required");
  }
  std::string text;
  for (std::size_t n = 0; n < detections.size(); ++n) {
    const auto& d = detections[n];
    json j;
    j["scene_id"] = d.scene_id;
    j["bbox"] = {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h};
    j["s_det"] = d.s_det;
    j["embedding_id"] = embedding_ids[n];
    text += j.dump() + "\n";
  }
  write_text_file(jsonl, text);
}

SceneEmbeddings scene_embeddings_from_store(const EmbeddingStore& store) {
  SceneEmbeddings out;
  for (std::int64_t id : store.ids()) out.emplace(id, store.embedding(id));
  return out;
}

std::map<SceneId, double> score_gallery_scenes(const RetrievalTask& task,
                                               const SceneEmbeddings& scenes,
                                               const GfnConfig& cfg,
                                               const FusionParams& params) {
  std::map<SceneId, double> out;
  for (SceneId s : task.gallery()) {
    if (out.count(s)) continue;
    auto it = scenes.find(s);
    if (it == scenes.end()) {
      throw DataError("no scene embedding for gallery scene " + std::to_string(s));
    }
    out.emplace(s, gfn_score(task.query_embedding, task.query_scene_embedding, it->second, cfg,
                             params));
  }
  return out;
}

FilterResult filter_gallery(const std::map<SceneId, double>& scores, double lambda_gfn) {
  FilterResult r;
  for (const auto& [s, v] : scores) {
    (v >= lambda_gfn ? r.kept : r.filtered).push_back(s);
  }
  return r;
}

double final_score(double s_reid, double s_det, double s_gfn, double alpha,
                   LogisticOrientation orientation) {
  return s_reid * s_det * logistic_weight(s_gfn, alpha, orientation);
}

bool ranks_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.s_final != b.s_final) return a.s_final > b.s_final;
  if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
  return a.bbox.x < b.bbox.x;
}

RankedResult two_phase_search(const RetrievalTask& task, const DetectionProvider& provider,
                              const SceneEmbeddings& scenes, const GfnConfig& cfg,
                              const FusionParams& params, SearchFlags flags) {
  if (task.gallery().empty()) throw ContractError("retrieval task has an empty gallery");
  RankedResult r;
  std::map<SceneId, double> scores;
  if (flags.use_gfn_filter || flags.use_gfn_weight) {
    scores = score_gallery_scenes(task, scenes, cfg, params);
  }
  if (flags.use_gfn_filter) {
    const FilterResult f = filter_gallery(scores, cfg.lambda_gfn);
    r.filtered_scene_ids.insert(f.filtered.begin(), f.filtered.end());
  }
  for (SceneId s : task.gallery()) {
    if (r.filtered_scene_ids.count(s)) continue;
    std::optional<double> s_gfn;
    if (auto it = scores.find(s); it != scores.end()) s_gfn = it->second;
    for (const auto& det : provider.detections(s)) {
      RankedEntry e;
      e.scene_id = s;
      e.bbox = det.bbox;
      e.s_reid = cosine_sim(task.query_embedding, det.embedding);
      e.s_det = det.s_det;
      e.s_gfn = s_gfn;
      e.s_final = flags.use_gfn_weight
                      ? final_score(e.s_reid, e.s_det, *s_gfn, cfg.alpha, cfg.orientation)
                      : e.s_reid * e.s_det;
      r.entries.push_back(e);
    }
  }
  std::stable_sort(r.entries.begin(), r.entries.end(), ranks_before);
  return r;
}

RetrievalTask subsample_gallery(const RetrievalTask& task, const DatasetBundle& bundle,
                                std::size_t size, std::uint64_t seed) {
  const auto& gallery = task.gallery();
  if (size < 1 || size > gallery.size()) {
    throw ContractError("subsample size " + std::to_string(size) + " outside [1, " +
                        std::to_string(gallery.size()) + "]");
  }
  std::vector<std::size_t> keep;
  std::vector<std::size_t> rest;
  for (std::size_t n = 0; n < gallery.size(); ++n) {
    const bool positive = bundle.has_scene(gallery[n]) &&
                          bundle.identities_in(gallery[n]).count(task.query.person_id);
    (positive ? keep : rest).push_back(n);
  }
  if (keep.size() > size) {
    throw ContractError("subsample size " + std::to_string(size) +
                        " is smaller than the number of positive scenes");
  }
  Rng rng(seed);
  for (std::size_t n : rng.sample(std::move(rest), size - keep.size())) keep.push_back(n);
  std::sort(keep.begin(), keep.end());
  RetrievalTask out = task;
  out.query.gallery_scene_ids.clear();
  for (std::size_t n : keep) out.query.gallery_scene_ids.push_back(gallery[n]);
  return out;
}

}  // namespace gfn
