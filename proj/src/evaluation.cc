#include "gfn/evaluation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "gfn/errors.h"
#include "json.hpp"

namespace gfn {

using nlohmann::json;

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double ranked_average_precision(const std::vector<bool>& hits, std::size_t num_positives) {
  if (num_positives == 0) return 0.0;
  double sum = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < hits.size(); ++r) {
    if (!hits[r]) continue;
    ++tp;
    sum += static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(num_positives);
}

std::string MetricReport::to_json() const {
  json j;
  j["metrics"] = metrics;
  j["query_ids"] = query_ids;
  j["per_query_ap"] = per_query_ap;
  j["per_query_top1"] = per_query_top1;
  j["excluded_queries"] = excluded_queries;
  j["metadata"] = metadata;
  return j.dump(2) + "\n";
}

namespace {

MetricReport summarize(std::vector<AnnId> ids, std::vector<double> aps,
                       std::vector<double> top1s, std::size_t excluded) {
  MetricReport r;
  double map = 0.0;
  double top1 = 0.0;
  for (std::size_t n = 0; n < aps.size(); ++n) {
    map += aps[n];
    top1 += top1s[n];
  }
  if (!aps.empty()) {
    map /= static_cast<double>(aps.size());
    top1 /= static_cast<double>(aps.size());
  }
  r.metrics["mAP"] = map;
  r.metrics["top-1"] = top1;
  r.query_ids = std::move(ids);
  r.per_query_ap = std::move(aps);
  r.per_query_top1 = std::move(top1s);
  r.excluded_queries = excluded;
  r.metadata["num_queries"] = std::to_string(r.query_ids.size());
  return r;
}

}  // namespace

DetectionMetrics detection_metrics(const std::map<SceneId, std::vector<ScoredBox>>& detections,
                                   const std::map<SceneId, std::vector<Box>>& ground_truth,
                                   double iou_thresh) {
  struct Ref {
    SceneId scene;
    const ScoredBox* det;
  };
  std::vector<Ref> order;
  for (const auto& [s, dets] : detections) {
    for (const auto& d : dets) order.push_back({s, &d});
  }
  std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) {
    if (a.det->score != b.det->score) return a.det->score > b.det->score;
    if (a.scene != b.scene) return a.scene < b.scene;
    return a.det->bbox.x < b.det->bbox.x;
  });

  DetectionMetrics m;
  std::map<SceneId, std::vector<bool>> used;
  for (const auto& [s, boxes] : ground_truth) {
    m.num_gt += boxes.size();
    used[s].assign(boxes.size(), false);
  }
  m.num_detections = order.size();
  std::vector<bool> hits;
  hits.reserve(order.size());
  std::size_t matched = 0;
  for (const Ref& ref : order) {
    bool hit = false;
    auto gt = ground_truth.find(ref.scene);
    if (gt != ground_truth.end()) {
      auto& flags = used[ref.scene];
      double best = iou_thresh;
      std::size_t best_idx = gt->second.size();
      for (std::size_t g = 0; g < gt->second.size(); ++g) {
        if (flags[g]) continue;
        const double v = iou(ref.det->bbox, gt->second[g]);
        if (v >= best && (best_idx == gt->second.size() || v > best)) {
          best = v;
          best_idx = g;
        }
      }
      if (best_idx < gt->second.size()) {
        flags[best_idx] = true;
        hit = true;
        ++matched;
      }
    }
    hits.push_back(hit);
  }
  if (m.num_gt > 0) {
    m.recall = static_cast<double>(matched) / static_cast<double>(m.num_gt);
    m.ap = ranked_average_precision(hits, m.num_gt);
  }
  return m;
}

QueryGroundTruth build_ground_truth(const ResolvedQuery& query, const DatasetBundle& bundle) {
  QueryGroundTruth gt;
  gt.query_ann_id = query.query_ann_id;
  for (SceneId s : query.gallery_scene_ids) {
    for (AnnId a : bundle.annotations_in(s)) {
      const auto& ann = bundle.annotation(a);
      if (ann.person_id && *ann.person_id == query.person_id) gt.boxes.emplace_back(s, ann.bbox);
    }
  }
  return gt;
}

std::vector<bool> match_ranked_entries(const RankedResult& result, const QueryGroundTruth& gt,
                                       double iou_thresh) {
  std::vector<bool> credited(gt.boxes.size(), false);
  std::vector<bool> hits;
  hits.reserve(result.entries.size());
  for (const auto& e : result.entries) {
    std::size_t best_idx = gt.boxes.size();
    double best = iou_thresh;
    for (std::size_t g = 0; g < gt.boxes.size(); ++g) {
      if (credited[g] || gt.boxes[g].first != e.scene_id) continue;
      const double v = iou(e.bbox, gt.boxes[g].second);
      if (v >= best && (best_idx == gt.boxes.size() || v > best)) {
        best = v;
        best_idx = g;
      }
    }
    if (best_idx < gt.boxes.size()) credited[best_idx] = true;
    hits.push_back(best_idx < gt.boxes.size());
  }
  return hits;
}

MetricReport person_retrieval_metrics(std::span<const RankedResult> results,
                                      std::span<const QueryGroundTruth> ground_truth) {
  if (results.size() != ground_truth.size()) {
    throw ContractError("person_retrieval_metrics: one ground truth per result required");
  }
  std::vector<AnnId> ids;
  std::vector<double> aps;
  std::vector<double> top1s;
  std::size_t excluded = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    if (ground_truth[q].boxes.empty()) {
      ++excluded;
      continue;
    }
    const std::vector<bool> hits = match_ranked_entries(results[q], ground_truth[q]);
    ids.push_back(ground_truth[q].query_ann_id);
    aps.push_back(ranked_average_precision(hits, ground_truth[q].boxes.size()));
    top1s.push_back(!hits.empty() && hits.front() ? 1.0 : 0.0);
  }
  return summarize(std::move(ids), std::move(aps), std::move(top1s), excluded);
}

MetricReport gfn_scene_metrics(std::span<const std::map<SceneId, double>> scores,
                               std::span<const ResolvedQuery> queries,
                               const DatasetBundle& bundle) {
  if (scores.size() != queries.size()) {
    throw ContractError("gfn_scene_metrics: one score map per query required");
  }
  std::vector<AnnId> ids;
  std::vector<double> aps;
  std::vector<double> top1s;
  std::size_t excluded = 0;
  for (std::size_t q = 0; q < scores.size(); ++q) {
    std::vector<std::pair<SceneId, double>> ranked(scores[q].begin(), scores[q].end());
    // std::map iteration is ascending by id, so stability supplies the tie order.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<bool> hits;
    std::size_t positives = 0;
    for (const auto& [s, v] : ranked) {
      const bool hit = bundle.identities_in(s).count(queries[q].person_id) != 0;
      hits.push_back(hit);
      positives += hit ? 1 : 0;
    }
    if (positives == 0) {
      ++excluded;
      continue;
    }
    ids.push_back(queries[q].query_ann_id);
    aps.push_back(ranked_average_precision(hits, positives));
    top1s.push_back(hits.front() ? 1.0 : 0.0);
  }
  return summarize(std::move(ids), std::move(aps), std::move(top1s), excluded);
}

NpvResult npv_at_recall(std::span<const double> match_scores,
                        std::span<const double> nonmatch_scores, double recall_target) {
  if (match_scores.empty() || nonmatch_scores.empty()) {
    throw ContractError("npv_at_recall needs nonempty match and nonmatch sets");
  }
  if (!(recall_target > 0.0 && recall_target <= 1.0)) {
    throw ContractError("recall target must lie in (0, 1]");
  }
  std::vector<double> sorted(match_scores.begin(), match_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = sorted.size();
  std::size_t k = 1;
  while (k < n && static_cast<double>(k) / static_cast<double>(n) < recall_target) ++k;
  NpvResult r;
  r.threshold = sorted[k - 1];
  std::size_t below = 0;
  for (double v : nonmatch_scores) below += v < r.threshold ? 1 : 0;
  r.npv = static_cast<double>(below) / static_cast<double>(nonmatch_scores.size());
  return r;
}

double compute_savings(double negative_fraction, double npv, double detection_time_fraction) {
  for (double v : {negative_fraction, npv, detection_time_fraction}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("compute_savings inputs must lie in [0, 1]");
  }
  return negative_fraction * npv * detection_time_fraction;
}

std::string Histogram::to_csv() const {
  std::string out = "bin_lo,bin_hi,match_count,nonmatch_count\n";
  char buf[128];
  for (std::size_t b = 0; b < match_counts.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu,%zu\n", edges[b], edges[b + 1],
                  match_counts[b], nonmatch_counts[b]);
    out += buf;
  }
  return out;
}

Histogram score_histogram(std::span<const double> match_scores,
                          std::span<const double> nonmatch_scores, std::size_t bins) {
  if (bins < 1) throw ContractError("histogram needs at least one bin");
  double lo = 0.0;
  double hi = 0.0;
  bool any = false;
  for (auto set : {match_scores, nonmatch_scores}) {
    for (double v : set) {
      if (!std::isfinite(v)) throw ContractError("histogram scores must be finite");
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  }
  h.edges[bins] = hi;
  h.match_counts.assign(bins, 0);
  h.nonmatch_counts.assign(bins, 0);
  auto bin_of = [&](double v) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    return std::min(b, bins - 1);
  };
  for (double v : match_scores) ++h.match_counts[bin_of(v)];
  for (double v : nonmatch_scores) ++h.nonmatch_counts[bin_of(v)];
  return h;
}

RetrievalTask restrict_to_camera(const RetrievalTask& task, const DatasetBundle& bundle,
                                 CameraMode mode) {
  const int cam = bundle.scene(task.query.query_scene_id).cam_id;
  RetrievalTask out = task;
  out.query.gallery_scene_ids.clear();
  for (SceneId s : task.gallery()) {
    const bool same = bundle.scene(s).cam_id == cam;
    if (same == (mode == CameraMode::kSameCam)) out.query.gallery_scene_ids.push_back(s);
  }
  return out;
}

MetricReport evaluate_person_search(std::span<const RetrievalTask> tasks,
                                    const DatasetBundle& bundle,
                                    const DetectionProvider& provider,
                                    const SceneEmbeddings& scenes, const GfnConfig& cfg,
                                    const FusionParams& params, SearchFlags flags,
                                    unsigned threads) {
  std::vector<const RetrievalTask*> live;
  std::size_t empty = 0;
  for (const auto& t : tasks) {
    if (t.gallery().empty()) {
      ++empty;
    } else {
      live.push_back(&t);
    }
  }
  std::vector<RankedResult> results(live.size());
  std::vector<QueryGroundTruth> gts(live.size());
  std::vector<std::exception_ptr> errors(live.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < live.size(); i += stride) {
      try {
        results[i] = two_phase_search(*live[i], provider, scenes, cfg, params, flags);
        gts[i] = build_ground_truth(live[i]->query, bundle);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, live.size()));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  MetricReport r = person_retrieval_metrics(results, gts);
  r.excluded_queries += empty;
  r.metadata["use_gfn_filter"] = flags.use_gfn_filter ? "true" : "false";
  r.metadata["use_gfn_weight"] = flags.use_gfn_weight ? "true" : "false";
  std::size_t gallery_total = 0;
  for (const auto* t : live) gallery_total += t->gallery().size();
  r.metadata["mean_gallery_size"] =
      std::to_string(live.empty() ? 0.0 : static_cast<double>(gallery_total) / live.size());
  return r;
}

MetricReport camera_split_eval(std::span<const RetrievalTask> tasks, const DatasetBundle& bundle,
                               CameraMode mode, const DetectionProvider& provider,
                               const SceneEmbeddings& scenes, const GfnConfig& cfg,
                               const FusionParams& params, SearchFlags flags, unsigned threads) {
  std::vector<RetrievalTask> restricted;
  restricted.reserve(tasks.size());
  for (const auto& t : tasks) restricted.push_back(restrict_to_camera(t, bundle, mode));
  MetricReport r =
      evaluate_person_search(restricted, bundle, provider, scenes, cfg, params, flags, threads);
  r.metadata["camera_mode"] = mode == CameraMode::kSameCam ? "same_cam" : "cross_cam";
  return r;
}

}  // namespace gfn
