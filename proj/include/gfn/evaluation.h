#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gfn/data.h"
#include "gfn/retrieval.h"
#include "gfn/retrieval_spec.h"

namespace gfn {

inline constexpr double kIouThreshold = 0.5;

double iou(const Box& a, const Box& b);

// Average precision of a ranked hit list: sum of precision at each hit,
// divided by `num_positives`. Unretrieved positives count as misses.
double ranked_average_precision(const std::vector<bool>& hits, std::size_t num_positives);

struct MetricReport {
  std::map<std::string, double> metrics;  // "mAP", "top-1", ...
  std::vector<AnnId> query_ids;           // evaluated queries, input order
  std::vector<double> per_query_ap;
  std::vector<double> per_query_top1;
  std::size_t excluded_queries = 0;       // no positives in the gallery
  std::map<std::string, std::string> metadata;

  double map() const { return metrics.at("mAP"); }
  double top1() const { return metrics.at("top-1"); }
  std::string to_json() const;
};

struct ScoredBox {
  Box bbox;
  double score = 0.0;
};

struct DetectionMetrics {
  double recall = 0.0;
  double ap = 0.0;
  std::size_t num_gt = 0;
  std::size_t num_detections = 0;
};

// Detections are matched greedily in descending score order (ties by scene
// then box x), each GT box at most once, to the unmatched GT of highest IoU.
DetectionMetrics detection_metrics(const std::map<SceneId, std::vector<ScoredBox>>& detections,
                                   const std::map<SceneId, std::vector<Box>>& ground_truth,
                                   double iou_thresh = kIouThreshold);

// Ground-truth occurrences of the query identity, one per gallery listing
// of each scene that holds it.
struct QueryGroundTruth {
  AnnId query_ann_id = 0;
  std::vector<std::pair<SceneId, Box>> boxes;
};

QueryGroundTruth build_ground_truth(const ResolvedQuery& query, const DatasetBundle& bundle);

// An entry is a hit when an uncredited GT box of the query identity in the
// same scene overlaps it at IoU >= 0.5; hits are credited in rank order.
std::vector<bool> match_ranked_entries(const RankedResult& result, const QueryGroundTruth& gt,
                                       double iou_thresh = kIouThreshold);

MetricReport person_retrieval_metrics(std::span<const RankedResult> results,
                                      std::span<const QueryGroundTruth> ground_truth);

// Scenes ranked by s_gfn descending, ties by ascending scene id; a scene is a
// match when it holds the query identity.
MetricReport gfn_scene_metrics(std::span<const std::map<SceneId, double>> scores,
                               std::span<const ResolvedQuery> queries,
                               const DatasetBundle& bundle);

struct NpvResult {
  double threshold = 0.0;
  double npv = 0.0;
};

// threshold = k-th largest match score for the smallest k with
// k / n >= recall_target; npv = share of nonmatches strictly below it.
NpvResult npv_at_recall(std::span<const double> match_scores,
                        std::span<const double> nonmatch_scores, double recall_target = 0.99);

// negative_fraction * npv * detection_time_fraction, all in [0, 1].
double compute_savings(double negative_fraction, double npv, double detection_time_fraction);

struct Histogram {
  std::vector<double> edges;  // bins + 1, ascending
  std::vector<std::size_t> match_counts;
  std::vector<std::size_t> nonmatch_counts;

  std::string to_csv() const;  // bin_lo,bin_hi,match_count,nonmatch_count
};

// Shared range [min, max] over both sets; widened by 0.5 either side when
// every score is equal.
Histogram score_histogram(std::span<const double> match_scores,
                          std::span<const double> nonmatch_scores, std::size_t bins);

enum class CameraMode { kSameCam, kCrossCam };

// Gallery restricted to scenes on the query scene's camera (same) or any
// other camera (cross).
RetrievalTask restrict_to_camera(const RetrievalTask& task, const DatasetBundle& bundle,
                                 CameraMode mode);

// Runs two_phase_search per task on `threads` workers and scores the results.
// Tasks whose gallery is empty are excluded and counted.
MetricReport evaluate_person_search(std::span<const RetrievalTask> tasks,
                                    const DatasetBundle& bundle,
                                    const DetectionProvider& provider,
                                    const SceneEmbeddings& scenes, const GfnConfig& cfg,
                                    const FusionParams& params, SearchFlags flags,
                                    unsigned threads = 1);

MetricReport camera_split_eval(std::span<const RetrievalTask> tasks, const DatasetBundle& bundle,
                               CameraMode mode, const DetectionProvider& provider,
                               const SceneEmbeddings& scenes, const GfnConfig& cfg,
                               const FusionParams& params, SearchFlags flags,
                               unsigned threads = 1);

}  // namespace gfn
