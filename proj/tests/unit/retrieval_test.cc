#include "gfn/retrieval.h"

#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "gfn/errors.h"
#include "test_util.h"

namespace gfn {
namespace {

using testing::make_bundle;
using testing::random_vector;

// Three gallery scenes 2..4; the query is annotation 1 (identity 1 in s1).
struct World {
  DatasetBundle bundle = make_bundle({{1}, {1, 2}, {2}, {1, 3}});
  SceneEmbeddings scenes;
  InMemoryDetectionProvider provider;
  RetrievalTask task;
};

World make_world(std::uint64_t seed, std::size_t d = 6) {
  World w;
  Rng rng(seed);
  for (SceneId s = 1; s <= 4; ++s) w.scenes[s] = random_vector(rng, d);
  for (SceneId s = 2; s <= 4; ++s) {
    for (int k = 0; k < 2; ++k) {
      GalleryDetection det;
      det.scene_id = s;
      det.bbox = {10.0 + 80.0 * k, 100.0, 60.0, 150.0};
      det.embedding = random_vector(rng, d);
      det.s_det = 0.5 + 0.5 * rng.uniform();
      w.provider.add(det);
    }
  }
  w.task.query = {1, 1, 1, {2, 3, 4}};
  w.task.query_embedding = random_vector(rng, d);
  w.task.query_scene_embedding = w.scenes[1];
  return w;
}

GfnConfig combined_cfg() {
  GfnConfig cfg;
  cfg.objective = GfnObjective::kCombined;
  return cfg;
}

TEST(ScoreGallery, Examples) {
  World w = make_world(1);
  const auto params = FusionParams::identity(6, FusionMode::kBypass);
  const GfnConfig cfg = combined_cfg();
  w.task.query.gallery_scene_ids = {1, 3};
  const auto scores = score_gallery_scenes(w.task, w.scenes, cfg, params);
  EXPECT_NEAR(scores.at(1), 1.0, 1e-12);
  w.task.query.gallery_scene_ids = {3};
  EXPECT_EQ(score_gallery_scenes(w.task, w.scenes, cfg, params).size(), 1u);
}

TEST(ScoreGallery, MatchesRecomputation) {
  World w = make_world(2);
  auto params = FusionParams::identity(6, FusionMode::kInference);
  params.running_var.assign(6, 0.7);
  for (auto obj : {GfnObjective::kBaseline, GfnObjective::kCombined, GfnObjective::kSceneOnly}) {
    GfnConfig cfg;
    cfg.objective = obj;
    const auto scores = score_gallery_scenes(w.task, w.scenes, cfg, params);
    for (SceneId s : w.task.gallery()) {
      EXPECT_EQ(scores.at(s), gfn_score(w.task.query_embedding, w.task.query_scene_embedding,
                                        w.scenes.at(s), cfg, params));
    }
  }
}

TEST(ScoreGallery, MissingSceneIsDataError) {
  World w = make_world(3);
  w.scenes.erase(3);
  try {
    score_gallery_scenes(w.task, w.scenes, combined_cfg(),
                         FusionParams::identity(6, FusionMode::kBypass));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
}

TEST(FilterGallery, Examples) {
  const std::map<SceneId, double> scores = {{1, 0.3}, {2, 0.7}};
  auto r = filter_gallery(scores, 0.5);
  EXPECT_EQ(r.kept, (std::vector<SceneId>{2}));
  EXPECT_EQ(r.filtered, (std::vector<SceneId>{1}));
  EXPECT_EQ(filter_gallery(scores, -std::numeric_limits<double>::infinity()).kept.size(), 2u);
  EXPECT_EQ(filter_gallery(scores, 0.71).filtered.size(), 2u);
  EXPECT_EQ(filter_gallery(scores, 0.7).kept, (std::vector<SceneId>{2}));  // keep on equal
}

TEST(FilterGallery, MonotoneInLambda) {
  Rng rng(4);
  std::map<SceneId, double> scores;
  for (SceneId s = 1; s <= 30; ++s) scores[s] = 2.0 * rng.uniform() - 1.0;
  std::size_t prev = scores.size() + 1;
  for (double lambda = -1.0; lambda <= 1.0; lambda += 0.05) {
    const auto r = filter_gallery(scores, lambda);
    EXPECT_EQ(r.kept.size() + r.filtered.size(), scores.size());
    EXPECT_LE(r.kept.size(), prev);
    prev = r.kept.size();
  }
}

TEST(FinalScore, Examples) {
  EXPECT_DOUBLE_EQ(final_score(1.0, 1.0, 0.0, 0.2), 0.5);
  EXPECT_EQ(final_score(0.0, 0.8, 0.9, 0.2), 0.0);
  double prev = -1.0;
  for (double g = -1.0; g <= 1.0; g += 0.1) {
    const double f = final_score(0.7, 0.9, g, 0.2);
    EXPECT_GT(f, prev);
    prev = f;
  }
  EXPECT_LT(final_score(0.7, 0.9, 0.5, 0.2, LogisticOrientation::kDecreasing),
            final_score(0.7, 0.9, -0.5, 0.2, LogisticOrientation::kDecreasing));
}

TEST(TwoPhaseSearch, PlainRankingSingleDetection) {
  InMemoryDetectionProvider p;
  p.add({2, {0, 0, 10, 20}, {1, 1}, 0.8});
  RetrievalTask task;
  task.query = {1, 1, 1, {2}};
  task.query_embedding = {1, 0};
  task.query_scene_embedding = {1, 0};
  const auto r = two_phase_search(task, p, {}, GfnConfig{}, FusionParams::identity(2, FusionMode::kBypass),
                                  {false, false});
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_NEAR(r.entries[0].s_final, 0.8 / std::sqrt(2.0), 1e-12);
  EXPECT_FALSE(r.entries[0].s_gfn.has_value());
}

// Every score recomputed from scratch, then sorted by the documented order.
std::vector<RankedEntry> brute_force(const World& w, const GfnConfig& cfg,
                                     const FusionParams& params, SearchFlags flags) {
  std::vector<RankedEntry> out;
  for (SceneId s : w.task.gallery()) {
    const double g = gfn_score(w.task.query_embedding, w.task.query_scene_embedding,
                               w.scenes.at(s), cfg, params);
    if (flags.use_gfn_filter && g < cfg.lambda_gfn) continue;
    for (const auto& det : w.provider.detections(s)) {
      RankedEntry e;
      e.scene_id = s;
      e.bbox = det.bbox;
      e.s_reid = cosine_sim(w.task.query_embedding, det.embedding);
      e.s_det = det.s_det;
      const double weight = flags.use_gfn_weight ? logistic_weight(g, cfg.alpha) : 1.0;
      e.s_final = e.s_reid * e.s_det * weight;
      out.push_back(e);
    }
  }
  std::sort(out.begin(), out.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.s_final != b.s_final) return a.s_final > b.s_final;
    if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
    return a.bbox.x < b.bbox.x;
  });
  return out;
}

TEST(TwoPhaseSearch, MatchesBruteForce) {
  const auto params = FusionParams::identity(6, FusionMode::kBypass);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const World w = make_world(seed);
    GfnConfig cfg = combined_cfg();
    const auto scores = score_gallery_scenes(w.task, w.scenes, cfg, params);
    cfg.lambda_gfn = scores.at(3);  // s3 sits exactly on the threshold
    for (bool filter : {false, true}) {
      for (bool weight : {false, true}) {
        const SearchFlags flags{filter, weight};
        const auto got = two_phase_search(w.task, w.provider, w.scenes, cfg, params, flags);
        const auto want = brute_force(w, cfg, params, flags);
        ASSERT_EQ(got.entries.size(), want.size());
        for (std::size_t k = 0; k < want.size(); ++k) {
          EXPECT_EQ(got.entries[k].scene_id, want[k].scene_id);
          EXPECT_EQ(got.entries[k].bbox.x, want[k].bbox.x);
          EXPECT_NEAR(got.entries[k].s_final, want[k].s_final, 1e-12);
        }
        for (const auto& e : got.entries) EXPECT_FALSE(got.filtered_scene_ids.count(e.scene_id));
      }
    }
  }
}

TEST(TwoPhaseSearch, FilteredScenesAreNeverRequested) {
  const World w = make_world(7);
  const auto params = FusionParams::identity(6, FusionMode::kBypass);
  GfnConfig cfg = combined_cfg();
  const auto scores = score_gallery_scenes(w.task, w.scenes, cfg, params);
  cfg.lambda_gfn = scores.at(2) + 1e-9;  // drops s2 at least
  LoggingDetectionProvider log(w.provider);
  const auto r = two_phase_search(w.task, log, w.scenes, cfg, params, {true, false});
  EXPECT_TRUE(r.filtered_scene_ids.count(2));
  for (SceneId s : log.calls()) EXPECT_FALSE(r.filtered_scene_ids.count(s));
  for (const auto& e : r.entries) EXPECT_NE(e.scene_id, 2);
}

TEST(TwoPhaseSearch, TrueMatchLostAboveItsScore) {
  const World w = make_world(8);
  const auto params = FusionParams::identity(6, FusionMode::kBypass);
  GfnConfig cfg = combined_cfg();
  const auto scores = score_gallery_scenes(w.task, w.scenes, cfg, params);
  // Scenes 2 and 4 hold identity 1.
  cfg.lambda_gfn = std::max(scores.at(2), scores.at(4)) + 1e-6;
  const auto r = two_phase_search(w.task, w.provider, w.scenes, cfg, params, {true, true});
  for (const auto& e : r.entries) {
    EXPECT_NE(e.scene_id, 2);
    EXPECT_NE(e.scene_id, 4);
  }
}

TEST(TwoPhaseSearch, FlagsOffIgnoresConfig) {
  const World w = make_world(9);
  GfnConfig a = combined_cfg();
  GfnConfig b;
  b.objective = GfnObjective::kSceneOnly;
  b.alpha = 3.0;
  b.lambda_gfn = 0.99;
  auto pa = FusionParams::identity(6, FusionMode::kBypass);
  auto pb = FusionParams::identity(6, FusionMode::kInference);
  pb.gamma.assign(6, -2.0);
  const auto ra = two_phase_search(w.task, w.provider, w.scenes, a, pa, {false, false});
  const auto rb = two_phase_search(w.task, w.provider, w.scenes, b, pb, {false, false});
  ASSERT_EQ(ra.entries.size(), rb.entries.size());
  for (std::size_t k = 0; k < ra.entries.size(); ++k) {
    EXPECT_EQ(ra.entries[k].s_final, rb.entries[k].s_final);
    EXPECT_EQ(ra.entries[k].scene_id, rb.entries[k].scene_id);
  }
}

TEST(TwoPhaseSearch, WeightingKeepsWithinSceneOrder) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const World w = make_world(seed);
    const auto params = FusionParams::identity(6, FusionMode::kBypass);
    const auto r = two_phase_search(w.task, w.provider, w.scenes, combined_cfg(), params,
                                    {false, true});
    for (SceneId s : w.task.gallery()) {
      double prev = std::numeric_limits<double>::infinity();
      for (const auto& e : r.entries) {
        if (e.scene_id != s) continue;
        EXPECT_LE(e.s_reid * e.s_det, prev);
        prev = e.s_reid * e.s_det;
      }
    }
  }
}

TEST(TwoPhaseSearch, TiesBreakBySceneThenX) {
  InMemoryDetectionProvider p;
  p.add({3, {50, 0, 10, 10}, {1, 0}, 1.0});
  p.add({3, {20, 0, 10, 10}, {1, 0}, 1.0});
  p.add({2, {90, 0, 10, 10}, {1, 0}, 1.0});
  RetrievalTask task;
  task.query = {1, 1, 1, {3, 2}};
  task.query_embedding = {1, 0};
  task.query_scene_embedding = {1, 0};
  const auto r = two_phase_search(task, p, {}, GfnConfig{},
                                  FusionParams::identity(2, FusionMode::kBypass), {});
  ASSERT_EQ(r.entries.size(), 3u);
  EXPECT_EQ(r.entries[0].scene_id, 2);
  EXPECT_EQ(r.entries[1].bbox.x, 20.0);
  EXPECT_EQ(r.entries[2].bbox.x, 50.0);
}

TEST(Provider, RejectsBadDetScore) {
  InMemoryDetectionProvider p;
  EXPECT_THROW(p.add({1, {0, 0, 1, 1}, {1}, 1.5}), ContractError);
  EXPECT_THROW(p.add({1, {0, 0, 1, 1}, {1}, -0.1}), ContractError);
  EXPECT_TRUE(p.detections(42).empty());
}

TEST(Provider, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gfn_retrieval_test";
  std::filesystem::create_directories(dir);
  const World w = make_world(10);
  std::vector<GalleryDetection> dets;
  std::vector<std::int64_t> ids;
  EmbeddingStore store(EmbeddingKind::kPerson, 6);
  for (SceneId s = 2; s <= 4; ++s) {
    for (const auto& d : w.provider.detections(s)) {
      ids.push_back(static_cast<std::int64_t>(100 + dets.size()));
      store.add(ids.back(), d.embedding);
      dets.push_back(d);
    }
  }
  save_detections(dir / "dets.jsonl", dets, ids);
  const auto back = load_detections(dir / "dets.jsonl", store);
  EXPECT_EQ(back.size(), dets.size());
  const auto s3 = back.detections(3);
  ASSERT_EQ(s3.size(), 2u);
  EXPECT_EQ(s3[1].bbox.x, 90.0);
  EXPECT_NEAR(s3[0].s_det, w.provider.detections(3)[0].s_det, 1e-12);

  write_text_file(dir / "bad.jsonl", "{\"scene_id\": 2, \"bbox\": [0, 0, 1, 1], \"s_det\": 0.5, "
                                     "\"embedding_id\": 100}\n{\"scene_id\": 2}\n");
  try {
    load_detections(dir / "bad.jsonl", store);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(SubsampleGallery, Examples) {
  const DatasetBundle b = make_bundle({{1}, {1}, {2}, {3}, {1, 2}, {4}, {2}});
  RetrievalTask task;
  task.query = {1, 1, 1, {2, 3, 4, 5, 6, 7}};
  EXPECT_EQ(subsample_gallery(task, b, 6, 1).gallery(), task.gallery());
  EXPECT_EQ(subsample_gallery(task, b, 2, 1).gallery(), (std::vector<SceneId>{2, 5}));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = subsample_gallery(task, b, 4, seed);
    EXPECT_EQ(a.gallery(), subsample_gallery(task, b, 4, seed).gallery());
    EXPECT_EQ(a.gallery().size(), 4u);
    EXPECT_TRUE(std::is_sorted(a.gallery().begin(), a.gallery().end()));
    EXPECT_TRUE(std::count(a.gallery().begin(), a.gallery().end(), 2));
    EXPECT_TRUE(std::count(a.gallery().begin(), a.gallery().end(), 5));
  }
  EXPECT_THROW(subsample_gallery(task, b, 7, 1), ContractError);
  EXPECT_THROW(subsample_gallery(task, b, 1, 1), ContractError);
  EXPECT_THROW(subsample_gallery(task, b, 0, 1), ContractError);
}

}  // namespace
}  // namespace gfn
