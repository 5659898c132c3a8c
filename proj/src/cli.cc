#include "gfn/cli.h"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "gfn/data.h"
#include "gfn/embedding_store.h"
#include "gfn/errors.h"
#include "gfn/evaluation.h"
#include "gfn/identity_split.h"
#include "gfn/retrieval.h"
#include "gfn/retrieval_spec.h"
#include "gfn/trainer.h"

namespace gfn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::kTrain:
      return "train";
    case FusionMode::kInference:
      return "inference";
    case FusionMode::kBypass:
      return "bypass";
  }
  return "train";
}

FusionMode parse_mode(const std::string& s) {
  if (s == "train") return FusionMode::kTrain;
  if (s == "inference") return FusionMode::kInference;
  if (s == "bypass") return FusionMode::kBypass;
  throw ConfigError("unknown fusion mode '" + s + "'");
}

// Structural check of `user` against the schema: known keys, compatible
// types. `path` names the offending key in messages.
void check_against(const json& schema, const json& user, const std::string& path) {
  if (schema.is_object()) {
    if (!user.is_object()) throw ConfigError("config key '" + path + "' must be an object");
    for (const auto& [key, value] : user.items()) {
      const std::string child = path.empty() ? key : path + "." + key;
      if (!schema.contains(key)) throw ConfigError("unknown config key '" + child + "'");
      check_against(schema.at(key), value, child);
    }
    return;
  }
  auto compatible = [&](const json& s, const json& u) {
    if (s.is_null()) return u.is_null() || u.is_number();
    if (s.is_number()) return u.is_number();
    if (s.is_boolean()) return u.is_boolean();
    if (s.is_string()) return u.is_string();
    return false;
  };
  if (schema.is_array()) {
    if (!user.is_array()) throw ConfigError("config key '" + path + "' must be a list");
    for (const auto& v : user) {
      if (!v.is_number()) throw ConfigError("config key '" + path + "' must list numbers");
    }
    return;
  }
  if (!compatible(schema, user)) {
    throw ConfigError("config key '" + path + "' has the wrong type");
  }
}

// Deep merge of `over` onto `base`.
void merge_into(json& base, const json& over) {
  for (const auto& [key, value] : over.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      merge_into(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

fs::path resolve_path(const std::string& s, const fs::path& base) {
  if (s.empty()) return {};
  fs::path p(s);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

template <typename T>
T get_int(const json& j, const char* key, T min_value) {
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(std::string("config key '") + key + "' must be an integer");
  const auto raw = v.get<long long>();
  if (raw < static_cast<long long>(min_value)) {
    throw ConfigError(std::string("config key '") + key + "' is out of range");
  }
  return static_cast<T>(raw);
}

const fs::path& require(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("config is missing '") + key + "'");
  if (!fs::exists(p)) throw LoadError(std::string(key) + " not found: " + p.string());
  return p;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * v);
  return buf;
}

// Everything a retrieval run needs, from files or from a toy world.
struct EvalInputs {
  DatasetBundle bundle;
  std::vector<RetrievalTask> tasks;
  InMemoryDetectionProvider provider;
  SceneEmbeddings scenes;
  FusionParams fusion;
};

FusionParams fusion_for(const RunConfig& cfg, std::size_t dim) {
  if (!cfg.params.empty()) {
    return load_params(require(cfg.params, "params")).inference_fusion();
  }
  return FusionParams::identity(dim, FusionMode::kInference);
}

EvalInputs inputs_from_files(const RunConfig& cfg) {
  EvalInputs in{load_dataset(require(cfg.dataset, "dataset")), {}, {}, {}, {}};
  const EmbeddingStore persons = load_embeddings(require(cfg.person_embeddings, "person_embeddings"));
  const EmbeddingStore scenes = load_embeddings(require(cfg.scene_embeddings, "scene_embeddings"));
  in.provider = load_detections(require(cfg.detections, "detections"), persons);
  in.scenes = scene_embeddings_from_store(scenes);
  in.fusion = fusion_for(cfg, scenes.dim());
  const RetrievalSpec spec = load_retrieval_spec(require(cfg.retrieval_spec, "retrieval_spec"));
  for (const ResolvedQuery& q :
       resolve_retrieval_spec(spec, in.bundle, cfg.eval.exclude_query_scene)) {
    if (!persons.contains(q.query_ann_id)) {
      throw DataError("no person embedding for query annotation " + std::to_string(q.query_ann_id));
    }
    if (!in.scenes.count(q.query_scene_id)) {
      throw DataError("no scene embedding for query scene " + std::to_string(q.query_scene_id));
    }
    in.tasks.push_back({q, persons.embedding(q.query_ann_id), in.scenes.at(q.query_scene_id)});
  }
  return in;
}

TrainableParams toy_params(const RunConfig& cfg) {
  if (!cfg.params.empty()) return load_params(require(cfg.params, "params"));
  TrainableParams p = TrainableParams::init(static_cast<std::size_t>(cfg.synth.dim), cfg.seed,
                                            cfg.train.init_noise, cfg.train.fusion_mode);
  return p;
}

EvalInputs inputs_from_world(const SynthWorld& world, const TrainableParams& p) {
  return {world.bundle, toy_tasks(world, p), toy_detections(world),
          toy_scene_embeddings(world, p), p.inference_fusion()};
}

struct FourWay {
  const char* name;
  SearchFlags flags;
};
constexpr FourWay kFourWay[] = {{"plain", {false, false}},
                                {"weight", {false, true}},
                                {"filter", {true, false}},
                                {"both", {true, true}}};

void write_json(const fs::path& p, const json& j) { write_text_file(p, j.dump(2) + "\n"); }

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw LoadError("cannot create output directory " + dir.string() + ": " + ec.message());
}

}  // namespace

json default_config_json() {
  const RunConfig d;
  const SynthConfig& s = d.synth;
  json j;
  j["dataset"] = "";
  j["person_embeddings"] = "";
  j["scene_embeddings"] = "";
  j["detections"] = "";
  j["retrieval_spec"] = "";
  j["params"] = "";
  j["output_dir"] = d.output_dir.string();
  j["seed"] = d.seed;
  j["threads"] = d.threads;
  j["gfn"] = {{"tau", d.gfn.tau},
              {"beta", d.gfn.beta},
              {"alpha", d.gfn.alpha},
              {"lambda_gfn", d.gfn.lambda_gfn},
              {"objective", to_string(d.gfn.objective)},
              {"query_source", to_string(d.gfn.query_source)},
              {"orientation", to_string(d.gfn.orientation)}};
  j["sample_plan"] = {{"positives_per_person", d.plan.positives_per_person},
                      {"hard_negatives_per_person", d.plan.hard_negatives_per_person},
                      {"use_lut", d.plan.use_lut}};
  j["synth"] = {{"num_identities", s.num_identities},
                {"num_scenes", s.num_scenes},
                {"persons_min", s.persons_min},
                {"persons_max", s.persons_max},
                {"dim", s.dim},
                {"identity_noise_std", s.identity_noise_std},
                {"scene_context_std", s.scene_context_std},
                {"scene_noise_std", s.scene_noise_std},
                {"cameras", s.cameras},
                {"camera_dims", s.camera_dims},
                {"clutter_dims", s.clutter_dims},
                {"camera_affinity", s.camera_affinity},
                {"group_size", s.group_size},
                {"group_cohesion", s.group_cohesion},
                {"unknowns_per_scene", s.unknowns_per_scene},
                {"holdout_fraction", s.holdout_fraction},
                {"seed", s.seed}};
  j["train"] = {{"learning_rate", d.train.learning_rate},
                {"epochs", d.train.epochs},
                {"batch_size", d.train.batch_size},
                {"init_noise", d.train.init_noise},
                {"fusion_mode", mode_name(d.train.fusion_mode)},
                {"audit", d.train.audit},
                {"oim_queue_size", d.train.oim_queue_size}};
  j["eval"] = {{"exclude_query_scene", d.eval.exclude_query_scene},
               {"gallery_sizes", json::array()}};
  j["filter"] = {{"recall_targets", d.filter.recall_targets},
                 {"bins", d.filter.bins},
                 {"preset", d.filter.preset},
                 {"negative_fraction", nullptr},
                 {"npv", nullptr},
                 {"detection_time_fraction", nullptr}};
  j["split"] = {{"val_fraction", d.split.val_fraction},
                {"ignore_top_k", d.split.ignore_top_k}};
  return j;
}

std::vector<json> expand_grid(const json& config) {
  const json schema = default_config_json();
  std::vector<json> runs = {config};
  // Walk leaves; every array sitting where the schema holds a scalar (or an
  // unknown key, left for parse to reject) multiplies the run list.
  std::function<void(const json&, const json*, const json::json_pointer&)> walk =
      [&](const json& node, const json* sch, const json::json_pointer& ptr) {
        if (node.is_object()) {
          for (const auto& [key, value] : node.items()) {
            const json* child = sch && sch->is_object() && sch->contains(key) ? &sch->at(key) : nullptr;
            walk(value, child, ptr / key);
          }
          return;
        }
        if (!node.is_array() || (sch && sch->is_array())) return;
        if (node.empty()) throw ConfigError("grid axis '" + ptr.to_string() + "' is empty");
        std::vector<json> next;
        for (const json& run : runs) {
          for (const json& v : node) {
            json r = run;
            r[ptr] = v;
            next.push_back(std::move(r));
          }
        }
        runs = std::move(next);
      };
  walk(config, &schema, json::json_pointer());
  return runs;
}

RunConfig parse_run_config(const json& config, const fs::path& base_dir) {
  json schema = default_config_json();
  check_against(schema, config, "");
  json j = schema;
  merge_into(j, config);

  RunConfig c;
  c.dataset = resolve_path(j.at("dataset").get<std::string>(), base_dir);
  c.person_embeddings = resolve_path(j.at("person_embeddings").get<std::string>(), base_dir);
  c.scene_embeddings = resolve_path(j.at("scene_embeddings").get<std::string>(), base_dir);
  c.detections = resolve_path(j.at("detections").get<std::string>(), base_dir);
  c.retrieval_spec = resolve_path(j.at("retrieval_spec").get<std::string>(), base_dir);
  c.params = resolve_path(j.at("params").get<std::string>(), base_dir);
  c.output_dir = resolve_path(j.at("output_dir").get<std::string>(), base_dir);
  c.seed = get_int<std::uint64_t>(j, "seed", 0);
  c.threads = get_int<unsigned>(j, "threads", 1);

  const json& g = j.at("gfn");
  c.gfn.tau = g.at("tau").get<double>();
  c.gfn.beta = g.at("beta").get<double>();
  c.gfn.alpha = g.at("alpha").get<double>();
  c.gfn.lambda_gfn = g.at("lambda_gfn").get<double>();
  c.gfn.objective = parse_objective(g.at("objective").get<std::string>());
  c.gfn.query_source = parse_query_source(g.at("query_source").get<std::string>());
  c.gfn.orientation = parse_orientation(g.at("orientation").get<std::string>());
  c.gfn.validate();

  const json& sp = j.at("sample_plan");
  c.plan.positives_per_person = get_int<int>(sp, "positives_per_person", 0);
  c.plan.hard_negatives_per_person = get_int<int>(sp, "hard_negatives_per_person", 0);
  c.plan.use_lut = sp.at("use_lut").get<bool>();
  c.plan.validate();

  const json& s = j.at("synth");
  c.has_synth = config.contains("synth");
  c.synth.num_identities = get_int<int>(s, "num_identities", 1);
  c.synth.num_scenes = get_int<int>(s, "num_scenes", 1);
  c.synth.persons_min = get_int<int>(s, "persons_min", 1);
  c.synth.persons_max = get_int<int>(s, "persons_max", 1);
  c.synth.dim = get_int<int>(s, "dim", 2);
  c.synth.identity_noise_std = s.at("identity_noise_std").get<double>();
  c.synth.scene_context_std = s.at("scene_context_std").get<double>();
  c.synth.scene_noise_std = s.at("scene_noise_std").get<double>();
  c.synth.cameras = get_int<int>(s, "cameras", 1);
  c.synth.camera_dims = get_int<int>(s, "camera_dims", 0);
  c.synth.clutter_dims = get_int<int>(s, "clutter_dims", 0);
  c.synth.camera_affinity = s.at("camera_affinity").get<double>();
  c.synth.group_size = get_int<int>(s, "group_size", 1);
  c.synth.group_cohesion = s.at("group_cohesion").get<double>();
  c.synth.unknowns_per_scene = get_int<int>(s, "unknowns_per_scene", 0);
  c.synth.holdout_fraction = s.at("holdout_fraction").get<double>();
  c.synth.seed = get_int<std::uint64_t>(s, "seed", 0);
  c.synth.validate();

  const json& t = j.at("train");
  c.train.learning_rate = t.at("learning_rate").get<double>();
  c.train.epochs = get_int<int>(t, "epochs", 0);
  c.train.batch_size = get_int<std::size_t>(t, "batch_size", 1);
  c.train.init_noise = t.at("init_noise").get<double>();
  c.train.fusion_mode = parse_mode(t.at("fusion_mode").get<std::string>());
  c.train.audit = t.at("audit").get<bool>();
  c.train.oim_queue_size = get_int<std::size_t>(t, "oim_queue_size", 1);
  if (!(c.train.learning_rate >= 0.0) || !(c.train.init_noise >= 0.0)) {
    throw ConfigError("train.learning_rate and train.init_noise must be >= 0");
  }

  const json& e = j.at("eval");
  c.eval.exclude_query_scene = e.at("exclude_query_scene").get<bool>();
  for (const json& v : e.at("gallery_sizes")) {
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      throw ConfigError("eval.gallery_sizes must hold positive integers");
    }
    c.eval.gallery_sizes.push_back(v.get<std::size_t>());
  }

  const json& f = j.at("filter");
  c.filter.recall_targets.clear();
  for (const json& v : f.at("recall_targets")) {
    const double r = v.get<double>();
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("filter.recall_targets must lie in (0, 1]");
    c.filter.recall_targets.push_back(r);
  }
  if (c.filter.recall_targets.empty()) throw ConfigError("filter.recall_targets is empty");
  c.filter.bins = get_int<std::size_t>(f, "bins", 1);
  c.filter.preset = f.at("preset").get<std::string>();
  if (!c.filter.preset.empty()) savings_preset(c.filter.preset);
  auto opt = [&](const char* key) -> std::optional<double> {
    const json& v = f.at(key);
    if (v.is_null()) return std::nullopt;
    const double x = v.get<double>();
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(std::string("filter.") + key + " must lie in [0, 1]");
    return x;
  };
  c.filter.negative_fraction = opt("negative_fraction");
  c.filter.npv = opt("npv");
  c.filter.detection_time_fraction = opt("detection_time_fraction");

  const json& sl = j.at("split");
  c.split.val_fraction = sl.at("val_fraction").get<double>();
  c.split.ignore_top_k = get_int<std::size_t>(sl, "ignore_top_k", 0);
  if (!(c.split.val_fraction > 0.0 && c.split.val_fraction < 1.0)) {
    throw ConfigError("split.val_fraction must lie in (0, 1)");
  }
  return c;
}

std::vector<RunConfig> load_run_configs(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const LoadError& e) {
    throw ConfigError(e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
  std::vector<RunConfig> runs;
  for (const json& r : expand_grid(j)) runs.push_back(parse_run_config(r, path.parent_path()));
  return runs;
}

SavingsPreset savings_preset(const std::string& name) {
  if (name == "cuhk") return {0.999, 0.914, 0.610};
  if (name == "prw") return {0.993, 0.115, 0.578};
  throw ConfigError("unknown savings preset '" + name + "' (expected cuhk or prw)");
}

int cmd_validate(const fs::path& dataset, std::ostream& out) {
  if (dataset.empty()) throw ConfigError("validate needs a dataset path");
  const DatasetBundle b = load_dataset(dataset);
  out << dataset.string() << ": " << b.scenes().size() << " scenes, "
      << b.annotations().size() << " annotations, " << b.identities().size() << " identities\n";
  out << b.report().issues.size() << " issue(s)\n";
  for (const auto& issue : b.report().issues) {
    out << "  " << to_string(issue.kind) << " scene " << issue.scene_id << ": " << issue.message
        << "\n";
  }
  return kExitOk;
}

int cmd_split(const fs::path& dataset, const SplitSection& split, std::uint64_t seed,
              const fs::path& out_dir, std::ostream& out) {
  if (dataset.empty()) throw ConfigError("split needs a dataset path");
  const DatasetBundle b = load_dataset(dataset);
  const SceneGraph g = build_identity_graph(b, split.ignore_top_k);
  const SceneSplit s = split_components(g, split.val_fraction, seed);
  const std::set<PersonId> leaked = leaked_identities(b, g, s);
  prepare_dir(out_dir);
  save_dataset(b.subset(s.train, "train"), out_dir / "train.json");
  save_dataset(b.subset(s.val, "val"), out_dir / "val.json");
  const double frac = static_cast<double>(s.val.size()) / static_cast<double>(g.nodes.size());
  json report = {{"num_components", s.num_components},
                 {"train_scenes", s.train.size()},
                 {"val_scenes", s.val.size()},
                 {"val_fraction", frac},
                 {"target_val_fraction", split.val_fraction},
                 {"ignored_identities", g.ignored_identities},
                 {"leaked_identities", leaked},
                 {"seed", seed}};
  write_json(out_dir / "split_report.json", report);
  out << "split: " << s.train.size() << " train / " << s.val.size() << " val scenes over "
      << s.num_components << " components, " << leaked.size() << " leaked identities\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const EvalInputs in = inputs_from_files(cfg);
  prepare_dir(cfg.output_dir);

  std::map<std::string, MetricReport> reports;
  for (const auto& w : kFourWay) {
    MetricReport r = evaluate_person_search(in.tasks, in.bundle, in.provider, in.scenes, cfg.gfn,
                                            in.fusion, w.flags, cfg.threads);
    r.metadata["flags"] = w.name;
    write_text_file(cfg.output_dir / (std::string("report_") + w.name + ".json"), r.to_json());
    reports.emplace(w.name, std::move(r));
  }

  std::vector<std::map<SceneId, double>> scores;
  std::vector<ResolvedQuery> queries;
  for (const auto& t : in.tasks) {
    scores.push_back(score_gallery_scenes(t, in.scenes, cfg.gfn, in.fusion));
    queries.push_back(t.query);
  }
  write_text_file(cfg.output_dir / "report_gfn_scene.json",
                  gfn_scene_metrics(scores, queries, in.bundle).to_json());

  const MetricReport& plain = reports.at("plain");
  std::string csv = "flags,mAP,top-1,delta_mAP,delta_top-1\n";
  for (const auto& w : kFourWay) {
    const MetricReport& r = reports.at(w.name);
    csv += std::string(w.name) + "," + fmt_double(r.map()) + "," + fmt_double(r.top1()) + "," +
           fmt_double(r.map() - plain.map()) + "," + fmt_double(r.top1() - plain.top1()) + "\n";
    out << w.name << ": mAP " << percent(r.map()) << ", top-1 " << percent(r.top1()) << "\n";
  }
  write_text_file(cfg.output_dir / "summary.csv", csv);

  if (!cfg.eval.gallery_sizes.empty()) {
    std::string sweep = "gallery_size,mAP_plain,mAP_gfn,top1_plain,top1_gfn\n";
    for (std::size_t size : cfg.eval.gallery_sizes) {
      std::vector<RetrievalTask> sub;
      for (const auto& t : in.tasks) {
        // Never below the positive count, never above the full gallery.
        std::size_t positives = 0;
        for (SceneId s : t.gallery()) positives += in.bundle.identities_in(s).count(t.query.person_id);
        const std::size_t n = std::min(t.gallery().size(), std::max(size, std::max<std::size_t>(positives, 1)));
        sub.push_back(subsample_gallery(t, in.bundle, n, cfg.seed));
      }
      const MetricReport a = evaluate_person_search(sub, in.bundle, in.provider, in.scenes, cfg.gfn,
                                                    in.fusion, {false, false}, cfg.threads);
      const MetricReport b = evaluate_person_search(sub, in.bundle, in.provider, in.scenes, cfg.gfn,
                                                    in.fusion, {true, true}, cfg.threads);
      sweep += std::to_string(size) + "," + fmt_double(a.map()) + "," + fmt_double(b.map()) + "," +
               fmt_double(a.top1()) + "," + fmt_double(b.top1()) + "\n";
    }
    write_text_file(cfg.output_dir / "gallery_sweep.csv", sweep);
  }
  return kExitOk;
}

int cmd_train_toy(const RunConfig& cfg, std::ostream& out) {
  const SynthWorld world = generate_world(cfg.synth);
  TrainableParams init = TrainableParams::init(static_cast<std::size_t>(cfg.synth.dim), cfg.seed,
                                               cfg.train.init_noise, cfg.train.fusion_mode);
  init.learning_rate = cfg.train.learning_rate;
  init.epochs = cfg.train.epochs;
  TrainConfig tc;
  tc.gfn = cfg.gfn;
  tc.plan = cfg.plan;
  tc.batch_size = cfg.train.batch_size;
  tc.seed = cfg.seed;
  tc.audit = cfg.train.audit;
  tc.oim_queue_size = cfg.train.oim_queue_size;
  const ToyReport before = evaluate_toy(world, init, cfg.gfn, cfg.threads);
  const TrainResult trained = train_gfn(world, init, tc);
  const ToyReport after = evaluate_toy(world, trained.params, cfg.gfn, cfg.threads);

  const fs::path dir = cfg.output_dir;
  prepare_dir(dir);
  write_text_file(dir / "loss_curve.csv", loss_curve_csv(trained.curve));
  save_params(trained.params, dir / "model.json");
  write_text_file(dir / "toy_report.json", after.to_json());
  write_text_file(dir / "toy_report_untrained.json", before.to_json());
  json summary = {{"objective", to_string(cfg.gfn.objective)},
                  {"epochs", trained.curve.size()},
                  {"audit_max_rel_error", trained.audit_max_rel_error},
                  {"gfn_top1_untrained", before.gfn_scene.top1()},
                  {"gfn_top1_trained", after.gfn_scene.top1()},
                  {"gfn_map_trained", after.gfn_scene.map()},
                  {"deltas", after.deltas}};
  if (!trained.curve.empty()) {
    summary["first_epoch_gfn_loss"] = trained.curve.front().gfn;
    summary["last_epoch_gfn_loss"] = trained.curve.back().gfn;
  }
  write_json(dir / "train_summary.json", summary);

  // An eval-ready copy of the world, consumable by `eval`.
  const fs::path fx = dir / "fixture";
  prepare_dir(fx);
  save_dataset(world.bundle, fx / "dataset.json");
  EmbeddingStore persons(EmbeddingKind::kPerson, static_cast<std::size_t>(cfg.synth.dim));
  for (const auto& [ann, f] : world.person_features) persons.add(ann, std::span<const double>(f));
  save_embeddings(persons, fx / "person_embeddings.json");
  EmbeddingStore scenes(EmbeddingKind::kScene, static_cast<std::size_t>(cfg.synth.dim));
  for (const auto& [sid, e] : toy_scene_embeddings(world, trained.params)) {
    scenes.add(sid, std::span<const double>(e));
  }
  save_embeddings(scenes, fx / "scene_embeddings.json");
  std::vector<GalleryDetection> dets;
  std::vector<std::int64_t> det_ids;
  const InMemoryDetectionProvider provider = toy_detections(world);
  for (SceneId sid : world.bundle.scene_ids()) {
    const auto& anns = world.bundle.annotations_in(sid);
    const auto scene_dets = provider.detections(sid);
    for (std::size_t k = 0; k < scene_dets.size(); ++k) {
      dets.push_back(scene_dets[k]);
      det_ids.push_back(anns[k]);
    }
  }
  save_detections(fx / "detections.jsonl", dets, det_ids);
  std::vector<ResolvedQuery> queries;
  for (const auto& t : toy_tasks(world, trained.params)) queries.push_back(t.query);
  write_text_file(fx / "retrieval_spec.json", serialize_retrieval_spec(to_fully_specified(queries)));
  json eval_cfg = {{"dataset", "dataset.json"},
                   {"person_embeddings", "person_embeddings.json"},
                   {"scene_embeddings", "scene_embeddings.json"},
                   {"detections", "detections.jsonl"},
                   {"retrieval_spec", "retrieval_spec.json"},
                   {"params", "../model.json"},
                   {"output_dir", "eval"},
                   {"eval",
                    {{"exclude_query_scene", true}, {"gallery_sizes", cfg.eval.gallery_sizes}}},
                   {"gfn",
                    {{"objective", to_string(cfg.gfn.objective)},
                     {"tau", cfg.gfn.tau},
                     {"beta", cfg.gfn.beta},
                     {"alpha", cfg.gfn.alpha},
                     {"lambda_gfn", cfg.gfn.lambda_gfn}}}};
  write_json(fx / "eval_config.json", eval_cfg);

  out << "train-toy: " << to_string(cfg.gfn.objective) << ", " << trained.curve.size()
      << " epochs, GFN scene top-1 " << percent(before.gfn_scene.top1()) << " -> "
      << percent(after.gfn_scene.top1()) << ", person top-1 delta (weight) "
      << fmt_double(after.deltas.at("weight.top-1")) << "\n";
  return kExitOk;
}

int cmd_filter_analysis(const RunConfig& cfg, std::ostream& out) {
  prepare_dir(cfg.output_dir);
  json result;

  std::optional<double> detection_share = cfg.filter.detection_time_fraction;
  if (!cfg.filter.preset.empty()) {
    const SavingsPreset p = savings_preset(cfg.filter.preset);
    const double neg = cfg.filter.negative_fraction.value_or(p.negative_fraction);
    const double npv = cfg.filter.npv.value_or(p.npv);
    if (!detection_share) detection_share = p.detection_time_fraction;
    const double saved = compute_savings(neg, npv, *detection_share);
    result["preset"] = {{"name", cfg.filter.preset},
                        {"negative_fraction", neg},
                        {"npv", npv},
                        {"detection_time_fraction", *detection_share},
                        {"savings", saved}};
    out << "preset " << cfg.filter.preset << ": " << percent(saved) << " computation saved\n";
  }

  std::optional<EvalInputs> in;
  if (!cfg.dataset.empty()) {
    in = inputs_from_files(cfg);
  } else if (cfg.has_synth) {
    const SynthWorld world = generate_world(cfg.synth);
    in = inputs_from_world(world, toy_params(cfg));
  }
  if (in) {
    std::vector<double> match, nonmatch;
    for (const auto& t : in->tasks) {
      for (const auto& [sid, s] : score_gallery_scenes(t, in->scenes, cfg.gfn, in->fusion)) {
        // Repeated gallery listings count once per listing.
        const auto listed = std::count(t.gallery().begin(), t.gallery().end(), sid);
        for (long k = 0; k < listed; ++k) {
          (in->bundle.identities_in(sid).count(t.query.person_id) ? match : nonmatch).push_back(s);
        }
      }
    }
    if (match.empty() || nonmatch.empty()) {
      throw DataError("filter analysis needs both matching and non-matching gallery scenes");
    }
    write_text_file(cfg.output_dir / "histogram.csv",
                    score_histogram(match, nonmatch, cfg.filter.bins).to_csv());
    const double neg = static_cast<double>(nonmatch.size()) /
                       static_cast<double>(match.size() + nonmatch.size());
    std::string npv_csv = "recall_target,threshold,npv,savings\n";
    json rows = json::array();
    for (double target : cfg.filter.recall_targets) {
      const NpvResult r = npv_at_recall(match, nonmatch, target);
      json row = {{"recall_target", target}, {"threshold", r.threshold}, {"npv", r.npv}};
      std::string saved_text;
      if (detection_share) {
        const double saved = compute_savings(neg, r.npv, *detection_share);
        row["savings"] = saved;
        saved_text = fmt_double(saved);
      }
      npv_csv += fmt_double(target) + "," + fmt_double(r.threshold) + "," + fmt_double(r.npv) +
                 "," + saved_text + "\n";
      out << "recall " << percent(target) << ": threshold " << fmt_double(r.threshold) << ", npv "
          << percent(r.npv) << "\n";
      rows.push_back(row);
    }
    write_text_file(cfg.output_dir / "npv.csv", npv_csv);
    result["measured"] = {{"num_match", match.size()},
                          {"num_nonmatch", nonmatch.size()},
                          {"negative_fraction", neg},
                          {"npv", rows}};
  }
  if (result.empty()) {
    throw ConfigError("filter-analysis needs a preset, a dataset or a synth block");
  }
  write_json(cfg.output_dir / "filter_analysis.json", result);
  return kExitOk;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gallery filter toolchain: validation, splitting, evaluation and toy training"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<unsigned> threads;
  app.add_option("--config", config_path, "JSON run config");
  app.add_option("--seed", seed, "Overrides the config seed");
  app.add_option("--out", out_dir, "Overrides the output directory");
  app.add_option("--threads", threads, "Worker threads for per-query work")->check(CLI::PositiveNumber);

  std::string dataset_arg;
  auto* validate = app.add_subcommand("validate", "Load a dataset and print its validation report");
  validate->add_option("dataset", dataset_arg, "Dataset JSON");
  auto* split = app.add_subcommand("split", "Identity-disjoint train/val split");
  split->add_option("dataset", dataset_arg, "Dataset JSON");
  std::optional<double> val_fraction;
  std::optional<std::size_t> ignore_top_k;
  split->add_option("--val-fraction", val_fraction, "Target validation share");
  split->add_option("--ignore-top-k", ignore_top_k, "Drop the k most frequent identities");
  auto* eval = app.add_subcommand("eval", "Four-way retrieval evaluation");
  auto* train = app.add_subcommand("train-toy", "Train on a synthetic world and report");
  auto* filter = app.add_subcommand("filter-analysis", "Score histograms, NPV and savings");
  std::string preset;
  filter->add_option("--preset", preset, "Timing preset: cuhk or prw");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    std::vector<RunConfig> runs;
    if (config_path.empty()) {
      runs.push_back(parse_run_config(json::object()));
    } else {
      runs = load_run_configs(config_path);
    }
    for (std::size_t i = 0; i < runs.size(); ++i) {
      RunConfig& r = runs[i];
      if (seed) r.seed = *seed;
      if (threads) r.threads = *threads;
      if (!out_dir.empty()) r.output_dir = out_dir;
      if (runs.size() > 1) {
        char name[32];
        std::snprintf(name, sizeof(name), "run_%03zu", i);
        r.output_dir /= name;
      }
      if (!dataset_arg.empty()) r.dataset = dataset_arg;
      if (val_fraction) r.split.val_fraction = *val_fraction;
      if (ignore_top_k) r.split.ignore_top_k = *ignore_top_k;
      if (!preset.empty()) {
        savings_preset(preset);
        r.filter.preset = preset;
      }

      if (validate->parsed()) {
        cmd_validate(r.dataset, out);
      } else if (split->parsed()) {
        cmd_split(r.dataset, r.split, r.seed, r.output_dir, out);
      } else if (eval->parsed()) {
        cmd_eval(r, out);
      } else if (train->parsed()) {
        cmd_train_toy(r, out);
      } else if (filter->parsed()) {
        cmd_filter_analysis(r, out);
      }
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingError& e) {
    err << "training failed at step " << e.step() << ": " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DegenerateInputError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const Error& e) {
    // Data, lookup and split errors.
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace gfn::cli
