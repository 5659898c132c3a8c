#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gfn/gfn_objective.h"
#include "gfn/lut.h"
#include "gfn/synth.h"
#include "json.hpp"

namespace gfn::cli {

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

struct TrainSection {
  double learning_rate = 2.0;
  int epochs = 400;
  std::size_t batch_size = 8;
  double init_noise = 0.1;
  FusionMode fusion_mode = FusionMode::kTrain;
  bool audit = true;
  std::size_t oim_queue_size = 500;
};

struct EvalSection {
  bool exclude_query_scene = true;
  std::vector<std::size_t> gallery_sizes;  // empty: no sweep
};

struct FilterSection {
  std::vector<double> recall_targets = {0.99};
  std::size_t bins = 20;
  std::string preset;  // "", "cuhk" or "prw"
  std::optional<double> negative_fraction;
  std::optional<double> npv;
  std::optional<double> detection_time_fraction;
};

struct SplitSection {
  double val_fraction = 0.2;
  std::size_t ignore_top_k = 0;
};

// One fully resolved run. Relative paths are resolved against the config
// file's directory.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path person_embeddings;
  std::filesystem::path scene_embeddings;
  std::filesystem::path detections;
  std::filesystem::path retrieval_spec;
  std::filesystem::path params;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  unsigned threads = 1;
  GfnConfig gfn;
  SamplePlan plan;
  SynthConfig synth;
  bool has_synth = false;  // config carried a synth block
  TrainSection train;
  EvalSection eval;
  FilterSection filter;
  SplitSection split;
};

// Every accepted key with its default. Values that are JSON arrays here are
// list-typed settings; every other array in a user config is a grid axis.
nlohmann::json default_config_json();

// Cartesian product over list-valued leaves at scalar positions, in key
// order. A config without lists yields itself.
std::vector<nlohmann::json> expand_grid(const nlohmann::json& config);

// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig parse_run_config(const nlohmann::json& config,
                           const std::filesystem::path& base_dir = {});

// Reads, expands and parses a config file.
std::vector<RunConfig> load_run_configs(const std::filesystem::path& path);

// Published timing presets: negative fraction, npv, detection time share.
struct SavingsPreset {
  double negative_fraction;
  double npv;
  double detection_time_fraction;
};
SavingsPreset savings_preset(const std::string& name);

int cmd_validate(const std::filesystem::path& dataset, std::ostream& out);
int cmd_split(const std::filesystem::path& dataset, const SplitSection& split,
              std::uint64_t seed, const std::filesystem::path& out_dir, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
int cmd_train_toy(const RunConfig& cfg, std::ostream& out);
int cmd_filter_analysis(const RunConfig& cfg, std::ostream& out);

// Full command line, including error-to-exit-code mapping.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace gfn::cli
