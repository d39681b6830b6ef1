#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdehaze/flow_core.hpp"
#include "flowdehaze/optics_sim.hpp"
#include "flowdehaze/sampler.hpp"
#include "flowdehaze/unet.hpp"

namespace flowdehaze {

struct SplitSizes {
  int train = 15;
  int val = 2;
  int test = 3;
};

struct DatasetSection {
  SimulationSpec simulation;
  SplitSizes splits;
};

struct TrainSection {
  TrainConfig config;
  ArchSpec arch = ArchSpec::desk();
  long checkpoint_every = 500;
  long val_every = 500;
  int val_batches = 4;
  long log_every = 1;
};

struct TilingSection {
  int tile = 64;
  double overlap = 0.5;
  bool allow_tile_mismatch = false;  // permit tile != train.patch_size
};

struct CalibrationSection {
  int n_bins = 50;
  std::string fit_split = "val";
  std::string apply_split = "test";
};

struct EvaluationSection {
  bool normalized_space = false;  // default: metrics on denormalized intensities
  std::vector<int> k_sweep{1, 2, 5, 10, 20, 50};
  std::vector<int> t_sweep{5, 10, 20};
};

struct PathsSection {
  std::filesystem::path workdir = "work";
  std::filesystem::path dataset_dir = "work/dataset";
  std::filesystem::path checkpoint;  // empty: <workdir>/checkpoints/final.fdck
};

struct ExperimentConfig {
  DatasetSection dataset;
  TrainSection train;
  SamplerConfig sample;
  TilingSection tiling;
  CalibrationSection calibration;
  EvaluationSection evaluation;
  PathsSection paths;

  /// Cross-field checks; throws ValidationError.
  void validate() const;
  std::filesystem::path checkpoint_path() const;

  /// Small CPU-scale profile: 64x64 blob images, tiny network, 32 px patches.
  static ExperimentConfig toy();
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Reads a JSON config file. Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Applies "a.b.c=value" (value parsed as JSON when possible, else taken as a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Environment variables FLOWDEHAZE_WORKDIR, FLOWDEHAZE_DATASET_DIR and FLOWDEHAZE_CHECKPOINT replace paths.
void apply_path_environment(ExperimentConfig& cfg);

}  // namespace flowdehaze
