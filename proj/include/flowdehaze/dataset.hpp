#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdehaze/config.hpp"
#include "flowdehaze/optics_sim.hpp"

namespace flowdehaze {

// Dataset layout:
//   <dir>/manifest.json
//   <dir>/<split>/<id>_hazy.fdr, <dir>/<split>/<id>_clean.fdr
// The manifest holds the dataset config section, per-sample ids and seeds, and train-split
// normalization stats. It carries no timestamps so reruns are byte-identical.

inline constexpr int kDatasetFormatVersion = 1;
inline const std::vector<std::string> kSplitNames{"train", "val", "test"};

struct SampleEntry {
  std::string id;
  std::uint64_t signal_id = 0;
  std::uint64_t signal_seed = 0;
};

struct DatasetManifest {
  nlohmann::json dataset_config;
  std::optional<NormStats> norm_stats;  // absent when the train split is empty
  std::vector<std::vector<SampleEntry>> splits;  // indexed like kSplitNames

  const std::vector<SampleEntry>& split(const std::string& name) const;
};

struct LabeledPair {
  std::string id;
  PairedSample pair;
};

/// Signal id of item `index` in `split`; stable when other split sizes change.
std::uint64_t signal_id_for(const std::string& split, std::uint64_t index);

/// Generates all splits into cfg.paths.dataset_dir.
DatasetManifest write_dataset(const ExperimentConfig& cfg);

DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<LabeledPair> load_split(const std::filesystem::path& dir, const DatasetManifest& manifest,
                                    const std::string& split);

/// Normalizes hazy and clean rasters with their role stats.
PairedSample normalize_pair(const PairedSample& pair, const NormStats& stats);

nlohmann::json to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace flowdehaze
