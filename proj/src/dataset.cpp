#include "flowdehaze/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "flowdehaze/error.hpp"
#include "flowdehaze/random.hpp"

namespace flowdehaze {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int split_index(const std::string& name) {
  const auto it = std::find(kSplitNames.begin(), kSplitNames.end(), name);
  if (it == kSplitNames.end()) throw ValidationError("unknown split '" + name + "' (expected train, val or test)");
  return static_cast<int>(it - kSplitNames.begin());
}

std::string sample_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  return buf;
}

}  // namespace

const std::vector<SampleEntry>& DatasetManifest::split(const std::string& name) const {
  return splits.at(static_cast<std::size_t>(split_index(name)));
}

std::uint64_t signal_id_for(const std::string& split, std::uint64_t index) {
  return (std::uint64_t(split_index(split)) << 32) | index;
}

json to_json(const NormStats& s) {
  return {{"hazy", {{"mean", s.hazy.mean}, {"std", s.hazy.std}}},
          {"clean", {{"mean", s.clean.mean}, {"std", s.clean.std}}}};
}

NormStats norm_stats_from_json(const json& j) {
  try {
    NormStats s;
    s.hazy = {j.at("hazy").at("mean").get<double>(), j.at("hazy").at("std").get<double>()};
    s.clean = {j.at("clean").at("mean").get<double>(), j.at("clean").at("std").get<double>()};
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed norm stats: ") + e.what());
  }
}

DatasetManifest write_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path dir = cfg.paths.dataset_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  const int sizes[] = {cfg.dataset.splits.train, cfg.dataset.splits.val, cfg.dataset.splits.test};
  DatasetManifest m;
  m.dataset_config = to_json(cfg)["dataset"];
  m.splits.resize(kSplitNames.size());
  std::vector<PairedSample> train;
  for (std::size_t s = 0; s < kSplitNames.size(); ++s) {
    const fs::path split_dir = dir / kSplitNames[s];
    fs::create_directories(split_dir, ec);
    if (ec) throw DataError("cannot create " + split_dir.string() + ": " + ec.message());
    for (int i = 0; i < sizes[s]; ++i) {
      const std::uint64_t sid = signal_id_for(kSplitNames[s], std::uint64_t(i));
      PairedSample pair = simulate_sample(cfg.dataset.simulation, sid);
      const std::string id = sample_name(std::uint64_t(i));
      write_raster(split_dir / (id + "_hazy.fdr"), pair.hazy);
      write_raster(split_dir / (id + "_clean.fdr"), pair.clean);
      m.splits[s].push_back({id, sid, derive_seed(cfg.dataset.simulation.signal.seed, sid)});
      if (s == 0) train.push_back(std::move(pair));
    }
  }
  if (!train.empty()) m.norm_stats = compute_norm_stats(train);

  json j;
  j["format_version"] = kDatasetFormatVersion;
  j["raster_format"] = "FDRASTER: 8-byte magic, uint32 height, uint32 width, float32 LE row-major";
  j["dataset"] = m.dataset_config;
  j["norm_stats"] = m.norm_stats ? to_json(*m.norm_stats) : json(nullptr);
  j["splits"] = json::object();
  for (std::size_t s = 0; s < kSplitNames.size(); ++s) {
    json arr = json::array();
    for (const auto& e : m.splits[s]) {
      arr.push_back({{"id", e.id},
                     {"signal_id", e.signal_id},
                     {"signal_seed", e.signal_seed},
                     {"hazy", kSplitNames[s] + "/" + e.id + "_hazy.fdr"},
                     {"clean", kSplitNames[s] + "/" + e.id + "_clean.fdr"}});
    }
    j["splits"][kSplitNames[s]] = std::move(arr);
  }
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write dataset manifest in " + dir.string());
  os << j.dump(2) << '\n';
  return m;
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DataError("no dataset manifest in " + dir.string() + " (run simulate first)");
  DatasetManifest m;
  try {
    const json j = json::parse(is);
    if (j.at("format_version").get<int>() != kDatasetFormatVersion) throw DataError("unsupported dataset format version");
    m.dataset_config = j.at("dataset");
    if (!j.at("norm_stats").is_null()) m.norm_stats = norm_stats_from_json(j.at("norm_stats"));
    for (const auto& name : kSplitNames) {
      std::vector<SampleEntry> entries;
      for (const auto& e : j.at("splits").at(name)) {
        entries.push_back({e.at("id").get<std::string>(), e.at("signal_id").get<std::uint64_t>(),
                           e.at("signal_seed").get<std::uint64_t>()});
      }
      m.splits.push_back(std::move(entries));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed dataset manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

std::vector<LabeledPair> load_split(const fs::path& dir, const DatasetManifest& manifest, const std::string& split) {
  std::vector<LabeledPair> out;
  for (const auto& e : manifest.split(split)) {
    LabeledPair lp;
    lp.id = e.id;
    lp.pair.signal_id = e.signal_id;
    lp.pair.hazy = read_raster(dir / split / (e.id + "_hazy.fdr"));
    lp.pair.clean = read_raster(dir / split / (e.id + "_clean.fdr"));
    out.push_back(std::move(lp));
  }
  return out;
}

PairedSample normalize_pair(const PairedSample& pair, const NormStats& stats) {
  return {stats.hazy.normalize(pair.hazy), stats.clean.normalize(pair.clean), pair.signal_id};
}

}  // namespace flowdehaze
