#include "flowdehaze/config.hpp"

#include <array>
#include <cstdlib>
#include <fstream>
#include <set>

#include "flowdehaze/error.hpp"

namespace flowdehaze {

using nlohmann::json;

namespace {

const char* to_string(StructureKind k) {
  switch (k) {
    case StructureKind::blobs: return "blobs";
    case StructureKind::filaments: return "filaments";
    case StructureKind::mixed: return "mixed";
  }
  return "blobs";
}

StructureKind structure_from_string(const std::string& s) {
  if (s == "blobs") return StructureKind::blobs;
  if (s == "filaments") return StructureKind::filaments;
  if (s == "mixed") return StructureKind::mixed;
  throw ValidationError("unknown structure_kind '" + s + "'");
}

const char* to_string(PsfMode m) { return m == PsfMode::confocal ? "confocal" : "widefield"; }

PsfMode psf_mode_from_string(const std::string& s) {
  if (s == "confocal") return PsfMode::confocal;
  if (s == "widefield") return PsfMode::widefield;
  throw ValidationError("unknown psf mode '" + s + "'");
}

const char* to_string(BaseMode m) { return m == BaseMode::gaussian ? "gaussian" : "sifm"; }

BaseMode base_mode_from_string(const std::string& s) {
  if (s == "gaussian") return BaseMode::gaussian;
  if (s == "sifm") return BaseMode::sifm;
  throw ValidationError("unknown base_mode '" + s + "'");
}

// Reads known keys from one object and rejects anything else.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config: '" + path_ + "." + key + "' has the wrong type");
    }
  }

  void get_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, s);
    out = parse(s);
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ValidationError("config: unknown key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_psf(Section s, PsfSpec& p) {
  s.get_enum("mode", p.mode, psf_mode_from_string);
  s.get("pinhole_au", p.pinhole_au);
  s.get("base_sigma", p.base_sigma);
  s.get("kernel_radius", p.kernel_radius);
  s.finish();
}

json write_psf(const PsfSpec& p) {
  return {{"mode", to_string(p.mode)}, {"pinhole_au", p.pinhole_au}, {"base_sigma", p.base_sigma},
          {"kernel_radius", p.kernel_radius}};
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.simulation.signal.validate();
  dataset.simulation.hazy_psf.validate();
  dataset.simulation.clean_psf.validate();
  dataset.simulation.noise.validate();
  if (dataset.splits.train < 0 || dataset.splits.val < 0 || dataset.splits.test < 0) {
    throw ValidationError("split sizes must be non-negative");
  }
  train.config.validate();
  train.arch.validate();
  sample.validate();
  if (train.arch.conditioning != train.config.conditioning) {
    throw ValidationError("train.conditioning and train.arch conditioning disagree");
  }
  const int m = train.arch.size_multiple();
  if (train.config.patch_size % m != 0) {
    throw ValidationError("patch_size " + std::to_string(train.config.patch_size) + " is not divisible by 2^depth = " +
                          std::to_string(m));
  }
  if (tiling.tile % m != 0) throw ValidationError("tile size is not divisible by 2^depth");
  if (!tiling.allow_tile_mismatch && tiling.tile != train.config.patch_size) {
    throw ValidationError("tiling.tile (" + std::to_string(tiling.tile) + ") must equal train.patch_size (" +
                          std::to_string(train.config.patch_size) + ") unless tiling.allow_tile_mismatch is set");
  }
  if (!(tiling.overlap > 0.0 && tiling.overlap < 1.0)) throw ValidationError("tiling.overlap must lie in (0, 1)");
  if (calibration.n_bins < 2) throw ValidationError("calibration.n_bins must be >= 2");
  if (train.checkpoint_every < 1 || train.val_every < 1 || train.log_every < 1) {
    throw ValidationError("checkpoint_every, val_every and log_every must be positive");
  }
}

std::filesystem::path ExperimentConfig::checkpoint_path() const {
  return paths.checkpoint.empty() ? paths.workdir / "checkpoints" / "final.fdck" : paths.checkpoint;
}

ExperimentConfig ExperimentConfig::toy() {
  ExperimentConfig c;
  auto& sim = c.dataset.simulation;
  sim.signal = SignalSpec{64, 64, StructureKind::blobs, 5, 15, 20.0f, 100.0f, 1};
  sim.hazy_psf = PsfSpec{PsfMode::widefield, 30.0, 1.0, 24};
  sim.clean_psf = PsfSpec{PsfMode::confocal, 1.0, 0.5, 3};
  sim.noise = NoiseSpec{2.0, 1.0, 2, true};
  c.dataset.splits = {200, 20, 20};
  c.train.arch = ArchSpec::tiny();
  c.train.config.patch_size = 32;
  c.train.config.batch_size = 8;
  c.train.config.learning_rate = 2e-3;
  c.train.config.max_iterations = 3000;
  c.train.config.seed = 3;
  c.train.checkpoint_every = 500;
  c.train.val_every = 250;
  c.train.val_batches = 4;
  c.train.log_every = 10;
  c.tiling.tile = 32;
  c.sample = SamplerConfig{20, 10, 4};
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& sim = c.dataset.simulation;
  const auto& t = c.train.config;
  return {
      {"dataset",
       {{"signal",
         {{"width", sim.signal.width},
          {"height", sim.signal.height},
          {"structure_kind", to_string(sim.signal.structure_kind)},
          {"object_count_range", {sim.signal.min_objects, sim.signal.max_objects}},
          {"intensity_range", {sim.signal.min_intensity, sim.signal.max_intensity}},
          {"seed", sim.signal.seed}}},
        {"hazy_psf", write_psf(sim.hazy_psf)},
        {"clean_psf", write_psf(sim.clean_psf)},
        {"noise",
         {{"enabled", sim.noise.enabled},
          {"photon_gain", sim.noise.photon_gain},
          {"read_sigma", sim.noise.read_sigma},
          {"seed", sim.noise.seed}}},
        {"splits", {{"train", c.dataset.splits.train}, {"val", c.dataset.splits.val}, {"test", c.dataset.splits.test}}}}},
      {"train",
       {{"steps_T", t.steps_T},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"patch_size", t.patch_size},
        {"max_iterations", t.max_iterations},
        {"seed", t.seed},
        {"conditioning", to_string(t.conditioning)},
        {"continuous_time", t.continuous_time},
        {"base_mode", to_string(t.base_mode)},
        {"sifm_sigma", t.sifm_sigma},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"clip_norm", t.clip_norm},
        {"checkpoint_every", c.train.checkpoint_every},
        {"val_every", c.train.val_every},
        {"val_batches", c.train.val_batches},
        {"log_every", c.train.log_every},
        {"arch",
         {{"base_channels", c.train.arch.base_channels},
          {"depth", c.train.arch.depth},
          {"time_embed_dim", c.train.arch.time_embed_dim}}}}},
      {"sample", {{"steps_T", c.sample.steps_T}, {"n_samples", c.sample.n_samples}, {"seed", c.sample.seed}}},
      {"tiling",
       {{"tile", c.tiling.tile}, {"overlap", c.tiling.overlap}, {"allow_tile_mismatch", c.tiling.allow_tile_mismatch}}},
      {"calibration",
       {{"n_bins", c.calibration.n_bins},
        {"fit_split", c.calibration.fit_split},
        {"apply_split", c.calibration.apply_split}}},
      {"evaluation",
       {{"normalized_space", c.evaluation.normalized_space},
        {"k_sweep", c.evaluation.k_sweep},
        {"t_sweep", c.evaluation.t_sweep}}},
      {"paths",
       {{"workdir", c.paths.workdir.string()},
        {"dataset_dir", c.paths.dataset_dir.string()},
        {"checkpoint", c.paths.checkpoint.string()}}},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  {
    Section ds = root.child("dataset");
    auto& sim = c.dataset.simulation;
    {
      Section s = ds.child("signal");
      s.get("width", sim.signal.width);
      s.get("height", sim.signal.height);
      s.get_enum("structure_kind", sim.signal.structure_kind, structure_from_string);
      std::array<int, 2> counts{sim.signal.min_objects, sim.signal.max_objects};
      std::array<float, 2> range{sim.signal.min_intensity, sim.signal.max_intensity};
      s.get("object_count_range", counts);
      s.get("intensity_range", range);
      sim.signal.min_objects = counts[0];
      sim.signal.max_objects = counts[1];
      sim.signal.min_intensity = range[0];
      sim.signal.max_intensity = range[1];
      s.get("seed", sim.signal.seed);
      s.finish();
    }
    read_psf(ds.child("hazy_psf"), sim.hazy_psf);
    read_psf(ds.child("clean_psf"), sim.clean_psf);
    {
      Section s = ds.child("noise");
      s.get("enabled", sim.noise.enabled);
      s.get("photon_gain", sim.noise.photon_gain);
      s.get("read_sigma", sim.noise.read_sigma);
      s.get("seed", sim.noise.seed);
      s.finish();
    }
    {
      Section s = ds.child("splits");
      s.get("train", c.dataset.splits.train);
      s.get("val", c.dataset.splits.val);
      s.get("test", c.dataset.splits.test);
      s.finish();
    }
    ds.finish();
  }
  {
    Section s = root.child("train");
    auto& t = c.train.config;
    s.get("steps_T", t.steps_T);
    s.get("batch_size", t.batch_size);
    s.get("learning_rate", t.learning_rate);
    s.get("patch_size", t.patch_size);
    s.get("max_iterations", t.max_iterations);
    s.get("seed", t.seed);
    s.get_enum("conditioning", t.conditioning, conditioning_from_string);
    s.get("continuous_time", t.continuous_time);
    s.get_enum("base_mode", t.base_mode, base_mode_from_string);
    s.get("sifm_sigma", t.sifm_sigma);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("adam_eps", t.adam_eps);
    s.get("clip_norm", t.clip_norm);
    s.get("checkpoint_every", c.train.checkpoint_every);
    s.get("val_every", c.train.val_every);
    s.get("val_batches", c.train.val_batches);
    s.get("log_every", c.train.log_every);
    {
      Section a = s.child("arch");
      a.get("base_channels", c.train.arch.base_channels);
      a.get("depth", c.train.arch.depth);
      a.get("time_embed_dim", c.train.arch.time_embed_dim);
      a.finish();
    }
    c.train.arch.conditioning = t.conditioning;
    s.finish();
  }
  {
    Section s = root.child("sample");
    s.get("steps_T", c.sample.steps_T);
    s.get("n_samples", c.sample.n_samples);
    s.get("seed", c.sample.seed);
    s.finish();
  }
  {
    Section s = root.child("tiling");
    s.get("tile", c.tiling.tile);
    s.get("overlap", c.tiling.overlap);
    s.get("allow_tile_mismatch", c.tiling.allow_tile_mismatch);
    s.finish();
  }
  {
    Section s = root.child("calibration");
    s.get("n_bins", c.calibration.n_bins);
    s.get("fit_split", c.calibration.fit_split);
    s.get("apply_split", c.calibration.apply_split);
    s.finish();
  }
  {
    Section s = root.child("evaluation");
    s.get("normalized_space", c.evaluation.normalized_space);
    s.get("k_sweep", c.evaluation.k_sweep);
    s.get("t_sweep", c.evaluation.t_sweep);
    s.finish();
  }
  {
    Section s = root.child("paths");
    s.get_path("workdir", c.paths.workdir);
    s.get_path("dataset_dir", c.paths.dataset_dir);
    s.get_path("checkpoint", c.paths.checkpoint);
    s.finish();
  }
  root.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config file: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write config: " + path.string());
  os << to_json(cfg).dump(2) << '\n';
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override has an empty key segment: " + assignment);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ValidationError("override path crosses a non-object at '" + part + "'");
    start = dot + 1;
  }
}

void apply_path_environment(ExperimentConfig& cfg) {
  if (const char* v = std::getenv("FLOWDEHAZE_WORKDIR"); v && *v) cfg.paths.workdir = v;
  if (const char* v = std::getenv("FLOWDEHAZE_DATASET_DIR"); v && *v) cfg.paths.dataset_dir = v;
  if (const char* v = std::getenv("FLOWDEHAZE_CHECKPOINT"); v && *v) cfg.paths.checkpoint = v;
}

}  // namespace flowdehaze
