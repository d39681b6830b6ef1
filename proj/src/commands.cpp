#include "flowdehaze/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "flowdehaze/checkpoint.hpp"
#include "flowdehaze/error.hpp"
#include "flowdehaze/plot.hpp"
#include "flowdehaze/random.hpp"
#include "flowdehaze/tiler.hpp"

#ifndef FLOWDEHAZE_VERSION
#define FLOWDEHAZE_VERSION "0.0.0"
#endif

namespace flowdehaze {

const char* const kVersion = FLOWDEHAZE_VERSION;

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_timestamp(bool compact) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, compact ? "%Y%m%dT%H%M%SZ" : "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::string sample_file(int j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%03d.fdr", j);
  return buf;
}

const NormStats& require_norm_stats(const std::optional<NormStats>& s, const std::string& where) {
  if (!s) throw DataError("no normalization stats available (" + where + "); the train split is empty");
  return *s;
}

json curve_json(const CalibrationCurve& c) {
  return {{"n_bins", c.n_bins}, {"rmv", c.rmv}, {"rmse", c.rmse}, {"bin_edges", c.bin_edges}, {"bin_sizes", c.bin_sizes}};
}

json fit_json(const CalibrationFit& f) {
  return {{"alpha", f.alpha}, {"beta", f.beta}, {"fit_residual", f.fit_residual}, {"clamped", f.clamped}};
}

PlotSpec calibration_plot(const std::vector<double>& rmv, const std::vector<double>& rmse,
                          const std::optional<std::pair<std::vector<double>, std::vector<double>>>& calibrated,
                          const std::string& title) {
  PlotSpec p;
  p.title = title;
  p.x_label = "RMV (root mean predicted variance)";
  p.y_label = "RMSE";
  p.identity_line = true;
  p.series.push_back({"uncalibrated", rmv, rmse});
  if (calibrated) p.series.push_back({"calibrated", calibrated->first, calibrated->second});
  return p;
}

PlotSpec sweep_plot(const std::vector<SweepPoint>& pts, const std::string& what) {
  PlotSpec p;
  p.title = "MMSE PSNR vs " + what;
  p.x_label = what;
  p.y_label = "mean PSNR (dB)";
  p.log_x = true;
  Series s{"MMSE", {}, {}};
  for (const auto& q : pts) {
    s.x.push_back(q.value);
    s.y.push_back(q.psnr_mean);
  }
  p.series.push_back(std::move(s));
  return p;
}

json sweep_json(const std::vector<SweepPoint>& pts) {
  json arr = json::array();
  for (const auto& q : pts) arr.push_back({{"value", q.value}, {"psnr_mean", q.psnr_mean}, {"psnr_std", q.psnr_std}});
  return arr;
}

std::vector<SweepPoint> sweep_from_json(const json& arr) {
  std::vector<SweepPoint> pts;
  for (const auto& q : arr) pts.push_back({q.at("value").get<int>(), q.at("psnr_mean").get<double>(), q.at("psnr_std").get<double>()});
  return pts;
}

SweepPoint summarize_psnr(int value, const std::vector<double>& psnrs) {
  SweepPoint p{value, 0.0, 0.0};
  if (psnrs.empty()) return p;
  for (double v : psnrs) p.psnr_mean += v;
  p.psnr_mean /= double(psnrs.size());
  for (double v : psnrs) p.psnr_std += (v - p.psnr_mean) * (v - p.psnr_mean);
  p.psnr_std = std::sqrt(p.psnr_std / double(psnrs.size()));
  return p;
}

Checkpoint load_model(const ExperimentConfig& cfg, const std::optional<fs::path>& override_path) {
  return load_checkpoint(override_path ? *override_path : cfg.checkpoint_path(), cfg.train.arch);
}

}  // namespace

ExperimentConfig resolve_config(const std::optional<fs::path>& config_path, const std::vector<std::string>& overrides) {
  json j = config_path ? json::object() : to_json(ExperimentConfig{});
  if (config_path) {
    std::ifstream is(*config_path);
    if (!is) throw ValidationError("cannot open config file: " + config_path->string());
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ValidationError("config " + config_path->string() + " is not valid JSON: " + e.what());
    }
    // A run manifest carries the full config snapshot it ran with.
    if (j.is_object() && j.contains("run_manifest_version")) j = j.at("config");
  }
  for (const auto& o : overrides) apply_override(j, o);
  ExperimentConfig cfg = config_from_json(j);
  apply_path_environment(cfg);
  cfg.validate();
  return cfg;
}

json RunManifest::to_json() const {
  json arts = json::array();
  for (const auto& a : artifacts) arts.push_back(a.string());
  return {{"run_manifest_version", 1},
          {"command", command},
          {"version", kVersion},
          {"config", config},
          {"seeds", seeds},
          {"started", started},
          {"finished", finished},
          {"artifacts", arts}};
}

fs::path write_run_manifest(const ExperimentConfig& cfg, const RunManifest& run) {
  const fs::path dir = cfg.paths.workdir / "runs";
  ensure_dir(dir);
  const std::string stem = run.command + "-" + utc_timestamp(true);
  fs::path path = dir / (stem + ".json");
  for (int n = 1; fs::exists(path); ++n) path = dir / (stem + "-" + std::to_string(n) + ".json");
  write_json(path, run.to_json());
  return path;
}

DatasetManifest cmd_simulate(const ExperimentConfig& cfg, std::ostream& log) {
  RunManifest run{"simulate", to_json(cfg), {}, utc_timestamp(false), {}, {}};
  const auto& sim = cfg.dataset.simulation;
  run.seeds = {{"signal", sim.signal.seed}, {"noise", sim.noise.seed}};
  DatasetManifest m = write_dataset(cfg);
  run.finished = utc_timestamp(false);
  run.artifacts.push_back(cfg.paths.dataset_dir / "manifest.json");
  write_run_manifest(cfg, run);
  log << "simulated " << m.splits[0].size() << " train, " << m.splits[1].size() << " val, " << m.splits[2].size()
      << " test pairs into " << cfg.paths.dataset_dir.string() << '\n';
  return m;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts, std::ostream& log) {
  const TrainConfig& tc = cfg.train.config;
  tc.validate();
  const DatasetManifest manifest = read_manifest(cfg.paths.dataset_dir);
  if (manifest.split("train").empty()) {
    throw DataError("empty train split in " + cfg.paths.dataset_dir.string() + "; nothing to train on");
  }
  const NormStats& stats = require_norm_stats(manifest.norm_stats, "dataset manifest");

  const auto normalized = [&](const std::string& split) {
    std::vector<PairedSample> out;
    for (auto& lp : load_split(cfg.paths.dataset_dir, manifest, split)) out.push_back(normalize_pair(lp.pair, stats));
    return out;
  };
  const std::vector<PairedSample> train = normalized("train");
  const std::vector<PairedSample> val = normalized("val");
  for (const auto& p : train) {
    if (p.clean.height() < tc.patch_size || p.clean.width() < tc.patch_size) {
      throw DataError("training images are smaller than patch_size " + std::to_string(tc.patch_size));
    }
  }

  const fs::path ckdir = cfg.paths.workdir / "checkpoints";
  ensure_dir(ckdir);
  ensure_dir(cfg.checkpoint_path().parent_path().empty() ? fs::path(".") : cfg.checkpoint_path().parent_path());

  Checkpoint state{VelocityField::init_params(cfg.train.arch, derive_seed(tc.seed, 0x1A17)), {}, 0, stats, std::nullopt};
  if (opts.resume_from) {
    state = load_checkpoint(*opts.resume_from, cfg.train.arch);
    state.norm_stats = stats;
    log << "resuming from " << opts.resume_from->string() << " at iteration " << state.iteration << '\n';
  }
  if (state.optimizer.m.size() != state.field.parameter_count()) state.optimizer.reset(state.field.parameter_count());

  // Fixed validation batches so successive val losses are comparable.
  std::vector<std::vector<FlowSample>> val_batches;
  if (!val.empty()) {
    Rng vrng(derive_seed(tc.seed, 0x7A1));
    for (int b = 0; b < cfg.train.val_batches; ++b) val_batches.push_back(draw_batch(val, tc, vrng));
  }

  RunManifest run{"train", to_json(cfg), {{"train", tc.seed}}, utc_timestamp(false), {}, {}};

  const fs::path loss_log = cfg.paths.workdir / "loss_log.csv";
  std::ofstream csv(loss_log, opts.resume_from ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError("cannot write " + loss_log.string());
  if (!opts.resume_from) csv << "iteration,loss,wall_time\n";
  csv << std::setprecision(9);

  const auto save = [&](const fs::path& p) {
    save_checkpoint(p, state);
    return p;
  };

  const auto t0 = std::chrono::steady_clock::now();
  for (long it = state.iteration; it < tc.max_iterations; ++it) {
    Rng rng(derive_seed(tc.seed, std::uint64_t(it)));
    const std::vector<FlowSample> batch = draw_batch(train, tc, rng);
    StepResult r;
    try {
      r = training_step(batch, state.field, state.optimizer, tc);
    } catch (const DivergenceError& e) {
      csv.flush();
      const fs::path p = save(ckdir / "last_good.fdck");
      throw DivergenceError(std::string(e.what()) + " at iteration " + std::to_string(it) + "; last good state saved to " +
                            p.string());
    }
    state.iteration = it + 1;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    csv << state.iteration << ',' << r.loss << ',' << wall << '\n';
    if (cfg.train.log_every > 0 && state.iteration % cfg.train.log_every == 0) {
      log << "iter " << state.iteration << " loss " << r.loss << " grad_norm " << r.grad_norm << '\n';
    }
    if (!val_batches.empty() && cfg.train.val_every > 0 && state.iteration % cfg.train.val_every == 0) {
      double v = 0.0;
      for (const auto& b : val_batches) v += evaluate_loss(b, state.field);
      v /= double(val_batches.size());
      log << "iter " << state.iteration << " val_loss " << v << '\n';
      if (!state.best_val_loss || v < *state.best_val_loss) {
        state.best_val_loss = v;
        run.artifacts.push_back(save(ckdir / "best.fdck"));
      }
    }
    if (cfg.train.checkpoint_every > 0 && state.iteration % cfg.train.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "iter_%07ld.fdck", state.iteration);
      run.artifacts.push_back(save(ckdir / name));
    }
  }
  csv.close();

  const fs::path final_path = save(cfg.checkpoint_path());
  run.artifacts.push_back(final_path);
  run.artifacts.push_back(loss_log);
  run.finished = utc_timestamp(false);
  std::sort(run.artifacts.begin(), run.artifacts.end());
  run.artifacts.erase(std::unique(run.artifacts.begin(), run.artifacts.end()), run.artifacts.end());
  write_run_manifest(cfg, run);
  log << "final checkpoint: " << final_path.string() << '\n';
  return {final_path, loss_log, state.iteration, state.best_val_loss};
}

std::uint64_t image_seed(std::uint64_t seed, const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return derive_seed(seed, h);
}

PosteriorSet predict_normalized(const VelocityField& field, const Raster& condition, const ExperimentConfig& cfg,
                                const SamplerConfig& sampler) {
  const TileGrid grid = plan_tiles(condition.height(), condition.width(), cfg.tiling.tile, cfg.tiling.overlap);
  return sample_posterior_tiled(field, condition, grid, sampler);
}

std::vector<PredictionEntry> cmd_predict(const ExperimentConfig& cfg, const PredictOptions& opts, std::ostream& log) {
  cfg.sample.validate();
  const fs::path ckpath = opts.checkpoint ? *opts.checkpoint : cfg.checkpoint_path();
  const Checkpoint ck = load_model(cfg, ckpath);
  std::optional<NormStats> stats = ck.norm_stats;
  if (!stats) stats = read_manifest(cfg.paths.dataset_dir).norm_stats;
  const NormStats& ns = require_norm_stats(stats, "checkpoint and dataset manifest");

  std::vector<std::pair<std::string, fs::path>> inputs;
  if (!opts.input) {
    const DatasetManifest m = read_manifest(cfg.paths.dataset_dir);
    for (const auto& e : m.split(opts.split)) {
      inputs.emplace_back(e.id, cfg.paths.dataset_dir / opts.split / (e.id + "_hazy.fdr"));
    }
  } else if (fs::is_directory(*opts.input)) {
    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(*opts.input)) {
      if (de.path().extension() == ".fdr") files.push_back(de.path());
    }
    std::sort(files.begin(), files.end());
    const bool has_hazy = std::any_of(files.begin(), files.end(), [](const fs::path& p) {
      return p.stem().string().ends_with("_hazy");
    });
    for (const auto& f : files) {
      std::string stem = f.stem().string();
      if (has_hazy) {
        if (!stem.ends_with("_hazy")) continue;
        stem.resize(stem.size() - 5);
      }
      inputs.emplace_back(stem, f);
    }
  } else {
    std::string stem = opts.input->stem().string();
    if (stem.ends_with("_hazy")) stem.resize(stem.size() - 5);
    inputs.emplace_back(stem, *opts.input);
  }
  if (inputs.empty()) throw DataError("no input rasters to predict");

  RunManifest run{"predict", to_json(cfg), {{"sample", cfg.sample.seed}}, utc_timestamp(false), {}, {}};
  ensure_dir(opts.out_dir);
  std::vector<PredictionEntry> entries;
  json listing = json::array();
  for (const auto& [id, path] : inputs) {
    const Raster hazy = read_raster(path);
    SamplerConfig sc = cfg.sample;
    sc.seed = image_seed(cfg.sample.seed, id);
    const PosteriorSet post = predict_normalized(ck.field, ns.hazy.normalize(hazy), cfg, sc);

    const fs::path dir = opts.out_dir / id;
    ensure_dir(dir);
    for (std::size_t j = 0; j < post.samples.size(); ++j) {
      write_raster(dir / sample_file(int(j)), ns.clean.denormalize(post.samples[j]));
    }
    write_raster(dir / "mmse.fdr", ns.clean.denormalize(post.mmse));
    write_raster(dir / "std.fdr", ns.clean.denormalize_spread(post.pixel_std));
    entries.push_back({id, dir, int(post.samples.size())});
    listing.push_back({{"id", id}, {"input", path.string()}, {"seed", sc.seed}, {"k", post.samples.size()}});
    run.artifacts.push_back(dir);
    log << "predicted " << id << " (" << post.samples.size() << " samples)\n";
  }
  write_json(opts.out_dir / "predictions.json", {{"checkpoint", ckpath.string()},
                                                 {"steps_T", cfg.sample.steps_T},
                                                 {"n_samples", cfg.sample.n_samples},
                                                 {"seed", cfg.sample.seed},
                                                 {"tile", cfg.tiling.tile},
                                                 {"overlap", cfg.tiling.overlap},
                                                 {"norm_stats", to_json(ns)},
                                                 {"images", listing}});
  run.artifacts.push_back(opts.out_dir / "predictions.json");
  run.finished = utc_timestamp(false);
  write_run_manifest(cfg, run);
  return entries;
}

std::vector<LoadedPrediction> load_predictions(const fs::path& dir, bool with_samples) {
  const json listing = read_json(dir / "predictions.json");
  std::vector<LoadedPrediction> out;
  try {
    for (const auto& img : listing.at("images")) {
      LoadedPrediction p;
      p.id = img.at("id").get<std::string>();
      p.k = img.at("k").get<int>();
      const fs::path d = dir / p.id;
      p.mmse = read_raster(d / "mmse.fdr");
      p.pixel_std = read_raster(d / "std.fdr");
      if (with_samples) {
        for (int j = 0; j < p.k; ++j) p.samples.push_back(read_raster(d / sample_file(j)));
      }
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed predictions listing in " + dir.string() + ": " + e.what());
  }
  return out;
}

CalibrationOutcome cmd_calibrate(const ExperimentConfig& cfg, const CalibrateOptions& opts, std::ostream& log) {
  const std::string split = opts.split ? *opts.split : cfg.calibration.fit_split;
  const DatasetManifest manifest = read_manifest(cfg.paths.dataset_dir);
  const NormStats& ns = require_norm_stats(manifest.norm_stats, "dataset manifest");
  const std::vector<LabeledPair> gt = load_split(cfg.paths.dataset_dir, manifest, split);
  const std::vector<LoadedPrediction> preds = load_predictions(opts.predictions, false);

  CalibrationOutcome out;
  std::vector<Raster> stds, mmses, targets;
  out.k = std::numeric_limits<int>::max();
  for (const auto& p : preds) {
    const auto it = std::find_if(gt.begin(), gt.end(), [&](const LabeledPair& lp) { return lp.id == p.id; });
    if (it == gt.end()) {
      out.flags.push_back("no ground truth for '" + p.id + "' in split " + split);
      continue;
    }
    if (!p.mmse.same_shape(it->pair.clean) || !p.pixel_std.same_shape(it->pair.clean)) {
      out.flags.push_back("shape mismatch for '" + p.id + "'; image skipped");
      continue;
    }
    out.k = std::min(out.k, p.k);
    stds.push_back(ns.clean.normalize_spread(p.pixel_std));
    mmses.push_back(ns.clean.normalize(p.mmse));
    targets.push_back(ns.clean.normalize(it->pair.clean));
  }
  if (stds.empty()) throw DataError("no predictions in " + opts.predictions.string() + " match split " + split);
  if (out.k < 2) {
    throw ValidationError("calibration needs k >= 2 posterior samples; with k=" + std::to_string(out.k) +
                          " the pixel_std is identically zero");
  }

  out.curve = build_curve(stds, mmses, targets, cfg.calibration.n_bins);
  out.fit = fit_calibration(out.curve);
  out.spearman = spearman(out.curve.rmv, out.curve.rmse);
  if (out.fit.clamped) out.flags.push_back("slope clamped to the minimum; std carries no error signal");
  if (!(out.spearman >= 0.8)) out.flags.push_back("rank correlation of RMV and RMSE below 0.8");

  ensure_dir(opts.out_dir);
  json report{{"kind", "calibration"},
              {"split", split},
              {"predictions", opts.predictions.string()},
              {"k", out.k},
              {"n_bins", cfg.calibration.n_bins},
              {"normalized_units", true},
              {"curve", curve_json(out.curve)},
              {"fit", fit_json(out.fit)},
              {"spearman", out.spearman}};

  std::optional<std::pair<std::vector<double>, std::vector<double>>> applied;
  if (opts.apply_to) {
    const std::string apply_split = cfg.calibration.apply_split;
    const std::vector<LabeledPair> agt = load_split(cfg.paths.dataset_dir, manifest, apply_split);
    std::vector<Raster> cstds, cmmses, ctargets;
    for (const auto& p : load_predictions(*opts.apply_to, false)) {
      const Raster cal = apply_calibration(ns.clean.normalize_spread(p.pixel_std), out.fit);
      write_raster(*opts.apply_to / p.id / "calibrated_std.fdr", ns.clean.denormalize_spread(cal));
      const auto it = std::find_if(agt.begin(), agt.end(), [&](const LabeledPair& lp) { return lp.id == p.id; });
      if (it == agt.end() || !cal.same_shape(it->pair.clean)) continue;
      cstds.push_back(cal);
      cmmses.push_back(ns.clean.normalize(p.mmse));
      ctargets.push_back(ns.clean.normalize(it->pair.clean));
    }
    if (!cstds.empty()) {
      const CalibrationCurve c = build_curve(cstds, cmmses, ctargets, cfg.calibration.n_bins);
      report["applied"] = {{"split", apply_split}, {"curve", curve_json(c)}};
      applied = std::make_pair(c.rmv, c.rmse);
    }
  }
  report["flags"] = out.flags;

  out.report = opts.out_dir / "calibration_report.json";
  write_json(out.report, report);
  out.plot = opts.out_dir / "calibration.svg";
  write_svg(out.plot, calibration_plot(out.curve.rmv, out.curve.rmse, applied, "Calibration (" + split + ")"));

  RunManifest run{"calibrate", to_json(cfg), json::object(), utc_timestamp(false), utc_timestamp(false),
                  {out.report, out.plot}};
  write_run_manifest(cfg, run);
  log << "calibration: alpha " << out.fit.alpha << " beta " << out.fit.beta << " spearman " << out.spearman << '\n';
  for (const auto& f : out.flags) log << "flag: " << f << '\n';
  return out;
}

EvaluationOutcome cmd_evaluate(const ExperimentConfig& cfg, const EvaluateOptions& opts, std::ostream& log) {
  const DatasetManifest manifest = read_manifest(cfg.paths.dataset_dir);
  const NormStats& ns = require_norm_stats(manifest.norm_stats, "dataset manifest");
  const std::vector<LabeledPair> gt = load_split(cfg.paths.dataset_dir, manifest, opts.split);
  const bool normalized = cfg.evaluation.normalized_space;
  const auto clean_space = [&](const Raster& r) { return normalized ? ns.clean.normalize(r) : r; };
  const auto hazy_space = [&](const Raster& r) { return normalized ? ns.hazy.normalize(r) : r; };

  std::vector<LoadedPrediction> preds = load_predictions(opts.predictions, opts.k_sweep);
  EvaluationOutcome out;
  for (const auto& lp : gt) {
    const Raster target = clean_space(lp.pair.clean);
    const auto it = std::find_if(preds.begin(), preds.end(), [&](const LoadedPrediction& p) { return p.id == lp.id; });
    if (it == preds.end()) {
      MetricRow row;
      row.id = lp.id;
      row.ok = false;
      row.flag = "no prediction for this image";
      out.report.per_image.push_back(row);
    } else {
      out.report.add(lp.id, clean_space(it->mmse), target, "prediction");
    }
    out.report.add(lp.id, hazy_space(lp.pair.hazy), target, "input-psnr");
  }
  out.prediction_psnr = out.report.aggregate(&MetricRow::psnr_affine, "prediction");
  out.input_psnr = out.report.aggregate(&MetricRow::psnr_affine, "input-psnr");

  if (opts.k_sweep) {
    for (int k : cfg.evaluation.k_sweep) {
      std::vector<double> psnrs;
      for (const auto& lp : gt) {
        const auto it = std::find_if(preds.begin(), preds.end(), [&](const LoadedPrediction& p) { return p.id == lp.id; });
        if (it == preds.end() || int(it->samples.size()) < k || !it->mmse.same_shape(lp.pair.clean)) continue;
        const PosteriorSet s = summarize({it->samples.begin(), it->samples.begin() + k});
        psnrs.push_back(psnr_affine(clean_space(s.mmse), clean_space(lp.pair.clean)));
      }
      if (psnrs.size() == gt.size() && !psnrs.empty()) out.k_sweep.push_back(summarize_psnr(k, psnrs));
    }
  }

  if (opts.t_sweep_checkpoint) {
    const Checkpoint ck = load_model(cfg, *opts.t_sweep_checkpoint);
    for (int T : cfg.evaluation.t_sweep) {
      std::vector<double> psnrs;
      for (const auto& lp : gt) {
        SamplerConfig sc = cfg.sample;
        sc.steps_T = T;
        sc.seed = image_seed(cfg.sample.seed, lp.id);
        const PosteriorSet post = predict_normalized(ck.field, ns.hazy.normalize(lp.pair.hazy), cfg, sc);
        psnrs.push_back(psnr_affine(clean_space(ns.clean.denormalize(post.mmse)), clean_space(lp.pair.clean)));
      }
      out.t_sweep.push_back(summarize_psnr(T, psnrs));
      log << "T=" << T << " psnr " << out.t_sweep.back().psnr_mean << '\n';
    }
  }

  ensure_dir(opts.out_dir);
  json rows = json::array();
  std::ofstream csv(opts.out_dir / "metrics.csv", std::ios::trunc);
  csv << "id,label,psnr_affine,psnr_fixed,mse,ok,flag\n" << std::setprecision(9);
  for (const auto& r : out.report.per_image) {
    rows.push_back({{"id", r.id},
                    {"label", r.label},
                    {"psnr_affine", r.psnr_affine},
                    {"psnr_fixed", r.psnr_fixed},
                    {"mse", r.mse},
                    {"ok", r.ok},
                    {"flag", r.flag}});
    std::string flag = r.flag;
    std::replace(flag.begin(), flag.end(), ',', ';');
    csv << r.id << ',' << r.label << ',' << r.psnr_affine << ',' << r.psnr_fixed << ',' << r.mse << ','
        << (r.ok ? 1 : 0) << ',' << flag << '\n';
  }
  const auto summary_json = [](const MetricSummary& s) {
    return json{{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
  };
  json report{{"kind", "evaluation"},
              {"split", opts.split},
              {"predictions", opts.predictions.string()},
              {"space", normalized ? "normalized" : "intensity"},
              {"rows", rows},
              {"aggregate",
               {{"prediction_psnr_affine", summary_json(out.prediction_psnr)},
                {"input_psnr_affine", summary_json(out.input_psnr)},
                {"prediction_psnr_fixed", summary_json(out.report.aggregate(&MetricRow::psnr_fixed, "prediction"))},
                {"input_psnr_fixed", summary_json(out.report.aggregate(&MetricRow::psnr_fixed, "input-psnr"))},
                {"uplift_db", out.prediction_psnr.mean - out.input_psnr.mean}}},
              {"k_sweep", sweep_json(out.k_sweep)},
              {"t_sweep", sweep_json(out.t_sweep)}};
  out.report_path = opts.out_dir / "evaluation_report.json";
  write_json(out.report_path, report);

  RunManifest run{"evaluate", to_json(cfg), {{"sample", cfg.sample.seed}}, utc_timestamp(false), {}, {out.report_path}};
  if (!out.k_sweep.empty()) {
    write_svg(opts.out_dir / "k_sweep.svg", sweep_plot(out.k_sweep, "k (posterior samples)"));
    run.artifacts.push_back(opts.out_dir / "k_sweep.svg");
  }
  if (!out.t_sweep.empty()) {
    write_svg(opts.out_dir / "t_sweep.svg", sweep_plot(out.t_sweep, "T (Euler steps)"));
    run.artifacts.push_back(opts.out_dir / "t_sweep.svg");
  }
  run.finished = utc_timestamp(false);
  write_run_manifest(cfg, run);

  log << "prediction psnr_affine " << out.prediction_psnr.mean << " +/- " << out.prediction_psnr.std << " (n="
      << out.prediction_psnr.count << ")\n";
  log << "input-psnr psnr_affine " << out.input_psnr.mean << " +/- " << out.input_psnr.std << '\n';
  for (const auto& r : out.report.per_image) {
    if (!r.ok) log << "flag: " << r.id << " [" << r.label << "] " << r.flag << '\n';
  }
  return out;
}

std::vector<fs::path> cmd_plot(const fs::path& report_path, const fs::path& out_dir, std::ostream& log) {
  const json r = read_json(report_path);
  ensure_dir(out_dir);
  std::vector<fs::path> written;
  try {
    const std::string kind = r.at("kind").get<std::string>();
    if (kind == "calibration") {
      std::optional<std::pair<std::vector<double>, std::vector<double>>> applied;
      if (r.contains("applied")) {
        applied = std::make_pair(r["applied"]["curve"]["rmv"].get<std::vector<double>>(),
                                 r["applied"]["curve"]["rmse"].get<std::vector<double>>());
      }
      written.push_back(out_dir / "calibration.svg");
      write_svg(written.back(), calibration_plot(r.at("curve").at("rmv").get<std::vector<double>>(),
                                                 r.at("curve").at("rmse").get<std::vector<double>>(), applied,
                                                 "Calibration (" + r.at("split").get<std::string>() + ")"));
    } else if (kind == "evaluation") {
      const auto ks = sweep_from_json(r.at("k_sweep"));
      const auto ts = sweep_from_json(r.at("t_sweep"));
      if (!ks.empty()) {
        written.push_back(out_dir / "k_sweep.svg");
        write_svg(written.back(), sweep_plot(ks, "k (posterior samples)"));
      }
      if (!ts.empty()) {
        written.push_back(out_dir / "t_sweep.svg");
        write_svg(written.back(), sweep_plot(ts, "T (Euler steps)"));
      }
    } else {
      throw DataError("unknown report kind '" + kind + "' in " + report_path.string());
    }
  } catch (const json::exception& e) {
    throw DataError("malformed report " + report_path.string() + ": " + e.what());
  }
  for (const auto& p : written) log << "wrote " << p.string() << '\n';
  return written;
}

}  // namespace flowdehaze
