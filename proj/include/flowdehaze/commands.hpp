#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowdehaze/calibration.hpp"
#include "flowdehaze/config.hpp"
#include "flowdehaze/dataset.hpp"
#include "flowdehaze/metrics.hpp"

namespace flowdehaze {

extern const char* const kVersion;

/// Loads the config file (or a run manifest holding a config snapshot), applies KEY=VALUE
/// overrides, then path environment variables. Without a file the built-in defaults are used.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& config_path,
                                const std::vector<std::string>& overrides);

// Each command writes <workdir>/runs/<command>-<timestamp>.json with the config snapshot,
// the version, the seeds in play and the artifacts it produced.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  nlohmann::json seeds;
  std::string started;
  std::string finished;
  std::vector<std::filesystem::path> artifacts;

  nlohmann::json to_json() const;
};

std::filesystem::path write_run_manifest(const ExperimentConfig& cfg, const RunManifest& run);

// simulate

DatasetManifest cmd_simulate(const ExperimentConfig& cfg, std::ostream& log);

// train

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
};

struct TrainOutcome {
  std::filesystem::path final_checkpoint;
  std::filesystem::path loss_log;
  long iterations = 0;
  std::optional<double> best_val_loss;
};

/// Trains on the dataset split "train". The loss log <workdir>/loss_log.csv has one row per
/// iteration: iteration,loss,wall_time. On divergence the last good state is written to
/// <workdir>/checkpoints/last_good.fdck before the DivergenceError propagates.
TrainOutcome cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts, std::ostream& log);

// predict

struct PredictOptions {
  /// A .fdr raster or a directory of them; when empty the hazy images of `split` are used.
  std::optional<std::filesystem::path> input;
  std::string split = "test";
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> checkpoint;  // defaults to cfg.checkpoint_path()
};

struct PredictionEntry {
  std::string id;
  std::filesystem::path dir;
  int k = 0;
};

/// Writes <out>/<id>/sample_NNN.fdr (k of them), mmse.fdr and std.fdr in intensity units,
/// plus <out>/predictions.json describing the run.
std::vector<PredictionEntry> cmd_predict(const ExperimentConfig& cfg, const PredictOptions& opts, std::ostream& log);

/// Posterior for one normalized observation with the configured tiling.
PosteriorSet predict_normalized(const VelocityField& field, const Raster& condition, const ExperimentConfig& cfg,
                                const SamplerConfig& sampler);

/// Per-image seed of the posterior noise.
std::uint64_t image_seed(std::uint64_t seed, const std::string& id);

/// Reads a predictions directory written by cmd_predict. Samples are loaded only when asked.
struct LoadedPrediction {
  std::string id;
  Raster mmse;
  Raster pixel_std;
  std::vector<Raster> samples;
  int k = 0;
};
std::vector<LoadedPrediction> load_predictions(const std::filesystem::path& dir, bool with_samples);

// calibrate

struct CalibrateOptions {
  std::filesystem::path predictions;  // predictions for cfg.calibration.fit_split
  std::optional<std::string> split;   // overrides cfg.calibration.fit_split
  std::optional<std::filesystem::path> apply_to;  // predictions for the apply split; gets calibrated_std.fdr
  std::filesystem::path out_dir;
};

struct CalibrationOutcome {
  CalibrationCurve curve;
  CalibrationFit fit;
  double spearman = 0.0;
  int k = 0;
  std::vector<std::string> flags;
  std::filesystem::path report;
  std::filesystem::path plot;
};

CalibrationOutcome cmd_calibrate(const ExperimentConfig& cfg, const CalibrateOptions& opts, std::ostream& log);

// evaluate

struct EvaluateOptions {
  std::filesystem::path predictions;
  std::string split = "test";
  std::filesystem::path out_dir;
  bool k_sweep = true;
  /// Re-samples the split at each T in cfg.evaluation.t_sweep with this checkpoint.
  std::optional<std::filesystem::path> t_sweep_checkpoint;
};

struct SweepPoint {
  int value = 0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
};

struct EvaluationOutcome {
  MetricReport report;
  MetricSummary prediction_psnr;
  MetricSummary input_psnr;
  std::vector<SweepPoint> k_sweep;
  std::vector<SweepPoint> t_sweep;
  std::filesystem::path report_path;
};

EvaluationOutcome cmd_evaluate(const ExperimentConfig& cfg, const EvaluateOptions& opts, std::ostream& log);

// plot

/// Re-renders the figure of a calibration or evaluation report JSON into out_dir.
std::vector<std::filesystem::path> cmd_plot(const std::filesystem::path& report, const std::filesystem::path& out_dir,
                                            std::ostream& log);

}  // namespace flowdehaze
