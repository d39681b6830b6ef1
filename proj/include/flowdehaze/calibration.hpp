#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowdehaze/raster.hpp"
#include "flowdehaze/sampler.hpp"

namespace flowdehaze {

inline constexpr double kMinCalibrationSlope = 1e-6;

/// Per-bin root mean variance and root mean squared error; bins hold equal pixel counts
/// (sizes differ by at most one) ordered by predicted std.
struct CalibrationCurve {
  std::vector<double> rmv;
  std::vector<double> rmse;
  std::vector<double> bin_edges;  // n_bins + 1 std values: first std of each bin, then the maximum
  std::vector<std::size_t> bin_sizes;
  int n_bins = 50;
};

struct CalibrationFit {
  double alpha = 1.0;
  double beta = 0.0;
  double fit_residual = 0.0;  // sum of squared residuals over bins
  bool clamped = false;       // the unconstrained slope was below kMinCalibrationSlope
};

/// Pools every pixel of every image, sorts by (std, pixel index) and splits into n_bins bins.
CalibrationCurve build_curve(std::span<const Raster> pixel_std, std::span<const Raster> mmse,
                             std::span<const Raster> gt, int n_bins = 50);

/// Least squares rmse ~ alpha*rmv + beta with alpha held >= kMinCalibrationSlope.
CalibrationFit fit_calibration(const CalibrationCurve& curve);

/// alpha*std + beta per pixel.
Raster apply_calibration(const Raster& pixel_std, const CalibrationFit& fit);

/// Sum over bins of (rmse - alpha*rmv - beta)^2.
double calibration_residual(const CalibrationCurve& curve, double alpha, double beta);

struct EvalPair {
  std::string id;
  Raster condition;  // normalized hazy observation
  Raster target;     // normalized clean image
};

/// Produces a posterior set with k samples for a normalized observation.
using PosteriorFn = std::function<PosteriorSet(const Raster& condition, int k)>;

struct SweepRow {
  int k = 0;
  std::optional<CalibrationFit> fit;  // empty when the fit failed (flagged)
  double psnr_mmse = 0.0;             // mean psnr_affine of the MMSE over the dataset
  double psnr_mmse_std = 0.0;
  std::string flag;
};

/// For each k: calibration fit and MMSE PSNR using the first k samples of one shared posterior
/// draw of max(k_list) samples per image.
std::vector<SweepRow> sample_efficiency_sweep(const PosteriorFn& posterior, std::span<const EvalPair> dataset,
                                              std::span<const int> k_list, int n_bins = 50);

}  // namespace flowdehaze
