#pragma once

#include <span>
#include <string>
#include <vector>

#include "flowdehaze/raster.hpp"

namespace flowdehaze {

inline constexpr double kPsnrCap = 150.0;

/// PSNR after the least-squares affine fit a*pred + b to gt, with the peak taken as max(gt) - min(gt).
double psnr_affine(const Raster& pred, const Raster& gt);

/// -10 log10(MSE / data_range^2), capped at kPsnrCap.
double psnr_fixed(const Raster& pred, const Raster& gt, double data_range);

struct MetricRow {
  std::string id;
  std::string label = "prediction";  // "input-psnr" rows score the hazy input
  double psnr_affine = 0.0;
  double psnr_fixed = 0.0;
  double mse = 0.0;
  bool ok = true;
  std::string flag;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population std over rows
  std::size_t count = 0;
};

struct MetricReport {
  std::vector<MetricRow> per_image;

  void add(const std::string& id, const Raster& pred, const Raster& gt, const std::string& label = "prediction");
  /// Aggregates over rows with the given label that were scored successfully.
  MetricSummary aggregate(double MetricRow::*metric, const std::string& label = "prediction") const;
};

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace flowdehaze
