#include "flowdehaze/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowdehaze/error.hpp"
#include "flowdehaze/metrics.hpp"

namespace flowdehaze {

CalibrationCurve build_curve(std::span<const Raster> pixel_std, std::span<const Raster> mmse,
                             std::span<const Raster> gt, int n_bins) {
  if (n_bins < 2) throw ValidationError("build_curve: n_bins must be >= 2");
  if (pixel_std.size() != mmse.size() || mmse.size() != gt.size()) {
    throw ValidationError("build_curve: std, mmse and ground-truth sets differ in length");
  }
  std::vector<float> sigma, err;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    require_same_shape(pixel_std[i], gt[i], "build_curve");
    require_same_shape(mmse[i], gt[i], "build_curve");
    for (std::size_t p = 0; p < gt[i].size(); ++p) {
      sigma.push_back(pixel_std[i][p]);
      err.push_back(mmse[i][p] - gt[i][p]);
    }
  }
  const std::size_t total = sigma.size();
  if (total < std::size_t(n_bins)) {
    throw ValidationError("build_curve: " + std::to_string(total) + " pixels cannot fill " + std::to_string(n_bins) +
                          " bins");
  }
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] < sigma[b]; });

  CalibrationCurve c;
  c.n_bins = n_bins;
  const std::size_t base = total / n_bins, extra = total % n_bins;
  std::size_t pos = 0;
  for (int j = 0; j < n_bins; ++j) {
    const std::size_t size = base + (std::size_t(j) < extra ? 1 : 0);
    double var = 0.0, sq = 0.0;
    for (std::size_t q = pos; q < pos + size; ++q) {
      const double s = sigma[order[q]], e = err[order[q]];
      var += s * s;
      sq += e * e;
    }
    c.bin_edges.push_back(sigma[order[pos]]);
    c.rmv.push_back(std::sqrt(var / double(size)));
    c.rmse.push_back(std::sqrt(sq / double(size)));
    c.bin_sizes.push_back(size);
    pos += size;
  }
  c.bin_edges.push_back(sigma[order.back()]);
  return c;
}

double calibration_residual(const CalibrationCurve& curve, double alpha, double beta) {
  double r = 0.0;
  for (std::size_t j = 0; j < curve.rmv.size(); ++j) {
    const double d = curve.rmse[j] - alpha * curve.rmv[j] - beta;
    r += d * d;
  }
  return r;
}

CalibrationFit fit_calibration(const CalibrationCurve& curve) {
  const std::size_t n = curve.rmv.size();
  if (n < 2 || curve.rmse.size() != n) throw ValidationError("fit_calibration: curve needs >= 2 matching bins");
  const double mx = std::accumulate(curve.rmv.begin(), curve.rmv.end(), 0.0) / double(n);
  const double my = std::accumulate(curve.rmse.begin(), curve.rmse.end(), 0.0) / double(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    sxx += (curve.rmv[j] - mx) * (curve.rmv[j] - mx);
    sxy += (curve.rmv[j] - mx) * (curve.rmse[j] - my);
  }
  if (!(sxx > 0.0)) {
    const bool all_zero = std::all_of(curve.rmv.begin(), curve.rmv.end(), [](double v) { return v == 0.0; });
    throw ValidationError(all_zero ? "fit_calibration: pixel_std is identically zero"
                                   : "fit_calibration: rmv has zero variance across bins");
  }
  CalibrationFit fit;
  fit.alpha = sxy / sxx;
  if (fit.alpha < kMinCalibrationSlope) {
    fit.alpha = kMinCalibrationSlope;
    fit.clamped = true;
  }
  fit.beta = my - fit.alpha * mx;
  fit.fit_residual = calibration_residual(curve, fit.alpha, fit.beta);
  return fit;
}

Raster apply_calibration(const Raster& pixel_std, const CalibrationFit& fit) {
  Raster out(pixel_std.height(), pixel_std.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(fit.alpha * pixel_std[i] + fit.beta);
  return out;
}

std::vector<SweepRow> sample_efficiency_sweep(const PosteriorFn& posterior, std::span<const EvalPair> dataset,
                                              std::span<const int> k_list, int n_bins) {
  if (dataset.empty()) throw ValidationError("sample_efficiency_sweep: empty dataset");
  if (k_list.empty() || !std::is_sorted(k_list.begin(), k_list.end()) || k_list.front() < 1) {
    throw ValidationError("sample_efficiency_sweep: k_list must be sorted and positive");
  }
  const int k_max = k_list.back();
  std::vector<PosteriorSet> full;
  full.reserve(dataset.size());
  for (const auto& item : dataset) full.push_back(posterior(item.condition, k_max));

  std::vector<SweepRow> rows;
  for (int k : k_list) {
    SweepRow row;
    row.k = k;
    std::vector<Raster> stds, mmses, gts;
    std::vector<double> psnrs;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      PosteriorSet p = prefix(full[i], std::size_t(k));
      psnrs.push_back(psnr_affine(p.mmse, dataset[i].target));
      stds.push_back(std::move(p.pixel_std));
      mmses.push_back(std::move(p.mmse));
      gts.push_back(dataset[i].target);
    }
    const double m = std::accumulate(psnrs.begin(), psnrs.end(), 0.0) / double(psnrs.size());
    double v = 0.0;
    for (double x : psnrs) v += (x - m) * (x - m);
    row.psnr_mmse = m;
    row.psnr_mmse_std = std::sqrt(v / double(psnrs.size()));
    try {
      row.fit = fit_calibration(build_curve(stds, mmses, gts, n_bins));
      if (row.fit->clamped) row.flag = "slope clamped";
    } catch (const ValidationError& e) {
      row.flag = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace flowdehaze
