#include "flowdehaze/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flowdehaze/error.hpp"

namespace flowdehaze {

namespace {

double to_db(double mse, double range) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse / (range * range)));
}

}  // namespace

double psnr_affine(const Raster& pred, const Raster& gt) {
  require_same_shape(pred, gt, "psnr_affine");
  if (gt.empty()) throw ValidationError("psnr_affine: empty raster");
  const auto [lo, hi] = std::minmax_element(gt.pixels().begin(), gt.pixels().end());
  const double range = double(*hi) - double(*lo);
  if (!(range > 0.0)) throw ValidationError("psnr_affine: ground truth is constant, range undefined");

  const double n = double(gt.size());
  double mp = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    mp += pred[i];
    mg += gt[i];
  }
  mp /= n;
  mg /= n;
  double cov = 0.0, var = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double dp = pred[i] - mp;
    cov += dp * (gt[i] - mg);
    var += dp * dp;
  }
  const double a = var > 0.0 ? cov / var : 0.0;
  const double b = mg - a * mp;
  double mse = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double r = a * pred[i] + b - gt[i];
    mse += r * r;
  }
  return to_db(mse / n, range);
}

double psnr_fixed(const Raster& pred, const Raster& gt, double data_range) {
  if (!(data_range > 0.0)) throw ValidationError("psnr_fixed: data_range must be positive");
  return to_db(mean_squared_error(pred, gt), data_range);
}

void MetricReport::add(const std::string& id, const Raster& pred, const Raster& gt, const std::string& label) {
  MetricRow row;
  row.id = id;
  row.label = label;
  try {
    require_same_shape(pred, gt, "metric");
    const auto [lo, hi] = std::minmax_element(gt.pixels().begin(), gt.pixels().end());
    row.psnr_affine = psnr_affine(pred, gt);
    row.psnr_fixed = psnr_fixed(pred, gt, double(*hi) - double(*lo));
    row.mse = mean_squared_error(pred, gt);
  } catch (const ValidationError& e) {
    row.ok = false;
    row.flag = e.what();
  }
  per_image.push_back(std::move(row));
}

MetricSummary MetricReport::aggregate(double MetricRow::*metric, const std::string& label) const {
  MetricSummary s;
  double sum = 0.0, sum2 = 0.0;
  for (const auto& r : per_image) {
    if (!r.ok || r.label != label) continue;
    sum += r.*metric;
    ++s.count;
  }
  if (s.count == 0) return s;
  s.mean = sum / double(s.count);
  for (const auto& r : per_image) {
    if (!r.ok || r.label != label) continue;
    sum2 += (r.*metric - s.mean) * (r.*metric - s.mean);
  }
  s.std = std::sqrt(sum2 / double(s.count));
  return s;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ValidationError("spearman: need two equal-length series (n >= 2)");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = double(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace flowdehaze
