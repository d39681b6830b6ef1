#include "flowdehaze/optics_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "flowdehaze/error.hpp"
#include "flowdehaze/random.hpp"

namespace flowdehaze {

void SignalSpec::validate() const {
  if (width < 32 || height < 32) throw ValidationError("signal width and height must be >= 32");
  if (min_objects < 0 || max_objects < min_objects) throw ValidationError("object count range is empty");
  if (!(min_intensity > 0.0f) || max_intensity < min_intensity) {
    throw ValidationError("intensity range must be strictly positive and ordered");
  }
}

void PsfSpec::validate() const {
  if (!(pinhole_au > 0.0) || !std::isfinite(pinhole_au)) throw ValidationError("pinhole_au must be positive");
  if (!(base_sigma > 0.0) || !std::isfinite(base_sigma)) throw ValidationError("base_sigma must be positive");
  if (kernel_radius < 0) throw ValidationError("kernel_radius must be non-negative");
}

void NoiseSpec::validate() const {
  if (!(photon_gain > 0.0)) throw ValidationError("photon_gain must be positive");
  if (!(read_sigma >= 0.0)) throw ValidationError("read_sigma must be non-negative");
}

double Kernel::sum() const noexcept {
  double s = 0.0;
  for (float w : weights) s += w;
  return s;
}

double Kernel::second_moment() const noexcept {
  double m = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) m += (*this)(dy, dx) * double(dx * dx + dy * dy);
  }
  return m;
}

namespace {

struct Canvas {
  Raster image;
  std::vector<unsigned char> forbidden;  // occupied pixels dilated by the separation margin

  explicit Canvas(int h, int w) : image(h, w), forbidden(static_cast<std::size_t>(h) * w, 0) {}
};

constexpr int kSeparation = 2;

bool place_blob(Canvas& canvas, Rng& rng, const SignalSpec& spec) {
  const int h = spec.height;
  const int w = spec.width;
  const double r_max = std::max(2.0, std::min(h, w) / 10.0);
  std::uniform_real_distribution<double> radius(2.0, r_max);
  std::uniform_real_distribution<double> aspect(0.7, 1.3);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<float> peak(spec.min_intensity, spec.max_intensity);

  const double r = radius(rng);
  const double a = r * aspect(rng);
  const double b = r * aspect(rng);
  const double th = angle(rng);
  const float peak_value = peak(rng);
  const int extent = static_cast<int>(std::ceil(std::max(a, b)));
  std::uniform_int_distribution<int> cy(extent, h - 1 - extent);
  std::uniform_int_distribution<int> cx(extent, w - 1 - extent);
  const int y0 = cy(rng);
  const int x0 = cx(rng);

  struct Px {
    int y, x;
    float v;
  };
  std::vector<Px> pixels;
  const double c = std::cos(th), s = std::sin(th);
  for (int dy = -extent; dy <= extent; ++dy) {
    for (int dx = -extent; dx <= extent; ++dx) {
      const double u = (c * dx + s * dy) / a;
      const double v = (-s * dx + c * dy) / b;
      const double rho2 = u * u + v * v;
      if (rho2 > 1.0) continue;
      const float value = spec.min_intensity + (peak_value - spec.min_intensity) * float(1.0 - rho2);
      pixels.push_back({y0 + dy, x0 + dx, value});
    }
  }
  for (const auto& p : pixels) {
    if (canvas.forbidden[static_cast<std::size_t>(p.y) * w + p.x]) return false;
  }
  for (const auto& p : pixels) {
    canvas.image(p.y, p.x) = p.v;
    for (int yy = std::max(0, p.y - kSeparation); yy <= std::min(h - 1, p.y + kSeparation); ++yy) {
      for (int xx = std::max(0, p.x - kSeparation); xx <= std::min(w - 1, p.x + kSeparation); ++xx) {
        canvas.forbidden[static_cast<std::size_t>(yy) * w + xx] = 1;
      }
    }
  }
  return true;
}

void draw_filament(Canvas& canvas, Rng& rng, const SignalSpec& spec) {
  const int h = spec.height;
  const int w = spec.width;
  std::uniform_real_distribution<double> uy(0.0, h - 1.0);
  std::uniform_real_distribution<double> ux(0.0, w - 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> length(std::min(h, w) / 3.0, double(std::min(h, w)));
  std::uniform_real_distribution<double> half_width(0.5, 1.2);
  std::uniform_real_distribution<float> value(spec.min_intensity, spec.max_intensity);
  std::normal_distribution<double> bend(0.0, 0.12);

  double y = uy(rng), x = ux(rng), th = angle(rng);
  const double len = length(rng);
  const double hw = half_width(rng);
  const float v = value(rng);
  const int reach = static_cast<int>(std::ceil(hw));
  for (double walked = 0.0; walked < len; walked += 0.5) {
    for (int dy = -reach; dy <= reach; ++dy) {
      for (int dx = -reach; dx <= reach; ++dx) {
        const int py = static_cast<int>(std::lround(y)) + dy;
        const int px = static_cast<int>(std::lround(x)) + dx;
        if (py < 0 || py >= h || px < 0 || px >= w) continue;
        const double ddy = py - y, ddx = px - x;
        if (ddy * ddy + ddx * ddx > hw * hw) continue;
        canvas.image(py, px) = std::max(canvas.image(py, px), v);
      }
    }
    th += bend(rng);
    y += 0.5 * std::sin(th);
    x += 0.5 * std::cos(th);
    if (y < 0 || y > h - 1 || x < 0 || x > w - 1) break;
  }
}

double gaussian_weight(double r2, double sigma) {
  return std::exp(-r2 / (2.0 * sigma * sigma)) / (sigma * sigma);
}

}  // namespace

Raster gen_signal(const SignalSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x5167));
  std::uniform_int_distribution<int> count_dist(spec.min_objects, spec.max_objects);
  const int count = count_dist(rng);

  Canvas canvas(spec.height, spec.width);
  int n_blobs = 0, n_filaments = 0;
  switch (spec.structure_kind) {
    case StructureKind::blobs: n_blobs = count; break;
    case StructureKind::filaments: n_filaments = count; break;
    case StructureKind::mixed:
      n_blobs = (count + 1) / 2;
      n_filaments = count - n_blobs;
      break;
  }
  constexpr int kMaxAttempts = 2000;
  for (int i = 0; i < n_blobs; ++i) {
    int attempt = 0;
    while (!place_blob(canvas, rng, spec)) {
      if (++attempt >= kMaxAttempts) {
        throw ValidationError("cannot place " + std::to_string(n_blobs) + " separated blobs in a " +
                              std::to_string(spec.height) + "x" + std::to_string(spec.width) + " signal");
      }
    }
  }
  for (int i = 0; i < n_filaments; ++i) draw_filament(canvas, rng, spec);
  return std::move(canvas.image);
}

Kernel make_psf(const PsfSpec& spec) {
  spec.validate();
  const double sigma = spec.effective_sigma();
  const bool halo = spec.mode == PsfMode::widefield;
  const double halo_sigma = kHaloScale * sigma;
  const auto profile = [&](double r2) {
    if (!halo) return gaussian_weight(r2, sigma);
    return (1.0 - kHaloWeight) * gaussian_weight(r2, sigma) + kHaloWeight * gaussian_weight(r2, halo_sigma);
  };

  // Reference extent wide enough to hold essentially all of the continuous mass.
  const int wide = std::max(spec.kernel_radius, static_cast<int>(std::ceil(7.0 * (halo ? halo_sigma : sigma))));
  double total = 0.0, inside = 0.0;
  for (int dy = -wide; dy <= wide; ++dy) {
    for (int dx = -wide; dx <= wide; ++dx) {
      const double v = profile(double(dx * dx + dy * dy));
      total += v;
      if (std::abs(dy) <= spec.kernel_radius && std::abs(dx) <= spec.kernel_radius) inside += v;
    }
  }
  if (inside < 0.99 * total) {
    throw ValidationError("kernel_radius " + std::to_string(spec.kernel_radius) +
                          " truncates the PSF: holds only " + std::to_string(100.0 * inside / total) +
                          "% of its mass");
  }

  Kernel k;
  k.radius = spec.kernel_radius;
  const int n = k.size();
  std::vector<double> w(static_cast<std::size_t>(n) * n);
  for (int dy = -k.radius; dy <= k.radius; ++dy) {
    for (int dx = -k.radius; dx <= k.radius; ++dx) {
      w[static_cast<std::size_t>(dy + k.radius) * n + (dx + k.radius)] = profile(double(dx * dx + dy * dy)) / inside;
    }
  }
  k.weights.assign(w.begin(), w.end());
  return k;
}

Raster apply_psf(const Raster& signal, const Kernel& kernel) {
  if (!signal.all_finite()) throw ValidationError("apply_psf: signal contains non-finite values");
  const int h = signal.height();
  const int w = signal.width();
  const int r = kernel.radius;
  // Reflect-pad once, then convolve densely.
  const Raster padded = crop_reflect(signal, -r, -r, h + 2 * r, w + 2 * r);
  Raster out(h, w);
  std::vector<double> acc(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        // correlation with the flipped kernel; kernels here are symmetric
        const double kv = kernel(-dy, -dx);
        if (kv == 0.0) continue;
        const float* row = &padded.pixels()[static_cast<std::size_t>(y + r + dy) * padded.width() + (r + dx)];
        for (int x = 0; x < w; ++x) acc[x] += kv * row[x];
      }
    }
    for (int x = 0; x < w; ++x) out(y, x) = static_cast<float>(acc[x]);
  }
  return out;
}

Raster add_noise(const Raster& image, const NoiseSpec& spec) {
  spec.validate();
  for (float v : image.pixels()) {
    if (!(v >= 0.0f)) throw ValidationError("add_noise: image must be non-negative and finite");
  }
  if (!spec.enabled) return image;
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double kExactPoissonLimit = 1e5;
  Raster out(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double lambda = spec.photon_gain * image[i];
    double counts = 0.0;
    if (lambda >= kExactPoissonLimit) {
      counts = std::max(0.0, lambda + std::sqrt(lambda) * normal(rng));
    } else if (lambda > 0.0) {
      counts = static_cast<double>(std::poisson_distribution<long long>(lambda)(rng));
    }
    double v = counts / spec.photon_gain;
    if (spec.read_sigma > 0.0) v += spec.read_sigma * normal(rng);
    out[i] = static_cast<float>(v);
  }
  return out;
}

PairedSample make_pair(const Raster& signal, const PsfSpec& hazy_psf, const PsfSpec& clean_psf,
                       const NoiseSpec& noise, std::uint64_t signal_id) {
  NoiseSpec hazy_noise = noise;
  NoiseSpec clean_noise = noise;
  hazy_noise.seed = derive_seed(noise.seed, signal_id, 0);
  clean_noise.seed = derive_seed(noise.seed, signal_id, 1);
  PairedSample pair;
  pair.signal_id = signal_id;
  pair.hazy = add_noise(apply_psf(signal, make_psf(hazy_psf)), hazy_noise);
  pair.clean = add_noise(apply_psf(signal, make_psf(clean_psf)), clean_noise);
  return pair;
}

PairedSample simulate_sample(const SimulationSpec& spec, std::uint64_t signal_id) {
  SignalSpec signal = spec.signal;
  signal.seed = derive_seed(spec.signal.seed, signal_id);
  return make_pair(gen_signal(signal), spec.hazy_psf, spec.clean_psf, spec.noise, signal_id);
}

Raster RoleStats::normalize(const Raster& r) const {
  Raster out = r;
  for (auto& v : out.pixels()) v = static_cast<float>((v - mean) / std);
  return out;
}

Raster RoleStats::denormalize(const Raster& r) const {
  Raster out = r;
  for (auto& v : out.pixels()) v = static_cast<float>(v * std + mean);
  return out;
}

Raster RoleStats::normalize_spread(const Raster& r) const {
  Raster out = r;
  for (auto& v : out.pixels()) v = static_cast<float>(v / std);
  return out;
}

Raster RoleStats::denormalize_spread(const Raster& r) const {
  Raster out = r;
  for (auto& v : out.pixels()) v = static_cast<float>(v * std);
  return out;
}

namespace {

RoleStats role_stats(std::span<const PairedSample> dataset, Raster PairedSample::*role, const char* name) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : dataset) {
    for (float v : (s.*role).pixels()) sum += v;
    n += (s.*role).size();
  }
  if (n == 0) throw ValidationError(std::string("compute_norm_stats: no ") + name + " pixels");
  const double m = sum / double(n);
  double ss = 0.0;
  for (const auto& s : dataset) {
    for (float v : (s.*role).pixels()) ss += (v - m) * (v - m);
  }
  const double sd = std::sqrt(ss / double(n));
  if (!(sd > 0.0)) throw ValidationError(std::string("compute_norm_stats: ") + name + " pixels have zero std");
  return {m, sd};
}

}  // namespace

NormStats compute_norm_stats(std::span<const PairedSample> dataset) {
  if (dataset.empty()) throw ValidationError("compute_norm_stats: empty dataset");
  return {role_stats(dataset, &PairedSample::hazy, "hazy"), role_stats(dataset, &PairedSample::clean, "clean")};
}

}  // namespace flowdehaze
