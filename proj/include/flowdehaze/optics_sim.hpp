#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flowdehaze/raster.hpp"

namespace flowdehaze {

enum class StructureKind { blobs, filaments, mixed };

struct SignalSpec {
  int width = 64;
  int height = 64;
  StructureKind structure_kind = StructureKind::blobs;
  int min_objects = 5;
  int max_objects = 15;
  float min_intensity = 20.0f;
  float max_intensity = 100.0f;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class PsfMode { confocal, widefield };

// Effective Gaussian width grows linearly with the pinhole diameter:
//   sigma_eff = base_sigma * (1 + kPinholeWidening * pinhole_au)
// Widefield kernels add an out-of-focus halo of width kHaloScale * sigma_eff
// carrying kHaloWeight of the mass.
inline constexpr double kPinholeWidening = 0.1;
inline constexpr double kHaloScale = 2.0;
inline constexpr double kHaloWeight = 0.5;

struct PsfSpec {
  PsfMode mode = PsfMode::confocal;
  double pinhole_au = 1.0;
  double base_sigma = 0.5;
  int kernel_radius = 8;

  void validate() const;
  double effective_sigma() const noexcept { return base_sigma * (1.0 + kPinholeWidening * pinhole_au); }
};

struct NoiseSpec {
  double photon_gain = 1.0;
  double read_sigma = 0.0;
  std::uint64_t seed = 0;
  bool enabled = true;

  void validate() const;
};

/// Square, odd-sized, unit-sum convolution kernel.
struct Kernel {
  int radius = 0;
  std::vector<float> weights;  // (2r+1)^2, row-major

  int size() const noexcept { return 2 * radius + 1; }
  float operator()(int dy, int dx) const noexcept {
    return weights[static_cast<std::size_t>(dy + radius) * size() + (dx + radius)];
  }
  double sum() const noexcept;
  /// E[dx^2 + dy^2] under the kernel weights.
  double second_moment() const noexcept;
};

struct PairedSample {
  Raster hazy;
  Raster clean;
  std::uint64_t signal_id = 0;
};

Raster gen_signal(const SignalSpec& spec);
Kernel make_psf(const PsfSpec& spec);
Raster apply_psf(const Raster& signal, const Kernel& kernel);
Raster add_noise(const Raster& image, const NoiseSpec& spec);

/// Hazy and clean observations of one signal with independent noise draws seeded from signal_id.
PairedSample make_pair(const Raster& signal, const PsfSpec& hazy_psf, const PsfSpec& clean_psf,
                       const NoiseSpec& noise, std::uint64_t signal_id = 0);

struct SimulationSpec {
  SignalSpec signal;
  PsfSpec hazy_psf{PsfMode::widefield, 30.0, 1.0, 24};
  PsfSpec clean_psf{PsfMode::confocal, 1.0, 0.5, 4};
  NoiseSpec noise;
};

/// Signal and pair for one dataset index; every seed is derived from the spec seeds and the index.
PairedSample simulate_sample(const SimulationSpec& spec, std::uint64_t signal_id);

struct RoleStats {
  double mean = 0.0;
  double std = 1.0;

  Raster normalize(const Raster& r) const;
  Raster denormalize(const Raster& r) const;
  /// Scales a spread (std or error) map into normalized units.
  Raster normalize_spread(const Raster& r) const;
  Raster denormalize_spread(const Raster& r) const;
};

struct NormStats {
  RoleStats hazy;
  RoleStats clean;
};

NormStats compute_norm_stats(std::span<const PairedSample> dataset);

}  // namespace flowdehaze
