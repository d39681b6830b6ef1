#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flowdehaze/optics_sim.hpp"
#include "flowdehaze/random.hpp"
#include "flowdehaze/raster.hpp"
#include "flowdehaze/velocity_net.hpp"

namespace flowdehaze {

/// Where the base sample x0 comes from during training.
///  gaussian: x0 ~ N(0, I) (guided CFM)
///  sifm:     x0 = degraded observation + sigma * N(0, I) (stochastic-interpolant baseline)
enum class BaseMode { gaussian, sifm };

struct TrainConfig {
  int steps_T = 20;
  int batch_size = 16;
  double learning_rate = 1e-4;
  int patch_size = 64;
  long max_iterations = 10000;
  std::uint64_t seed = 0;
  Conditioning conditioning = Conditioning::concat;
  bool continuous_time = false;  // U[0,1] instead of the T-point grid
  BaseMode base_mode = BaseMode::gaussian;
  double sifm_sigma = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping

  void validate() const;
};

/// One training example of the guided objective.
struct FlowSample {
  Raster x0;
  Raster x1;      // clean target, normalized
  Raster x_cond;  // hazy observation, normalized
  double t = 0.0;
  Raster x_t;
  Raster v_target;
};

/// Draws uniformly from {0, 1/T, ..., 1}.
double sample_time(int steps_T, Rng& rng);

Raster interpolate(const Raster& x0, const Raster& x1, double t);
Raster target_velocity(const Raster& x0, const Raster& x1);
double guided_cfm_loss(const Raster& v_pred, const Raster& v_target);
/// Batch mean of guided_cfm_loss with equal-size items (mean over all pixels and items).
double guided_cfm_loss(std::span<const Raster> v_pred, std::span<const Raster> v_target);

Raster sifm_base_sample(const Raster& x1, const Raster& degradation, double sigma, Rng& rng);

/// Assembles x_t and v_target from (x0, x1, x_cond, t).
FlowSample make_flow_sample(Raster x0, Raster x1, Raster x_cond, double t);

/// Draws `cfg.batch_size` random patches from normalized pairs and builds their flow samples.
std::vector<FlowSample> draw_batch(std::span<const PairedSample> normalized_pairs, const TrainConfig& cfg, Rng& rng);

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<float> m;
  std::vector<float> v;

  void reset(std::size_t n) {
    step = 0;
    m.assign(n, 0.0f);
    v.assign(n, 0.0f);
  }
};

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
};

/// One Adam step on the guided objective. Throws DivergenceError on a non-finite loss or gradient
/// without touching the parameters.
StepResult training_step(std::span<const FlowSample> batch, VelocityField& field, OptimizerState& state,
                         const TrainConfig& cfg);

/// Mean guided loss over the batch without updating anything.
double evaluate_loss(std::span<const FlowSample> batch, const VelocityField& field);

}  // namespace flowdehaze
