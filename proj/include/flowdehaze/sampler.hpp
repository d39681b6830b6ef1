#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowdehaze/random.hpp"
#include "flowdehaze/raster.hpp"
#include "flowdehaze/velocity_net.hpp"

namespace flowdehaze {

struct SamplerConfig {
  int steps_T = 20;
  int n_samples = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Posterior draws for one observation with their pixel-wise mean and population std.
struct PosteriorSet {
  std::vector<Raster> samples;
  Raster mmse;
  Raster pixel_std;
  std::string observation_ref;
};

/// Mean and population std over samples.
PosteriorSet summarize(std::vector<Raster> samples, std::string observation_ref = {});

/// Posterior set restricted to the first k samples.
PosteriorSet prefix(const PosteriorSet& set, std::size_t k);

/// Forward Euler from t=0 to t=1 in `steps_T` steps, evaluating the field at the current state and
/// left time endpoint. Integrates every state of the batch in lockstep.
std::vector<Raster> euler_from(const VelocityModel& field, std::vector<Raster> states,
                               std::span<const Raster> conditions, int steps_T);

/// Draws x0 ~ N(0, I) of x_cond's shape from rng, then integrates.
Raster euler_integrate(const VelocityModel& field, const Raster& x_cond, int steps_T, Rng& rng);

/// Seed of the base noise for posterior sample `index`.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);

/// k independent integrations; sample j starts from noise seeded by sample_seed(cfg.seed, j).
PosteriorSet sample_posterior(const VelocityModel& field, const Raster& x_cond, const SamplerConfig& cfg);

struct MmseBoundReport {
  double mmse_mse = 0.0;
  double mean_sample_mse = 0.0;
  bool holds = false;
};

/// MSE(mmse, gt) <= mean_j MSE(sample_j, gt) + 1e-9.
MmseBoundReport mmse_mse_bound_check(const PosteriorSet& posterior, const Raster& gt);

}  // namespace flowdehaze
