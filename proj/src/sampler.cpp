#include "flowdehaze/sampler.hpp"

#include <cmath>

#include "flowdehaze/error.hpp"

namespace flowdehaze {

void SamplerConfig::validate() const {
  if (steps_T < 1) throw ValidationError("steps_T must be >= 1");
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
}

PosteriorSet summarize(std::vector<Raster> samples, std::string observation_ref) {
  if (samples.empty()) throw ValidationError("posterior set needs at least one sample");
  const int h = samples[0].height(), w = samples[0].width();
  const std::size_t n = samples[0].size();
  std::vector<double> sum(n, 0.0), sum2(n, 0.0);
  for (const auto& s : samples) {
    require_same_shape(samples[0], s, "posterior samples");
    for (std::size_t i = 0; i < n; ++i) sum[i] += s[i];
  }
  const double k = double(samples.size());
  PosteriorSet set;
  set.mmse = Raster(h, w);
  set.pixel_std = Raster(h, w);
  for (std::size_t i = 0; i < n; ++i) set.mmse[i] = float(sum[i] / k);
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = s[i] - sum[i] / k;
      sum2[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) set.pixel_std[i] = float(std::sqrt(sum2[i] / k));
  set.samples = std::move(samples);
  set.observation_ref = std::move(observation_ref);
  return set;
}

PosteriorSet prefix(const PosteriorSet& set, std::size_t k) {
  if (k == 0 || k > set.samples.size()) throw ValidationError("prefix: k out of range");
  return summarize(std::vector<Raster>(set.samples.begin(), set.samples.begin() + std::ptrdiff_t(k)),
                   set.observation_ref);
}

std::vector<Raster> euler_from(const VelocityModel& field, std::vector<Raster> states,
                               std::span<const Raster> conditions, int steps_T) {
  if (steps_T < 1) throw ValidationError("euler: steps_T must be >= 1");
  if (states.size() != conditions.size()) throw ValidationError("euler: one condition per state is required");
  const double delta = 1.0 / steps_T;
  for (int step = 1; step <= steps_T; ++step) {
    const double t = delta * (step - 1);
    const auto v = field.velocity(t, states, conditions);
    if (v.size() != states.size()) throw ValidationError("euler: velocity model returned the wrong batch size");
    for (std::size_t b = 0; b < states.size(); ++b) {
      require_same_shape(states[b], v[b], "euler velocity");
      auto px = states[b].pixels();
      const auto vx = v[b].pixels();
      for (std::size_t i = 0; i < px.size(); ++i) px[i] = float(px[i] + delta * vx[i]);
      if (!states[b].all_finite()) {
        throw DivergenceError("euler integration produced non-finite values at step " + std::to_string(step) +
                              " of " + std::to_string(steps_T) + " (t=" + std::to_string(t) + ")");
      }
    }
  }
  return states;
}

Raster euler_integrate(const VelocityModel& field, const Raster& x_cond, int steps_T, Rng& rng) {
  std::vector<Raster> states{standard_normal(x_cond.height(), x_cond.width(), rng)};
  return std::move(euler_from(field, std::move(states), std::span(&x_cond, 1), steps_T).front());
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) { return derive_seed(seed, 0xB45E, index); }

PosteriorSet sample_posterior(const VelocityModel& field, const Raster& x_cond, const SamplerConfig& cfg) {
  cfg.validate();
  std::vector<Raster> states;
  states.reserve(cfg.n_samples);
  for (int j = 0; j < cfg.n_samples; ++j) {
    Rng rng(sample_seed(cfg.seed, j));
    states.push_back(standard_normal(x_cond.height(), x_cond.width(), rng));
  }
  const std::vector<Raster> conds(states.size(), x_cond);
  return summarize(euler_from(field, std::move(states), conds, cfg.steps_T));
}

MmseBoundReport mmse_mse_bound_check(const PosteriorSet& posterior, const Raster& gt) {
  MmseBoundReport r;
  r.mmse_mse = mean_squared_error(posterior.mmse, gt);
  for (const auto& s : posterior.samples) r.mean_sample_mse += mean_squared_error(s, gt);
  r.mean_sample_mse /= double(posterior.samples.size());
  r.holds = r.mmse_mse <= r.mean_sample_mse + 1e-9;
  return r;
}

}  // namespace flowdehaze
