#include "flowdehaze/flow_core.hpp"

#include <cmath>
#include <sstream>

#include "flowdehaze/error.hpp"

namespace flowdehaze {

void TrainConfig::validate() const {
  if (steps_T < 1) throw ValidationError("steps_T must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate must be non-negative");
  if (patch_size < 2 || patch_size % 2 != 0) throw ValidationError("patch_size must be even and >= 2");
  if (max_iterations < 0) throw ValidationError("max_iterations must be non-negative");
  if (!(sifm_sigma >= 0.0)) throw ValidationError("sifm_sigma must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("Adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be positive");
}

double sample_time(int steps_T, Rng& rng) {
  if (steps_T < 1) throw ValidationError("sample_time: steps_T must be >= 1");
  std::uniform_int_distribution<int> grid(0, steps_T);
  return double(grid(rng)) / double(steps_T);
}

Raster interpolate(const Raster& x0, const Raster& x1, double t) {
  require_same_shape(x0, x1, "interpolate");
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("interpolate: t must lie in [0, 1]");
  Raster out(x0.height(), x0.width());
  // Endpoints are returned exactly.
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  const double s = 1.0 - t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(s * x0[i] + t * x1[i]);
  return out;
}

Raster target_velocity(const Raster& x0, const Raster& x1) {
  require_same_shape(x0, x1, "target_velocity");
  Raster out(x0.height(), x0.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x1[i] - x0[i];
  return out;
}

double guided_cfm_loss(const Raster& v_pred, const Raster& v_target) {
  require_same_shape(v_pred, v_target, "guided_cfm_loss");
  return mean_squared_error(v_pred, v_target);
}

double guided_cfm_loss(std::span<const Raster> v_pred, std::span<const Raster> v_target) {
  if (v_pred.size() != v_target.size() || v_pred.empty()) {
    throw ValidationError("guided_cfm_loss: batches must be non-empty and equally sized");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < v_pred.size(); ++i) s += guided_cfm_loss(v_pred[i], v_target[i]);
  return s / double(v_pred.size());
}

Raster sifm_base_sample(const Raster& x1, const Raster& degradation, double sigma, Rng& rng) {
  require_same_shape(x1, degradation, "sifm_base_sample");
  if (!(sigma >= 0.0)) throw ValidationError("sifm_base_sample: sigma must be non-negative");
  if (sigma == 0.0) return degradation;
  Raster out = degradation;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out.pixels()) v = float(v + sigma * normal(rng));
  return out;
}

FlowSample make_flow_sample(Raster x0, Raster x1, Raster x_cond, double t) {
  require_same_shape(x1, x_cond, "make_flow_sample");
  FlowSample s;
  s.x_t = interpolate(x0, x1, t);
  s.v_target = target_velocity(x0, x1);
  s.t = t;
  s.x0 = std::move(x0);
  s.x1 = std::move(x1);
  s.x_cond = std::move(x_cond);
  return s;
}

std::vector<FlowSample> draw_batch(std::span<const PairedSample> pairs, const TrainConfig& cfg, Rng& rng) {
  if (pairs.empty()) throw ValidationError("draw_batch: empty train split");
  const int p = cfg.patch_size;
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<FlowSample> batch;
  batch.reserve(cfg.batch_size);
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto& pair = pairs[pick(rng)];
    if (pair.clean.height() < p || pair.clean.width() < p) {
      throw ValidationError("draw_batch: patch_size exceeds the training image size");
    }
    const int top = std::uniform_int_distribution<int>(0, pair.clean.height() - p)(rng);
    const int left = std::uniform_int_distribution<int>(0, pair.clean.width() - p)(rng);
    Raster x1 = crop_reflect(pair.clean, top, left, p, p);
    Raster cond = crop_reflect(pair.hazy, top, left, p, p);
    const double t = cfg.continuous_time ? unit(rng) : sample_time(cfg.steps_T, rng);
    Raster x0 = cfg.base_mode == BaseMode::sifm ? sifm_base_sample(x1, cond, cfg.sifm_sigma, rng)
                                                : standard_normal(p, p, rng);
    batch.push_back(make_flow_sample(std::move(x0), std::move(x1), std::move(cond), t));
  }
  return batch;
}

namespace {

struct BatchViews {
  std::vector<double> times;
  std::vector<Raster> x_t, cond, target;
};

BatchViews views(std::span<const FlowSample> batch) {
  BatchViews v;
  for (const auto& s : batch) {
    v.times.push_back(s.t);
    v.x_t.push_back(s.x_t);
    v.cond.push_back(s.x_cond);
    v.target.push_back(s.v_target);
  }
  return v;
}

}  // namespace

StepResult training_step(std::span<const FlowSample> batch, VelocityField& field, OptimizerState& state,
                         const TrainConfig& cfg) {
  if (batch.empty()) throw ValidationError("training_step: empty batch");
  const auto v = views(batch);
  std::vector<float> grad;
  const double loss = field.loss_and_gradient(v.times, v.x_t, v.cond, v.target, grad);

  double norm2 = 0.0;
  for (float g : grad) norm2 += double(g) * g;
  const double norm = std::sqrt(norm2);
  if (!std::isfinite(loss) || !std::isfinite(norm)) {
    std::ostringstream msg;
    msg << "training diverged at optimizer step " << state.step + 1 << ": loss=" << loss << " grad_norm=" << norm;
    throw DivergenceError(msg.str());
  }

  auto params = field.parameters();
  if (state.m.size() != params.size()) state.reset(params.size());
  const double scale = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  const float lr = float(cfg.learning_rate);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] * scale;
    state.m[i] = float(cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g);
    state.v[i] = float(cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g);
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * float(m_hat / (std::sqrt(v_hat) + cfg.adam_eps));
  }
  return {loss, norm};
}

double evaluate_loss(std::span<const FlowSample> batch, const VelocityField& field) {
  const auto v = views(batch);
  return guided_cfm_loss(field.forward_batch(v.times, v.x_t, v.cond), v.target);
}

}  // namespace flowdehaze
