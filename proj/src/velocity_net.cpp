#include "flowdehaze/velocity_net.hpp"

#include <cmath>
#include <string>

#include "flowdehaze/error.hpp"

namespace flowdehaze {

template <typename T>
Tensor<T> assemble_input(Conditioning mode, std::span<const Raster> x_t, std::span<const Raster> x_cond) {
  if (x_t.empty() || x_t.size() != x_cond.size()) {
    throw ValidationError("forward: need matching, non-empty state and condition batches");
  }
  const int h = x_t[0].height();
  const int w = x_t[0].width();
  const int n = static_cast<int>(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    if (x_t[i].height() != h || x_t[i].width() != w) throw ValidationError("forward: batch items differ in shape");
    require_same_shape(x_t[i], x_cond[i], "forward");
  }
  Tensor<T> in(mode == Conditioning::concat ? 2 : 1, n, h, w);
  for (int i = 0; i < n; ++i) {
    const auto xs = x_t[i].pixels();
    const auto cs = x_cond[i].pixels();
    T* a = in.at(0, i);
    if (mode == Conditioning::concat) {
      T* b = in.at(1, i);
      for (std::size_t j = 0; j < xs.size(); ++j) {
        a[j] = T(xs[j]);
        b[j] = T(cs[j]);
      }
    } else {
      for (std::size_t j = 0; j < xs.size(); ++j) a[j] = T(xs[j]) + T(cs[j]);
    }
  }
  return in;
}

template Tensor<float> assemble_input<float>(Conditioning, std::span<const Raster>, std::span<const Raster>);
template Tensor<double> assemble_input<double>(Conditioning, std::span<const Raster>, std::span<const Raster>);

VelocityField::VelocityField(const ArchSpec& arch, std::vector<float> parameters)
    : net_(arch), params_(std::move(parameters)) {
  if (params_.size() != net_.parameter_count()) {
    throw IncompatibilityError("parameter count " + std::to_string(params_.size()) +
                               " does not match architecture (" + std::to_string(net_.parameter_count()) + ")");
  }
}

VelocityField VelocityField::init_params(const ArchSpec& arch, std::uint64_t seed) {
  UNet<float> net(arch);
  return VelocityField(arch, net.init_params(seed));
}

Raster VelocityField::forward(double t, const Raster& x_t, const Raster& x_cond) const {
  const double times[] = {t};
  return forward_batch(times, std::span(&x_t, 1), std::span(&x_cond, 1)).front();
}

namespace {

void check_times(std::span<const double> times) {
  for (double t : times) {
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("forward: t must lie in [0, 1], got " + std::to_string(t));
  }
}

std::vector<Raster> unpack(const Tensor<float>& out) {
  std::vector<Raster> result;
  result.reserve(out.n);
  for (int i = 0; i < out.n; ++i) {
    const float* p = out.at(0, i);
    result.emplace_back(out.h, out.w, std::vector<float>(p, p + out.plane()));
  }
  return result;
}

}  // namespace

std::vector<Raster> VelocityField::forward_batch(std::span<const double> times, std::span<const Raster> x_t,
                                                 std::span<const Raster> x_cond) const {
  check_times(times);
  return unpack(net_.forward(params_, times, assemble_input<float>(conditioning(), x_t, x_cond)));
}

std::vector<Raster> VelocityField::velocity(double t, std::span<const Raster> states,
                                            std::span<const Raster> conditions) const {
  const std::vector<double> times(states.size(), t);
  return forward_batch(times, states, conditions);
}

double VelocityField::loss_and_gradient(std::span<const double> times, std::span<const Raster> x_t,
                                        std::span<const Raster> x_cond, std::span<const Raster> targets,
                                        std::vector<float>& grad) const {
  check_times(times);
  if (targets.size() != x_t.size()) throw ValidationError("loss: one target per batch item is required");
  std::shared_ptr<UNet<float>::Tape> tape;
  const Tensor<float> out = net_.forward(params_, times, assemble_input<float>(conditioning(), x_t, x_cond), &tape);

  Tensor<float> d_out(1, out.n, out.h, out.w);
  const double count = double(out.size());
  double loss = 0.0;
  for (int i = 0; i < out.n; ++i) {
    require_same_shape(x_t[i], targets[i], "loss");
    const float* o = out.at(0, i);
    float* d = d_out.at(0, i);
    const auto tgt = targets[i].pixels();
    for (std::size_t j = 0; j < out.plane(); ++j) {
      const double r = double(o[j]) - double(tgt[j]);
      loss += r * r;
      d[j] = float(2.0 * r / count);
    }
  }
  grad.assign(params_.size(), 0.0f);
  net_.backward(params_, *tape, d_out, grad);
  return loss / count;
}

}  // namespace flowdehaze
