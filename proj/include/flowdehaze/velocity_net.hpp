#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flowdehaze/raster.hpp"
#include "flowdehaze/unet.hpp"

namespace flowdehaze {

/// Anything that predicts dx/dt given time, current state and the conditioning observation.
/// All states of one call share the same time value.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;
  virtual std::vector<Raster> velocity(double t, std::span<const Raster> states,
                                       std::span<const Raster> conditions) const = 0;
};

/// Trainable velocity estimator: network topology plus its flat parameter vector.
class VelocityField final : public VelocityModel {
 public:
  VelocityField(const ArchSpec& arch, std::vector<float> parameters);

  /// Deterministic initialization from `seed`.
  static VelocityField init_params(const ArchSpec& arch, std::uint64_t seed);

  const ArchSpec& arch() const noexcept { return net_.arch(); }
  Conditioning conditioning() const noexcept { return net_.arch().conditioning; }
  const UNet<float>& network() const noexcept { return net_; }
  std::span<const float> parameters() const noexcept { return params_; }
  std::span<float> parameters() noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  Raster forward(double t, const Raster& x_t, const Raster& x_cond) const;
  std::vector<Raster> forward_batch(std::span<const double> times, std::span<const Raster> x_t,
                                    std::span<const Raster> x_cond) const;

  std::vector<Raster> velocity(double t, std::span<const Raster> states,
                               std::span<const Raster> conditions) const override;

  /// Mean squared error against `targets` and its gradient w.r.t. the parameters (written into grad).
  double loss_and_gradient(std::span<const double> times, std::span<const Raster> x_t, std::span<const Raster> x_cond,
                           std::span<const Raster> targets, std::vector<float>& grad) const;

 private:
  UNet<float> net_;
  std::vector<float> params_;
};

/// Packs (x_t, x_cond) into the network input for the given conditioning mode:
/// concat stacks them as two channels, add feeds x_t + x_cond as one channel.
template <typename T>
Tensor<T> assemble_input(Conditioning mode, std::span<const Raster> x_t, std::span<const Raster> x_cond);

}  // namespace flowdehaze
