#pragma once

#include <filesystem>
#include <optional>

#include "flowdehaze/flow_core.hpp"
#include "flowdehaze/optics_sim.hpp"
#include "flowdehaze/velocity_net.hpp"

namespace flowdehaze {

// Checkpoint container:
//   8-byte magic "FDCKPT01"
//   uint64 LE header length, then a UTF-8 JSON header:
//     format_version, arch {base_channels, depth, time_embed_dim, in_channels},
//     conditioning, iteration, norm_stats, best_val_loss,
//     optimizer {type, step},
//     tensors [{name, offset, count}]   (offsets into each float block)
//     blocks {params, adam_m, adam_v}   (float offset and count within the payload)
//   float32 LE payload: params, then Adam first and second moments.
inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  VelocityField field;
  OptimizerState optimizer;
  long iteration = 0;
  std::optional<NormStats> norm_stats;
  std::optional<double> best_val_loss;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads a checkpoint and checks it against the expected architecture; IncompatibilityError on mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchSpec& expected);

}  // namespace flowdehaze
