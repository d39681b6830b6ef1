#pragma once

#include <functional>
#include <span>
#include <vector>

#include "flowdehaze/raster.hpp"
#include "flowdehaze/sampler.hpp"
#include "flowdehaze/velocity_net.hpp"

namespace flowdehaze {

struct Window {
  int top = 0, left = 0, height = 0, width = 0;
  friend bool operator==(const Window&, const Window&) = default;
};

struct Tile {
  Window input;  // in image coordinates; may extend past the borders (reflect-padded)
  Window inner;  // in image coordinates, clipped to the image
  int row = 0, col = 0;
};

// Inner tiling: each tile of side `tile` predicts a centered inner window of side
// tile*(1-overlap); only the inner window is kept. The image is conceptually padded by
// reflection up to a multiple of the inner size and by the margin (tile-inner)/2 on each side.
struct TileGrid {
  int image_h = 0, image_w = 0;
  int tile = 0;
  double overlap_fraction = 0.5;
  int inner = 0;
  int margin = 0;
  int rows = 0, cols = 0;
  std::vector<Tile> tiles;
};

TileGrid plan_tiles(int image_h, int image_w, int tile, double overlap_fraction = 0.5);

using TileFn = std::function<Raster(const Raster& tile_input, const Tile& tile)>;
/// Processes several tiles at once; must return one output per input, same shapes.
using TileBatchFn = std::function<std::vector<Raster>(std::span<const Raster> inputs, std::span<const Tile> tiles)>;

/// Stitches per-tile outputs; each image pixel is written once from the inner region of one tile.
Raster predict_tiled(const Raster& image, const TileGrid& grid, const TileFn& per_tile_fn);
Raster predict_tiled_batch(const Raster& image, const TileGrid& grid, const TileBatchFn& batch_fn);

/// Frame-level posterior sampling through tiles. Sample j draws one noise field over the padded
/// frame from sample_seed(cfg.seed, j); every tile starts from its crop of that field.
PosteriorSet sample_posterior_tiled(const VelocityModel& field, const Raster& x_cond, const TileGrid& grid,
                                    const SamplerConfig& cfg);

}  // namespace flowdehaze
