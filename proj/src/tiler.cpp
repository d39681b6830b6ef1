#include "flowdehaze/tiler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flowdehaze/error.hpp"

namespace flowdehaze {

namespace {

std::string tile_label(const Tile& t) {
  return "tile (row " + std::to_string(t.row) + ", col " + std::to_string(t.col) + ") at (" +
         std::to_string(t.input.top) + ", " + std::to_string(t.input.left) + ")";
}

constexpr std::size_t kTilesPerBatch = 16;

}  // namespace

TileGrid plan_tiles(int image_h, int image_w, int tile, double overlap_fraction) {
  if (image_h < 1 || image_w < 1) throw ValidationError("plan_tiles: image must be non-empty");
  if (tile < 2 || tile % 2 != 0) throw ValidationError("plan_tiles: tile must be even and >= 2");
  if (!(overlap_fraction > 0.0 && overlap_fraction < 1.0)) {
    throw ValidationError("plan_tiles: overlap_fraction must lie in (0, 1)");
  }
  const double inner_exact = tile * (1.0 - overlap_fraction);
  const int inner = static_cast<int>(std::lround(inner_exact));
  if (inner < 1 || std::abs(inner_exact - inner) > 1e-9) {
    throw ValidationError("plan_tiles: tile*(1-overlap) must be a positive integer");
  }

  TileGrid g;
  g.image_h = image_h;
  g.image_w = image_w;
  g.tile = tile;
  g.overlap_fraction = overlap_fraction;
  g.inner = inner;
  g.margin = (tile - inner) / 2;
  g.rows = (image_h + inner - 1) / inner;
  g.cols = (image_w + inner - 1) / inner;
  if (tile > g.rows * inner || tile > g.cols * inner) {
    throw ValidationError("plan_tiles: tile " + std::to_string(tile) + " is larger than the padded image " +
                          std::to_string(g.rows * inner) + "x" + std::to_string(g.cols * inner));
  }
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      Tile t;
      t.row = r;
      t.col = c;
      t.input = {r * inner - g.margin, c * inner - g.margin, tile, tile};
      t.inner = {r * inner, c * inner, std::min(inner, image_h - r * inner), std::min(inner, image_w - c * inner)};
      g.tiles.push_back(t);
    }
  }
  return g;
}

Raster predict_tiled(const Raster& image, const TileGrid& grid, const TileFn& per_tile_fn) {
  return predict_tiled_batch(image, grid, [&](std::span<const Raster> inputs, std::span<const Tile> tiles) {
    std::vector<Raster> out;
    out.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      try {
        out.push_back(per_tile_fn(inputs[i], tiles[i]));
      } catch (const Error& e) {
        rethrow_with_context(e, "in " + tile_label(tiles[i]));
      }
    }
    return out;
  });
}

Raster predict_tiled_batch(const Raster& image, const TileGrid& grid, const TileBatchFn& batch_fn) {
  if (image.height() != grid.image_h || image.width() != grid.image_w) {
    throw ValidationError("predict_tiled: grid was planned for a different image shape");
  }
  Raster out(grid.image_h, grid.image_w);
  for (std::size_t start = 0; start < grid.tiles.size(); start += kTilesPerBatch) {
    const std::size_t stop = std::min(grid.tiles.size(), start + kTilesPerBatch);
    const std::span<const Tile> tiles(grid.tiles.data() + start, stop - start);
    std::vector<Raster> inputs;
    inputs.reserve(tiles.size());
    for (const auto& t : tiles) inputs.push_back(crop_reflect(image, t.input.top, t.input.left, t.input.height, t.input.width));

    std::vector<Raster> outputs;
    try {
      outputs = batch_fn(inputs, tiles);
    } catch (const Error& e) {
      const Tile& last = tiles.back();
      rethrow_with_context(e, "while predicting tiles " + tile_label(tiles.front()) + " through (row " +
                                  std::to_string(last.row) + ", col " + std::to_string(last.col) + ")");
    }
    if (outputs.size() != tiles.size()) throw ValidationError("predict_tiled: tile function returned the wrong count");
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      const Tile& t = tiles[i];
      if (outputs[i].height() != grid.tile || outputs[i].width() != grid.tile) {
        throw ValidationError("predict_tiled: " + tile_label(t) + " produced an output of the wrong shape");
      }
      const int dy = t.inner.top - t.input.top;
      const int dx = t.inner.left - t.input.left;
      for (int y = 0; y < t.inner.height; ++y) {
        for (int x = 0; x < t.inner.width; ++x) out(t.inner.top + y, t.inner.left + x) = outputs[i](dy + y, dx + x);
      }
    }
  }
  return out;
}

PosteriorSet sample_posterior_tiled(const VelocityModel& field, const Raster& x_cond, const TileGrid& grid,
                                    const SamplerConfig& cfg) {
  cfg.validate();
  const int noise_h = (grid.rows - 1) * grid.inner + grid.tile;
  const int noise_w = (grid.cols - 1) * grid.inner + grid.tile;
  std::vector<Raster> samples;
  samples.reserve(cfg.n_samples);
  for (int j = 0; j < cfg.n_samples; ++j) {
    Rng rng(sample_seed(cfg.seed, j));
    const Raster noise = standard_normal(noise_h, noise_w, rng);
    samples.push_back(predict_tiled_batch(x_cond, grid, [&](std::span<const Raster> conds, std::span<const Tile> tiles) {
      std::vector<Raster> starts;
      starts.reserve(tiles.size());
      for (const auto& t : tiles) {
        starts.push_back(crop_reflect(noise, t.input.top + grid.margin, t.input.left + grid.margin, grid.tile, grid.tile));
      }
      return euler_from(field, std::move(starts), conds, cfg.steps_T);
    }));
  }
  return summarize(std::move(samples));
}

}  // namespace flowdehaze
