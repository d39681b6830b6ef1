#include <doctest.h>

#include <random>

#include "flowdehaze/error.hpp"
#include "flowdehaze/random.hpp"
#include "flowdehaze/tiler.hpp"
#include "support.hpp"

using namespace flowdehaze;

namespace {

Raster hmean3(const Raster& r) {
  Raster out(r.height(), r.width());
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < r.width(); ++x) {
      const double s = double(r(y, reflect_index(x - 1, r.width()))) + r(y, x) + r(y, reflect_index(x + 1, r.width()));
      out(y, x) = float(s / 3.0);
    }
  }
  return out;
}

std::vector<int> coverage(const TileGrid& g) {
  std::vector<int> hits(std::size_t(g.image_h) * g.image_w, 0);
  for (const auto& t : g.tiles) {
    for (int y = t.inner.top; y < t.inner.top + t.inner.height; ++y)
      for (int x = t.inner.left; x < t.inner.left + t.inner.width; ++x) ++hits[std::size_t(y) * g.image_w + x];
  }
  return hits;
}

class ZeroField final : public VelocityModel {
 public:
  std::vector<Raster> velocity(double, std::span<const Raster> states, std::span<const Raster>) const override {
    std::vector<Raster> out;
    for (const auto& s : states) out.emplace_back(s.height(), s.width(), 0.0f);
    return out;
  }
};

}  // namespace

TEST_CASE("1024x1024 with tile 128 gives a 16x16 grid of 64x64 inner windows") {
  const TileGrid g = plan_tiles(1024, 1024, 128, 0.5);
  CHECK(g.rows == 16);
  CHECK(g.cols == 16);
  CHECK(g.tiles.size() == 256);
  for (const auto& t : g.tiles) {
    CHECK(t.inner.height == 64);
    CHECK(t.inner.width == 64);
    CHECK(t.input.height == 128);
    CHECK(t.input.top == t.inner.top - 32);
  }
}

TEST_CASE("image equal to the tile gives 2x2 inner windows") {
  const TileGrid g = plan_tiles(64, 64, 64, 0.5);
  REQUIRE(g.tiles.size() == 4);
  CHECK(g.tiles[0].inner == Window{0, 0, 32, 32});
  CHECK(g.tiles[1].inner == Window{0, 32, 32, 32});
  CHECK(g.tiles[2].inner == Window{32, 0, 32, 32});
  CHECK(g.tiles[3].inner == Window{32, 32, 32, 32});
  for (int h : coverage(g)) CHECK(h == 1);
}

TEST_CASE("plan validation") {
  CHECK_THROWS_AS(plan_tiles(64, 64, 63, 0.5), ValidationError);
  CHECK_THROWS_AS(plan_tiles(64, 64, 64, 0.0), ValidationError);
  CHECK_THROWS_AS(plan_tiles(64, 64, 64, 1.0), ValidationError);
  CHECK_THROWS_AS(plan_tiles(64, 64, 10, 0.33), ValidationError);
  CHECK_THROWS_AS(plan_tiles(16, 64, 64, 0.5), ValidationError);
  CHECK_THROWS_AS(plan_tiles(32, 32, 64, 0.5), ValidationError);  // one 32 px inner window, tile 64
  CHECK_NOTHROW(plan_tiles(33, 33, 64, 0.5));  // padded to 2x32 inner windows
  CHECK_NOTHROW(plan_tiles(40, 40, 16, 0.25));
}

TEST_CASE("exact cover, identity and +1 on randomized shapes") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 150);
  const int tiles[] = {8, 16, 32};
  int accepted = 0;
  for (int trial = 0; accepted < 25 && trial < 200; ++trial) {
    const int h = dim(rng), w = dim(rng), tile = tiles[trial % 3];
    const double overlap = trial % 4 == 0 ? 0.75 : 0.5;
    TileGrid g;
    try {
      g = plan_tiles(h, w, tile, overlap);
    } catch (const ValidationError&) {
      continue;
    }
    ++accepted;
    CAPTURE(h);
    CAPTURE(w);
    CAPTURE(tile);
    long area = 0;
    for (const auto& t : g.tiles) area += long(t.inner.height) * t.inner.width;
    CHECK(area == long(h) * w);
    for (int hits : coverage(g)) CHECK(hits == 1);
    const int padded_h = g.rows * g.inner + 2 * g.margin, padded_w = g.cols * g.inner + 2 * g.margin;
    for (const auto& t : g.tiles) {
      CHECK(t.input.top + g.margin >= 0);
      CHECK(t.input.top + g.margin + t.input.height <= padded_h);
      CHECK(t.input.left + g.margin + t.input.width <= padded_w);
    }

    const Raster img = testing::random_raster(h, w, std::uint64_t(trial));
    CHECK(predict_tiled(img, g, [](const Raster& in, const Tile&) { return in; }) == img);
    const Raster plus = predict_tiled(img, g, [](const Raster& in, const Tile&) {
      Raster o = in;
      for (auto& v : o.pixels()) v += 1.0f;
      return o;
    });
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(plus[i] == img[i] + 1.0f);
  }
  CHECK(accepted >= 20);
}

TEST_CASE("3-tap filter per tile matches whole-image filtering") {
  for (auto [h, w, tile] : {std::tuple{64, 64, 16}, std::tuple{50, 70, 16}, std::tuple{33, 97, 32}}) {
    const Raster img = testing::random_raster(h, w, 9);
    const TileGrid g = plan_tiles(h, w, tile, 0.5);
    const Raster tiled = predict_tiled(img, g, [](const Raster& in, const Tile&) { return hmean3(in); });
    const Raster whole = hmean3(img);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(tiled[i] == whole[i]);
  }
}

TEST_CASE("shift consistency on the common interior") {
  const int inner = 8, tile = 16, shift = 2 * inner;
  const Raster big = testing::random_raster(80, 72, 4);
  const Raster a = crop_reflect(big, 0, 0, 64, 72);
  const Raster b = crop_reflect(big, shift, 0, 64, 72);
  const auto fn = [](const Raster& in, const Tile&) {
    Raster o = hmean3(in);
    for (auto& v : o.pixels()) v = v * v - 0.5f * v;
    return o;
  };
  const TileGrid ga = plan_tiles(64, 72, tile, 0.5), gb = plan_tiles(64, 72, tile, 0.5);
  const Raster pa = predict_tiled(a, ga, fn), pb = predict_tiled(b, gb, fn);
  int compared = 0;
  for (const auto& t : gb.tiles) {
    const int top_a = t.input.top + shift;
    const bool inside_b = t.input.top >= 0 && t.input.left >= 0 && t.input.top + tile <= 64 && t.input.left + tile <= 72;
    const bool inside_a = top_a >= 0 && top_a + tile <= 64;
    if (!inside_a || !inside_b) continue;
    for (int y = t.inner.top; y < t.inner.top + t.inner.height; ++y) {
      for (int x = t.inner.left; x < t.inner.left + t.inner.width; ++x) {
        CHECK(pb(y, x) == pa(y + shift, x));
        ++compared;
      }
    }
  }
  CHECK(compared > 0);
}

TEST_CASE("tile failures carry the tile coordinates") {
  const Raster img = testing::random_raster(32, 32, 1);
  const TileGrid g = plan_tiles(32, 32, 16, 0.5);
  try {
    predict_tiled(img, g, [](const Raster& in, const Tile& t) -> Raster {
      if (t.row == 2 && t.col == 1) throw DivergenceError("boom");
      return in;
    });
    FAIL("expected an error");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("boom") != std::string::npos);
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("col 1") != std::string::npos);
  }
  CHECK_THROWS_AS(predict_tiled(testing::random_raster(30, 32, 1), g, [](const Raster& in, const Tile&) { return in; }),
                  ValidationError);
  CHECK_THROWS_AS(predict_tiled(img, g, [](const Raster&, const Tile&) { return Raster(3, 3); }), ValidationError);
}

TEST_CASE("tiled posterior samples are coherent single draws over the frame") {
  const ZeroField field;  // samples equal their starting noise
  const Raster cond = testing::random_raster(40, 24, 3);
  const TileGrid g = plan_tiles(40, 24, 16, 0.5);
  const SamplerConfig cfg{4, 3, 77};
  const PosteriorSet s = sample_posterior_tiled(field, cond, g, cfg);
  REQUIRE(s.samples.size() == 3);
  for (int j = 0; j < 3; ++j) {
    Rng rng(sample_seed(77, std::size_t(j)));
    const Raster noise = standard_normal((g.rows - 1) * g.inner + g.tile, (g.cols - 1) * g.inner + g.tile, rng);
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 24; ++x) CHECK(s.samples[j](y, x) == noise(y + g.margin, x + g.margin));
  }
  const PosteriorSet again = sample_posterior_tiled(field, cond, g, cfg);
  for (int j = 0; j < 3; ++j) CHECK(again.samples[j] == s.samples[j]);
}
