#include <doctest.h>

#include <cmath>
#include <queue>
#include <vector>

#include "flowdehaze/error.hpp"
#include "flowdehaze/optics_sim.hpp"
#include "flowdehaze/random.hpp"
#include "support.hpp"

using namespace flowdehaze;

namespace {

// 8-connected components of strictly positive pixels.
int count_components(const Raster& r) {
  std::vector<char> seen(r.size(), 0);
  int count = 0;
  for (int y0 = 0; y0 < r.height(); ++y0) {
    for (int x0 = 0; x0 < r.width(); ++x0) {
      if (r(y0, x0) <= 0.0f || seen[std::size_t(y0) * r.width() + x0]) continue;
      ++count;
      std::queue<std::pair<int, int>> q;
      q.push({y0, x0});
      seen[std::size_t(y0) * r.width() + x0] = 1;
      while (!q.empty()) {
        const auto [y, x] = q.front();
        q.pop();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= r.height() || xx >= r.width()) continue;
            const std::size_t i = std::size_t(yy) * r.width() + xx;
            if (r[i] > 0.0f && !seen[i]) {
              seen[i] = 1;
              q.push({yy, xx});
            }
          }
        }
      }
    }
  }
  return count;
}

SignalSpec blob_spec(int lo, int hi, std::uint64_t seed) {
  SignalSpec s;
  s.width = 64;
  s.height = 64;
  s.structure_kind = StructureKind::blobs;
  s.min_objects = lo;
  s.max_objects = hi;
  s.seed = seed;
  return s;
}

// Direct reflect-padded convolution used as the oracle.
Raster convolve_oracle(const Raster& img, const Kernel& k) {
  Raster out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double acc = 0.0;
      for (int dy = -k.radius; dy <= k.radius; ++dy)
        for (int dx = -k.radius; dx <= k.radius; ++dx)
          acc += double(k(dy, dx)) * img(reflect_index(y - dy, img.height()), reflect_index(x - dx, img.width()));
      out(y, x) = float(acc);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("gen_signal: zero objects gives an all-zero raster") {
  const Raster r = gen_signal(blob_spec(0, 0, 3));
  for (float v : r.pixels()) CHECK(v == 0.0f);
}

TEST_CASE("gen_signal is deterministic per seed") {
  for (auto kind : {StructureKind::blobs, StructureKind::filaments, StructureKind::mixed}) {
    SignalSpec s = blob_spec(5, 15, 11);
    s.structure_kind = kind;
    CHECK(gen_signal(s) == gen_signal(s));
    SignalSpec t = s;
    t.seed = 12;
    CHECK_FALSE(gen_signal(s) == gen_signal(t));
  }
}

TEST_CASE("gen_signal: blobs count=[5,5] seed 7 gives five components") {
  CHECK(count_components(gen_signal(blob_spec(5, 5, 7))) == 5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int n = count_components(gen_signal(blob_spec(3, 9, seed)));
    CHECK(n >= 3);
    CHECK(n <= 9);
  }
}

TEST_CASE("gen_signal intensities stay inside the range or zero") {
  for (auto kind : {StructureKind::blobs, StructureKind::filaments, StructureKind::mixed}) {
    SignalSpec s = blob_spec(5, 15, 21);
    s.structure_kind = kind;
    s.min_intensity = 20.0f;
    s.max_intensity = 100.0f;
    const Raster r = gen_signal(s);
    bool any = false;
    for (float v : r.pixels()) {
      CHECK((v == 0.0f || (v >= 20.0f && v <= 100.0f)));
      any = any || v > 0.0f;
    }
    CHECK(any);
  }
}

TEST_CASE("signal spec validation") {
  SignalSpec s = blob_spec(5, 4, 0);
  CHECK_THROWS_AS(gen_signal(s), ValidationError);
  s = blob_spec(1, 2, 0);
  s.width = 16;
  CHECK_THROWS_AS(gen_signal(s), ValidationError);
  s = blob_spec(1, 2, 0);
  s.min_intensity = 0.0f;
  CHECK_THROWS_AS(gen_signal(s), ValidationError);
}

TEST_CASE("make_psf: unit sum, symmetry and validation") {
  for (auto mode : {PsfMode::confocal, PsfMode::widefield}) {
    for (double au : {0.5, 1.0, 5.0, 30.0}) {
      PsfSpec p{mode, au, 0.5, 20};
      const Kernel k = make_psf(p);
      CHECK(std::abs(k.sum() - 1.0) <= 1e-6);
      for (int dy = -k.radius; dy <= k.radius; ++dy) {
        for (int dx = -k.radius; dx <= k.radius; ++dx) {
          CHECK(k(dy, dx) == doctest::Approx(k(-dy, dx)).epsilon(1e-6));
          CHECK(k(dy, dx) == doctest::Approx(k(dx, dy)).epsilon(1e-6));
        }
      }
    }
  }
  CHECK_THROWS_AS(make_psf(PsfSpec{PsfMode::confocal, 0.0, 0.5, 4}), ValidationError);
  CHECK_THROWS_AS(make_psf(PsfSpec{PsfMode::confocal, 1.0, -1.0, 4}), ValidationError);
  // sigma_eff = 4 with a halo of width 8 cannot fit 99% of its mass in radius 5
  CHECK_THROWS_AS(make_psf(PsfSpec{PsfMode::widefield, 30.0, 1.0, 5}), ValidationError);
}

TEST_CASE("make_psf: vanishing width gives a delta kernel") {
  const Kernel k = make_psf(PsfSpec{PsfMode::confocal, 1e-6, 1e-6, 2});
  CHECK(k(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(k.second_moment() < 1e-9);
}

TEST_CASE("make_psf: second moment grows with the pinhole") {
  for (auto mode : {PsfMode::confocal, PsfMode::widefield}) {
    double prev = -1.0;
    for (double au : {0.1, 1.0, 2.0, 5.0, 10.0, 30.0}) {
      const Kernel k = make_psf(PsfSpec{mode, au, 0.5, 16});
      double m = 0.0;
      for (int dy = -k.radius; dy <= k.radius; ++dy)
        for (int dx = -k.radius; dx <= k.radius; ++dx) m += k(dy, dx) * double(dx * dx + dy * dy);
      CHECK(m == doctest::Approx(k.second_moment()).epsilon(1e-6));
      CHECK(m > prev);
      prev = m;
    }
  }
  const double m30 = make_psf(PsfSpec{PsfMode::widefield, 30.0, 1.0, 24}).second_moment();
  const double m1 = make_psf(PsfSpec{PsfMode::widefield, 1.0, 1.0, 24}).second_moment();
  CHECK(m30 > m1);
}

TEST_CASE("apply_psf: delta, constants and intensity preservation") {
  const Kernel k = make_psf(PsfSpec{PsfMode::widefield, 3.0, 1.0, 12});
  Raster delta(33, 33);
  delta(16, 16) = 1.0f;
  const Raster img = apply_psf(delta, k);
  for (int dy = -k.radius; dy <= k.radius; ++dy)
    for (int dx = -k.radius; dx <= k.radius; ++dx) CHECK(img(16 + dy, 16 + dx) == doctest::Approx(k(dy, dx)).epsilon(1e-6));

  const Raster c = apply_psf(Raster(20, 24, 3.5f), k);
  for (float v : c.pixels()) CHECK(v == doctest::Approx(3.5f).epsilon(1e-5));

  Raster s(48, 48);
  const Raster inner = testing::random_raster(48 - 2 * k.radius, 48 - 2 * k.radius, 3, 0.0f, 10.0f);
  for (int y = 0; y < inner.height(); ++y)
    for (int x = 0; x < inner.width(); ++x) s(y + k.radius, x + k.radius) = inner(y, x);
  double before = 0.0, after = 0.0;
  const Raster out = apply_psf(s, k);
  for (float v : s.pixels()) before += v;
  for (float v : out.pixels()) after += v;
  CHECK(std::abs(after - before) <= 1e-4 * before);

  const Raster random = testing::random_raster(37, 41, 8, 0.0f, 5.0f);
  const Raster ref = convolve_oracle(random, k);
  const Raster got = apply_psf(random, k);
  CHECK(got.same_shape(random));
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-5));

  Raster bad(8, 8);
  bad(2, 2) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(apply_psf(bad, k), ValidationError);
}

TEST_CASE("add_noise: limits and determinism") {
  const Raster img = testing::random_raster(16, 16, 4, 0.0f, 50.0f);
  NoiseSpec quiet{1e12, 0.0, 5, true};
  const Raster q = add_noise(img, quiet);
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(q[i] == doctest::Approx(img[i]).epsilon(1e-4));

  const Raster zero = add_noise(Raster(8, 8), NoiseSpec{1.0, 0.0, 3, true});
  for (float v : zero.pixels()) CHECK(v == 0.0f);

  NoiseSpec n{2.0, 1.0, 9, true};
  CHECK(add_noise(img, n) == add_noise(img, n));
  NoiseSpec m = n;
  m.seed = 10;
  CHECK_FALSE(add_noise(img, n) == add_noise(img, m));

  Raster neg(4, 4, 1.0f);
  neg(1, 1) = -0.5f;
  CHECK_THROWS_AS(add_noise(neg, n), ValidationError);
  CHECK_THROWS_AS(add_noise(img, NoiseSpec{0.0, 1.0, 1, true}), ValidationError);
}

TEST_CASE("add_noise: Monte Carlo mean and variance of a constant image") {
  for (double gain : {1.0, 3.0}) {
    const double read = 0.5;
    const Raster out = add_noise(Raster(100, 100, 5.0f), NoiseSpec{gain, read, 17, true});
    double s = 0.0, s2 = 0.0;
    for (float v : out.pixels()) s += v;
    const double n = double(out.size());
    const double mu = s / n;
    for (float v : out.pixels()) s2 += (v - mu) * (v - mu);
    const double var = s2 / (n - 1.0);
    const double expected_var = 5.0 / gain + read * read;
    CHECK(std::abs(mu - 5.0) <= 3.0 * std::sqrt(expected_var / n));
    CHECK(var == doctest::Approx(expected_var).epsilon(0.06));
  }
}

TEST_CASE("add_noise: large photon counts use the Gaussian branch with the right moments") {
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Raster out = add_noise(Raster(100, 100, 1e6f), NoiseSpec{1.0, 0.0, seed, true});
    for (float v : out.pixels()) {
      s += v - 1e6;
      s2 += (v - 1e6) * (v - 1e6);
    }
    n += out.size();
  }
  const double mu = s / double(n);
  CHECK(std::abs(mu) <= 4.0 * std::sqrt(1e6 / double(n)));
  CHECK((s2 / double(n) - mu * mu) == doctest::Approx(1e6).epsilon(0.02));
}

TEST_CASE("make_pair: identity pipeline and independent noise") {
  const Raster signal = gen_signal(blob_spec(5, 8, 2));
  const PsfSpec delta{PsfMode::confocal, 1e-6, 1e-6, 0};
  const PsfSpec hazy{PsfMode::widefield, 30.0, 1.0, 24};
  const PairedSample p = make_pair(signal, hazy, delta, NoiseSpec{1.0, 0.0, 1, false}, 3);
  CHECK(p.clean == signal);
  CHECK(p.hazy.same_shape(p.clean));

  const PairedSample q = make_pair(signal, delta, delta, NoiseSpec{1.0, 0.5, 1, true}, 3);
  CHECK_FALSE(q.hazy == q.clean);
  CHECK(make_pair(signal, delta, delta, NoiseSpec{1.0, 0.5, 1, true}, 3).hazy == q.hazy);
}

TEST_CASE("make_pair: hazy residual variance follows the noise model") {
  SignalSpec s = blob_spec(4, 6, 5);
  s.width = s.height = 32;
  const Raster signal = gen_signal(s);
  const PsfSpec hazy{PsfMode::widefield, 10.0, 0.5, 12};
  const PsfSpec clean{PsfMode::confocal, 1.0, 0.5, 3};
  const NoiseSpec noise{2.0, 0.7, 123, true};
  const Raster blur = apply_psf(signal, make_psf(hazy));
  const int draws = 1000;
  std::vector<double> sum(blur.size(), 0.0), sum2(blur.size(), 0.0);
  for (int d = 0; d < draws; ++d) {
    const PairedSample p = make_pair(signal, hazy, clean, noise, std::uint64_t(d));
    for (std::size_t i = 0; i < blur.size(); ++i) {
      const double r = double(p.hazy[i]) - blur[i];
      sum[i] += r;
      sum2[i] += r * r;
    }
  }
  double ratio_sum = 0.0;
  for (std::size_t i = 0; i < blur.size(); ++i) {
    const double m = sum[i] / draws;
    const double var = (sum2[i] - draws * m * m) / (draws - 1);
    const double expected = blur[i] / noise.photon_gain + noise.read_sigma * noise.read_sigma;
    // Relative sampling error of a variance at 1000 draws is about 4.5%; allow 6 sigma per pixel.
    CHECK(var == doctest::Approx(expected).epsilon(0.27));
    ratio_sum += var / expected;
  }
  CHECK(ratio_sum / double(blur.size()) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("noise residuals of hazy and clean are uncorrelated") {
  SimulationSpec spec;
  spec.signal = blob_spec(5, 15, 8);
  spec.noise = NoiseSpec{1.0, 1.0, 44, true};
  const Kernel kh = make_psf(spec.hazy_psf), kc = make_psf(spec.clean_psf);
  std::vector<double> a, b;
  for (std::uint64_t id = 0; a.size() < 100000; ++id) {
    const PairedSample p = simulate_sample(spec, id);
    SignalSpec sig = spec.signal;
    sig.seed = derive_seed(spec.signal.seed, id);
    const Raster signal = gen_signal(sig);
    const Raster bh = apply_psf(signal, kh), bc = apply_psf(signal, kc);
    for (std::size_t i = 0; i < signal.size(); ++i) {
      a.push_back(double(p.hazy[i]) - bh[i]);
      b.push_back(double(p.clean[i]) - bc[i]);
    }
  }
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  CHECK(std::abs(sab / std::sqrt(saa * sbb)) < 0.05);
}

TEST_CASE("compute_norm_stats") {
  PairedSample z{Raster(4, 4, 0.0f), Raster(4, 4, 0.0f), 0};
  PairedSample t{Raster(4, 4, 2.0f), Raster(4, 4, 2.0f), 1};
  const std::vector<PairedSample> two{z, t};
  const NormStats s = compute_norm_stats(two);
  CHECK(s.hazy.mean == doctest::Approx(1.0));
  CHECK(s.clean.mean == doctest::Approx(1.0));
  CHECK(s.hazy.std == doctest::Approx(1.0));  // population std

  const std::vector<PairedSample> constant{z, z};
  CHECK_THROWS_AS(compute_norm_stats(constant), ValidationError);
  CHECK_THROWS_AS(compute_norm_stats(std::span<const PairedSample>{}), ValidationError);

  Rng rng(5);
  std::vector<PairedSample> normal;
  for (int i = 0; i < 16; ++i) normal.push_back({standard_normal(250, 250, rng), standard_normal(250, 250, rng), 0});
  const NormStats n = compute_norm_stats(normal);
  CHECK(std::abs(n.hazy.mean) < 0.05);
  CHECK(std::abs(n.hazy.std - 1.0) < 0.05);
  CHECK(std::abs(n.clean.mean) < 0.05);
  CHECK(std::abs(n.clean.std - 1.0) < 0.05);
}

TEST_CASE("normalization round trip") {
  const RoleStats r{37.5, 12.25};
  const Raster x = testing::random_raster(16, 16, 2, 0.0f, 200.0f);
  const Raster back = r.denormalize(r.normalize(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) <= 1e-6 * std::max(1.0f, std::abs(x[i])));
  const Raster spread = testing::random_raster(4, 4, 3, 0.0f, 5.0f);
  const Raster sb = r.denormalize_spread(r.normalize_spread(spread));
  for (std::size_t i = 0; i < spread.size(); ++i) CHECK(sb[i] == doctest::Approx(spread[i]).epsilon(1e-6));
  CHECK(r.normalize_spread(Raster(1, 1, 12.25f))[0] == doctest::Approx(1.0));
}

TEST_CASE("simulate_sample is a pure function of spec and id") {
  SimulationSpec spec;
  spec.signal = blob_spec(5, 15, 1);
  spec.noise = NoiseSpec{2.0, 1.0, 2, true};
  const PairedSample a = simulate_sample(spec, 7), b = simulate_sample(spec, 7), c = simulate_sample(spec, 8);
  CHECK(a.hazy == b.hazy);
  CHECK(a.clean == b.clean);
  CHECK_FALSE(a.clean == c.clean);
  CHECK(a.signal_id == 7);
}
