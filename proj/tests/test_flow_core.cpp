#include <doctest.h>

#include <array>
#include <cmath>
#include <map>

#include "flowdehaze/error.hpp"
#include "flowdehaze/flow_core.hpp"
#include "support.hpp"

using namespace flowdehaze;

namespace {

std::vector<PairedSample> toy_pairs(int n, int size) {
  SimulationSpec spec;
  spec.signal.width = spec.signal.height = size;
  spec.signal.seed = 1;
  spec.signal.max_objects = 6;
  spec.hazy_psf = PsfSpec{PsfMode::widefield, 10.0, 0.5, 12};
  spec.noise = NoiseSpec{2.0, 1.0, 2, true};
  std::vector<PairedSample> pairs;
  for (int i = 0; i < n; ++i) pairs.push_back(simulate_sample(spec, std::uint64_t(i)));
  const NormStats s = compute_norm_stats(pairs);
  for (auto& p : pairs) p = {s.hazy.normalize(p.hazy), s.clean.normalize(p.clean), p.signal_id};
  return pairs;
}

TrainConfig small_config() {
  TrainConfig c;
  c.patch_size = 16;
  c.batch_size = 4;
  c.learning_rate = 2e-3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("sample_time stays on the grid") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double t = sample_time(1, rng);
    CHECK((t == 0.0 || t == 1.0));
  }
  for (int i = 0; i < 5000; ++i) {
    const double t = sample_time(20, rng);
    const double k = t * 20.0;
    CHECK(k == std::round(k));
    CHECK(t >= 0.0);
    CHECK(t <= 1.0);
  }
  CHECK_THROWS_AS(sample_time(0, rng), ValidationError);
}

TEST_CASE("sample_time frequencies are uniform over the grid") {
  Rng rng(2);
  std::map<double, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_time(4, rng)];
  CHECK(counts.size() == 5);
  for (const auto& [t, c] : counts) CHECK(std::abs(double(c) / n - 0.2) <= 0.01);
}

TEST_CASE("interpolate endpoints and arithmetic") {
  const Raster x0 = testing::random_raster(8, 8, 1), x1 = testing::random_raster(8, 8, 2);
  CHECK(interpolate(x0, x1, 0.0) == x0);
  CHECK(interpolate(x0, x1, 1.0) == x1);
  const Raster a(1, 2, std::vector<float>{0, 2}), b(1, 2, std::vector<float>{4, 6});
  const Raster m = interpolate(a, b, 0.25);
  CHECK(m[0] == 1.0f);
  CHECK(m[1] == 3.0f);
  CHECK_THROWS_AS(interpolate(a, Raster(2, 1), 0.5), ValidationError);
  CHECK_THROWS_AS(interpolate(a, b, 1.5), ValidationError);
}

TEST_CASE("target velocity") {
  const Raster x = testing::random_raster(4, 4, 3);
  const Raster still = target_velocity(x, x), unit = target_velocity(Raster(3, 3, 0.0f), Raster(3, 3, 1.0f));
  for (float v : still.pixels()) CHECK(v == 0.0f);
  for (float v : unit.pixels()) CHECK(v == 1.0f);
  CHECK_THROWS_AS(target_velocity(x, Raster(4, 5)), ValidationError);
}

TEST_CASE("path increments match delta times the target velocity") {
  const double delta = 1e-3;
  const Raster x0 = testing::random_raster(16, 16, 4), x1 = testing::random_raster(16, 16, 5);
  const Raster v = target_velocity(x0, x1);
  for (double t : {0.0, 0.1, 0.25, 0.5, 0.731, 0.999}) {
    const Raster a = interpolate(x0, x1, t), b = interpolate(x0, x1, t + delta);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs((double(b[i]) - a[i]) - delta * v[i]) <= 1e-6);
  }
}

TEST_CASE("marginal path std is 1 - t for Gaussian base draws") {
  const Raster x1 = testing::random_raster(4, 4, 6, -2.0f, 2.0f);
  Rng rng(7);
  for (double t : {0.0, 0.25, 0.5, 0.8}) {
    std::array<double, 16> sum{}, sum2{};
    const int n = 10000;
    for (int d = 0; d < n; ++d) {
      const Raster xt = interpolate(standard_normal(4, 4, rng), x1, t);
      for (std::size_t i = 0; i < 16; ++i) {
        sum[i] += xt[i];
        sum2[i] += double(xt[i]) * xt[i];
      }
    }
    for (std::size_t i = 0; i < 16; ++i) {
      const double m = sum[i] / n;
      const double sd = std::sqrt((sum2[i] - n * m * m) / (n - 1));
      CHECK(sd == doctest::Approx(1.0 - t).epsilon(0.03));
      CHECK(std::abs(m - t * x1[i]) <= 4.0 * (1.0 - t) / std::sqrt(double(n)));
    }
  }
}

TEST_CASE("guided loss examples") {
  const Raster v = testing::random_raster(3, 3, 8);
  CHECK(guided_cfm_loss(v, v) == 0.0);
  Raster shifted = v;
  for (auto& p : shifted.pixels()) p += 1.0f;
  CHECK(guided_cfm_loss(shifted, v) == doctest::Approx(1.0).epsilon(1e-6));

  const Raster a = testing::random_raster(3, 3, 9), b = testing::random_raster(3, 3, 10);
  double hand = 0.0;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) hand += (double(a(y, x)) - b(y, x)) * (double(a(y, x)) - b(y, x));
  hand /= 9.0;
  CHECK(std::abs(guided_cfm_loss(a, b) - hand) <= 1e-7);
  CHECK(guided_cfm_loss(a, b) > 0.0);
  CHECK_THROWS_AS(guided_cfm_loss(a, Raster(2, 2)), ValidationError);

  const std::vector<Raster> preds{a, shifted}, targets{b, v};
  CHECK(guided_cfm_loss(preds, targets) == doctest::Approx((hand + 1.0) / 2.0).epsilon(1e-6));
}

TEST_CASE("SIFM base samples") {
  const Raster x1 = testing::random_raster(8, 8, 11), deg = testing::random_raster(8, 8, 12);
  Rng rng(13);
  CHECK(sifm_base_sample(x1, deg, 0.0, rng) == deg);
  CHECK_THROWS_AS(sifm_base_sample(x1, deg, -0.1, rng), ValidationError);

  const double sigma = 0.3;
  const int n = 10000;
  std::vector<double> sum(64, 0.0), sum2(64, 0.0);
  for (int d = 0; d < n; ++d) {
    const Raster s = sifm_base_sample(x1, deg, sigma, rng);
    for (std::size_t i = 0; i < 64; ++i) {
      sum[i] += s[i];
      sum2[i] += double(s[i]) * s[i];
    }
  }
  for (std::size_t i = 0; i < 64; ++i) {
    const double m = sum[i] / n;
    const double sd = std::sqrt((sum2[i] - n * m * m) / (n - 1));
    CHECK(std::abs(m - deg[i]) <= 4.0 * sigma / std::sqrt(double(n)));
    CHECK(sd == doctest::Approx(sigma).epsilon(0.05));
  }
}

TEST_CASE("flow samples satisfy the path identities") {
  const Raster x0 = testing::random_raster(8, 8, 14), x1 = testing::random_raster(8, 8, 15);
  const FlowSample s = make_flow_sample(x0, x1, x1, 0.35);
  CHECK(s.x_t == interpolate(x0, x1, 0.35));
  CHECK(s.v_target == target_velocity(x0, x1));
  CHECK(s.t == 0.35);
}

TEST_CASE("draw_batch crops patches and uses grid times") {
  const auto pairs = toy_pairs(3, 32);
  TrainConfig cfg = small_config();
  Rng a(3), b(3);
  const auto batch = draw_batch(pairs, cfg, a);
  const auto again = draw_batch(pairs, cfg, b);
  REQUIRE(batch.size() == 4);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(batch[i].x_t.height() == 16);
    CHECK(batch[i].x_cond.width() == 16);
    CHECK(batch[i].t * cfg.steps_T == std::round(batch[i].t * cfg.steps_T));
    CHECK(batch[i].x_t == again[i].x_t);
  }
}

TEST_CASE("training_step is deterministic") {
  const auto pairs = toy_pairs(3, 32);
  const TrainConfig cfg = small_config();
  Rng rng(4);
  const auto batch = draw_batch(pairs, cfg, rng);
  VelocityField f1 = VelocityField::init_params(ArchSpec::tiny(), 9), f2 = VelocityField::init_params(ArchSpec::tiny(), 9);
  OptimizerState s1, s2;
  s1.reset(f1.parameter_count());
  s2.reset(f2.parameter_count());
  for (int i = 0; i < 3; ++i) {
    const StepResult r1 = training_step(batch, f1, s1, cfg);
    const StepResult r2 = training_step(batch, f2, s2, cfg);
    CHECK(r1.loss == r2.loss);
  }
  CHECK(std::equal(f1.parameters().begin(), f1.parameters().end(), f2.parameters().begin()));
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  const auto pairs = toy_pairs(2, 32);
  TrainConfig cfg = small_config();
  cfg.learning_rate = 0.0;
  Rng rng(5);
  const auto batch = draw_batch(pairs, cfg, rng);
  VelocityField f = VelocityField::init_params(ArchSpec::tiny(), 3);
  const std::vector<float> before(f.parameters().begin(), f.parameters().end());
  OptimizerState st;
  st.reset(f.parameter_count());
  for (int i = 0; i < 3; ++i) training_step(batch, f, st, cfg);
  CHECK(std::equal(before.begin(), before.end(), f.parameters().begin()));
  CHECK(st.step == 3);
}

TEST_CASE("loss on a frozen batch decreases over 200 steps") {
  const auto pairs = toy_pairs(4, 32);
  const TrainConfig cfg = small_config();
  Rng rng(6);
  const auto batch = draw_batch(pairs, cfg, rng);
  VelocityField f = VelocityField::init_params(ArchSpec::tiny(), 4);
  OptimizerState st;
  st.reset(f.parameter_count());
  const double initial = evaluate_loss(batch, f);
  double last = 0.0;
  for (int i = 0; i < 200; ++i) last = training_step(batch, f, st, cfg).loss;
  const double final_loss = evaluate_loss(batch, f);
  MESSAGE("frozen-batch loss " << initial << " -> " << final_loss << " (last step " << last << ")");
  CHECK(final_loss < initial);
}

TEST_CASE("non-finite batches raise a divergence error without touching parameters") {
  const auto pairs = toy_pairs(2, 32);
  const TrainConfig cfg = small_config();
  Rng rng(7);
  auto batch = draw_batch(pairs, cfg, rng);
  batch[0].v_target(1, 1) = std::numeric_limits<float>::quiet_NaN();
  VelocityField f = VelocityField::init_params(ArchSpec::tiny(), 4);
  const std::vector<float> before(f.parameters().begin(), f.parameters().end());
  OptimizerState st;
  st.reset(f.parameter_count());
  CHECK_THROWS_AS(training_step(batch, f, st, cfg), DivergenceError);
  CHECK(std::equal(before.begin(), before.end(), f.parameters().begin()));
  CHECK(st.step == 0);
}

TEST_CASE("train config validation") {
  TrainConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.steps_T = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
