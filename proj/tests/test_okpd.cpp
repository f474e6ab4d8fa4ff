#include <doctest.h>

#include <cmath>
#include <random>

#include "kpc/errors.hpp"
#include "kpc/okpd.hpp"
#include "oracles.hpp"

using namespace kpc;

namespace {

OkpdConfig small_cfg() {
  OkpdConfig cfg;
  cfg.channels = 8;
  cfg.num_parts = 2;
  cfg.num_blocks = 1;
  cfg.reduction = 2;
  cfg.groups = 1;
  return cfg;
}

}  // namespace

TEST_CASE("zero concentration blocks are the identity") {
  auto cfg = small_cfg();
  cfg.num_blocks = 2;
  auto params = OkpdParams::zeros(cfg);
  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor({8, 7, 7}, rng);
  Graph g;
  auto y = concentration_forward(g.constant(x), params, cfg);
  CHECK(oracle::max_abs_diff(y.value(), x) == 0.0);
}

TEST_CASE("one block with centre-tap weights matches a residual oracle") {
  auto cfg = small_cfg();
  std::mt19937_64 rng(3);
  auto params = OkpdParams::zeros(cfg);
  auto& blk = params.blocks[0];
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Only the centre tap of the 3x3 kernel is set, so the block acts per cell.
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 8; ++i) blk.reduce_w[((o * 8 + i) * 3 + 1) * 3 + 1] = u(rng);
  for (auto& v : blk.reduce_b.data()) v = u(rng);
  for (auto& v : blk.restore_w.data()) v = u(rng);
  for (auto& v : blk.restore_b.data()) v = u(rng);

  auto x = oracle::random_tensor({8, 7, 7}, rng);
  Graph g;
  auto y = concentration_forward(g.constant(x), params, cfg);

  Tensor ref(x.shape());
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 7; ++c) {
      double hid[4];
      for (std::size_t o = 0; o < 4; ++o) {
        double acc = blk.reduce_b[o];
        for (std::size_t i = 0; i < 8; ++i) acc += blk.reduce_w[((o * 8 + i) * 3 + 1) * 3 + 1] * x.at(i, r, c);
        hid[o] = acc > 0 ? acc : 0.0;
      }
      for (std::size_t ch = 0; ch < 8; ++ch) {
        double acc = blk.restore_b[ch];
        for (std::size_t o = 0; o < 4; ++o) acc += blk.restore_w[ch * 4 + o] * hid[o];
        ref.at(ch, r, c) = x.at(ch, r, c) + acc;
      }
    }
  CHECK(oracle::max_abs_diff(y.value(), ref) <= 1e-12);
}

TEST_CASE("full blocks match the conv oracle chain") {
  auto cfg = small_cfg();
  cfg.groups = 2;
  cfg.num_blocks = 2;
  std::mt19937_64 rng(17);
  auto params = OkpdParams::init(cfg, rng);
  for (auto& b : params.blocks) {
    for (auto& v : b.reduce_b.data()) v = 0.1;
    for (auto& v : b.restore_b.data()) v = -0.05;
  }
  auto x = oracle::random_tensor({8, 7, 7}, rng);
  Graph g;
  auto y = concentration_forward(g.constant(x), params, cfg);
  Tensor cur = x;
  for (auto& b : params.blocks) {
    auto h = oracle::conv2d(cur, b.reduce_w, b.reduce_b, 2, 2, 2);
    for (auto& v : h.data()) v = v > 0 ? v : 0.0;
    auto o = oracle::conv2d(h, b.restore_w, b.restore_b, 1, 1, 0);
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += o[i];
  }
  CHECK(oracle::max_abs_diff(y.value(), cur) <= 1e-12);
}

TEST_CASE("predict_confidence: bias-only, channel mean and oracle") {
  auto cfg = small_cfg();
  auto params = OkpdParams::zeros(cfg);
  params.predict_b[0] = 0.25;
  params.predict_b[1] = -1.5;
  std::mt19937_64 rng(4);
  auto x = oracle::random_tensor({8, 7, 7}, rng);
  Graph g;
  auto m = predict_confidence(g.constant(x), params, cfg);
  REQUIRE(m.shape() == Shape{2, 7, 7});
  for (std::size_t i = 0; i < 49; ++i) {
    CHECK(m.value()[i] == 0.25);
    CHECK(m.value()[49 + i] == -1.5);
  }

  auto one = cfg;
  one.num_parts = 1;
  auto mean_params = OkpdParams::zeros(one);
  for (auto& v : mean_params.predict_w.data()) v = 1.0 / 8.0;
  auto mm = predict_confidence(g.constant(x), mean_params, one);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 7; ++c) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < 8; ++ch) acc += x.at(ch, r, c);
      CHECK(std::abs(mm.value().at(0, r, c) - acc / 8.0) <= 1e-12);
    }

  auto rp = OkpdParams::init(cfg, rng);
  for (auto& v : rp.predict_b.data()) v = 0.3;
  auto rm = predict_confidence(g.constant(x), rp, cfg);
  CHECK(oracle::max_abs_diff(rm.value(), oracle::conv2d(x, rp.predict_w, rp.predict_b, 1, 1, 0)) <= 1e-12);
}

TEST_CASE("tmr closed-form examples") {
  auto zero = tmr_squash(Tensor({1, 3, 3}), 0.5, 0.1);
  for (double v : zero.data()) CHECK(v == 0.5 / 1.1);

  auto out = tmr_squash(Tensor({1, 1, 3}, {-1.0, 0.3, 1.5}), 0.5, 0.1);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == doctest::Approx(0.8 / 2.1).epsilon(1e-15));
  CHECK(out[2] == doctest::Approx(2.0 / 2.1).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(0.380952380952).epsilon(1e-11));
  CHECK(out[2] == doctest::Approx(0.952380952381).epsilon(1e-11));
}

TEST_CASE("tmr agrees between tensor and graph paths and the formula oracle") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto raw = oracle::random_tensor({3, 5, 5}, rng, -3.0, 3.0);
    Graph g;
    auto v = tmr_squash(g.constant(raw), 0.5, 0.1);
    auto t = tmr_squash(raw, 0.5, 0.1);
    auto ref = oracle::tmr(raw, 0.5, 0.1);
    CHECK(oracle::max_abs_diff(v.value(), ref) <= 1e-15);
    CHECK(oracle::max_abs_diff(t, ref) <= 1e-15);
  }
  CHECK_THROWS_AS(tmr_squash(Tensor({1, 2, 2}), 0.5, 0.0), ConfigError);
}

TEST_CASE("extract_key_parts finds planted peaks in map order") {
  Tensor maps({2, 7, 7}, 0.1);
  maps.at(0, 1, 1) = 0.9;
  maps.at(1, 6, 3) = 0.8;
  auto parts = extract_key_parts(maps);
  REQUIRE(parts.points.size() == 2);
  CHECK(parts.points[0] == GridPoint{1, 1});
  CHECK(parts.points[1] == GridPoint{6, 3});
  CHECK(parts.confidences[0] == 0.9);
  CHECK(parts.confidences[1] == 0.8);
}

TEST_CASE("okpd config validation") {
  OkpdConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.groups = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = OkpdConfig{};
  cfg.reduction = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = OkpdConfig{};
  cfg.groups = 64;  // 256 / 8 = 32 reduced channels
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
