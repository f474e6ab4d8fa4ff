#include <doctest.h>

#include <cmath>
#include <random>

#include "kpc/errors.hpp"
#include "kpc/gradcheck.hpp"
#include "kpc/graph.hpp"
#include "oracles.hpp"

using namespace kpc;

namespace {

Tensor ones(Shape s) { return Tensor(std::move(s), 1.0); }

}  // namespace

TEST_CASE("conv2d scaling and bias-only cases") {
  Graph g;
  auto y = conv2d(g.constant(ones({1, 3, 3})), g.constant(Tensor({1, 1, 1, 1}, {2.0})), g.constant(Tensor({1}, {0.0})), {});
  CHECK(y.shape() == Shape{1, 3, 3});
  for (double v : y.value().data()) CHECK(v == 2.0);

  auto z = conv2d(g.constant(Tensor({1, 3, 3})), g.constant(Tensor({1, 1, 3, 3}, 0.3)), g.constant(Tensor({1}, {0.7})),
                  {1, 1, 1});
  for (double v : z.value().data()) CHECK(v == 0.7);
}

TEST_CASE("conv2d matches the loop oracle on grouped dilated input") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = oracle::random_tensor({4, 5, 5}, rng);
    auto w = oracle::random_tensor({6, 2, 3, 3}, rng);
    auto b = oracle::random_tensor({6}, rng);
    Graph g;
    auto y = conv2d(g.constant(x), g.constant(w), g.constant(b), {2, 2, 2});
    auto ref = oracle::conv2d(x, w, b, 2, 2, 2);
    REQUIRE(y.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y.value(), ref) <= 1e-12);
  }
}

TEST_CASE("conv2d rejects bad shapes and groups") {
  Graph g;
  auto x = g.constant(Tensor({4, 5, 5}));
  CHECK_THROWS_AS(conv2d(x, g.constant(Tensor({2, 3, 3, 3})), g.constant(Tensor({2})), {}), ContractError);
  CHECK_THROWS_AS(conv2d(x, g.constant(Tensor({3, 4, 1, 1})), g.constant(Tensor({3})), {3, 1, 0}), ConfigError);
  CHECK_THROWS_AS(conv2d(x, g.constant(Tensor({2, 4, 1, 1})), g.constant(Tensor({5})), {}), ContractError);
  try {
    conv2d(x, g.constant(Tensor({2, 3, 1, 1})), g.constant(Tensor({2})), {});
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
  }
}

TEST_CASE("adaptive_avg_pool identity, global mean and 7->5 bins") {
  std::mt19937_64 rng(2);
  auto x = oracle::random_tensor({3, 7, 7}, rng);
  Graph g;
  auto same = adaptive_avg_pool(g.constant(x), 7);
  CHECK(oracle::max_abs_diff(same.value(), x) == 0.0);

  auto mean = adaptive_avg_pool(g.constant(x), 1);
  for (std::size_t c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 49; ++i) acc += x[c * 49 + i];
    CHECK(mean.value()[c] == doctest::Approx(acc / 49).epsilon(1e-14));
  }

  // Row bins [0,2),[1,3),[2,5),[4,6),[5,7): check the middle bin by hand.
  Tensor ramp({1, 7, 7});
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 7; ++c) ramp.at(0, r, c) = double(r);
  auto p = adaptive_avg_pool(g.constant(ramp), 5);
  const double expect[5] = {0.5, 1.5, 3.0, 4.5, 5.5};
  for (std::size_t i = 0; i < 5; ++i) CHECK(p.value().at(0, i, 0) == doctest::Approx(expect[i]));

  auto five = adaptive_avg_pool(g.constant(x), 5);
  CHECK(oracle::max_abs_diff(five.value(), oracle::adaptive_avg_pool(x, 5)) <= 1e-12);
  CHECK_THROWS_AS(adaptive_avg_pool(g.constant(x), 8), ConfigError);
  CHECK_THROWS_AS(adaptive_avg_pool(g.constant(x), 0), ConfigError);
}

TEST_CASE("linear identity, bias and oracle") {
  Graph g;
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Tensor x({3}, {0.25, -2.0, 7.5});
  auto y = linear(g.constant(x), g.constant(eye), g.constant(Tensor({3})));
  CHECK(oracle::max_abs_diff(y.value(), x) == 0.0);

  Tensor b({2}, {1.5, -0.5});
  auto z = linear(g.constant(x), g.constant(Tensor({2, 3})), g.constant(b));
  CHECK(oracle::max_abs_diff(z.value(), b) == 0.0);

  std::mt19937_64 rng(5);
  auto in = oracle::random_tensor({8}, rng);
  auto w = oracle::random_tensor({3, 8}, rng);
  auto bb = oracle::random_tensor({3}, rng);
  auto r = linear(g.constant(in), g.constant(w), g.constant(bb));
  auto ref = oracle::linear({in.data().begin(), in.data().end()}, w, bb);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(r.value()[i] - ref[i]) <= 1e-12);

  CHECK_THROWS_AS(linear(g.constant(Tensor({4})), g.constant(w), g.constant(bb)), ContractError);
}

TEST_CASE("relu, add and concat") {
  Graph g;
  auto r = relu(g.constant(Tensor({3}, {-1.0, 0.0, 2.0})));
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[2] == 2.0);

  CHECK_THROWS_AS(add(g.constant(Tensor({2})), g.constant(Tensor({3}))), ContractError);

  Graph h;
  auto a = h.input(Tensor({1}, {1.0}));
  auto bc = h.input(Tensor({2}, {2.0, 3.0}));
  auto cat = concat({a, bc});
  REQUIRE(cat.size() == 3);
  CHECK(cat.value()[1] == 2.0);
  h.backward(select(cat, {1}));
  CHECK(a.grad()[0] == 0.0);
  CHECK(bc.grad()[0] == 1.0);
  CHECK(bc.grad()[1] == 0.0);
}

TEST_CASE("argmax2d tie-break and planted peak") {
  Tensor flat({7, 7}, 0.3);
  auto a = argmax2d(flat);
  CHECK(a.row == 0);
  CHECK(a.col == 0);

  Tensor peak({7, 7});
  peak[3 * 7 + 5] = 4.0;
  a = argmax2d(peak);
  CHECK(a.row == 3);
  CHECK(a.col == 5);
  CHECK(a.value == 4.0);

  Tensor two({4, 4});
  two[1 * 4 + 2] = 1.0;
  two[2 * 4 + 1] = 1.0;
  a = argmax2d(two);
  CHECK(a.row == 1);
  CHECK(a.col == 2);
}

TEST_CASE("gather_at fibers, duplicates and bounds") {
  std::mt19937_64 rng(9);
  auto x = oracle::random_tensor({5, 6, 6}, rng);
  Graph g;
  auto xv = g.input(x);
  std::vector<GridPoint> pts{{0, 0}, {2, 3}, {2, 3}, {5, 1}};
  auto out = gather_at(xv, pts);
  REQUIRE(out.shape() == Shape{4, 5});
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t c = 0; c < 5; ++c) CHECK(out.value()[i * 5 + c] == x.at(c, pts[i].row, pts[i].col));

  g.backward(sum(out));
  for (std::size_t c = 0; c < 5; ++c) {
    CHECK(xv.grad()[(c * 6 + 2) * 6 + 3] == 2.0);
    CHECK(xv.grad()[(c * 6 + 0) * 6 + 0] == 1.0);
    CHECK(xv.grad()[(c * 6 + 4) * 6 + 4] == 0.0);
  }

  Graph h;
  CHECK_THROWS_AS(gather_at(h.constant(x), {{6, 0}}), ContractError);
}

TEST_CASE("backward basics and the single-pass rule") {
  Graph g;
  auto x = g.input(Tensor({3}, {1.0, -2.0, 0.5}));
  g.backward(sum(x));
  for (double v : x.grad()) CHECK(v == 1.0);
  CHECK_THROWS_AS(g.backward(sum(x)), StateError);

  Graph h;
  auto y = h.input(Tensor({2}, {-1.0, 2.0}));
  h.backward(sum(relu(y)));
  CHECK(y.grad()[0] == 0.0);
  CHECK(y.grad()[1] == 1.0);

  Graph k;
  CHECK_THROWS_AS(k.backward(k.input(Tensor({2}))), ContractError);
}

TEST_CASE("parameter leaves accumulate across graphs") {
  Tensor w({2}, {1.0, 2.0});
  for (int i = 0; i < 3; ++i) {
    Graph g;
    g.backward(sum(g.parameter(w)));
  }
  CHECK(w.grad()[0] == 3.0);
  CHECK(w.grad()[1] == 3.0);
}

TEST_CASE("finite_diff_grad on closed forms") {
  auto sq = [](const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) acc += v * v;
    return acc;
  };
  auto d = finite_diff_grad(sq, Tensor({2}, {1.0, 2.0}));
  CHECK(d[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(d[1] == doctest::Approx(4.0).epsilon(1e-8));

  auto lin = [](const Tensor& t) { return 3.0 * t[0] - 0.5 * t[1]; };
  auto e = finite_diff_grad(lin, Tensor({2}, {0.2, 0.7}));
  CHECK(std::abs(e[0] - 3.0) < 1e-9);
  CHECK(std::abs(e[1] + 0.5) < 1e-9);

  CHECK(grad_rel_error(1.0, 1.0) == 0.0);
  CHECK(grad_rel_error(100.0, 101.0) == doctest::Approx(1.0 / 101.0));
}

TEST_CASE("every forward op matches its oracle on 100 random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> small(1, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t groups = static_cast<std::size_t>(small(rng) % 2 + 1);
    const std::size_t cin = groups * static_cast<std::size_t>(small(rng));
    const std::size_t cout = groups * static_cast<std::size_t>(small(rng));
    const std::size_t hw = 3 + static_cast<std::size_t>(small(rng));
    const std::size_t k = (small(rng) % 2) ? 3 : 1;
    const std::size_t dil = static_cast<std::size_t>(small(rng) % 2 + 1);
    auto x = oracle::random_tensor({cin, hw, hw}, rng);
    auto w = oracle::random_tensor({cout, cin / groups, k, k}, rng);
    auto b = oracle::random_tensor({cout}, rng);
    Graph g;
    const std::size_t pad = same_padding(k, dil);
    auto y = conv2d(g.constant(x), g.constant(w), g.constant(b), {groups, dil, pad});
    worst = std::max(worst, oracle::max_abs_diff(y.value(), oracle::conv2d(x, w, b, int(groups), int(dil), int(pad))));

    const std::size_t len = 1 + static_cast<std::size_t>(rng() % hw);
    worst = std::max(worst, oracle::max_abs_diff(adaptive_avg_pool(g.constant(x), len).value(),
                                                 oracle::adaptive_avg_pool(x, len)));

    auto lw = oracle::random_tensor({cout, x.size()}, rng);
    auto lv = linear(g.constant(x), g.constant(lw), g.constant(b));
    auto lref = oracle::linear({x.data().begin(), x.data().end()}, lw, b);
    for (std::size_t i = 0; i < cout; ++i) worst = std::max(worst, std::abs(lv.value()[i] - lref[i]));

    auto rv = relu(g.constant(x));
    auto av = add(g.constant(x), g.constant(x));
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst = std::max(worst, std::abs(rv.value()[i] - (x[i] > 0 ? x[i] : 0.0)));
      worst = std::max(worst, std::abs(av.value()[i] - 2.0 * x[i]));
    }

    std::vector<GridPoint> pts;
    for (int i = 0; i < 4; ++i) pts.push_back({rng() % hw, rng() % hw});
    auto gv = gather_at(g.constant(x), pts);
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t c = 0; c < cin; ++c)
        worst = std::max(worst, std::abs(gv.value()[i * cin + c] - x.at(c, pts[i].row, pts[i].col)));
  }
  CHECK(worst <= 1e-12);
}
