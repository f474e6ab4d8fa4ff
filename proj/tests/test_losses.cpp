#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "kpc/errors.hpp"
#include "kpc/losses.hpp"
#include "kpc/okpd.hpp"
#include "oracles.hpp"

using namespace kpc;

namespace {

double sl1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

// Maps whose peaks are given exactly (values already squashed).
Tensor peaked(std::vector<double> peaks, std::size_t h = 3, std::size_t w = 3) {
  Tensor t({peaks.size(), h, w});
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    t.at(k, 0, 0) = peaks[k] * 0.5;
    t.at(k, (k + 1) % h, (k + 2) % w) = peaks[k];
  }
  return t;
}

}  // namespace

TEST_CASE("smooth_l1 values") {
  CHECK(smooth_l1(1.0, 1.0) == 0.0);
  CHECK(smooth_l1(0.5, 1.0) == 0.125);
  CHECK(smooth_l1(3.0, 0.0) == 2.5);
  CHECK(smooth_l1(-2.0, 0.0) == 1.5);
  CHECK(smooth_l1_grad(0.5, 1.0) == -0.5);
  CHECK(smooth_l1_grad(3.0, 0.0) == 1.0);
}

TEST_CASE("discriminative loss worked values") {
  std::vector<int> y{1};
  {
    Graph g;
    std::vector<Var> maps{g.constant(peaked({1.0, 1.0}))};
    CHECK(discriminative_loss(maps, y).value().item() == 0.0);
  }
  {
    Graph g;
    std::vector<Var> maps{g.constant(peaked({0.5, 1.0}))};
    CHECK(discriminative_loss(maps, y).value().item() == 0.125);
  }
  {
    Graph g;
    std::vector<int> neg{0};
    std::vector<Var> maps{g.constant(Tensor({2, 3, 3}))};
    CHECK(discriminative_loss(maps, neg).value().item() == 0.0);
  }
}

TEST_CASE("discriminative loss matches a loop oracle on random batches") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    std::vector<Var> maps;
    std::vector<int> labels;
    double ref = 0.0;
    for (int i = 0; i < 5; ++i) {
      auto m = tmr_squash(oracle::random_tensor({3, 4, 4}, rng, -2, 2), 0.5, 0.1);
      const int y = static_cast<int>(rng() % 2);
      for (std::size_t k = 0; k < 3; ++k) {
        double peak = m[k * 16];
        for (std::size_t j = 0; j < 16; ++j) peak = std::max(peak, m[k * 16 + j]);
        ref += sl1(peak - y);
      }
      maps.push_back(g.constant(m));
      labels.push_back(y);
    }
    CHECK(discriminative_loss(maps, labels).value().item() == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("uniqueness loss worked values") {
  {
    Graph g;
    Tensor m({2, 3, 3});
    m.at(0, 1, 1) = 0.9;
    m.at(1, 1, 1) = 0.9;
    std::vector<Var> maps{g.constant(m)};
    std::vector<int> y{1};
    CHECK(uniqueness_loss(maps, y).value().item() == doctest::Approx(0.32).epsilon(1e-15));
    std::vector<int> neg{0};
    CHECK(uniqueness_loss(maps, neg).value().item() == 0.0);
  }
  {
    Graph g;
    Tensor m({2, 3, 3});
    m.at(0, 0, 0) = 1.0;
    m.at(1, 2, 2) = 1.0;
    std::vector<Var> maps{g.constant(m)};
    std::vector<int> y{1};
    CHECK(uniqueness_loss(maps, y).value().item() == 0.0);
  }
}

TEST_CASE("okpd objective is additive") {
  Graph g;
  Tensor a({2, 3, 3});
  a.at(0, 1, 1) = 0.9;
  a.at(1, 1, 1) = 0.9;
  Tensor b({2, 3, 3});
  b.at(0, 0, 0) = 0.5;
  b.at(1, 2, 2) = 1.0;
  // a: L_d = 2 * smooth_l1(0.9, 1) = 0.01, L_u = 0.32.
  // b: L_d = 0.125, L_u = smooth_l1(1, 1) = 0.
  std::vector<Var> maps{g.constant(a), g.constant(b)};
  std::vector<int> y{1, 1};
  const double ld = discriminative_loss(maps, y).value().item();
  const double lu = uniqueness_loss(maps, y).value().item();
  CHECK(ld == doctest::Approx(0.135).epsilon(1e-14));
  CHECK(lu == doctest::Approx(0.32).epsilon(1e-14));
  CHECK(okpd_objective(maps, y).value().item() == doctest::Approx(ld + lu).epsilon(1e-15));

  Graph z;
  std::vector<Var> perfect{z.constant(peaked({1.0}))};
  std::vector<int> one{1};
  CHECK(okpd_objective(perfect, one).value().item() == 0.0);
}

TEST_CASE("okpd losses check batch shape") {
  Graph g;
  std::vector<Var> maps{g.constant(Tensor({2, 3, 3}))};
  std::vector<int> two{1, 0};
  CHECK_THROWS_AS(discriminative_loss(maps, two), ContractError);
  CHECK_THROWS_AS(uniqueness_loss(maps, two), ContractError);
  std::vector<int> bad{2};
  CHECK_THROWS_AS(discriminative_loss(maps, bad), ContractError);
}

TEST_CASE("cross entropy and detection loss") {
  Graph g;
  auto ce = cross_entropy(g.constant(Tensor({3})), 1);
  CHECK(ce.value().item() == doctest::Approx(std::log(3.0)).epsilon(1e-15));

  Tensor logits({3}, {0.0, 10.0, 0.0});
  Tensor reg({8});
  reg[0] = 0.2;
  reg[1] = 0.3;
  reg[2] = 0.4;
  reg[3] = 0.5;
  auto det = toy_detection_loss(g.constant(logits), g.constant(reg), 1, {0.2, 0.3, 0.4, 0.5}, true);
  CHECK(det.value().item() < 1e-4);

  std::mt19937_64 rng(1);
  Graph h;
  auto r = h.input(oracle::random_tensor({8}, rng));
  auto bg = toy_detection_loss(h.constant(Tensor({3})), r, 0, {0.9, 0.9, 0.9, 0.9}, true);
  CHECK(bg.value().item() == doctest::Approx(std::log(3.0)));
  h.backward(bg);
  for (double v : r.grad()) CHECK(v == 0.0);

  Graph k;
  CHECK_THROWS_AS(toy_detection_loss(k.constant(Tensor({3})), k.constant(Tensor({8})), 3, {}, true), ContractError);
}
