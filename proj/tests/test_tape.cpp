#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "bilayer/jet.hpp"
#include "bilayer/tape.hpp"

using namespace bilayer;

TEST_CASE("seeded coordinate jets", "[tape]") {
  const auto j = seed_input({-5.0, 0.0});
  CHECK(j[0].v == -5.0);
  CHECK(j[0].d1[0] == 1.0);
  CHECK(j[0].d1[1] == 0.0);
  CHECK(j[0].d2 == std::array<double, 3>{0.0, 0.0, 0.0});
  CHECK(j[1].v == 0.0);
  CHECK(j[1].d1[0] == 0.0);
  CHECK(j[1].d1[1] == 1.0);
  CHECK(j[1].d2 == std::array<double, 3>{0.0, 0.0, 0.0});
}

TEST_CASE("second derivative of x1^2 is 2", "[tape]") {
  for (const double x1 : {-5.0, 0.0, 1.25, 3.75}) {
    const auto j = seed_input({x1, 0.5});
    const auto sq = j[0] * j[0];
    CHECK(sq.v == x1 * x1);
    CHECK(sq.d2[0] == 2.0);
    CHECK(sq.d2[1] == 0.0);
    CHECK(sq.d2[2] == 0.0);
  }
}

TEST_CASE("jet chain rule reproduces sin(alpha x1) exactly", "[tape]") {
  const double alpha = 2.5;
  std::mt19937_64 gen(7);
  for (int i = 0; i < 50; ++i) {
    const double x1 = -5.0 + 10.0 * static_cast<double>(gen() >> 11) * 0x1.0p-53;
    const auto j = seed_input({x1, 0.0});
    const auto u = sin(scale(alpha, j[0]));
    CHECK(u.v == Catch::Approx(std::sin(alpha * x1)).margin(1e-15));
    CHECK(u.d1[0] == Catch::Approx(alpha * std::cos(alpha * x1)).margin(1e-13));
    CHECK(u.d1[1] == 0.0);
    CHECK(u.d2[0] == Catch::Approx(-alpha * alpha * std::sin(alpha * x1)).margin(1e-13));
    CHECK(u.d2[1] == 0.0);
    CHECK(u.d2[2] == 0.0);
  }
}

TEST_CASE("loss gradient of simple expressions", "[tape]") {
  SECTION("theta^2 at 3") {
    const std::vector<double> theta{3.0};
    const auto lg = loss_gradient(theta, [](std::span<const Scalar> t) { return t[0] * t[0]; });
    CHECK(lg.loss == 9.0);
    CHECK(lg.grad[0] == 6.0);
  }
  SECTION("tanh(theta) at 0") {
    const std::vector<double> theta{0.0};
    const auto lg = loss_gradient(theta, [](std::span<const Scalar> t) { return tanh(t[0]); });
    CHECK(lg.loss == 0.0);
    CHECK(lg.grad[0] == 1.0);
  }
  SECTION("division and subtraction") {
    const std::vector<double> theta{2.0, 4.0};
    const auto lg = loss_gradient(
        theta, [](std::span<const Scalar> t) { return t[0] / t[1] - t[1]; });
    CHECK(lg.loss == 0.5 - 4.0);
    CHECK(lg.grad[0] == Catch::Approx(0.25).margin(1e-16));
    CHECK(lg.grad[1] == Catch::Approx(-2.0 / 16.0 - 1.0).margin(1e-15));
  }
}

TEST_CASE("non-finite loss raises a numeric error", "[tape]") {
  const std::vector<double> theta{0.0};
  CHECK_THROWS_AS(loss_gradient(theta,
                                [](std::span<const Scalar> t) {
                                  return t[0] / t[0];  // 0/0
                                }),
                  NumericError);
}

TEST_CASE("gradients match central finite differences on random expressions", "[tape]") {
  // Small composite expression exercising every taped operation.
  auto f = [](std::span<const Scalar> t) {
    const Scalar a = tanh(t[0] * t[1] + 0.3);
    const Scalar b = (t[2] - 1.5 * t[0]) * a;
    const Scalar c = sqrt(t[1] * t[1] + t[2] * t[2] + 1.0);
    return a * b + b / c + sqr(a);
  };
  auto f_plain = [&](const std::vector<double>& v) {
    Tape tape;  // constants only; nothing is recorded
    Tape::Scope scope(tape);
    std::vector<Scalar> s(v.begin(), v.end());
    return f(std::span<const Scalar>(s)).v;
  };

  std::mt19937_64 gen(1234);
  auto unif = [&gen](double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(gen() >> 11) * 0x1.0p-53;
  };
  const double h = 1e-4;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> theta{unif(-2, 2), unif(-2, 2), unif(-2, 2)};
    const auto lg = loss_gradient(theta, f);
    for (std::size_t k = 0; k < theta.size(); ++k) {
      auto tp = theta;
      auto tm = theta;
      tp[k] += h;
      tm[k] -= h;
      const double fd = (f_plain(tp) - f_plain(tm)) / (2.0 * h);
      if (std::abs(fd) < 1e-3) {
        CHECK(std::abs(lg.grad[k] - fd) <= 1e-8);
      } else {
        CHECK(std::abs(lg.grad[k] - fd) / std::abs(fd) <= 1e-5);
      }
    }
  }
}

TEST_CASE("identical evaluations are bit-identical", "[tape]") {
  const std::vector<double> theta{0.7, -0.4, 1.1};
  auto f = [](std::span<const Scalar> t) {
    return tanh(t[0] * t[1]) * t[2] + t[0] / (t[2] * t[2] + 2.0);
  };
  const auto a = loss_gradient(theta, f);
  const auto b = loss_gradient(theta, f);
  CHECK(a.loss == b.loss);
  CHECK(a.grad == b.grad);
}

TEST_CASE("sum_gradient matches the single-tape path and is lane-invariant", "[tape]") {
  const std::vector<double> theta{0.5, -0.25, 0.75, 1.5};
  auto item = [&](std::span<const Scalar> t, std::size_t i, int) -> Scalar {
    const double w = 0.25 * static_cast<double>(i + 1);
    return tanh(t[0] + w * t[1]) * t[2] + sqr(t[3] - w);
  };
  const auto single = sum_gradient(theta, 8, 1, item);
  const auto multi = sum_gradient(theta, 8, 2, item);
  CHECK(single.loss == Catch::Approx(multi.loss).epsilon(1e-14));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    CHECK(single.grad[k] == Catch::Approx(multi.grad[k]).epsilon(1e-12).margin(1e-14));
  }

  const auto whole = loss_gradient(theta, [&](std::span<const Scalar> t) {
    Scalar total{0.0};
    for (std::size_t i = 0; i < 8; ++i) total += item(t, i, 0);
    return total;
  });
  CHECK(single.loss == Catch::Approx(whole.loss).epsilon(1e-14));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    CHECK(single.grad[k] == Catch::Approx(whole.grad[k]).epsilon(1e-12).margin(1e-14));
  }
}

TEST_CASE("jet product and reciprocal rules", "[tape]") {
  const auto j = seed_input({1.2, -0.7});
  const auto p = j[0] * j[1];  // x1 * x2
  CHECK(p.v == 1.2 * -0.7);
  CHECK(p.d1[0] == -0.7);
  CHECK(p.d1[1] == 1.2);
  CHECK(p.d2[0] == 0.0);
  CHECK(p.d2[1] == 1.0);  // d^2(x1 x2)/dx1 dx2
  CHECK(p.d2[2] == 0.0);

  // 1/(1 + x1^2): value and derivatives at x1 = 1.2 against hand formulas.
  const auto r = recip(constant_jet<double>(1.0) + j[0] * j[0]);
  const double den = 1.0 + 1.2 * 1.2;
  CHECK(r.v == Catch::Approx(1.0 / den).margin(1e-15));
  CHECK(r.d1[0] == Catch::Approx(-2.0 * 1.2 / (den * den)).margin(1e-14));
  const double expect_d2 = (8.0 * 1.2 * 1.2 / (den * den * den)) - 2.0 / (den * den);
  CHECK(r.d2[0] == Catch::Approx(expect_d2).margin(1e-13));
}
