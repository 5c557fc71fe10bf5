#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bilayer/optimizer.hpp"

using namespace bilayer;

TEST_CASE("first bias-corrected step has magnitude close to the learning rate",
          "[optimizer]") {
  AdamState st(1);
  AdamConfig cfg;
  std::vector<double> theta{1.0};
  std::vector<double> grad{0.5};
  adam_step(st, cfg, theta, grad);
  // mhat/sqrt(vhat) = g/|g| = 1 on the first step, up to epsilon.
  CHECK(st.t == 1);
  CHECK(std::abs((1.0 - theta[0]) - cfg.lr) <= 1e-10);
}

TEST_CASE("zero gradient leaves parameters unchanged", "[optimizer]") {
  AdamState st(3);
  AdamConfig cfg;
  std::vector<double> theta{0.1, -0.2, 0.3};
  const auto before = theta;
  for (int i = 0; i < 5; ++i) {
    adam_step(st, cfg, theta, std::vector<double>{0.0, 0.0, 0.0});
  }
  CHECK(theta == before);
  CHECK(st.t == 5);
}

TEST_CASE("update trajectories are deterministic", "[optimizer]") {
  auto run = [] {
    AdamState st(2);
    AdamConfig cfg;
    std::vector<double> theta{0.4, -1.2};
    for (int i = 0; i < 50; ++i) {
      const std::vector<double> grad{std::sin(0.1 * i) + theta[0], theta[1] * theta[1]};
      adam_step(st, cfg, theta, grad);
    }
    return theta;
  };
  CHECK(run() == run());
}

TEST_CASE("adam converges on a quadratic", "[optimizer]") {
  AdamState st(2);
  AdamConfig cfg;
  cfg.lr = 0.05;
  std::vector<double> theta{2.0, -3.0};
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> grad{2.0 * (theta[0] - 0.5), 2.0 * (theta[1] + 1.5)};
    adam_step(st, cfg, theta, grad);
  }
  CHECK(theta[0] == Catch::Approx(0.5).margin(1e-3));
  CHECK(theta[1] == Catch::Approx(-1.5).margin(1e-3));
}

TEST_CASE("non-finite gradients abort before touching state", "[optimizer]") {
  AdamState st(2);
  AdamConfig cfg;
  std::vector<double> theta{1.0, 2.0};
  const auto before = theta;
  const std::vector<double> grad{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS_AS(adam_step(st, cfg, theta, grad), NumericError);
  CHECK(theta == before);
  CHECK(st.t == 0);
}

TEST_CASE("state checksum tracks mutation", "[optimizer]") {
  AdamState st(2);
  AdamConfig cfg;
  std::vector<double> theta{1.0, 2.0};
  const double c0 = st.checksum();
  adam_step(st, cfg, theta, std::vector<double>{0.3, -0.4});
  CHECK(st.checksum() != c0);
  const double c1 = st.checksum();
  CHECK(c1 == st.checksum());
}
