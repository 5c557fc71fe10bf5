#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

#include "bilayer/energy.hpp"
#include "bilayer/evaluation.hpp"

using namespace bilayer;

namespace {

PlateDomain standard_plate() {
  PlateDomain d;
  d.outer = {-5.0, 5.0, -2.0, 2.0};
  d.clamp = {{0, -5.0, -2.0, 2.0}};
  return d;
}

std::array<DJet, 3> flat_frame_jet() {
  // grad u = [[1,0],[0,1],[0,0]], d11 u = (0,0,1), other second derivatives 0.
  std::array<DJet, 3> u{};
  u[0].d1 = {1.0, 0.0};
  u[1].d1 = {0.0, 1.0};
  u[2].d2 = {1.0, 0.0, 0.0};
  return u;
}

std::array<DJet, 3> random_jet(std::mt19937_64& gen) {
  auto r = [&gen] { return 2.0 * (static_cast<double>(gen() >> 11) * 0x1.0p-53) - 1.0; };
  std::array<DJet, 3> u;
  for (auto& c : u) {
    c.v = r();
    c.d1 = {r(), r()};
    c.d2 = {r(), r(), r()};
  }
  return u;
}

std::array<std::array<double, 3>, 3> rotation(double angle, std::array<double, 3> axis) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  for (auto& a : axis) a /= n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {{{c + axis[0] * axis[0] * t, axis[0] * axis[1] * t - axis[2] * s,
            axis[0] * axis[2] * t + axis[1] * s},
           {axis[1] * axis[0] * t + axis[2] * s, c + axis[1] * axis[1] * t,
            axis[1] * axis[2] * t - axis[0] * s},
           {axis[2] * axis[0] * t - axis[1] * s, axis[2] * axis[1] * t + axis[0] * s,
            c + axis[2] * axis[2] * t}}};
}

std::array<DJet, 3> rotate(const std::array<std::array<double, 3>, 3>& R,
                           const std::array<DJet, 3>& u) {
  std::array<DJet, 3> v{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double r = R[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      v[static_cast<std::size_t>(i)].v += r * u[static_cast<std::size_t>(j)].v;
      for (int k = 0; k < 2; ++k) {
        v[static_cast<std::size_t>(i)].d1[static_cast<std::size_t>(k)] +=
            r * u[static_cast<std::size_t>(j)].d1[static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < 3; ++k) {
        v[static_cast<std::size_t>(i)].d2[static_cast<std::size_t>(k)] +=
            r * u[static_cast<std::size_t>(j)].d2[static_cast<std::size_t>(k)];
      }
    }
  }
  return v;
}

}  // namespace

TEST_CASE("second fundamental form in the flat frame", "[energy]") {
  const auto u = flat_frame_jet();
  const auto H = second_fundamental_form(u);
  CHECK(H[0] == 1.0);  // n = (0,0,1), d11 u = (0,0,1)
  CHECK(H[1] == 0.0);
  CHECK(H[2] == 0.0);
}

TEST_CASE("vanishing second derivatives give zero curvature", "[energy]") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto u = random_jet(gen);
    for (auto& c : u) c.d2 = {0.0, 0.0, 0.0};
    const auto H = second_fundamental_form(u);
    CHECK(H[0] == 0.0);
    CHECK(H[1] == 0.0);
    CHECK(H[2] == 0.0);
  }
}

TEST_CASE("cylinder curvature is diag(alpha, 0)", "[energy]") {
  std::mt19937_64 gen(18);
  auto unif = [&gen](double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(gen() >> 11) * 0x1.0p-53;
  };
  for (const double alpha : {1.0, 2.5, 5.0, 10.0}) {
    const auto cyl = exact_cylinder(alpha);
    for (int trial = 0; trial < 50; ++trial) {
      const auto u = cyl({unif(-5.0, 5.0), unif(-2.0, 2.0)});
      const auto H = second_fundamental_form(u);
      CHECK(std::abs(H[0] - alpha) <= 1e-12 * alpha);
      CHECK(std::abs(H[1]) <= 1e-12);
      CHECK(std::abs(H[2]) <= 1e-12);
      // Packed symmetric storage: the mixed entry is literally n . d12 u.
      const auto q = isometry_defect(u);
      CHECK(std::abs(q[0]) <= 1e-14);
      CHECK(std::abs(q[1]) <= 1e-14);
      CHECK(std::abs(q[2]) <= 1e-14);
    }
  }
}

TEST_CASE("isometry defect examples", "[energy]") {
  SECTION("orthonormal columns give zero") {
    const auto u = flat_frame_jet();
    const auto q = isometry_defect(u);
    CHECK(q == Packed2<double>{0.0, 0.0, 0.0});
    CHECK(packed_frobenius_sq(q) == 0.0);
  }
  SECTION("first witness at beta=1 stretches one direction") {
    const auto w = prop1_witness(1.0);
    const auto u = w({0.37, -1.2});
    const auto q = isometry_defect(u);
    CHECK(std::abs(q[0]) <= 1e-15);
    CHECK(std::abs(q[1]) <= 1e-15);
    CHECK(q[2] == Catch::Approx(0.44).epsilon(1e-12));  // (6/5)^2 - 1
  }
  SECTION("zero gradient gives minus identity") {
    std::array<DJet, 3> u{};
    const auto q = isometry_defect(u);
    CHECK(q[0] == -1.0);
    CHECK(q[1] == 0.0);
    CHECK(q[2] == -1.0);
    CHECK(std::sqrt(packed_frobenius_sq(q)) == Catch::Approx(std::sqrt(2.0)).epsilon(1e-15));
  }
}

TEST_CASE("density vanishes when curvature cancels the spontaneous term", "[energy]") {
  EnergyConfig cfg;
  cfg.Z = Mat2::diag(-1.0, 0.0);
  cfg.beta = 500.0;
  const auto pe = energy_density(flat_frame_jet(), {0.0, 0.0}, cfg);
  CHECK(pe.e == 0.0);
  CHECK(pe.c2 == 0.0);
}

TEST_CASE("cylinder energy density is alpha^2/2 and totals 20 alpha^2", "[energy]") {
  const auto domain = standard_plate();
  for (const double alpha : {1.0, 2.5, 5.0, 10.0}) {
    EnergyConfig cfg;
    cfg.Z = Mat2::isotropic(-alpha);
    cfg.beta = 500.0;
    const auto cyl = exact_cylinder(alpha);

    const auto pe = energy_density(cyl({1.23, 0.5}), {1.23, 0.5}, cfg);
    CHECK(pe.e == Catch::Approx(0.5 * alpha * alpha).epsilon(1e-13));

    const auto grid = grid_energy(cyl, domain, cfg, 1000, 400);
    CHECK(std::abs(grid.energy - 20.0 * alpha * alpha) / (20.0 * alpha * alpha) <= 1e-6);
    CHECK(grid.defect_sq <= 1e-20);

    Rng rng(31);
    const auto mc = mc_energy(cyl, domain, cfg, 400000, rng);
    CHECK(std::abs(mc.energy - 20.0 * alpha * alpha) / (20.0 * alpha * alpha) <= 5e-3);
    CHECK(mc.defect_sq <= 1e-20);
  }
}

TEST_CASE("first witness quadrature matches its closed forms", "[energy]") {
  const auto domain = standard_plate();
  const double area = domain.area();
  for (const double beta : {1.0, 10.0, 100.0, 1000.0}) {
    const auto est = grid_energy(prop1_witness(beta), domain, prop1_config(beta), 500, 200);
    CHECK(est.energy == Catch::Approx(-area / (5.0 * beta)).epsilon(1e-10));
    CHECK(est.tolerance() ==
          Catch::Approx((10.0 * beta + 1.0) / (25.0 * beta * beta) * std::sqrt(area))
              .epsilon(1e-10));
  }
  // Frozen spot values for beta = 1.
  const auto est1 = grid_energy(prop1_witness(1.0), domain, prop1_config(1.0), 500, 200);
  CHECK(est1.energy == Catch::Approx(-8.0).epsilon(1e-12));
  CHECK(est1.tolerance() == Catch::Approx(2.7828043409481738).epsilon(1e-12));
  CHECK(est1.penalized == Catch::Approx(-0.256).margin(1e-9));
}

TEST_CASE("second witness quadrature matches its closed forms", "[energy]") {
  const auto domain = standard_plate();
  const double area = domain.area();
  struct Case {
    double gamma, beta, c_expect, itilde_expect;
  };
  const Case cases[] = {
      {0.5, 16.0, 0.81527470926216030, -29.365234375},
      {1.0, 9.0, 0.15712582185869405, -39.777803284947069},
      {1.0, 100.0, 0.0012649743096205551, -39.9998399839996},
  };
  for (const auto& c : cases) {
    REQUIRE(prop2_admissible(c.beta, c.gamma));
    const auto est = grid_energy(prop2_witness(c.beta, c.gamma, nullptr), domain,
                                 prop2_config(c.beta, c.gamma), 500, 200);
    CHECK(est.energy == Catch::Approx(-area).epsilon(1e-9));
    CHECK(est.tolerance() == Catch::Approx(c.c_expect).epsilon(1e-9));
    CHECK(est.tolerance() ==
          Catch::Approx(prop2_tolerance(c.beta, c.gamma, area)).epsilon(1e-9));
    CHECK(est.penalized == Catch::Approx(c.itilde_expect).epsilon(1e-9));
    CHECK(est.penalized < 0.0);
  }
  CHECK_FALSE(prop2_admissible(8.0, 0.5));
  CHECK_FALSE(prop2_admissible(100.0, 0.25));
}

TEST_CASE("single-sample taped loss on the flat start", "[energy]") {
  // Zero network through the standard edge lift leaves the flat embedding:
  // defect 0 and e = |Z|^2/2, so one sample gives istar = area * e exactly.
  const auto domain = standard_plate();
  const auto lift = edge_lift(domain);
  const Architecture arch{.blocks = 5, .width = 10};
  NetworkParameters params;
  params.arch = arch;
  params.theta.assign(static_cast<std::size_t>(param_count(arch)), 0.0);

  EnergyConfig cfg;
  cfg.Z = Mat2::diag(1.0, 1.0);
  cfg.beta = 500.0;

  Tape tape;
  Tape::Scope scope(tape);
  std::vector<Scalar> leaves;
  for (double v : params.theta) leaves.push_back(tape.leaf(v));
  Workspace<Scalar> ws;
  const Vec2 sample{1.0, 0.5};
  const auto mc = mc_loss(arch, leaves, lift, std::span<const Vec2>(&sample, 1), cfg, domain, ws);
  CHECK(mc.istar.v == 40.0);
  CHECK(mc.energy == 40.0);
  CHECK(mc.defect_sq == 0.0);
}

TEST_CASE("batch loss gradient agrees with the single-tape path", "[energy]") {
  const auto domain = standard_plate();
  const auto lift = edge_lift(domain);
  const Architecture arch{.blocks = 2, .width = 6};
  const auto params = init_params(arch, 9);
  EnergyConfig cfg;
  cfg.Z = Mat2::isotropic(-1.0);
  cfg.beta = 500.0;

  Rng rng(77);
  const auto batch = sample_interior(domain, 16, rng);

  const auto single = loss_gradient(params.theta, [&](std::span<const Scalar> leaves) {
    Workspace<Scalar> ws;
    return mc_loss(arch, leaves, lift, batch, cfg, domain, ws).istar;
  });
  const auto lanes1 = batch_loss_gradient(params, lift, batch, cfg, domain, 1);
  const auto lanes2 = batch_loss_gradient(params, lift, batch, cfg, domain, 2);

  CHECK(lanes1.istar == Catch::Approx(single.loss).epsilon(1e-13));
  CHECK(lanes2.istar == Catch::Approx(single.loss).epsilon(1e-13));
  for (std::size_t k = 0; k < params.theta.size(); ++k) {
    CHECK(lanes1.grad[k] == Catch::Approx(single.grad[k]).epsilon(1e-10).margin(1e-12));
    CHECK(lanes2.grad[k] == Catch::Approx(single.grad[k]).epsilon(1e-10).margin(1e-12));
  }
  CHECK(lanes1.istar == Catch::Approx(lanes1.energy + cfg.beta * lanes1.defect_sq)
                            .epsilon(1e-12));
}

TEST_CASE("non-finite density identifies the failing sample", "[energy]") {
  const auto domain = standard_plate();
  const auto lift = edge_lift(domain);
  const Architecture arch{.blocks = 1, .width = 4};
  const auto params = init_params(arch, 2);
  EnergyConfig cfg;
  cfg.Z = Mat2::isotropic(-1.0);
  cfg.beta = 500.0;
  cfg.source = [](Vec2 x) {
    return std::array<double, 3>{x.x1 > 0.0 ? std::numeric_limits<double>::quiet_NaN() : 0.0,
                                 0.0, 0.0};
  };
  const std::vector<Vec2> batch{{-1.0, 0.0}, {1.0, 0.0}};
  try {
    batch_loss_gradient(params, lift, batch, cfg, domain, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("sample 1") != std::string::npos);
  }
}

TEST_CASE("frame indifference of density and defect", "[energy]") {
  std::mt19937_64 gen(23);
  EnergyConfig cfg;
  cfg.Z = {1.3, -0.4, -0.4, 0.8};
  cfg.beta = 100.0;
  const auto R = rotation(0.83, {0.3, -1.2, 0.5});
  for (int trial = 0; trial < 25; ++trial) {
    const auto u = random_jet(gen);
    const auto v = rotate(R, u);
    const auto pu = energy_density(u, {0.0, 0.0}, cfg);
    const auto pv = energy_density(v, {0.0, 0.0}, cfg);
    CHECK(pv.e == Catch::Approx(pu.e).epsilon(1e-11).margin(1e-12));
    CHECK(pv.c2 == Catch::Approx(pu.c2).epsilon(1e-11).margin(1e-12));
  }
}

TEST_CASE("defect norm is nonnegative and vanishes only on isometries", "[energy]") {
  std::mt19937_64 gen(29);
  const auto R = rotation(1.1, {0.2, 0.9, -0.4});
  for (int trial = 0; trial < 25; ++trial) {
    auto u = random_jet(gen);
    CHECK(packed_frobenius_sq(isometry_defect(u)) >= 0.0);

    // Orthonormal columns: rotate the flat frame.
    auto iso = flat_frame_jet();
    const auto r = rotate(R, iso);
    CHECK(packed_frobenius_sq(isometry_defect(r)) <= 1e-28);

    // Any stretch of one column breaks it.
    auto stretched = r;
    for (auto& c : stretched) c.d1[0] *= 1.01;
    CHECK(packed_frobenius_sq(isometry_defect(stretched)) > 1e-9);
  }
}

TEST_CASE("monte carlo error decays like n^-1/2 on a curved graph map", "[energy]") {
  // The closed-form maps have spatially constant densities (zero estimator
  // variance), so the rate is checked on a genuinely varying integrand.
  const auto domain = standard_plate();
  EnergyConfig cfg;
  cfg.Z = Mat2::diag(0.0, 0.0);
  cfg.beta = 1.0;
  auto graph = [](Vec2 x) {
    const auto xj = seed_input(x);
    std::array<DJet, 3> u;
    u[0] = xj[0];
    u[1] = xj[1];
    u[2] = scale(0.05, xj[0] * xj[0] * xj[1]);
    return u;
  };
  const auto truth = grid_energy(graph, domain, cfg, 2000, 800);

  auto mean_abs_err = [&](std::size_t n) {
    double acc = 0.0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      Rng rng(1000 + seed);
      acc += std::abs(mc_energy(graph, domain, cfg, n, rng).energy - truth.energy);
    }
    return acc / 8.0;
  };
  const double e3 = mean_abs_err(1000);
  const double e5 = mean_abs_err(100000);
  const double slope = std::log(e5 / e3) / std::log(100000.0 / 1000.0);
  INFO("slope=" << slope);
  CHECK(slope <= -0.25);
  CHECK(slope >= -1.0);
}

TEST_CASE("formulations agree on exact isometries", "[energy]") {
  const double alpha = 2.5;
  const auto cyl = exact_cylinder(alpha);
  EnergyConfig original;
  original.Z = Mat2::isotropic(-alpha);
  original.beta = 500.0;
  EnergyConfig reshaped = original;
  reshaped.formulation = Formulation::reshaped;

  std::mt19937_64 gen(31);
  auto unif = [&gen](double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(gen() >> 11) * 0x1.0p-53;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const Vec2 x{unif(-5.0, 5.0), unif(-2.0, 2.0)};
    const auto u = cyl(x);
    const auto a = energy_density(u, x, original);
    const auto b = energy_density(u, x, reshaped);
    CHECK(std::abs(a.e - b.e) <= 1e-10);
    CHECK(a.c2 == b.c2);
  }
}

TEST_CASE("raw and normalized normals differ as configured", "[energy]") {
  const auto w = prop1_witness(1.0);  // normal has length 6/5
  const auto u = w({0.2, 0.1});
  const auto raw = second_fundamental_form(u, false);
  const auto unit = second_fundamental_form(u, true);
  CHECK(std::abs(raw[0] / unit[0]) == Catch::Approx(1.2).epsilon(1e-12));
}
