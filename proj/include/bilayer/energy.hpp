#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "bilayer/boundary.hpp"
#include "bilayer/geometry.hpp"
#include "bilayer/jet.hpp"
#include "bilayer/network.hpp"
#include "bilayer/tape.hpp"

namespace bilayer {

struct Mat2 {
  double a11 = 0.0, a12 = 0.0;
  double a21 = 0.0, a22 = 0.0;

  static Mat2 diag(double d1, double d2) { return {d1, 0.0, 0.0, d2}; }
  static Mat2 isotropic(double d) { return diag(d, d); }
  double frobenius_sq() const { return a11 * a11 + a12 * a12 + a21 * a21 + a22 * a22; }
  bool symmetric() const { return a12 == a21; }
  bool operator==(const Mat2&) const = default;
};

/// Original density penalizes |H + Z|^2; the reshaped one replaces |H| by
/// |D^2 u| plus the cross coupling, which is only equivalent on exact
/// isometries.
enum class Formulation { original, reshaped };

struct EnergyConfig {
  Mat2 Z{};
  double beta = 500.0;
  Formulation formulation = Formulation::original;
  std::function<std::array<double, 3>(Vec2)> source;  // empty means f = 0
  bool normalize_normal = false;  // study option; the model uses the raw normal
};

inline void validate(const EnergyConfig& cfg) {
  if (!cfg.Z.symmetric()) throw std::invalid_argument("energy: Z must be symmetric");
  if (!(cfg.beta > 0.0)) throw std::invalid_argument("energy: beta must be positive");
}

/// Symmetric 2x2 results in packed (11, 12, 22) order, matching Jet2::d2.
template <class S>
using Packed2 = std::array<S, 3>;

/// n = d1u x d2u, unnormalized; H_ij = n . d_ij u.
template <class S>
Packed2<S> second_fundamental_form(const std::array<Jet2<S>, 3>& u, bool normalize = false) {
  const S a0 = u[0].d1[0], a1 = u[1].d1[0], a2 = u[2].d1[0];
  const S b0 = u[0].d1[1], b1 = u[1].d1[1], b2 = u[2].d1[1];
  S n0 = a1 * b2 - a2 * b1;
  S n1 = a2 * b0 - a0 * b2;
  S n2 = a0 * b1 - a1 * b0;
  if (normalize) {
    using std::sqrt;
    const S inv = 1.0 / sqrt(n0 * n0 + n1 * n1 + n2 * n2);
    n0 = n0 * inv;
    n1 = n1 * inv;
    n2 = n2 * inv;
  }
  Packed2<S> H;
  for (int k = 0; k < 3; ++k) {
    H[k] = n0 * u[0].d2[k] + n1 * u[1].d2[k] + n2 * u[2].d2[k];
  }
  return H;
}

/// grad(u)^T grad(u) - Id, packed symmetric.
template <class S>
Packed2<S> isometry_defect(const std::array<Jet2<S>, 3>& u) {
  const S a0 = u[0].d1[0], a1 = u[1].d1[0], a2 = u[2].d1[0];
  const S b0 = u[0].d1[1], b1 = u[1].d1[1], b2 = u[2].d1[1];
  Packed2<S> q;
  q[0] = a0 * a0 + a1 * a1 + a2 * a2 - 1.0;
  q[1] = a0 * b0 + a1 * b1 + a2 * b2;
  q[2] = b0 * b0 + b1 * b1 + b2 * b2 - 1.0;
  return q;
}

template <class S>
S packed_frobenius_sq(const Packed2<S>& p) {
  return p[0] * p[0] + 2.0 * (p[1] * p[1]) + p[2] * p[2];
}

template <class S>
struct PointEnergyT {
  S e{};                 // energy density at the sample
  S c2{};                // squared isometry-defect density
  Packed2<S> H{};        // second fundamental form entering the density
};
using PointEnergy = PointEnergyT<double>;

template <class S>
PointEnergyT<S> energy_density(const std::array<Jet2<S>, 3>& u, Vec2 x,
                               const EnergyConfig& cfg) {
  PointEnergyT<S> pe;
  pe.c2 = packed_frobenius_sq(isometry_defect(u));

  if (cfg.formulation == Formulation::original) {
    pe.H = second_fundamental_form(u, cfg.normalize_normal);
    Packed2<S> hz;
    hz[0] = pe.H[0] + cfg.Z.a11;
    hz[1] = pe.H[1] + cfg.Z.a12;
    hz[2] = pe.H[2] + cfg.Z.a22;
    pe.e = 0.5 * packed_frobenius_sq(hz);
  } else {
    pe.H = second_fundamental_form(u, false);
    S d2sq{};
    for (int c = 0; c < 3; ++c) {
      d2sq = d2sq + u[c].d2[0] * u[c].d2[0] + 2.0 * (u[c].d2[1] * u[c].d2[1]) +
             u[c].d2[2] * u[c].d2[2];
    }
    const S coupling = pe.H[0] * cfg.Z.a11 + pe.H[1] * (cfg.Z.a12 + cfg.Z.a21) +
                       pe.H[2] * cfg.Z.a22;
    pe.e = 0.5 * d2sq + coupling + 0.5 * cfg.Z.frobenius_sq();
  }

  if (cfg.source) {
    const std::array<double, 3> f = cfg.source(x);
    pe.e = pe.e - (f[0] * u[0].v + f[1] * u[1].v + f[2] * u[2].v);
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Monte Carlo loss over a batch.
// ---------------------------------------------------------------------------

struct McLoss {
  Scalar istar;           // taped (|Omega|/N) * sum(e + beta*c2)
  double energy = 0.0;    // matching estimate of E
  double defect_sq = 0.0; // matching estimate of C^2
};

/// Single-tape batch loss; call under an active tape with the parameters
/// already injected as leaves.
inline McLoss mc_loss(const Architecture& arch, std::span<const Scalar> theta,
                      const BoundaryLift& lift, std::span<const Vec2> batch,
                      const EnergyConfig& cfg, const PlateDomain& domain,
                      Workspace<Scalar>& ws) {
  if (batch.empty()) throw std::invalid_argument("mc_loss: empty batch");
  const double w = domain.area() / static_cast<double>(batch.size());
  Scalar penalized{0.0};
  double sum_e = 0.0, sum_c2 = 0.0;
  std::array<SJet, 3> yhat;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Vec2 x = batch[k];
    forward<Scalar>(arch, theta, seed_input(x), yhat, ws);
    const auto u = lift.apply(yhat, x);
    const auto pe = energy_density(u, x, cfg);
    const Scalar contrib = pe.e + cfg.beta * pe.c2;
    if (!std::isfinite(contrib.v)) {
      throw NumericError("mc_loss: non-finite density at sample " + std::to_string(k) +
                         " (" + std::to_string(x.x1) + ", " + std::to_string(x.x2) + ")");
    }
    penalized += contrib;
    sum_e += pe.e.v;
    sum_c2 += pe.c2.v;
  }
  McLoss out;
  out.istar = w * penalized;
  out.energy = w * sum_e;
  out.defect_sq = w * sum_c2;
  return out;
}

struct BatchLossResult {
  double istar = 0.0;
  double energy = 0.0;
  double defect_sq = 0.0;
  std::vector<double> grad;
};

/// Loss and parameter gradient for one optimizer step. Samples are recorded
/// as independent tape segments and processed in `threads` deterministic
/// lanes; the single-lane path is the bit-reproducible reference.
inline BatchLossResult batch_loss_gradient(const NetworkParameters& params,
                                           const BoundaryLift& lift,
                                           std::span<const Vec2> batch,
                                           const EnergyConfig& cfg, const PlateDomain& domain,
                                           int threads) {
  if (batch.empty()) throw std::invalid_argument("batch_loss_gradient: empty batch");
  const int lanes = std::max(1, std::min<int>(resolve_threads(threads),
                                              static_cast<int>(batch.size())));
  const double w = domain.area() / static_cast<double>(batch.size());

  std::vector<Workspace<Scalar>> wss(static_cast<std::size_t>(lanes));
  std::vector<double> lane_e(static_cast<std::size_t>(lanes), 0.0);
  std::vector<double> lane_c2(static_cast<std::size_t>(lanes), 0.0);

  auto per_item = [&](std::span<const Scalar> leaves, std::size_t i, int lane) -> Scalar {
    const Vec2 x = batch[i];
    std::array<SJet, 3> yhat;
    forward<Scalar>(params.arch, leaves, seed_input(x), yhat,
                    wss[static_cast<std::size_t>(lane)]);
    const auto u = lift.apply(yhat, x);
    const auto pe = energy_density(u, x, cfg);
    const Scalar contrib = pe.e + cfg.beta * pe.c2;
    if (!std::isfinite(contrib.v)) {
      throw NumericError("batch loss: non-finite density at sample " + std::to_string(i) +
                         " (" + std::to_string(x.x1) + ", " + std::to_string(x.x2) + ")");
    }
    lane_e[static_cast<std::size_t>(lane)] += pe.e.v;
    lane_c2[static_cast<std::size_t>(lane)] += pe.c2.v;
    return contrib;
  };

  LossGrad lg = sum_gradient(params.theta, batch.size(), lanes, per_item);

  BatchLossResult out;
  out.istar = w * lg.loss;
  double sum_e = 0.0, sum_c2 = 0.0;
  for (int lane = 0; lane < lanes; ++lane) {
    sum_e += lane_e[static_cast<std::size_t>(lane)];
    sum_c2 += lane_c2[static_cast<std::size_t>(lane)];
  }
  out.energy = w * sum_e;
  out.defect_sq = w * sum_c2;
  out.grad = std::move(lg.grad);
  for (double& g : out.grad) g *= w;
  return out;
}

// ---------------------------------------------------------------------------
// Analytic maps and energy estimates for fixed deformations.
// ---------------------------------------------------------------------------

using AnalyticMap = std::function<std::array<DJet, 3>(Vec2)>;

/// Evaluates the trained deformation u = g1*y + g2 as a plain map.
inline AnalyticMap deformation_map(const NetworkParameters& params, const BoundaryLift& lift) {
  return [params, lift](Vec2 x) {
    Workspace<double> ws;
    std::array<DJet, 3> yhat;
    forward<double>(params.arch, params.theta, seed_input(x), yhat, ws);
    return lift.apply(yhat, x);
  };
}

struct EnergyEstimate {
  double energy = 0.0;
  double defect_sq = 0.0;
  double penalized = 0.0;  // energy + beta * defect_sq

  double tolerance() const { return std::sqrt(std::max(0.0, defect_sq)); }
};

template <class F>
EnergyEstimate mc_energy(F&& map, const PlateDomain& domain, const EnergyConfig& cfg,
                         std::size_t n, Rng& rng) {
  double sum_e = 0.0, sum_c2 = 0.0;
  for (const Vec2 x : sample_interior(domain, n, rng)) {
    const auto u = map(x);
    const auto pe = energy_density(u, x, cfg);
    sum_e += pe.e;
    sum_c2 += pe.c2;
  }
  const double w = domain.area() / static_cast<double>(n);
  return {w * sum_e, w * sum_c2, w * (sum_e + cfg.beta * sum_c2)};
}

/// Midpoint rule on a tensor grid; cells whose center falls in the hole are
/// dropped. Exact for the constant densities of the closed-form maps.
template <class F>
EnergyEstimate grid_energy(F&& map, const PlateDomain& domain, const EnergyConfig& cfg,
                           int nx, int ny) {
  const double hx = domain.outer.width() / nx;
  const double hy = domain.outer.height() / ny;
  const double w = hx * hy;
  double sum_e = 0.0, sum_c2 = 0.0;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      const Vec2 x{domain.outer.lo1 + (i + 0.5) * hx, domain.outer.lo2 + (j + 0.5) * hy};
      if (domain.hole && domain.hole->contains_open(x)) continue;
      const auto u = map(x);
      const auto pe = energy_density(u, x, cfg);
      sum_e += pe.e;
      sum_c2 += pe.c2;
    }
  }
  return {w * sum_e, w * sum_c2, w * (sum_e + cfg.beta * sum_c2)};
}

/// Relative L2 distance between two maps over the domain, by Monte Carlo.
template <class F, class G>
double mc_relative_l2(F&& approx, G&& reference, const PlateDomain& domain, std::size_t n,
                      Rng& rng) {
  double num = 0.0, den = 0.0;
  for (const Vec2 x : sample_interior(domain, n, rng)) {
    const auto a = approx(x);
    const auto r = reference(x);
    for (int c = 0; c < 3; ++c) {
      const double d = a[c].v - r[c].v;
      num += d * d;
      den += r[c].v * r[c].v;
    }
  }
  return std::sqrt(num / den);
}

// ---------------------------------------------------------------------------
// Closed-form witness deformations for the two reshaped-energy propositions.
// ---------------------------------------------------------------------------

/// [sin x1, (1 + 1/(5 beta)) x2, cos x1]
inline AnalyticMap prop1_witness(double beta) {
  const double stretch = 1.0 + 1.0 / (5.0 * beta);
  return [stretch](Vec2 x) {
    const auto xj = seed_input(x);
    std::array<DJet, 3> u;
    u[0] = sin(xj[0]);
    u[1] = scale(stretch, xj[1]);
    u[2] = cos(xj[0]);
    return u;
  };
}

/// Spontaneous curvature the first witness competes against: Z = diag(1, 0).
inline EnergyConfig prop1_config(double beta) {
  EnergyConfig cfg;
  cfg.Z = Mat2::diag(1.0, 0.0);
  cfg.beta = beta;
  cfg.formulation = Formulation::reshaped;
  return cfg;
}

inline double prop1_reshaped_energy(double beta, double area) { return -area / (5.0 * beta); }

inline double prop1_tolerance(double beta, double area) {
  return (10.0 * beta + 1.0) / (25.0 * beta * beta) * std::sqrt(area);
}

inline bool prop2_admissible(double beta, double gamma) {
  return gamma > 0.25 && beta >= std::pow(9.0, 1.0 / (4.0 * gamma - 1.0));
}

/// [b^-g sin(b^g x1), (1 + b^-2g) x2, b^-g cos(b^g x1)]
inline AnalyticMap prop2_witness(double beta, double gamma, std::ostream* warn = &std::cerr) {
  if (!prop2_admissible(beta, gamma) && warn != nullptr) {
    (*warn) << "prop2_witness: (beta=" << beta << ", gamma=" << gamma
            << ") is outside the admissible regime; formulas remain evaluable\n";
  }
  const double freq = std::pow(beta, gamma);
  const double amp = 1.0 / freq;
  const double stretch = 1.0 + amp * amp;
  return [freq, amp, stretch](Vec2 x) {
    const auto xj = seed_input(x);
    std::array<DJet, 3> u;
    u[0] = scale(amp, sin(scale(freq, xj[0])));
    u[1] = scale(stretch, xj[1]);
    u[2] = scale(amp, cos(scale(freq, xj[0])));
    return u;
  };
}

inline EnergyConfig prop2_config(double beta, double gamma) {
  EnergyConfig cfg;
  cfg.Z = Mat2::diag(std::pow(beta, gamma), 0.0);
  cfg.beta = beta;
  cfg.formulation = Formulation::reshaped;
  return cfg;
}

inline double prop2_reshaped_energy(double area) { return -area; }

inline double prop2_tolerance(double beta, double gamma, double area) {
  const double b = std::pow(beta, -2.0 * gamma);
  return b * (2.0 + b) * std::sqrt(area);
}

}  // namespace bilayer
