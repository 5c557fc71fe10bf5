#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "bilayer/energy.hpp"
#include "bilayer/geometry.hpp"

namespace bilayer {

/// Absolute minimizer for isotropic curvature Z = -alpha*Id on the standard
/// plate clamped at x1 = -5: a cylinder of radius 1/alpha.
inline AnalyticMap exact_cylinder(double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("exact_cylinder: alpha must be positive");
  return [alpha](Vec2 x) {
    const auto xj = seed_input(x);
    const DJet s = scale(alpha, xj[0] + constant_jet<double>(5.0));
    std::array<DJet, 3> u;
    u[0] = scale(1.0 / alpha, sin(s)) - constant_jet<double>(5.0);
    u[1] = xj[1];
    u[2] = scale(1.0 / alpha, constant_jet<double>(1.0) - cos(s));
    return u;
  };
}

/// Energy of the cylinder: the density is alpha^2/2 everywhere, so this is
/// exact on any subdomain (including the punctured plates).
inline double cylinder_energy(double alpha, const PlateDomain& domain) {
  return 0.5 * alpha * alpha * domain.area();
}

enum class ShapeLabel { cylinder, non_cylinder };

inline std::string to_string(ShapeLabel s) {
  return s == ShapeLabel::cylinder ? "cylinder" : "non-cylinder";
}

struct ShapeThresholds {
  double e_l2 = 0.15;       // relative L2 distance to the reference
  double energy_rel = 0.10; // relative energy deviation from the reference
};

/// Pure classification rule on already-computed test statistics.
inline ShapeLabel shape_label(double energy, double reference_energy, double e_l2,
                              const ShapeThresholds& thr = {}) {
  const bool close_energy =
      std::abs(energy - reference_energy) / std::abs(reference_energy) < thr.energy_rel;
  return (e_l2 < thr.e_l2 && close_energy) ? ShapeLabel::cylinder : ShapeLabel::non_cylinder;
}

struct TestReport {
  double energy = 0.0;
  double tolerance = 0.0;  // C
  double istar = 0.0;
  std::optional<double> e_l2;
  std::optional<ShapeLabel> shape;
  std::size_t samples = 0;
};

/// Monte Carlo test statistics on fresh uniform samples (default count
/// round(1e4 * |Omega|)); adds the relative L2 error and the shape label
/// when a reference deformation is available.
template <class F>
TestReport test_metrics(F&& deformation, const PlateDomain& domain, const EnergyConfig& cfg,
                        const AnalyticMap* reference, double reference_energy, Rng& rng,
                        std::size_t samples = 0, const ShapeThresholds& thr = {}) {
  TestReport report;
  report.samples =
      samples > 0 ? samples : static_cast<std::size_t>(std::llround(1e4 * domain.area()));

  double sum_e = 0.0, sum_c2 = 0.0, num = 0.0, den = 0.0;
  for (const Vec2 x : sample_interior(domain, report.samples, rng)) {
    const auto u = deformation(x);
    const auto pe = energy_density(u, x, cfg);
    sum_e += pe.e;
    sum_c2 += pe.c2;
    if (reference != nullptr) {
      const auto r = (*reference)(x);
      for (int c = 0; c < 3; ++c) {
        const double d = u[c].v - r[c].v;
        num += d * d;
        den += r[c].v * r[c].v;
      }
    }
  }
  const double w = domain.area() / static_cast<double>(report.samples);
  report.energy = w * sum_e;
  report.tolerance = std::sqrt(std::max(0.0, w * sum_c2));
  report.istar = report.energy + cfg.beta * (w * sum_c2);
  if (reference != nullptr) {
    report.e_l2 = std::sqrt(num / den);
    report.shape = shape_label(report.energy, reference_energy, *report.e_l2, thr);
  }
  return report;
}

inline TestReport test_metrics(const NetworkParameters& params, const BoundaryLift& lift,
                               const PlateDomain& domain, const EnergyConfig& cfg,
                               const AnalyticMap* reference, double reference_energy,
                               Rng& rng, std::size_t samples = 0,
                               const ShapeThresholds& thr = {}) {
  return test_metrics(deformation_map(params, lift), domain, cfg, reference, reference_energy,
                      rng, samples, thr);
}

/// Shape call reproducing the reported yes/no column: computes the test
/// statistics against the reference and applies the thresholds.
inline ShapeLabel classify_shape(const NetworkParameters& params, const BoundaryLift& lift,
                                 const PlateDomain& domain, const EnergyConfig& cfg,
                                 const AnalyticMap& reference, double reference_energy,
                                 Rng& rng, std::size_t samples = 0,
                                 const ShapeThresholds& thr = {}) {
  const TestReport r =
      test_metrics(params, lift, domain, cfg, &reference, reference_energy, rng, samples, thr);
  return *r.shape;
}

}  // namespace bilayer
