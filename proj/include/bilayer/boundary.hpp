#pragma once

#include <array>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bilayer/geometry.hpp"
#include "bilayer/jet.hpp"
#include "bilayer/network.hpp"
#include "bilayer/optimizer.hpp"
#include "bilayer/tape.hpp"

namespace bilayer {

enum class LiftKind { free_boundary, edge, trained };

/// d(x) = c0 + c1*x1 + c2*x2, the boundary target the trained g1 matches on
/// the unclamped part of the boundary.
struct AffineField {
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;

  double at(Vec2 x) const { return c0 + c1 * x.x1 + c2 * x.x2; }
  bool operator==(const AffineField&) const = default;
};

/// Hard enforcement of the clamped conditions: the ansatz is
/// u = g1 * y + g2 with g1 and its gradient vanishing on the clamped part
/// and g2 the flat embedding (x1, x2, 0). With a free boundary the lift is
/// the identity on y.
class BoundaryLift {
 public:
  static BoundaryLift make_free() {
    BoundaryLift l;
    l.kind_ = LiftKind::free_boundary;
    return l;
  }

  /// Squared distance to the clamped line. Only a clamp that covers one
  /// full straight side admits this form.
  static BoundaryLift make_edge(const PlateDomain& d) {
    if (d.clamp.size() != 1) {
      throw std::invalid_argument("edge lift: clamp must be a single full edge");
    }
    const ClampSegment& c = d.clamp.front();
    const int other = 1 - c.axis;
    if (c.lo != d.outer.lo(other) || c.hi != d.outer.hi(other)) {
      throw std::invalid_argument("edge lift: clamp does not span a full side");
    }
    BoundaryLift l;
    l.kind_ = LiftKind::edge;
    l.axis_ = c.axis;
    l.offset_ = c.value;
    return l;
  }

  static BoundaryLift make_trained(NetworkParameters g1) {
    if (g1.arch.output_dim != 1) {
      throw std::invalid_argument("trained lift: g1 network must have one output");
    }
    BoundaryLift l;
    l.kind_ = LiftKind::trained;
    l.g1_ = std::move(g1);
    return l;
  }

  LiftKind kind() const { return kind_; }
  bool is_free() const { return kind_ == LiftKind::free_boundary; }
  const NetworkParameters& g1_network() const { return g1_; }

  /// Spatial jet of g1. The trained network is frozen, so this is always a
  /// plain double evaluation.
  DJet g1_jet(Vec2 x) const {
    switch (kind_) {
      case LiftKind::free_boundary:
        return constant_jet<double>(1.0);
      case LiftKind::edge: {
        DJet g;
        const double t = (axis_ == 0 ? x.x1 : x.x2) - offset_;
        g.v = t * t;
        g.d1[axis_] = 2.0 * t;
        g.d2[axis_ == 0 ? 0 : 2] = 2.0;
        return g;
      }
      case LiftKind::trained: {
        Workspace<double> ws;
        std::array<DJet, 1> out;
        forward<double>(g1_.arch, g1_.theta, seed_input(x), out, ws);
        return out[0];
      }
    }
    return {};
  }

  /// Flat embedding (x1, x2, 0); matches the clamped value g and frame Phi
  /// of every experiment in this project.
  static std::array<DJet, 3> g2_jet(Vec2 x) {
    std::array<DJet, 3> g{};
    g[0].v = x.x1;
    g[0].d1 = {1.0, 0.0};
    g[1].v = x.x2;
    g[1].d1 = {0.0, 1.0};
    return g;
  }

  /// u = g1*y + g2, derivatives propagated through the jet product rule.
  template <class S>
  std::array<Jet2<S>, 3> apply(const std::array<Jet2<S>, 3>& yhat, Vec2 x) const {
    if (kind_ == LiftKind::free_boundary) return yhat;
    const DJet g1 = g1_jet(x);
    const std::array<DJet, 3> g2 = g2_jet(x);
    std::array<Jet2<S>, 3> u;
    for (int c = 0; c < 3; ++c) u[c] = g1 * yhat[c] + g2[c];
    return u;
  }

 private:
  LiftKind kind_ = LiftKind::free_boundary;
  int axis_ = 0;
  double offset_ = 0.0;
  NetworkParameters g1_;
};

inline BoundaryLift edge_lift(const PlateDomain& d) { return BoundaryLift::make_edge(d); }

struct G1TrainingOptions {
  Architecture arch{.blocks = 5, .width = 10, .input_dim = 2, .output_dim = 1};
  int batch_per_group = 64;
  AdamConfig adam{};
  int threads = 1;
  double tol_clamped = 1e-2;     // max |g1| and max |grad g1| on the clamped part
  double tol_complement = 5e-2;  // relative L2 residual of g1 - d elsewhere
  std::size_t eval_samples = 2048;
  std::ostream* warn = &std::cerr;
};

struct G1TrainingReport {
  NetworkParameters params;
  double max_abs_clamped = 0.0;
  double max_grad_clamped = 0.0;
  double rel_l2_complement = 0.0;
  bool within_tolerance = false;
};

/// Fits a scalar network to behave like a smooth distance field: zero value
/// and gradient on the clamped boundary, the supplied target d elsewhere on
/// the boundary. The three residual groups carry equal weight. Falling short
/// of the tolerances is reported as a warning, not an error.
inline G1TrainingReport train_g1(const PlateDomain& domain, const AffineField& target,
                                 long long steps, std::uint64_t seed,
                                 const G1TrainingOptions& opt = {}) {
  if (domain.free_boundary()) {
    throw std::invalid_argument("train_g1: domain has no clamped boundary");
  }
  NetworkParameters params = init_params(opt.arch, seed);
  AdamState adam(params.theta.size());
  Rng rng = Rng::stream(seed, 101);

  const int lanes = resolve_threads(opt.threads);
  std::vector<Workspace<Scalar>> wss(static_cast<std::size_t>(lanes));

  const std::size_t nc = static_cast<std::size_t>(opt.batch_per_group);
  const std::size_t nf = static_cast<std::size_t>(opt.batch_per_group);

  for (long long step = 0; step < steps; ++step) {
    const auto clamped = sample_boundary(domain, BoundaryPart::clamped, nc, rng);
    const auto rest = sample_boundary(domain, BoundaryPart::complement, nf, rng);

    auto per_item = [&](std::span<const Scalar> leaves, std::size_t i, int lane) -> Scalar {
      std::array<SJet, 1> out;
      if (i < nc) {
        const Vec2 x = clamped[i];
        forward<Scalar>(params.arch, leaves, seed_input(x), out, wss[static_cast<std::size_t>(lane)]);
        const Scalar value_sq = sqr(out[0].v);
        const Scalar grad_sq = sqr(out[0].d1[0]) + sqr(out[0].d1[1]);
        return (1.0 / static_cast<double>(nc)) * (value_sq + grad_sq);
      }
      const Vec2 x = rest[i - nc];
      forward<Scalar>(params.arch, leaves, seed_input(x), out, wss[static_cast<std::size_t>(lane)]);
      return (1.0 / static_cast<double>(nf)) * sqr(out[0].v - target.at(x));
    };

    LossGrad lg = sum_gradient(params.theta, nc + nf, lanes, per_item);
    adam_step(adam, opt.adam, params.theta, lg.grad);
  }

  G1TrainingReport report;
  report.params = params;

  Rng eval_rng = Rng::stream(seed, 202);
  Workspace<double> ws;
  std::array<DJet, 1> out;
  for (const Vec2 x : sample_boundary(domain, BoundaryPart::clamped, opt.eval_samples, eval_rng)) {
    forward<double>(params.arch, params.theta, seed_input(x), out, ws);
    report.max_abs_clamped = std::max(report.max_abs_clamped, std::abs(out[0].v));
    report.max_grad_clamped = std::max(
        report.max_grad_clamped, std::hypot(out[0].d1[0], out[0].d1[1]));
  }
  double res2 = 0.0, ref2 = 0.0;
  for (const Vec2 x :
       sample_boundary(domain, BoundaryPart::complement, opt.eval_samples, eval_rng)) {
    forward<double>(params.arch, params.theta, seed_input(x), out, ws);
    const double d = target.at(x);
    res2 += (out[0].v - d) * (out[0].v - d);
    ref2 += d * d;
  }
  report.rel_l2_complement = ref2 > 0.0 ? std::sqrt(res2 / ref2) : std::sqrt(res2);

  report.within_tolerance = report.max_abs_clamped <= opt.tol_clamped &&
                            report.max_grad_clamped <= opt.tol_clamped &&
                            report.rel_l2_complement <= opt.tol_complement;
  if (!report.within_tolerance && opt.warn != nullptr) {
    (*opt.warn) << "train_g1: residual targets not met after " << steps
                << " steps (max|g1|=" << report.max_abs_clamped
                << ", max|grad g1|=" << report.max_grad_clamped
                << ", rel L2=" << report.rel_l2_complement << ")\n";
  }
  return report;
}

}  // namespace bilayer
