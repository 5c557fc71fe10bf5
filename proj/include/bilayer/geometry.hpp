#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "bilayer/jet.hpp"

namespace bilayer {

struct Rect {
  double lo1 = 0.0, hi1 = 0.0;
  double lo2 = 0.0, hi2 = 0.0;

  double width() const { return hi1 - lo1; }
  double height() const { return hi2 - lo2; }
  double area() const { return width() * height(); }
  bool contains_open(Vec2 p) const {
    return p.x1 > lo1 && p.x1 < hi1 && p.x2 > lo2 && p.x2 < hi2;
  }
  bool contains_closed(Vec2 p) const {
    return p.x1 >= lo1 && p.x1 <= hi1 && p.x2 >= lo2 && p.x2 <= hi2;
  }
  double lo(int axis) const { return axis == 0 ? lo1 : lo2; }
  double hi(int axis) const { return axis == 0 ? hi1 : hi2; }

  bool operator==(const Rect&) const = default;
};

inline std::optional<Rect> intersect(const Rect& a, const Rect& b) {
  Rect r{std::max(a.lo1, b.lo1), std::min(a.hi1, b.hi1),
         std::max(a.lo2, b.lo2), std::min(a.hi2, b.hi2)};
  if (r.lo1 >= r.hi1 || r.lo2 >= r.hi2) return std::nullopt;
  return r;
}

/// Axis-aligned piece of the boundary where the plate is clamped:
/// the line x_{axis} = value, spanning [lo, hi] in the other coordinate.
struct ClampSegment {
  int axis = 0;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;

  double length() const { return hi - lo; }
  Vec2 point(double s) const {
    return axis == 0 ? Vec2{value, lo + s * (hi - lo)} : Vec2{lo + s * (hi - lo), value};
  }
  bool operator==(const ClampSegment&) const = default;
};

/// Rectangle, optionally with a rectangular hole, plus the clamped boundary
/// pieces. Covers every experiment shape in this project.
struct PlateDomain {
  Rect outer;
  std::optional<Rect> hole;
  std::vector<ClampSegment> clamp;

  double area() const {
    double a = outer.area();
    if (hole) {
      if (auto cut = intersect(*hole, outer)) a -= cut->area();
    }
    return a;
  }
  bool contains(Vec2 p) const {
    if (!outer.contains_closed(p)) return false;
    return !(hole && hole->contains_open(p));
  }
  bool free_boundary() const { return clamp.empty(); }

  bool operator==(const PlateDomain&) const = default;
};

inline void validate(const PlateDomain& d) {
  if (d.outer.width() <= 0.0 || d.outer.height() <= 0.0) {
    throw std::invalid_argument("domain: outer rectangle is degenerate");
  }
  if (d.hole && !intersect(*d.hole, d.outer)) {
    throw std::invalid_argument("domain: hole does not overlap the outer rectangle");
  }
  if (d.area() <= 0.0) throw std::invalid_argument("domain: empty area");
  for (const auto& c : d.clamp) {
    if (c.length() <= 0.0) throw std::invalid_argument("domain: empty clamp segment");
    const bool on_side = c.value == d.outer.lo(c.axis) || c.value == d.outer.hi(c.axis);
    const int other = 1 - c.axis;
    if (!on_side || c.lo < d.outer.lo(other) || c.hi > d.outer.hi(other)) {
      throw std::invalid_argument("domain: clamp segment is not on the boundary");
    }
  }
}

// ---------------------------------------------------------------------------
// Random streams. One master seed per run; independent consumers (training,
// testing, g1 fitting, per-thread lanes) get decorrelated streams by index.
// ---------------------------------------------------------------------------

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  static Rng stream(std::uint64_t master_seed, std::uint64_t stream_index) {
    return Rng(detail::splitmix64(master_seed ^ detail::splitmix64(stream_index + 1)));
  }

  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::mt19937_64& engine() { return gen_; }
  const std::mt19937_64& engine() const { return gen_; }

 private:
  std::mt19937_64 gen_;
};

/// Uniform i.i.d. points on the domain; holes are handled by rejection from
/// the outer rectangle.
inline std::vector<Vec2> sample_interior(const PlateDomain& d, std::size_t n, Rng& rng) {
  std::vector<Vec2> pts;
  pts.reserve(n);
  while (pts.size() < n) {
    Vec2 p{rng.uniform(d.outer.lo1, d.outer.hi1), rng.uniform(d.outer.lo2, d.outer.hi2)};
    if (d.hole && d.hole->contains_open(p)) continue;
    pts.push_back(p);
  }
  return pts;
}

enum class BoundaryPart { clamped, complement };

/// All straight segments composing the requested part of the boundary. The
/// complement subtracts the clamp segments from the outer sides and includes
/// the hole boundary when present.
inline std::vector<ClampSegment> boundary_segments(const PlateDomain& d, BoundaryPart part) {
  if (part == BoundaryPart::clamped) return d.clamp;

  std::vector<ClampSegment> sides;
  auto add_rect = [&sides](const Rect& r) {
    sides.push_back({0, r.lo1, r.lo2, r.hi2});
    sides.push_back({0, r.hi1, r.lo2, r.hi2});
    sides.push_back({1, r.lo2, r.lo1, r.hi1});
    sides.push_back({1, r.hi2, r.lo1, r.hi1});
  };
  add_rect(d.outer);
  if (d.hole) add_rect(*d.hole);

  std::vector<ClampSegment> out;
  for (const auto& side : sides) {
    std::vector<std::pair<double, double>> keep{{side.lo, side.hi}};
    for (const auto& c : d.clamp) {
      if (c.axis != side.axis || c.value != side.value) continue;
      std::vector<std::pair<double, double>> next;
      for (auto [lo, hi] : keep) {
        if (c.lo > lo) next.emplace_back(lo, std::min(hi, c.lo));
        if (c.hi < hi) next.emplace_back(std::max(lo, c.hi), hi);
      }
      keep = std::move(next);
    }
    for (auto [lo, hi] : keep) {
      if (hi - lo > 0.0) out.push_back({side.axis, side.value, lo, hi});
    }
  }
  return out;
}

/// Uniform-by-arclength points on the chosen boundary part.
inline std::vector<Vec2> sample_boundary(const PlateDomain& d, BoundaryPart part,
                                         std::size_t n, Rng& rng) {
  const auto segs = boundary_segments(d, part);
  if (segs.empty()) throw std::invalid_argument("sample_boundary: requested part is empty");
  double total = 0.0;
  std::vector<double> cum;
  cum.reserve(segs.size());
  for (const auto& s : segs) {
    total += s.length();
    cum.push_back(total);
  }
  std::vector<Vec2> pts;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rng.uniform01() * total;
    const auto it = std::lower_bound(cum.begin(), cum.end(), r);
    const std::size_t k = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        it - cum.begin(), static_cast<std::ptrdiff_t>(segs.size()) - 1));
    const double prev = k == 0 ? 0.0 : cum[k - 1];
    const double s = (r - prev) / segs[k].length();
    pts.push_back(segs[k].point(std::clamp(s, 0.0, 1.0)));
  }
  return pts;
}

struct SubdomainChain {
  std::vector<PlateDomain> domains;  // nested, last one is the full domain
};

/// Nested slabs grown from the clamped side in equal increments along the
/// axis orthogonal to the clamp line, each intersected with the domain.
/// Pre-training is undefined without a clamped boundary.
inline SubdomainChain decompose(const PlateDomain& d, int n) {
  if (d.free_boundary()) {
    throw std::invalid_argument(
        "decompose: free-boundary domain has no clamped side to grow from");
  }
  if (n < 2) throw std::invalid_argument("decompose: need at least two subdomains");

  const int axis = d.clamp.front().axis;
  const double clamp_pos = d.clamp.front().value;
  const bool from_lo = clamp_pos == d.outer.lo(axis);
  const double len = d.outer.hi(axis) - d.outer.lo(axis);

  SubdomainChain chain;
  for (int i = 1; i <= n; ++i) {
    Rect slab = d.outer;
    const double extent = len * static_cast<double>(i) / static_cast<double>(n);
    if (axis == 0) {
      if (from_lo) slab.hi1 = slab.lo1 + extent; else slab.lo1 = slab.hi1 - extent;
    } else {
      if (from_lo) slab.hi2 = slab.lo2 + extent; else slab.lo2 = slab.hi2 - extent;
    }
    PlateDomain sub;
    sub.outer = slab;
    if (d.hole) {
      if (auto cut = intersect(*d.hole, slab)) sub.hole = *cut;
    }
    sub.clamp = d.clamp;
    chain.domains.push_back(std::move(sub));
  }
  chain.domains.back() = d;
  return chain;
}

}  // namespace bilayer
