#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bilayer/tape.hpp"

namespace bilayer {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  explicit AdamState(std::size_t dim = 0) : m(dim, 0.0), v(dim, 0.0) {}

  void reset() {
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    t = 0;
  }

  /// Order-insensitive fingerprint used to assert the state is carried
  /// untouched across schedule stage boundaries.
  double checksum() const {
    double s = static_cast<double>(t);
    for (double x : m) s += x;
    for (double x : v) s += x;
    return s;
  }
};

/// Standard bias-corrected Adam update, in place.
inline void adam_step(AdamState& st, const AdamConfig& cfg, std::span<double> theta,
                      std::span<const double> grad) {
  if (st.m.size() != theta.size() || grad.size() != theta.size()) {
    throw std::invalid_argument("adam_step: dimension mismatch");
  }
  for (std::size_t k = 0; k < grad.size(); ++k) {
    if (!std::isfinite(grad[k])) {
      throw NumericError("adam_step: non-finite gradient component " + std::to_string(k) +
                         " at t=" + std::to_string(st.t + 1));
    }
  }
  st.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double g = grad[k];
    st.m[k] = cfg.beta1 * st.m[k] + (1.0 - cfg.beta1) * g;
    st.v[k] = cfg.beta2 * st.v[k] + (1.0 - cfg.beta2) * g * g;
    const double mhat = st.m[k] / c1;
    const double vhat = st.v[k] / c2;
    theta[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace bilayer
