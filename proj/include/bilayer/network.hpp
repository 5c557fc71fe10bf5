#pragma once

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bilayer/jet.hpp"
#include "bilayer/tape.hpp"

namespace bilayer {

/// Residual MLP: dense input layer, `blocks` residual blocks of two dense
/// tanh layers each, dense linear output layer. Width is shared by every
/// hidden layer.
struct Architecture {
  int blocks = 5;
  int width = 10;
  int input_dim = 2;
  int output_dim = 3;

  bool operator==(const Architecture&) const = default;
};

inline std::int64_t param_count(const Architecture& a) {
  const std::int64_t m = a.width;
  return (a.input_dim + 1) * m + 2LL * a.blocks * (m + 1) * m + (m + 1) * a.output_dim;
}

inline std::int64_t weight_count(const Architecture& a) {
  const std::int64_t m = a.width;
  return a.input_dim * m + 2LL * a.blocks * m * m + m * a.output_dim;
}

struct NetworkParameters {
  Architecture arch;
  std::vector<double> theta;
  std::uint64_t seed = 0;
};

namespace detail {

inline double uniform01(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline double glorot_draw(std::mt19937_64& gen, int fan_in, int fan_out) {
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return r * (2.0 * uniform01(gen) - 1.0);
}

}  // namespace detail

/// Glorot-uniform weights (row-major, layer by layer), zero biases. The same
/// seed reproduces the same vector on any platform.
inline NetworkParameters init_params(const Architecture& arch, std::uint64_t seed) {
  NetworkParameters p;
  p.arch = arch;
  p.seed = seed;
  p.theta.reserve(static_cast<std::size_t>(param_count(arch)));
  std::mt19937_64 gen(seed);
  const int m = arch.width;

  auto dense = [&](int fan_in, int fan_out) {
    for (int i = 0; i < fan_out * fan_in; ++i) {
      p.theta.push_back(detail::glorot_draw(gen, fan_in, fan_out));
    }
    for (int i = 0; i < fan_out; ++i) p.theta.push_back(0.0);
  };

  dense(arch.input_dim, m);
  for (int b = 0; b < arch.blocks; ++b) {
    dense(m, m);
    dense(m, m);
  }
  dense(m, arch.output_dim);
  return p;
}

/// Scratch buffers so the per-sample forward pass allocates nothing.
template <class S>
struct Workspace {
  std::vector<Jet2<S>> h;
  std::vector<Jet2<S>> t1;
  std::vector<Jet2<S>> t2;

  void resize(int width) {
    h.assign(static_cast<std::size_t>(width), Jet2<S>{});
    t1.assign(static_cast<std::size_t>(width), Jet2<S>{});
    t2.assign(static_cast<std::size_t>(width), Jet2<S>{});
  }
};

namespace detail {

/// out[j] = act(W @ in + b) for a dense layer stored at theta[off...],
/// weights row-major then biases. Weights are spatial constants, so each
/// term is a plain jet scale. `in` and `out` must not alias.
template <class S, class A, bool Activate>
std::size_t dense_layer(std::span<const S> theta, std::size_t off,
                        std::span<const Jet2<A>> in, std::span<Jet2<S>> out) {
  const std::size_t fan_in = in.size();
  const std::size_t fan_out = out.size();
  const std::size_t bias = off + fan_in * fan_out;
  for (std::size_t j = 0; j < fan_out; ++j) {
    Jet2<S> acc;
    const std::size_t row = off + j * fan_in;
    for (std::size_t k = 0; k < fan_in; ++k) axpy(theta[row + k], in[k], acc);
    acc.v = acc.v + theta[bias + j];
    if constexpr (Activate) {
      out[j] = tanh(acc);
    } else {
      out[j] = acc;
    }
  }
  return bias + fan_out;
}

}  // namespace detail

/// Evaluates the network at one point carrying first and second spatial
/// derivatives. S = double gives plain inference; S = Scalar records the
/// active tape for parameter gradients.
template <class S>
void forward(const Architecture& arch, std::span<const S> theta,
             const std::array<DJet, 2>& x, std::span<Jet2<S>> out, Workspace<S>& ws) {
  const int m = arch.width;
  if (static_cast<std::int64_t>(theta.size()) != param_count(arch)) {
    throw std::invalid_argument("forward: parameter vector does not match architecture");
  }
  if (static_cast<int>(out.size()) != arch.output_dim) {
    throw std::invalid_argument("forward: output span size mismatch");
  }
  if (static_cast<int>(ws.h.size()) != m) ws.resize(m);

  std::span<Jet2<S>> h(ws.h);
  std::span<Jet2<S>> t1(ws.t1);
  std::span<Jet2<S>> t2(ws.t2);

  std::size_t off = detail::dense_layer<S, double, true>(
      theta, 0, std::span<const DJet>(x.data(), 2), h);

  for (int b = 0; b < arch.blocks; ++b) {
    off = detail::dense_layer<S, S, true>(theta, off, {h.data(), h.size()}, t1);
    off = detail::dense_layer<S, S, true>(theta, off, {t1.data(), t1.size()}, t2);
    for (int j = 0; j < m; ++j) h[j] = h[j] + t2[j];
  }

  detail::dense_layer<S, S, false>(theta, off, {h.data(), h.size()}, out);
}

/// Convenience overload for plain (untaped) evaluation.
inline std::vector<DJet> forward(const NetworkParameters& p, const std::array<DJet, 2>& x) {
  Workspace<double> ws;
  std::vector<DJet> out(static_cast<std::size_t>(p.arch.output_dim));
  forward<double>(p.arch, p.theta, x, out, ws);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: one header line `arch <blocks> <width> <P> <seed>`
// (g1 networks append ` role=g1`), then P decimal reals, one per line,
// printed with enough digits to round-trip bit-exactly.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::filesystem::path& path, const NetworkParameters& p,
                            const std::string& role = {}) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  std::fprintf(f, "arch %d %d %" PRId64 " %llu", p.arch.blocks, p.arch.width,
               param_count(p.arch), static_cast<unsigned long long>(p.seed));
  if (!role.empty()) std::fprintf(f, " role=%s", role.c_str());
  std::fputc('\n', f);
  for (double v : p.theta) std::fprintf(f, "%.17g\n", v);
  std::fclose(f);
}

struct Checkpoint {
  NetworkParameters params;
  std::string role;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "r");
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  Checkpoint ck;
  long long blocks = 0, width = 0, pcount = 0;
  unsigned long long seed = 0;
  char tag[16] = {0};
  if (std::fscanf(f, "%15s %lld %lld %lld %llu", tag, &blocks, &width, &pcount, &seed) != 5 ||
      std::string(tag) != "arch") {
    std::fclose(f);
    throw std::runtime_error("malformed checkpoint header: " + path.string());
  }
  int c = std::fgetc(f);
  std::string rest;
  while (c != '\n' && c != EOF) {
    rest.push_back(static_cast<char>(c));
    c = std::fgetc(f);
  }
  if (rest.find("role=") != std::string::npos) {
    ck.role = rest.substr(rest.find("role=") + 5);
    while (!ck.role.empty() && (ck.role.back() == ' ' || ck.role.back() == '\r')) {
      ck.role.pop_back();
    }
  }

  Architecture a;
  a.blocks = static_cast<int>(blocks);
  a.width = static_cast<int>(width);
  const long long m = width;
  const long long block_params = 2LL * blocks * (m + 1) * m;
  const long long rem = pcount - (a.input_dim + 1) * m - block_params;
  if (m <= 0 || blocks < 0 || rem <= 0 || rem % (m + 1) != 0) {
    std::fclose(f);
    throw std::runtime_error("checkpoint header inconsistent with any architecture: " +
                             path.string());
  }
  a.output_dim = static_cast<int>(rem / (m + 1));

  ck.params.arch = a;
  ck.params.seed = seed;
  ck.params.theta.resize(static_cast<std::size_t>(pcount));
  for (long long i = 0; i < pcount; ++i) {
    if (std::fscanf(f, "%lf", &ck.params.theta[static_cast<std::size_t>(i)]) != 1) {
      std::fclose(f);
      throw std::runtime_error("checkpoint truncated: " + path.string());
    }
  }
  std::fclose(f);
  return ck;
}

}  // namespace bilayer
