#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bilayer {

/// Raised when a loss, gradient, or optimizer update stops being finite.
/// The message carries the step/sample context of the failure.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// One differentiable value. `id < 0` marks a constant that lives outside
/// the tape; constants fold eagerly and never allocate nodes.
struct Scalar {
  double v = 0.0;
  std::int32_t id = -1;

  Scalar() = default;
  Scalar(double value) : v(value) {}  // NOLINT: implicit by design
  Scalar(double value, std::int32_t node) : v(value), id(node) {}

  bool is_const() const { return id < 0; }
};

/// Append-only record of scalar operations (a Wengert list). Nodes store at
/// most two parents with precomputed local partials; the reverse sweep is a
/// single backward pass accumulating adjoints.
///
/// Layout is struct-of-arrays: the trainer replays millions of nodes per
/// optimizer step, so push/sweep must stay cache-linear.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Binds this tape as the active one for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_; }

  void reserve(std::size_t n) {
    val_.reserve(n);
    adj_.reserve(n);
    pa_.reserve(n);
    pb_.reserve(n);
    ia_.reserve(n);
    ib_.reserve(n);
  }

  std::size_t size() const { return val_.size(); }

  /// Independent variable. Leaves participate in the reverse sweep as
  /// adjoint sinks only.
  Scalar leaf(double v) {
    const auto id = static_cast<std::int32_t>(val_.size());
    val_.push_back(v);
    adj_.push_back(0.0);
    pa_.push_back(0.0);
    pb_.push_back(0.0);
    ia_.push_back(-1);
    ib_.push_back(-1);
    return Scalar{v, id};
  }

  Scalar push1(double v, double pa, std::int32_t ia) {
    const auto id = static_cast<std::int32_t>(val_.size());
    val_.push_back(v);
    adj_.push_back(0.0);
    pa_.push_back(pa);
    pb_.push_back(0.0);
    ia_.push_back(ia);
    ib_.push_back(-1);
    return Scalar{v, id};
  }

  Scalar push2(double v, double pa, std::int32_t ia, double pb, std::int32_t ib) {
    const auto id = static_cast<std::int32_t>(val_.size());
    val_.push_back(v);
    adj_.push_back(0.0);
    pa_.push_back(pa);
    pb_.push_back(pb);
    ia_.push_back(ia);
    ib_.push_back(ib);
    return Scalar{v, id};
  }

  /// Drops every node at or above `mark`, keeping adjoints accumulated on
  /// the surviving prefix (typically the parameter leaves).
  void rewind(std::size_t mark) {
    val_.resize(mark);
    adj_.resize(mark);
    pa_.resize(mark);
    pb_.resize(mark);
    ia_.resize(mark);
    ib_.resize(mark);
  }

  void clear() { rewind(0); }

  /// Backward sweep seeding d(root)/d(root) = 1. Visits nodes in
  /// [stop, root]; adjoint writes may land below `stop` (the leaves).
  void reverse(Scalar root, std::size_t stop = 0) {
    if (root.is_const()) return;
    adj_[static_cast<std::size_t>(root.id)] += 1.0;
    const auto lo = static_cast<std::int64_t>(stop);
    for (std::int64_t i = root.id; i >= lo; --i) {
      const double a = adj_[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const std::int32_t p = ia_[static_cast<std::size_t>(i)];
      if (p < 0) continue;
      adj_[static_cast<std::size_t>(p)] += pa_[static_cast<std::size_t>(i)] * a;
      const std::int32_t q = ib_[static_cast<std::size_t>(i)];
      if (q >= 0) adj_[static_cast<std::size_t>(q)] += pb_[static_cast<std::size_t>(i)] * a;
    }
  }

  double adjoint(Scalar s) const {
    return s.is_const() ? 0.0 : adj_[static_cast<std::size_t>(s.id)];
  }

  void zero_adjoint(Scalar s) {
    if (!s.is_const()) adj_[static_cast<std::size_t>(s.id)] = 0.0;
  }

 private:
  static thread_local Tape* active_;

  std::vector<double> val_;
  std::vector<double> adj_;
  std::vector<double> pa_;
  std::vector<double> pb_;
  std::vector<std::int32_t> ia_;
  std::vector<std::int32_t> ib_;
};

inline thread_local Tape* Tape::active_ = nullptr;

inline Scalar operator+(Scalar a, Scalar b) {
  if (a.is_const() && b.is_const()) return Scalar{a.v + b.v};
  if (a.is_const()) {
    if (a.v == 0.0) return b;
    return Tape::active()->push1(a.v + b.v, 1.0, b.id);
  }
  if (b.is_const()) {
    if (b.v == 0.0) return a;
    return Tape::active()->push1(a.v + b.v, 1.0, a.id);
  }
  return Tape::active()->push2(a.v + b.v, 1.0, a.id, 1.0, b.id);
}

inline Scalar operator-(Scalar a) {
  if (a.is_const()) return Scalar{-a.v};
  return Tape::active()->push1(-a.v, -1.0, a.id);
}

inline Scalar operator-(Scalar a, Scalar b) {
  if (a.is_const() && b.is_const()) return Scalar{a.v - b.v};
  if (a.is_const()) {
    if (a.v == 0.0) return -b;
    return Tape::active()->push1(a.v - b.v, -1.0, b.id);
  }
  if (b.is_const()) {
    if (b.v == 0.0) return a;
    return Tape::active()->push1(a.v - b.v, 1.0, a.id);
  }
  return Tape::active()->push2(a.v - b.v, 1.0, a.id, -1.0, b.id);
}

inline Scalar operator*(Scalar a, Scalar b) {
  if (a.is_const() && b.is_const()) return Scalar{a.v * b.v};
  if (a.is_const()) {
    if (a.v == 0.0) return Scalar{0.0};
    if (a.v == 1.0) return b;
    return Tape::active()->push1(a.v * b.v, a.v, b.id);
  }
  if (b.is_const()) {
    if (b.v == 0.0) return Scalar{0.0};
    if (b.v == 1.0) return a;
    return Tape::active()->push1(a.v * b.v, b.v, a.id);
  }
  return Tape::active()->push2(a.v * b.v, b.v, a.id, a.v, b.id);
}

inline Scalar operator/(Scalar a, Scalar b) {
  if (a.is_const() && b.is_const()) return Scalar{a.v / b.v};
  if (a.is_const()) {
    const double q = a.v / b.v;
    return Tape::active()->push1(q, -q / b.v, b.id);
  }
  if (b.is_const()) return a * Scalar{1.0 / b.v};
  const double q = a.v / b.v;
  return Tape::active()->push2(q, 1.0 / b.v, a.id, -q / b.v, b.id);
}

inline Scalar& operator+=(Scalar& a, Scalar b) { return a = a + b; }
inline Scalar& operator-=(Scalar& a, Scalar b) { return a = a - b; }
inline Scalar& operator*=(Scalar& a, Scalar b) { return a = a * b; }

inline Scalar tanh(Scalar a) {
  const double t = std::tanh(a.v);
  if (a.is_const()) return Scalar{t};
  return Tape::active()->push1(t, 1.0 - t * t, a.id);
}

inline Scalar sqrt(Scalar a) {
  const double s = std::sqrt(a.v);
  if (a.is_const()) return Scalar{s};
  return Tape::active()->push1(s, 0.5 / s, a.id);
}

inline Scalar sqr(Scalar a) { return a * a; }

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Evaluates `build(leaves)` on a fresh tape with one leaf per parameter and
/// returns the loss with its full parameter gradient. The tape lives only
/// for the duration of the call.
template <class Builder>
LossGrad loss_gradient(std::span<const double> theta, Builder&& build,
                       const std::string& context = {}) {
  Tape tape;
  tape.reserve(theta.size() * 2 + 1024);
  Tape::Scope scope(tape);
  std::vector<Scalar> leaves;
  leaves.reserve(theta.size());
  for (double v : theta) leaves.push_back(tape.leaf(v));
  const Scalar loss = build(std::span<const Scalar>(leaves));
  if (!std::isfinite(loss.v)) {
    throw NumericError("non-finite loss" + (context.empty() ? "" : " (" + context + ")"));
  }
  tape.reverse(loss);
  LossGrad out;
  out.loss = loss.v;
  out.grad.resize(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) out.grad[k] = tape.adjoint(leaves[k]);
  return out;
}

inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Sum of per-item losses and its parameter gradient. Items are recorded as
/// short tape segments (parameters stay as shared leaves), reverse-swept one
/// at a time, and partitioned into `lanes` contiguous chunks. Lane results
/// are combined in lane order, so the float summation order depends only on
/// the lane count, never on thread scheduling.
///
/// per_item(leaves, index, lane) must return the item's taped loss.
template <class PerItem>
LossGrad sum_gradient(std::span<const double> theta, std::size_t n, int lanes,
                      PerItem&& per_item) {
  lanes = std::max(1, std::min<int>(resolve_threads(lanes),
                                    static_cast<int>(n == 0 ? 1 : n)));
  std::vector<double> lane_total(static_cast<std::size_t>(lanes), 0.0);
  std::vector<std::vector<double>> lane_grad(static_cast<std::size_t>(lanes));
  std::vector<std::exception_ptr> lane_error(static_cast<std::size_t>(lanes));

  auto work = [&](int lane) {
    try {
      Tape tape;
      tape.reserve(theta.size() + (1u << 16));
      Tape::Scope scope(tape);
      std::vector<Scalar> leaves;
      leaves.reserve(theta.size());
      for (double v : theta) leaves.push_back(tape.leaf(v));
      const std::size_t lo = n * static_cast<std::size_t>(lane) / static_cast<std::size_t>(lanes);
      const std::size_t hi =
          n * (static_cast<std::size_t>(lane) + 1) / static_cast<std::size_t>(lanes);
      const std::size_t mark = tape.size();
      double total = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const Scalar s = per_item(std::span<const Scalar>(leaves), i, lane);
        if (!std::isfinite(s.v)) {
          throw NumericError("non-finite loss contribution at item " + std::to_string(i));
        }
        total += s.v;
        tape.reverse(s, mark);
        tape.rewind(mark);
      }
      lane_total[static_cast<std::size_t>(lane)] = total;
      auto& g = lane_grad[static_cast<std::size_t>(lane)];
      g.resize(theta.size());
      for (std::size_t k = 0; k < theta.size(); ++k) g[k] = tape.adjoint(leaves[k]);
    } catch (...) {
      lane_error[static_cast<std::size_t>(lane)] = std::current_exception();
    }
  };

  if (lanes == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(lanes) - 1);
    for (int lane = 1; lane < lanes; ++lane) pool.emplace_back(work, lane);
    work(0);
    for (auto& th : pool) th.join();
  }

  for (int lane = 0; lane < lanes; ++lane) {
    if (lane_error[static_cast<std::size_t>(lane)]) {
      std::rethrow_exception(lane_error[static_cast<std::size_t>(lane)]);
    }
  }

  LossGrad out;
  out.grad.assign(theta.size(), 0.0);
  for (int lane = 0; lane < lanes; ++lane) {
    out.loss += lane_total[static_cast<std::size_t>(lane)];
    const auto& g = lane_grad[static_cast<std::size_t>(lane)];
    for (std::size_t k = 0; k < theta.size(); ++k) out.grad[k] += g[k];
  }
  return out;
}

}  // namespace bilayer
