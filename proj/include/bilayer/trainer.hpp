#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bilayer/energy.hpp"
#include "bilayer/geometry.hpp"
#include "bilayer/network.hpp"
#include "bilayer/optimizer.hpp"

namespace bilayer {

struct Schedule {
  int pretrain_n = 0;             // < 2 disables pre-training
  long long epoch_pre = 50000;    // iterations per pre-training subdomain
  long long epochs = 1000000;     // iterations on the full domain
  long long batch = 0;            // 0: round(16 * |Omega|)
  std::uint64_t seed = 1;
  long long metrics_every = 100;
  long long checkpoint_every = 10000;
  int threads = 1;                // 0: hardware concurrency
  bool adam_carry = true;         // keep optimizer moments across stages

  std::optional<SubdomainChain> chain;  // built from pretrain_n when absent

  bool operator==(const Schedule& o) const {
    return pretrain_n == o.pretrain_n && epoch_pre == o.epoch_pre && epochs == o.epochs &&
           batch == o.batch && seed == o.seed && metrics_every == o.metrics_every &&
           checkpoint_every == o.checkpoint_every && threads == o.threads &&
           adam_carry == o.adam_carry;
  }
};

inline long long resolve_batch(const Schedule& s, const PlateDomain& full_domain) {
  return s.batch > 0 ? s.batch : std::llround(16.0 * full_domain.area());
}

struct MetricsRow {
  long long step = 0;
  double energy = 0.0;
  double tolerance = 0.0;  // C, not squared
  double istar = 0.0;
  double elapsed_s = 0.0;
  std::string phase = "train";
  double e_l2 = std::numeric_limits<double>::quiet_NaN();
  std::string shape;
};

/// CSV sink with an in-memory copy of every row. Values round-trip through
/// the file bit-exactly; elapsed_s is wall-clock and is the one column that
/// legitimately differs between reruns.
class MetricsLog {
 public:
  MetricsLog() = default;

  explicit MetricsLog(const std::filesystem::path& path, bool append = false) {
    file_ = std::fopen(path.string().c_str(), append ? "a" : "w");
    if (!file_) throw std::runtime_error("cannot open metrics file: " + path.string());
    if (!append) {
      std::fprintf(file_, "step,E,C,Istar,elapsed_s,phase,e_L2,shape\n");
      std::fflush(file_);
    }
  }

  MetricsLog(const MetricsLog&) = delete;
  MetricsLog& operator=(const MetricsLog&) = delete;
  MetricsLog(MetricsLog&& o) noexcept : rows(std::move(o.rows)), file_(o.file_) {
    o.file_ = nullptr;
  }
  ~MetricsLog() {
    if (file_) std::fclose(file_);
  }

  void append(const MetricsRow& r) {
    rows.push_back(r);
    if (!file_) return;
    std::fprintf(file_, "%lld,%.17g,%.17g,%.17g,%.3f,%s,", r.step, r.energy, r.tolerance,
                 r.istar, r.elapsed_s, r.phase.c_str());
    if (std::isfinite(r.e_l2)) std::fprintf(file_, "%.17g", r.e_l2);
    std::fprintf(file_, ",%s\n", r.shape.c_str());
    std::fflush(file_);
  }

  std::vector<MetricsRow> rows;

 private:
  std::FILE* file_ = nullptr;
};

struct TrainHooks {
  // Called with every sampled batch before it is used (stage 0 = main phase,
  // 1..n-1 = pre-training stages).
  std::function<void(int stage, std::span<const Vec2>)> on_batch;
  // Called after every completed step; checkpoint/export cadences live in
  // the caller.
  std::function<void(long long step)> on_step;
  // Called when a step fails numerically, before the error propagates; the
  // parameters still hold the last good values.
  std::function<void(long long step)> on_numeric_failure;
};

/// Mutable state of one optimization run, bundled so schedules can be
/// suspended and resumed.
struct TrainerContext {
  NetworkParameters params;
  AdamState adam;
  AdamConfig adam_cfg;
  Rng train_rng;
  long long global_step = 0;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  TrainerContext(NetworkParameters p, std::uint64_t seed)
      : params(std::move(p)), adam(params.theta.size()), train_rng(Rng::stream(seed, 1)) {}

  double elapsed_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
};

/// Runs `epochs` iterations of sample -> loss/gradient -> Adam on one
/// (sub)domain, appending metrics at the configured cadence.
inline void train_on_domain(TrainerContext& ctx, const PlateDomain& domain,
                            const BoundaryLift& lift, const EnergyConfig& cfg,
                            const Schedule& sched, long long epochs, long long batch_n,
                            int stage, MetricsLog& metrics, const TrainHooks& hooks = {}) {
  for (long long e = 0; e < epochs; ++e) {
    const auto batch = sample_interior(domain, static_cast<std::size_t>(batch_n), ctx.train_rng);
    if (hooks.on_batch) hooks.on_batch(stage, batch);
    try {
      const BatchLossResult r =
          batch_loss_gradient(ctx.params, lift, batch, cfg, domain, sched.threads);
      adam_step(ctx.adam, ctx.adam_cfg, ctx.params.theta, r.grad);
      ctx.global_step += 1;
      if (sched.metrics_every > 0 && ctx.global_step % sched.metrics_every == 0) {
        MetricsRow row;
        row.step = ctx.global_step;
        row.energy = r.energy;
        row.tolerance = std::sqrt(std::max(0.0, r.defect_sq));
        row.istar = r.istar;
        row.elapsed_s = ctx.elapsed_s();
        metrics.append(row);
      }
      if (hooks.on_step) hooks.on_step(ctx.global_step);
    } catch (const NumericError& err) {
      if (hooks.on_numeric_failure) hooks.on_numeric_failure(ctx.global_step);
      throw NumericError(std::string(err.what()) + " [step " +
                         std::to_string(ctx.global_step + 1) + "]");
    }
  }
}

/// Pre-training curriculum: the chain's subdomains in order for epoch_pre
/// iterations each, then the full domain. Resumes cleanly from whatever
/// ctx.global_step already accounts for.
inline void run_schedule(TrainerContext& ctx, const PlateDomain& domain,
                         const BoundaryLift& lift, const EnergyConfig& cfg, Schedule sched,
                         MetricsLog& metrics, const TrainHooks& hooks = {}) {
  const long long batch_n = resolve_batch(sched, domain);

  struct Stage {
    PlateDomain domain;
    long long epochs;
    int index;
  };
  std::vector<Stage> stages;
  if (sched.pretrain_n >= 2) {
    if (!sched.chain) sched.chain = decompose(domain, sched.pretrain_n);
    const auto& doms = sched.chain->domains;
    for (std::size_t i = 0; i + 1 < doms.size(); ++i) {
      stages.push_back({doms[i], sched.epoch_pre, static_cast<int>(i) + 1});
    }
  }
  stages.push_back({domain, sched.epochs, 0});

  long long done = ctx.global_step;
  for (const auto& st : stages) {
    const long long skip = std::min(done, st.epochs);
    done -= skip;
    const long long remaining = st.epochs - skip;
    if (remaining <= 0) continue;
    if (!sched.adam_carry && skip == 0 && st.index != 1 && ctx.global_step > 0) {
      ctx.adam.reset();
    }
    train_on_domain(ctx, st.domain, lift, cfg, sched, remaining, batch_n, st.index, metrics,
                    hooks);
  }
}

// ---------------------------------------------------------------------------
// Optimizer/RNG sidecar state, needed to resume a run bit-exactly.
// ---------------------------------------------------------------------------

inline void save_trainer_state(const std::filesystem::path& path, const TrainerContext& ctx) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw std::runtime_error("cannot open state file for writing: " + path.string());
  std::fprintf(f, "state %lld %lld\n", ctx.global_step, static_cast<long long>(ctx.adam.t));
  for (std::size_t k = 0; k < ctx.adam.m.size(); ++k) {
    std::fprintf(f, "%.17g %.17g\n", ctx.adam.m[k], ctx.adam.v[k]);
  }
  std::ostringstream engine;
  engine << ctx.train_rng.engine();
  std::fprintf(f, "rng %s\n", engine.str().c_str());
  std::fclose(f);
}

inline void load_trainer_state(const std::filesystem::path& path, TrainerContext& ctx) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open state file: " + path.string());
  std::string tag;
  long long step = 0, t = 0;
  in >> tag >> step >> t;
  if (tag != "state") throw std::runtime_error("malformed state file: " + path.string());
  ctx.global_step = step;
  ctx.adam.t = t;
  for (std::size_t k = 0; k < ctx.adam.m.size(); ++k) in >> ctx.adam.m[k] >> ctx.adam.v[k];
  in >> tag;
  if (tag != "rng") throw std::runtime_error("malformed state file (rng): " + path.string());
  in >> ctx.train_rng.engine();
  if (!in) throw std::runtime_error("state file truncated: " + path.string());
}

}  // namespace bilayer
