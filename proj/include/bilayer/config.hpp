#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bilayer/boundary.hpp"
#include "bilayer/energy.hpp"
#include "bilayer/evaluation.hpp"
#include "bilayer/geometry.hpp"
#include "bilayer/network.hpp"
#include "bilayer/trainer.hpp"

namespace bilayer {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Everything one experiment needs, mirroring the sections of the config
/// file format (see serialize_config for the canonical layout).
struct ExperimentConfig {
  PlateDomain domain;

  Mat2 Z{};
  double beta = 500.0;
  Formulation formulation = Formulation::original;
  std::array<double, 3> source{0.0, 0.0, 0.0};

  Architecture arch{};

  LiftKind lift_kind = LiftKind::edge;
  AffineField g1_target{};
  long long g1_steps = 50000;
  int g1_batch = 64;
  std::string g1_checkpoint;

  Schedule schedule{};

  std::uint64_t test_seed = 424242;
  long long test_samples = 0;  // 0: round(1e4 * |Omega|)
  std::optional<double> reference_alpha;
  ShapeThresholds thresholds{};

  std::string output_dir = "runs/experiment";
  long long export_every = 10000;
  int export_nx = 101;
  int export_ny = 41;

  bool operator==(const ExperimentConfig& o) const {
    return domain == o.domain && Z == o.Z && beta == o.beta && formulation == o.formulation &&
           source == o.source && arch == o.arch && lift_kind == o.lift_kind &&
           g1_target == o.g1_target && g1_steps == o.g1_steps && g1_batch == o.g1_batch &&
           g1_checkpoint == o.g1_checkpoint && schedule == o.schedule &&
           test_seed == o.test_seed && test_samples == o.test_samples &&
           reference_alpha == o.reference_alpha &&
           thresholds.e_l2 == o.thresholds.e_l2 &&
           thresholds.energy_rel == o.thresholds.energy_rel &&
           output_dir == o.output_dir && export_every == o.export_every &&
           export_nx == o.export_nx && export_ny == o.export_ny;
  }

  EnergyConfig energy_config() const {
    EnergyConfig cfg;
    cfg.Z = Z;
    cfg.beta = beta;
    cfg.formulation = formulation;
    if (source != std::array<double, 3>{0.0, 0.0, 0.0}) {
      const std::array<double, 3> f = source;
      cfg.source = [f](Vec2) { return f; };
    }
    return cfg;
  }
};

namespace detail {

/// Numbers accept an exact-rational form "p/q" so domain bounds like 10/3
/// survive the config file without decimal truncation.
inline double parse_number(const std::string& tok, const std::string& where) {
  const auto slash = tok.find('/');
  auto parse_plain = [&where](const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw ConfigError(where + ": expected a number, got '" + s + "'");
    }
    if (pos != s.size()) throw ConfigError(where + ": expected a number, got '" + s + "'");
    return v;
  };
  if (slash == std::string::npos) return parse_plain(tok);
  return parse_plain(tok.substr(0, slash)) / parse_plain(tok.substr(slash + 1));
}

inline long long parse_int(const std::string& tok, const std::string& where) {
  const double v = parse_number(tok, where);
  const long long n = std::llround(v);
  if (static_cast<double>(n) != v) throw ConfigError(where + ": expected an integer");
  return n;
}

inline bool parse_bool(const std::string& tok, const std::string& where) {
  if (tok == "true" || tok == "1") return true;
  if (tok == "false" || tok == "0") return false;
  throw ConfigError(where + ": expected true/false");
}

inline int parse_axis(const std::string& tok, const std::string& where) {
  if (tok == "x1") return 0;
  if (tok == "x2") return 1;
  throw ConfigError(where + ": expected axis x1 or x2");
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Parses the flat key-value format. Unknown sections or keys are rejected
/// with the offending line number.
inline ExperimentConfig parse_config(std::istream& in, const std::string& name = "config") {
  ExperimentConfig c;
  std::string section;
  std::string line;
  int lineno = 0;
  bool saw_outer = false;

  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;

    if (first.front() == '[') {
      if (first.back() != ']') throw ConfigError(where + ": malformed section header");
      section = first.substr(1, first.size() - 2);
      if (section != "domain" && section != "energy" && section != "network" &&
          section != "lift" && section != "schedule" && section != "test" &&
          section != "output") {
        throw ConfigError(where + ": unknown section [" + section + "]");
      }
      continue;
    }

    std::string eq;
    if (!(ls >> eq) || eq != "=") throw ConfigError(where + ": expected 'key = value'");
    std::vector<std::string> toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    const std::string& key = first;
    auto want = [&](std::size_t n) {
      if (toks.size() != n) {
        throw ConfigError(where + ": key '" + key + "' takes " + std::to_string(n) +
                          " value(s)");
      }
    };
    auto num = [&](std::size_t i) { return detail::parse_number(toks[i], where); };

    if (section == "domain") {
      if (key == "outer") {
        want(4);
        c.domain.outer = {num(0), num(1), num(2), num(3)};
        saw_outer = true;
      } else if (key == "hole") {
        want(4);
        c.domain.hole = Rect{num(0), num(1), num(2), num(3)};
      } else if (key == "clamp") {
        want(4);
        c.domain.clamp.push_back(
            {detail::parse_axis(toks[0], where), num(1), num(2), num(3)});
      } else {
        throw ConfigError(where + ": unknown key '" + key + "' in [domain]");
      }
    } else if (section == "energy") {
      if (key == "Z") {
        want(4);
        c.Z = {num(0), num(1), num(2), num(3)};
      } else if (key == "beta") {
        want(1);
        c.beta = num(0);
      } else if (key == "formulation") {
        want(1);
        if (toks[0] == "I") c.formulation = Formulation::original;
        else if (toks[0] == "Itilde") c.formulation = Formulation::reshaped;
        else throw ConfigError(where + ": formulation must be I or Itilde");
      } else if (key == "f") {
        want(3);
        c.source = {num(0), num(1), num(2)};
      } else {
        throw ConfigError(where + ": unknown key '" + key + "' in [energy]");
      }
    } else if (section == "network") {
      if (key == "blocks") {
        want(1);
        c.arch.blocks = static_cast<int>(detail::parse_int(toks[0], where));
      } else if (key == "width") {
        want(1);
        c.arch.width = static_cast<int>(detail::parse_int(toks[0], where));
      } else {
        throw ConfigError(where + ": unknown key '" + key + "' in [network]");
      }
    } else if (section == "lift") {
      if (key == "kind") {
        want(1);
        if (toks[0] == "edge") c.lift_kind = LiftKind::edge;
        else if (toks[0] == "trained") c.lift_kind = LiftKind::trained;
        else if (toks[0] == "free") c.lift_kind = LiftKind::free_boundary;
        else throw ConfigError(where + ": lift kind must be edge, trained, or free");
      } else if (key == "g1_target") {
        want(3);
        c.g1_target = {num(0), num(1), num(2)};
      } else if (key == "g1_steps") {
        want(1);
        c.g1_steps = detail::parse_int(toks[0], where);
      } else if (key == "g1_batch") {
        want(1);
        c.g1_batch = static_cast<int>(detail::parse_int(toks[0], where));
      } else if (key == "g1_checkpoint") {
        want(1);
        c.g1_checkpoint = toks[0];
      } else {
        throw ConfigError(where + ": unknown key '" + key + "' in [lift]");
      }
    } else if (section == "schedule") {
      if (key == "pretrain") {
        want(1);
        c.schedule.pretrain_n = static_cast<int>(detail::parse_int(toks[0], where));
      } else if (key == "epoch_pre") {
        want(1);
        c.schedule.epoch_pre = detail::parse_int(toks[0], where);
      } else if (key == "epochs") {
        want(1);
        c.schedule.epochs = detail::parse_int(toks[0], where);
      } else if (key == "batch") {
        want(1);
        c.schedule.batch = detail::parse_int(toks[0], where);
      } else if (key == "seed") {
        want(1);
        c.schedule.seed = static_cast<std::uint64_t>(detail::parse_int(toks[0], where));
      } else if (key == "metrics_every") {
        want(1);
        c.schedule.metrics_every = detail::parse_int(toks[0], where);
      } else if (key == "checkpoint_every") {
        want(1);
        c.schedule.checkpoint_every = detail::parse_int(toks[0], where);
      } else if (key == "threads") {
        want(1);
        c.schedule.threads = static_cast<int>(detail::parse_int(toks[0], where));
      } else if (key == "adam_carry") {
        want(1);
        c.schedule.adam_carry = detail::parse_bool(toks[0], where);
      } else {
        throw ConfigError(where + ": unknown key '" + key + "' in [schedule]");
      }
    } else if (section == "test") {
      if (key == "seed") {
        want(1);
        c.test_seed = static_cast<std::uint64_t>(detail::parse_int(toks[0], where));
      } else if (key == "samples") {
        want(1);
        c.test_samples = detail::parse_int(toks[0], where);
      } else if (key == "reference") {
        if (toks.size() == 1 && toks[0] == "none") {
          c.reference_alpha.reset();
        } else if (toks.size() == 2 && toks[0] == "cylinder") {
          c.reference_alpha = num(1);
        } else {
          throw ConfigError(where + ": reference must be 'none' or 'cylinder <alpha>'");
        }
      } else if (key == "e_l2_threshold") {
        want(1);
        c.thresholds.e_l2 = num(0);
      } else if (key == "energy_threshold") {
        want(1);
        c.thresholds.energy_rel = num(0);
      } else {
        throw ConfigError(where + ": unknown key '" + key + "' in [test]");
      }
    } else if (section == "output") {
      if (key == "dir") {
        want(1);
        c.output_dir = toks[0];
      } else if (key == "export_every") {
        want(1);
        c.export_every = detail::parse_int(toks[0], where);
      } else if (key == "export_resolution") {
        want(2);
        c.export_nx = static_cast<int>(detail::parse_int(toks[0], where));
        c.export_ny = static_cast<int>(detail::parse_int(toks[1], where));
      } else {
        throw ConfigError(where + ": unknown key '" + key + "' in [output]");
      }
    } else {
      throw ConfigError(where + ": key '" + key + "' outside any section");
    }
  }

  if (!saw_outer) throw ConfigError(name + ": missing required key 'outer' in [domain]");
  try {
    validate(c.domain);
    EnergyConfig e = c.energy_config();
    validate(e);
  } catch (const std::invalid_argument& err) {
    throw ConfigError(name + ": " + err.what());
  }
  if (c.lift_kind == LiftKind::free_boundary && !c.domain.clamp.empty()) {
    throw ConfigError(name + ": free lift with clamp segments present");
  }
  if (c.lift_kind != LiftKind::free_boundary && c.domain.clamp.empty()) {
    throw ConfigError(name + ": clamped lift but no clamp segments");
  }
  if (c.arch.blocks < 1 || c.arch.width < 1) {
    throw ConfigError(name + ": network blocks and width must be positive");
  }
  return c;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config(in, path);
}

inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::fmt;
  std::ostringstream out;
  out << "[domain]\n";
  out << "outer = " << fmt(c.domain.outer.lo1) << ' ' << fmt(c.domain.outer.hi1) << ' '
      << fmt(c.domain.outer.lo2) << ' ' << fmt(c.domain.outer.hi2) << '\n';
  if (c.domain.hole) {
    out << "hole = " << fmt(c.domain.hole->lo1) << ' ' << fmt(c.domain.hole->hi1) << ' '
        << fmt(c.domain.hole->lo2) << ' ' << fmt(c.domain.hole->hi2) << '\n';
  }
  for (const auto& seg : c.domain.clamp) {
    out << "clamp = " << (seg.axis == 0 ? "x1" : "x2") << ' ' << fmt(seg.value) << ' '
        << fmt(seg.lo) << ' ' << fmt(seg.hi) << '\n';
  }
  out << "\n[energy]\n";
  out << "Z = " << fmt(c.Z.a11) << ' ' << fmt(c.Z.a12) << ' ' << fmt(c.Z.a21) << ' '
      << fmt(c.Z.a22) << '\n';
  out << "beta = " << fmt(c.beta) << '\n';
  out << "formulation = " << (c.formulation == Formulation::original ? "I" : "Itilde") << '\n';
  if (c.source != std::array<double, 3>{0.0, 0.0, 0.0}) {
    out << "f = " << fmt(c.source[0]) << ' ' << fmt(c.source[1]) << ' ' << fmt(c.source[2])
        << '\n';
  }
  out << "\n[network]\n";
  out << "blocks = " << c.arch.blocks << '\n';
  out << "width = " << c.arch.width << '\n';
  out << "\n[lift]\n";
  out << "kind = "
      << (c.lift_kind == LiftKind::edge
              ? "edge"
              : (c.lift_kind == LiftKind::trained ? "trained" : "free"))
      << '\n';
  if (c.lift_kind == LiftKind::trained) {
    out << "g1_target = " << fmt(c.g1_target.c0) << ' ' << fmt(c.g1_target.c1) << ' '
        << fmt(c.g1_target.c2) << '\n';
    out << "g1_steps = " << c.g1_steps << '\n';
    out << "g1_batch = " << c.g1_batch << '\n';
    if (!c.g1_checkpoint.empty()) out << "g1_checkpoint = " << c.g1_checkpoint << '\n';
  }
  out << "\n[schedule]\n";
  out << "pretrain = " << c.schedule.pretrain_n << '\n';
  out << "epoch_pre = " << c.schedule.epoch_pre << '\n';
  out << "epochs = " << c.schedule.epochs << '\n';
  out << "batch = " << c.schedule.batch << '\n';
  out << "seed = " << c.schedule.seed << '\n';
  out << "metrics_every = " << c.schedule.metrics_every << '\n';
  out << "checkpoint_every = " << c.schedule.checkpoint_every << '\n';
  out << "threads = " << c.schedule.threads << '\n';
  out << "adam_carry = " << (c.schedule.adam_carry ? "true" : "false") << '\n';
  out << "\n[test]\n";
  out << "seed = " << c.test_seed << '\n';
  out << "samples = " << c.test_samples << '\n';
  if (c.reference_alpha) {
    out << "reference = cylinder " << fmt(*c.reference_alpha) << '\n';
  } else {
    out << "reference = none\n";
  }
  out << "e_l2_threshold = " << fmt(c.thresholds.e_l2) << '\n';
  out << "energy_threshold = " << fmt(c.thresholds.energy_rel) << '\n';
  out << "\n[output]\n";
  out << "dir = " << c.output_dir << '\n';
  out << "export_every = " << c.export_every << '\n';
  out << "export_resolution = " << c.export_nx << ' ' << c.export_ny << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Presets: the nine experiments of the study, exactly as reported.
// ---------------------------------------------------------------------------

namespace detail {

inline ExperimentConfig standard_plate() {
  ExperimentConfig c;
  c.domain.outer = {-5.0, 5.0, -2.0, 2.0};
  c.domain.clamp = {{0, -5.0, -2.0, 2.0}};
  c.lift_kind = LiftKind::edge;
  return c;
}

inline ExperimentConfig isotropic_preset(double alpha, double beta, long long epochs,
                                         const std::string& dir) {
  ExperimentConfig c = standard_plate();
  c.Z = Mat2::isotropic(-alpha);
  c.beta = beta;
  c.schedule.epochs = epochs;
  c.reference_alpha = alpha;
  c.output_dir = dir;
  return c;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"example1",          "example2", "example3", "example3_pretrain",
          "example4",          "example4_pretrain",    "oshape",
          "corner",            "corkscrew",            "cigar",
          "helix"};
}

/// Experiment presets keyed by name; throws ConfigError for unknown names.
inline ExperimentConfig preset(const std::string& name) {
  if (name == "example1") {
    return detail::isotropic_preset(1.0, 500.0, 200000, "runs/example1");
  }
  if (name == "example2") {
    return detail::isotropic_preset(2.5, 500.0, 1000000, "runs/example2");
  }
  if (name == "example3") {
    return detail::isotropic_preset(5.0, 500.0, 2000000, "runs/example3");
  }
  if (name == "example3_pretrain") {
    ExperimentConfig c = detail::isotropic_preset(5.0, 100.0, 500000, "runs/example3_pretrain");
    c.schedule.pretrain_n = 5;
    c.schedule.epoch_pre = 50000;
    return c;
  }
  if (name == "example4") {
    return detail::isotropic_preset(10.0, 10000.0, 3000000, "runs/example4");
  }
  if (name == "example4_pretrain") {
    ExperimentConfig c =
        detail::isotropic_preset(10.0, 1000.0, 2000000, "runs/example4_pretrain");
    c.schedule.pretrain_n = 5;
    c.schedule.epoch_pre = 50000;
    return c;
  }
  if (name == "oshape") {
    ExperimentConfig c = detail::isotropic_preset(5.0, 1000.0, 1000000, "runs/oshape");
    c.domain.hole = Rect{-10.0 / 3.0, 10.0 / 3.0, -4.0 / 3.0, 4.0 / 3.0};
    c.schedule.pretrain_n = 5;
    c.schedule.epoch_pre = 50000;
    return c;
  }
  if (name == "corner") {
    ExperimentConfig c;
    c.domain.outer = {-5.0, 5.0, -2.0, 2.0};
    c.domain.hole = Rect{-13.0 / 3.0, 13.0 / 3.0, -4.0 / 3.0, 4.0 / 3.0};
    c.domain.clamp = {{0, -5.0, -2.0, -4.0 / 3.0}, {1, -2.0, -5.0, -13.0 / 3.0}};
    c.Z = Mat2::isotropic(-1.0);
    c.beta = 500.0;
    c.lift_kind = LiftKind::trained;
    c.g1_target = {19.0 / 3.0, 1.0, 1.0};
    c.g1_steps = 50000;
    c.schedule.pretrain_n = 5;
    c.schedule.epoch_pre = 50000;
    c.schedule.epochs = 1000000;
    c.output_dir = "runs/corner";
    return c;
  }
  if (name == "corkscrew") {
    ExperimentConfig c;
    c.domain.outer = {-2.0, 2.0, -3.0, 3.0};
    c.domain.clamp = {{1, -3.0, -2.0, 2.0}};
    c.Z = {-3.0, 2.0, 2.0, -3.0};
    c.beta = 500.0;
    c.lift_kind = LiftKind::edge;
    c.schedule.epochs = 200000;
    c.output_dir = "runs/corkscrew";
    return c;
  }
  if (name == "cigar") {
    ExperimentConfig c;
    c.domain.outer = {-5.0, 5.0, -2.0, 2.0};
    c.Z = {3.0, -2.0, -2.0, 3.0};
    c.beta = 500.0;
    c.lift_kind = LiftKind::free_boundary;
    c.schedule.epochs = 200000;
    c.output_dir = "runs/cigar";
    return c;
  }
  if (name == "helix") {
    ExperimentConfig c;
    c.domain.outer = {-8.0, 8.0, -0.5, 0.5};
    c.Z = {-1.0, 1.5, 1.5, -1.0};
    c.beta = 500.0;
    c.lift_kind = LiftKind::free_boundary;
    c.schedule.epochs = 200000;
    c.output_dir = "runs/helix";
    return c;
  }
  throw ConfigError("unknown preset: " + name);
}

}  // namespace bilayer
