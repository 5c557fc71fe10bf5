#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bilayer/config.hpp"
#include "bilayer/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitOracle = 3;

bilayer::ExperimentConfig load_config_or_preset(const std::string& arg) {
  if (std::filesystem::exists(arg)) return bilayer::parse_config_file(arg);
  return bilayer::preset(arg);
}

std::string output_root_from_env() {
  const char* root = std::getenv("BILAYER_OUT_ROOT");
  return root != nullptr ? root : "";
}

int cmd_run(const std::string& config_arg, std::optional<long long> resume,
            const std::string& root_flag) {
  bilayer::RunOptions opt;
  opt.resume_step = resume;
  opt.output_root = root_flag.empty() ? output_root_from_env() : root_flag;
  const auto cfg = load_config_or_preset(config_arg);
  const auto result = bilayer::run_experiment(cfg, opt);
  std::cout << "artifacts in " << result.output_dir.string() << "\n";
  return kExitOk;
}

int cmd_export(const std::string& ckpt, const std::string& config_arg, const std::string& out,
               int nx, int ny) {
  auto cfg = load_config_or_preset(config_arg);
  const auto loaded = bilayer::load_checkpoint(ckpt);
  if (!(loaded.params.arch == cfg.arch)) {
    throw bilayer::ConfigError("checkpoint architecture does not match the config");
  }
  bilayer::BoundaryLift lift =
      bilayer::prepare_lift(cfg, std::filesystem::path(out).parent_path(), true);
  const auto map = bilayer::deformation_map(loaded.params, lift);
  const int rx = nx > 0 ? nx : cfg.export_nx;
  const int ry = ny > 0 ? ny : cfg.export_ny;
  const auto stats = bilayer::export_mesh(map, cfg.domain, rx, ry, out);
  std::cout << "wrote " << out << " (" << stats.vertices << " vertices, " << stats.quads
            << " quads)\n";
  return kExitOk;
}

int cmd_metrics(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "metrics.csv";
  std::ifstream in(path);
  if (!in) throw bilayer::ConfigError("no metrics.csv under " + dir);
  std::string line, header, last_train;
  std::vector<std::string> tests;
  if (!std::getline(in, header)) throw bilayer::ConfigError("empty metrics file: " + path.string());
  while (std::getline(in, line)) {
    if (line.find(",test,") != std::string::npos) {
      tests.push_back(line);
    } else if (!line.empty()) {
      last_train = line;
    }
  }
  std::cout << header << "\n";
  if (!last_train.empty()) std::cout << last_train << "\n";
  for (const auto& t : tests) std::cout << t << "\n";
  return kExitOk;
}

int cmd_preset(const std::string& name, const std::string& out_file, bool list) {
  if (list) {
    for (const auto& n : bilayer::preset_names()) std::cout << n << "\n";
    return kExitOk;
  }
  const auto cfg = bilayer::preset(name);
  const std::string text = bilayer::serialize_config(cfg);
  if (out_file.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(out_file);
    if (!out) throw bilayer::ConfigError("cannot write " + out_file);
    out << text;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bilayer plate bending solver"};
  app.require_subcommand(1);

  std::string run_config;
  std::string run_root;
  long long resume_step = -1;
  auto* run = app.add_subcommand("run", "train an experiment from a config file or preset");
  run->add_option("config", run_config, "config file path or preset name")->required();
  run->add_option("--resume", resume_step, "resume from checkpoint written at this step");
  run->add_option("--out-root", run_root, "prefix for relative output directories");

  auto* oracle = app.add_subcommand("oracle", "verify the witness deformations' closed forms");

  std::string exp_ckpt, exp_config, exp_out;
  int exp_nx = 0, exp_ny = 0;
  auto* exp = app.add_subcommand("export", "evaluate a checkpoint on a grid and write a mesh");
  exp->add_option("checkpoint", exp_ckpt)->required();
  exp->add_option("config", exp_config, "config file path or preset name")->required();
  exp->add_option("out", exp_out)->required();
  exp->add_option("--nx", exp_nx, "vertices along x1 (default: config)");
  exp->add_option("--ny", exp_ny, "vertices along x2 (default: config)");

  std::string metrics_dir;
  auto* met = app.add_subcommand("metrics", "summarize a run directory");
  met->add_option("dir", metrics_dir)->required();

  std::string preset_name, preset_out;
  bool preset_list = false;
  auto* pre = app.add_subcommand("preset", "print or save a preset config");
  pre->add_option("name", preset_name);
  pre->add_option("-o,--out", preset_out, "write to a file instead of stdout");
  pre->add_flag("--list", preset_list, "list preset names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      std::optional<long long> resume;
      if (resume_step >= 0) resume = resume_step;
      return cmd_run(run_config, resume, run_root);
    }
    if (oracle->parsed()) {
      const auto report = bilayer::oracle_suite(std::cout);
      return report.pass ? kExitOk : kExitOracle;
    }
    if (exp->parsed()) return cmd_export(exp_ckpt, exp_config, exp_out, exp_nx, exp_ny);
    if (met->parsed()) return cmd_metrics(metrics_dir);
    if (pre->parsed()) {
      if (!preset_list && preset_name.empty()) {
        std::cerr << "preset: name required (or --list)\n";
        return kExitConfig;
      }
      return cmd_preset(preset_name, preset_out, preset_list);
    }
  } catch (const bilayer::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bilayer::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
