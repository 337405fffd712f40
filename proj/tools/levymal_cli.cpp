#include <chrono>
#include <cstdio>
#include <future>
#include <iostream>

#include <CLI11.hpp>

#include "levymal/config.hpp"
#include "levymal/errors.hpp"
#include "levymal/report.hpp"

#ifndef LEVYMAL_GIT_DESCRIBE
#define LEVYMAL_GIT_DESCRIBE "unknown"
#endif

using namespace levymal;

namespace {

enum Exit { ok = 0, checks_failed = 1, config_error = 2, io_error = 3, runtime_error = 4 };

int run(const std::string& config_path, const std::vector<std::string>& only, const std::string& out_dir,
        bool parallel) {
  const auto cfg = load_config(config_path);
  const auto selected = select_experiments(cfg, only);
  const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(cfg.output) : std::filesystem::path(out_dir);
  probe_output_dir(dir);

  std::vector<ExperimentResult> results(selected.size());
  auto timed = [](const ExperimentSpec& spec) {
    const auto t0 = std::chrono::steady_clock::now();
    auto res = run_experiment(spec);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "%-24s %s  %.1fs\n", spec.name.c_str(), res.pass() ? "PASS" : "FAIL", secs);
    return res;
  };
  if (parallel) {
    std::vector<std::future<ExperimentResult>> jobs;
    for (const auto& spec : selected) jobs.push_back(std::async(std::launch::async, timed, std::cref(spec)));
    for (std::size_t i = 0; i < jobs.size(); ++i) results[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < selected.size(); ++i) results[i] = timed(selected[i]);
  }

  const RunMetadata meta{cfg.scheme.seed, LEVYMAL_GIT_DESCRIBE, cfg.hash};
  write_report(results, dir, meta);
  const std::string summary = summary_text(results, meta);
  std::cout << summary;
  for (const auto& r : results) {
    if (!r.pass()) return checks_failed;
  }
  return ok;
}

int list(const std::string& config_path) {
  const auto cfg = load_config(config_path);
  std::cout << "config " << config_path << " (hash " << cfg.hash << "), output " << cfg.output << "\n";
  for (const auto& e : cfg.experiments) {
    std::cout << "  " << e.name << "  recipe=" << e.recipe << "  steps=" << e.scheme.steps
              << "  paths=" << e.scheme.paths << "  basis=" << e.scheme.basis.describe()
              << "  sub-seed=" << e.seed() << "\n";
  }
  if (cfg.experiments.empty()) std::cout << "  (no experiments)\n";
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Levy-driven BSDE and Malliavin experiment runner"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> only;
  bool parallel = false;
  auto* run_cmd = app.add_subcommand("run", "run the experiments of a config file");
  run_cmd->add_option("config", config_path, "experiment file")->required();
  run_cmd->add_option("--only", only, "experiment names to run (comma separated)")->delimiter(',');
  run_cmd->add_option("--out", out_dir, "output directory (default: the config's output)");
  run_cmd->add_flag("--parallel", parallel, "run experiments concurrently");

  auto* list_cmd = app.add_subcommand("list", "print the experiment plan");
  list_cmd->add_option("config", config_path, "experiment file")->required();

  app.add_subcommand("schema", "print the config grammar");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run(config_path, only, out_dir, parallel);
    if (list_cmd->parsed()) return list(config_path);
    std::cout << config_schema();
    return ok;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return io_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return runtime_error;
  }
}
