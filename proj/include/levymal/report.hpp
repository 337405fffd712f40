#pragma once

// CSV and summary output of experiment results.
//
// CSV files are comma-separated with a header row; `#` lines at the top carry
// the metadata and a description of the columns. Numbers are printed with 17
// significant digits so identical runs give identical bytes.

#include <filesystem>
#include <string>
#include <vector>

#include "levymal/bsde.hpp"
#include "levymal/experiments.hpp"
#include "levymal/malliavin.hpp"

namespace levymal {

struct RunMetadata {
  std::uint64_t scheme_seed = 0;
  std::string git_describe;
  std::string config_hash;
};

std::string format_number(double x);

// Creates the directory if needed and checks that a file can be written in
// it; IoError otherwise.
void probe_output_dir(const std::filesystem::path& dir);

std::string experiment_csv(const ExperimentResult& result, const RunMetadata& meta);
// One row per check of every experiment.
std::string checks_csv(const std::vector<ExperimentResult>& results, const RunMetadata& meta);
std::string summary_text(const std::vector<ExperimentResult>& results, const RunMetadata& meta);

// path_id, t, X, W, cumulative jump sum.
std::string path_batch_csv(const PathBatch& batch);
// path_id, t, Y, Z, U per node; Z and U are empty at t_N.
std::string bsde_solution_csv(const BsdeSolution& sol);
// r, v, index, residual, sample_size, tolerance, pass.
std::string residual_csv(const ResidualReport& report);

// <name>.csv per experiment, checks.csv and summary.txt.
void write_report(const std::vector<ExperimentResult>& results, const std::filesystem::path& dir,
                  const RunMetadata& meta);

}  // namespace levymal
