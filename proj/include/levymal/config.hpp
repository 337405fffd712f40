#pragma once

// Declarative experiment files. The format is JSON with a fixed schema:
// unknown keys are rejected, the seed and every tolerance must be given
// explicitly, and errors name the offending key and its line.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "levymal/experiments.hpp"

namespace levymal {

struct ExperimentConfig {
  ModelConfig model;
  SchemeConfig scheme;
  std::vector<ExperimentSpec> experiments;
  std::string output;
  // FNV-1a of the file contents, as 16 hex digits.
  std::string hash;
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Experiments whose names appear in `names` (all of them when empty);
// ConfigError for a name the config does not define.
std::vector<ExperimentSpec> select_experiments(const ExperimentConfig& config,
                                               const std::vector<std::string>& names);

// Human-readable grammar including every recipe's parameters and tolerances.
std::string config_schema();

}  // namespace levymal
