#pragma once

// Named experiment recipes shared by the command-line runner and the
// acceptance suite. A recipe reads its model, scheme and parameters from an
// ExperimentSpec and returns checks plus one table of per-row numbers.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "levymal/levy.hpp"
#include "levymal/regression.hpp"

namespace levymal {

struct Check {
  std::string name;
  // "z<=3", "<=", ">=" or "in".
  std::string rule;
  double value = 0.0;
  double tolerance = 0.0;  // upper bound (the z bound for statistical checks)
  std::optional<double> lower;
  std::optional<double> target;
  std::optional<double> standard_error;
  bool pass = false;

  static Check at_most(std::string name, double value, double tolerance);
  static Check at_least(std::string name, double value, double bound);
  static Check within(std::string name, double value, double lo, double hi);
  // |estimate − target| / se ≤ 3; a zero se passes only on exact agreement.
  static Check statistical(std::string name, double estimate, double target, double se);
  // |estimate − target| ≤ max(3 se, relative·|target|).
  static Check statistical_or_relative(std::string name, double estimate, double target,
                                       double se, double relative);

  // z-score for statistical checks.
  std::optional<double> z() const;
};

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  // One-line description of the columns, written as a CSV comment.
  std::string description;

  void add(std::vector<double> row);
};

struct ExperimentResult {
  std::string name;
  std::string recipe;
  std::uint64_t seed = 0;
  std::vector<Check> checks;
  Table table;
  std::vector<std::string> notes;

  bool pass() const;
};

struct ModelConfig {
  double gamma = 0.0;
  double sigma = 1.0;
  double horizon = 1.0;
  std::vector<JumpComponent> jumps;

  LevyModel build() const;
};

struct SchemeConfig {
  std::size_t steps = 0;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  BasisSpec basis;
  double picard_tol = 0.0;
};

using ParamMap = std::map<std::string, std::vector<double>>;

struct ExperimentSpec {
  std::string name;
  std::string recipe;
  ModelConfig model;
  SchemeConfig scheme;
  ParamMap params;
  std::map<std::string, double> tolerances;

  // Parameter value with the recipe default filled in.
  double param(const std::string& key) const;
  std::vector<double> param_list(const std::string& key) const;
  double tolerance(const std::string& key) const;
  // Sub-seed of the scheme seed keyed on the experiment name.
  std::uint64_t seed() const;
};

struct ParamDoc {
  std::string key;
  std::vector<double> default_value;  // empty for tolerances: always required
  std::string doc;
  bool list = false;
};

struct RecipeInfo {
  std::string name;
  std::string summary;
  std::vector<ParamDoc> params;
  std::vector<ParamDoc> tolerances;
  std::function<ExperimentResult(const ExperimentSpec&)> run;
};

const std::vector<RecipeInfo>& recipes();
// ConfigError for an unknown name.
const RecipeInfo& find_recipe(const std::string& name);

ExperimentResult run_experiment(const ExperimentSpec& spec);

std::uint64_t fnv1a(std::string_view text);

}  // namespace levymal
