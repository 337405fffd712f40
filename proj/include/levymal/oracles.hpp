#pragma once

// Independent ground truth: closed-form linear BSDEs, exact backward induction
// on an enumerated outcome tree, and the sequence bound used to monitor
// global Picard iterations.

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "levymal/bsde.hpp"
#include "levymal/levy.hpp"

namespace levymal {

enum class TerminalKind { terminal_value, constant };

// Y for ξ = X_T or ξ = c under f = α y.
class LinearClosedForm {
 public:
  LinearClosedForm(const LevyModel& model, double alpha, TerminalKind kind, double c = 0.0);

  double y(double t, double x_t) const;
  double z(double t) const;            // dW-integrand
  double u(double t, double x) const;  // jump control at node x
  double jump_derivative(double t, double r, double v) const;
  double mark0_channel(double t, double r) const;

 private:
  double sigma_;
  double mean_rate_;
  double horizon_;
  double alpha_;
  TerminalKind kind_;
  double c_;
};

LinearClosedForm closed_form_linear(const LevyModel& model, double alpha, TerminalKind kind,
                                    double c = 0.0);
// String form used by configs; unknown kinds raise CapabilityError.
LinearClosedForm closed_form_linear(const LevyModel& model, double alpha,
                                    const std::string& kind, double c = 0.0);

// Fully enumerated outcome tree. Per step the Brownian increment is ±√Δt with
// probability ½ and every jump node j carries an independent coin B_j ∈ {0, a_j}
// with P(B_j = a_j) = p_j, where q_j = w_jΔt, a_j = 1 + q_j and p_j = q_j / a_j.
// The coin has mean q_j and variance q_j, the first two moments of a Poisson
// count over the step; an "on" coin is stored as one jump event of size a_j x_j
// and count a_j at the end of the step.
//
// Leaves are ordered lexicographically by their per-step digits (step 0 most
// significant), so a tree node at level i is a contiguous block of leaves.
class TreeModel {
 public:
  static constexpr std::size_t max_steps = 6;
  static constexpr std::size_t max_leaves = 100000;

  TreeModel(std::shared_ptr<const LevyModel> model, std::size_t n_steps);

  const LevyModel& model() const { return *batch_.model; }
  const TimeGrid& grid() const { return *batch_.grid; }
  // Leaves as a weighted path batch; weights are outcome probabilities.
  const PathBatch& batch() const { return batch_; }

  std::size_t steps() const { return grid().steps(); }
  std::size_t branching() const { return branching_; }
  std::size_t leaves() const { return batch_.size(); }
  // Leaves below one node at `level`.
  std::size_t block_size(std::size_t level) const;
  std::size_t digit(std::size_t leaf, std::size_t step) const;
  double digit_probability(std::size_t d) const { return digit_prob_[d]; }
  double brownian_sign(std::size_t d) const;
  bool jump_on(std::size_t d, std::size_t node) const;
  double coin_size(std::size_t node) const { return coin_[node]; }
  // Leaf with the digit at `step` replaced.
  std::size_t with_digit(std::size_t leaf, std::size_t step, std::size_t d) const;

  // Compensated sum of all leaf probabilities.
  double total_probability() const;
  // Exact mean and variance of one step's X increment under the tree law.
  std::pair<double, double> step_moments(std::size_t step) const;

 private:
  std::size_t branching_ = 1;
  bool brownian_ = true;
  std::vector<double> coin_;
  std::vector<double> coin_prob_;
  std::vector<double> digit_prob_;
  PathBatch batch_;
};

struct TreeSolveOptions {
  double inner_tol = 1e-14;
  int max_inner_iterations = 200;
};

// Backward induction with exact conditional expectations over the children of
// every node; Z = E[Y ΔW]/Δt and U_j = E[Y ΔÑ_j]/(w_jΔt).
BsdeSolution tree_backward(const TreeModel& tree, const TerminalFunctional& xi,
                           const Generator& gen, const TreeSolveOptions& options = {});

// Discrete Malliavin derivative of Y_{t_k} in step k−1, per leaf. node = nullopt
// gives the mark-0 channel (Y(+) − Y(−)) / (2√Δt σ); a jump node j gives
// (Y(on) − Y(off)) / a_j. k ranges over 1..N.
Eigen::VectorXd tree_derivative(const TreeModel& tree, const BsdeSolution& sol, std::size_t k,
                                std::optional<std::size_t> node);

struct GronwallVerdict {
  bool hypothesis_holds = true;
  std::optional<std::size_t> violation;  // n with g_{n+1} > ε + C_n + ½ g_n
  bool conclusion_holds = true;
  double tail_max = 0.0;
  double tail_bound = 0.0;
  std::string message;

  bool pass() const { return hypothesis_holds && conclusion_holds; }
};

// gaps = (g_0, …, g_M) with g_0 = 0; c_terms = (C_0, …, C_{M−1}) or empty for C ≡ 0.
// With C ≡ 0 the conclusion is g_n ≤ 2ε for all n. Otherwise the limit
// statement is read on the last quarter of the sequence: with m the midpoint,
// g_n ≤ 2(ε + sup_{k≥m} C_k) + 2^{m−n} g_m.
GronwallVerdict gronwall_check(const std::vector<double>& gaps, double epsilon,
                               const std::vector<double>& c_terms = {});

}  // namespace levymal
