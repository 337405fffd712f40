#pragma once

// Backward solver for
//
//   Y_t = ξ + ∫_t^T f(X, s, Y_s, Z_s, [g(U_s)]_ν) ds − ∫_t^T Z_s dW_s − ∫∫ U_s(x) Ñ(ds,dx)
//
// with [g(u)]_ν = ∫ g(u(x)) g₁(x) ν(dx) evaluated on the model's jump nodes.
// Conditional expectations are least-squares regressions on the step features
// (X_{t_i}, and Ψ_{t_i} when the generator carries a forward process).
//
// Z is stored as the dW-integrand. The mark-0 channel of M = σ dW δ₀ + Ñ is
// Z / σ; the two agree when σ = 1.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "levymal/levy.hpp"
#include "levymal/regression.hpp"

namespace levymal {

struct TerminalFunctional {
  std::string name;
  std::function<double(const Path&)> value;
  // D_{r,0}ξ in the mark-0 channel; optional.
  std::function<double(const Path&, double r)> brownian_derivative;
  // True when ξ = φ(X_T) for a smooth φ.
  bool smooth_in_terminal = false;

  double operator()(const Path& path) const { return value(path); }

  static TerminalFunctional terminal_value();
  static TerminalFunctional constant(double c);
  // ξ = φ(X_T) with D_{r,0}ξ = φ'(X_T).
  static TerminalFunctional of_terminal(std::string name, std::function<double(double)> phi,
                                        std::function<double(double)> phi_prime);
};

struct DriverContext {
  const Path& path;
  std::span<const double> forward;  // Ψ on the grid, empty without a forward process
  std::size_t step;
  double t;
  // D_{r,0}Ψ on the grid while a Brownian derivative equation is solved.
  std::span<const double> forward_variation = {};
};

using DriverFn = std::function<double(const DriverContext&, double y, double z, double w)>;
using MalliavinDriverFn =
    std::function<double(const DriverContext&, double r, double y, double z, double w)>;

struct Generator {
  DriverFn f;
  std::function<double(double)> g;
  std::function<double(double)> g_prime;
  double g_lipschitz = 1.0;
  JumpNodes nodes;
  std::vector<double> g1;
  double lipschitz_f = 0.0;

  // Partial derivatives in (y, z, w); required for the Brownian derivative.
  DriverFn df_dy;
  DriverFn df_dz;
  DriverFn df_dw;
  // (D_{r,0} f)(t, η) along the path; treated as 0 when absent and
  // `path_independent` is set.
  MalliavinDriverFn malliavin_f;
  bool path_independent = false;
  // Dominating field Γ_{r,v} of the Malliavin derivative of f; optional.
  std::function<double(double r, double v)> gamma_bound;

  std::shared_ptr<const ForwardSdeSpec> forward;

  // [g(u)]_ν.
  double jump_aggregate(std::span<const double> u) const;
  // [g'(U) u]_ν.
  double jump_sensitivity(std::span<const double> base_u, std::span<const double> u) const;
  double operator()(const DriverContext& ctx, double y, double z,
                    std::span<const double> u) const;

  // L_f (1 + L_g ‖g₁‖).
  double contraction_constant() const;

  // Largest sampled |f(η) − f(η̃)| / |η − η̃|; ParameterError above L_f.
  double check_lipschitz(const DriverContext& ctx, std::size_t n_probes, std::uint64_t seed,
                         double scale = 5.0) const;
  // Largest |g'| on the probe grid; ParameterError above L_g.
  double check_g_derivative(double lo, double hi, std::size_t n) const;

  static Generator zero(const JumpNodes& nodes);
  // f = α y.
  static Generator linear(double alpha, const JumpNodes& nodes);
};

// Σ_j w_j g(u_j) g₁(x_j).
double g_nu_functional(const Generator& gen, std::span<const double> u_values);

struct SchemeParams {
  BasisSpec basis = BasisSpec::polynomial(3);
  double picard_tol = 1e-10;
  int max_inner_iterations = 50;
  int max_global_iterations = 200;
  // β in the e^{βt}-weighted norm used for global Picard gaps.
  double picard_weight = 0.0;
  double condition_warning = 1e8;
};

struct BsdeSolution {
  std::shared_ptr<const TimeGrid> grid;
  double sigma = 1.0;
  JumpNodes nodes;
  Eigen::MatrixXd Y;               // paths × (steps + 1)
  Eigen::MatrixXd Z;               // paths × steps, dW-integrand
  std::vector<Eigen::MatrixXd> U;  // per node: paths × steps
  // Σ_i Δt f(t_i, Y_i, Z_i, U_i) per path.
  Eigen::VectorXd driver_integral;

  std::vector<double> picard_gaps;
  // Per step: max over paths of |y_{m+1} − y_m| for each inner iteration.
  std::vector<std::vector<double>> inner_residuals;
  std::string basis_spec;
  std::vector<std::string> warnings;
  double y0_standard_error = 0.0;

  std::size_t paths() const { return static_cast<std::size_t>(Y.rows()); }
  std::size_t steps() const { return static_cast<std::size_t>(Z.cols()); }
  double y0(const PathBatch& batch) const;
  double u(std::size_t path, std::size_t step, std::size_t node) const {
    return U[node](static_cast<Eigen::Index>(path), static_cast<Eigen::Index>(step));
  }
  std::vector<double> u_row(std::size_t path, std::size_t step) const;
  // Z / σ.
  double mark0_channel(std::size_t path, std::size_t step) const;
};

BsdeSolution solve_bsde(const TerminalFunctional& xi, const Generator& gen,
                        const PathBatch& batch, const SchemeParams& scheme);

// One global iteration Y^{n+1}_i = E_i[Y^{n+1}_{i+1}] + Δt f(t_i, Yⁿ_i, Zⁿ_i, Uⁿ_i)
// with (Z, U) re-extracted from Y^{n+1}; appends ‖Y^{n+1} − Yⁿ‖ to the gaps.
BsdeSolution picard_step(const BsdeSolution& prev, const TerminalFunctional& xi,
                         const Generator& gen, const PathBatch& batch,
                         const SchemeParams& scheme);

BsdeSolution zero_solution(const PathBatch& batch);

// Global Picard iteration from zero until the gap falls below picard_tol.
BsdeSolution solve_bsde_picard(const TerminalFunctional& xi, const Generator& gen,
                               const PathBatch& batch, const SchemeParams& scheme);

// e^{βt}-weighted L2 distance over (Y, Z, U).
double picard_gap(const BsdeSolution& a, const BsdeSolution& b, const PathBatch& batch,
                  double beta);

struct StabilityReport {
  double y_sup = 0.0;  // E sup_t |Y − Y'|²
  double z_part = 0.0;
  double u_part = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
};

StabilityReport stability_gap(const BsdeSolution& sol, const BsdeSolution& sol_prime,
                              const PathBatch& batch, double data_gap);

// E|ξ − ξ'|² + Σ_i Δt E|f_g − f'_g|² along (Y, Z, U) of `sol`.
double stability_data_gap(const TerminalFunctional& xi, const TerminalFunctional& xi_prime,
                          const Generator& gen, const Generator& gen_prime,
                          const BsdeSolution& sol, const PathBatch& batch);

double g_alpha(double alpha, double x);
double g_alpha_prime(double alpha, double x);

struct TruncatedGAlpha {
  double alpha;
  double bound;  // K
  double lipschitz;
  std::function<double(double)> g;
  std::function<double(double)> g_prime;
};

// C² blend of g^α: equal to g^α on [−2K, 2K], zero outside (−3K, 3K).
TruncatedGAlpha truncate_g_alpha(double alpha, double bound);

// Features (X_{t_i}, Ψ_{t_i}) per path at one step.
Eigen::MatrixXd step_features(const PathBatch& batch,
                              const std::vector<std::vector<double>>& forward,
                              std::size_t step);

std::vector<std::vector<double>> forward_states(const PathBatch& batch,
                                                const ForwardSdeSpec* spec);

Eigen::VectorXd batch_weights(const PathBatch& batch);

// Generic backward recursion shared by the base and derivative equations.
struct BackwardProblem {
  const PathBatch* batch = nullptr;
  const std::vector<std::vector<double>>* forward = nullptr;
  Eigen::VectorXd terminal;
  // driver(path, step, y, z, u) with u the per-node row.
  std::function<double(std::size_t, std::size_t, double, double, std::span<const double>)> driver;
  double lipschitz = 0.0;
  // Steps before this one are left at zero.
  std::size_t first_index = 0;
};

BsdeSolution solve_backward(const BackwardProblem& problem, const SchemeParams& scheme);

}  // namespace levymal
