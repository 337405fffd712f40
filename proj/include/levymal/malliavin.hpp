#pragma once

// Malliavin derivatives D_{r,v} computed three ways: exact path differences
// for jump directions v ≠ 0, Cameron–Martin finite differences for the
// Brownian direction, and the derivative BSDE.
//
// v = 0 denotes the mark-0 channel of M = σ dW δ₀ + Ñ. The derivative with
// respect to W is σ times that channel, so the dW-integrand Z is compared
// against σ·D_{·,0}Y.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "levymal/bsde.hpp"
#include "levymal/chaos.hpp"
#include "levymal/levy.hpp"

namespace levymal {

struct BasePoint {
  double r;
  double v;  // 0: Brownian channel; otherwise a jump size
  // Quadrature weight of the point in 𝕞 (cell length × μ-mass).
  double weight = 0.0;
};

// Base points on every `stride`-th grid time (excluding T) times the given
// marks, weighted by the covering cell length and μ.
std::vector<BasePoint> base_point_grid(const TimeGrid& grid, std::size_t stride,
                                       const std::vector<double>& marks,
                                       const MeasureSpec& spec, bool include_zero_time = true);

struct MalliavinField {
  std::vector<BasePoint> base_points;
  // Scalar functional: D_{r,v}ξ, paths × base points.
  Eigen::MatrixXd values;
  // BSDE: (𝒴, 𝒵, 𝒰) per base point; empty for a scalar field.
  std::vector<BsdeSolution> solutions;
  double sigma = 1.0;
  // v = 0 entries hold the mark-0 channel; the dW-integrand is σ times it.
  bool mark0_is_chaos_channel = true;
};

// g_ξ(X + v 1_{[r,T]}) − g_ξ(X). DirectionError for v = 0.
double jump_derivative(const TerminalFunctional& xi, const Path& path, double r, double v);

// Per-path D_{r,v}ξ for v ≠ 0 (path shift) or v = 0 (the functional's own
// Brownian derivative; CapabilityError when it has none).
MalliavinField functional_field(const TerminalFunctional& xi, const PathBatch& batch,
                                std::vector<BasePoint> base_points);

// E ξ² + Σ_points weight · E(D_{r,v}ξ)².
double d12_norm_squared(const Eigen::VectorXd& xi_values, const MalliavinField& field,
                        const PathBatch& batch);

struct FdQuotients {
  std::vector<double> u;
  std::vector<double> quotients;    // (ξ(ω + u g_h) − ξ(ω)) / u
  std::optional<double> analytic;   // ⟨D^W ξ, h⟩ = Σ σ D_{t_i,0}ξ h_i Δt_i
};

FdQuotients brownian_fd_derivative(const TerminalFunctional& xi, const Path& path,
                                   const CameronMartinDirection& dir,
                                   std::span<const double> u);

// Generator of the derivative equation for one base point.
struct DerivativeProblem {
  BasePoint base;
  std::size_t first_index = 0;  // first grid index >= r
  Eigen::VectorXd terminal;     // D_{r,v}ξ
  std::function<double(std::size_t, std::size_t, double, double, std::span<const double>)> driver;
  double lipschitz = 0.0;

  const PathBatch* batch = nullptr;
  std::shared_ptr<const std::vector<std::vector<double>>> forward;
  // v ≠ 0: the shifted batch and its forward states; v = 0: D_{r,0}Ψ per path.
  std::shared_ptr<const PathBatch> shifted;
  std::shared_ptr<const std::vector<std::vector<double>>> shifted_forward;
  std::shared_ptr<const std::vector<std::vector<double>>> forward_variation;
};

// `base` must be the solution of (ξ, gen) on `batch`; both must outlive the
// returned problem. v = 0 needs ∂f in all three slots, g', ξ's Brownian
// derivative and, for path-dependent f, the field D_{r,0}f.
DerivativeProblem build_derivative_problem(const BsdeSolution& base, const TerminalFunctional& xi,
                                           const Generator& gen, const PathBatch& batch,
                                           double r, double v);

// (𝒴, 𝒵, 𝒰) on the batch grid; identically zero before index_at_or_after(r).
BsdeSolution solve_derivative_bsde(const DerivativeProblem& problem, const SchemeParams& scheme);

// The batch with every path shifted by v 1_{[r,T]}.
PathBatch shifted_batch(const PathBatch& batch, double r, double v);

// Domination check: largest excess of |F_{r,v}(s, y, z, u)| over
// L (|y| + |z| + ‖u‖) + Γ_{r,v} on the sampled arguments (≤ 0 means dominated).
double domination_excess(const DerivativeProblem& problem, const Generator& gen,
                         std::size_t n_probes, std::uint64_t seed, double scale = 1.0);

// Chain rule on the grid for F(ω, G₁, …, G_d).
struct ParametricFunctional {
  std::function<double(const Path&, std::span<const double> y)> value;
  // (D^W F)(ω, y) at grid time index i.
  std::function<double(const Path&, std::size_t i, std::span<const double> y)> path_derivative;
  // ∂F/∂y_k.
  std::vector<std::function<double(const Path&, std::span<const double> y)>> dy;
};

struct VectorFunctional {
  std::vector<std::function<double(const Path&)>> value;
  // D^W_{t_i} G_k.
  std::vector<std::function<double(const Path&, std::size_t i)>> derivative;
};

// D^W_{t_i} F(·, G) for every grid step i.
std::vector<double> chain_rule_brownian(const ParametricFunctional& f, const VectorFunctional& g,
                                        const Path& path);

struct ResidualRow {
  double r;
  double v;
  std::size_t index;  // grid index of the right limit
  double residual;    // relative L2 over the batch
  std::size_t sample_size;
  double tolerance;
  bool pass;
};

struct ResidualReport {
  std::vector<ResidualRow> rows;
  double residual_z = 0.0;  // aggregated over v = 0 rows
  double residual_u = 0.0;  // aggregated over v ≠ 0 rows
  bool has_z = false;
  bool has_u = false;
};

// Right limit D_{r,v}Y_{r+} at the first grid index k ≥ r, per path.
struct RightLimit {
  BasePoint base;
  std::size_t index;
  Eigen::VectorXd values;
};

RightLimit right_limit(const BsdeSolution& derivative, double r, double v);

// Regresses each right limit on the step-(k−1) features and compares it with
// σ·proj against Z_{k−1} (v = 0) or proj against U_{k−1}(v).
ResidualReport representation_residual(const BsdeSolution& base,
                                       const std::vector<RightLimit>& limits,
                                       const PathBatch& batch,
                                       const std::vector<std::vector<double>>& forward,
                                       const BasisSpec& basis, double tolerance);

}  // namespace levymal
