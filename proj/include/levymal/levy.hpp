#pragma once

// Lévy path simulation on a time grid with exact jump events.
//
// A path stores its Brownian increments, the list of jump events (time, size)
// and the cumulative values of X = γt + σW + J on the grid. Jumps are never
// binned, so adding a jump at an arbitrary time is an exact operation; only
// functionals that read grid values see the discretisation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace levymal {

class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> times);
  static TimeGrid uniform(double horizon, std::size_t n_steps);

  std::size_t steps() const { return times_.size() - 1; }
  double horizon() const { return times_.back(); }
  double time(std::size_t i) const { return times_[i]; }
  double dt(std::size_t step) const { return times_[step + 1] - times_[step]; }
  double max_dt() const;
  std::span<const double> times() const { return times_; }

  // First grid index i with t_i >= r (the right limit at r on the grid).
  std::size_t index_at_or_after(double r) const;
  // Step i whose interval (t_i, t_{i+1}] contains t; t = 0 maps to step 0.
  std::size_t step_containing(double t) const;

  TimeGrid coarsen(std::size_t factor) const;
  // Splits every step into `factor` equal parts.
  TimeGrid refine(std::size_t factor) const;
  // True when every point of `other` is a point of this grid.
  bool contains_points_of(const TimeGrid& other) const;

  bool operator==(const TimeGrid& other) const = default;

 private:
  std::vector<double> times_;
};

// Finite quadrature of the Lévy measure: node sizes x_j and ν-masses w_j.
// Shared by the sampler, the random measure M and the BSDE jump controls.
struct JumpNodes {
  std::vector<double> sizes;
  std::vector<double> weights;

  std::size_t size() const { return sizes.size(); }
  double total_mass() const;
  std::optional<std::size_t> index_of(double size) const;
  // ‖u‖ in L2(ν) under the quadrature.
  double l2_norm(std::span<const double> values) const;
};

// Midpoint quadrature of a Lévy density on [lo, hi] with n cells; cells whose
// midpoint lies below `epsilon` in absolute value are dropped.
JumpNodes discretize_levy_density(const std::function<double(double)>& density,
                                  double lo, double hi, std::size_t n,
                                  double epsilon = 0.0);

// One compound-Poisson component with a discrete jump-size law.
struct JumpComponent {
  double intensity = 0.0;
  std::vector<double> sizes;
  std::vector<double> probabilities;

  static JumpComponent from_nodes(const JumpNodes& nodes);
};

class LevyModel {
 public:
  LevyModel(double gamma, double sigma, std::vector<JumpComponent> jumps,
            double horizon, double truncation_epsilon = 0.0);

  double gamma() const { return gamma_; }
  double sigma() const { return sigma_; }
  double horizon() const { return horizon_; }
  double truncation_epsilon() const { return truncation_epsilon_; }
  const std::vector<JumpComponent>& components() const { return components_; }
  // Merged node set over all components (ν-quadrature).
  const JumpNodes& nodes() const { return nodes_; }

  double total_intensity() const { return nodes_.total_mass(); }
  // E[X_1] = γ + ∫_{|x|>1} x ν(dx).
  double mean_rate() const;
  // ∫_{|x|<=1} x ν(dx), subtracted continuously in the drift.
  double small_jump_compensator() const;
  // Var(X_1) = σ² + ∫ x² ν(dx).
  double variance_rate() const;
  // ∫ x² ν(dx) over jumps removed by the truncation; the documented bias.
  double dropped_variance_rate() const { return dropped_variance_rate_; }

  std::size_t component_node(std::size_t component, std::size_t k) const {
    return component_nodes_[component][k];
  }

 private:
  double gamma_;
  double sigma_;
  double horizon_;
  double truncation_epsilon_;
  double dropped_variance_rate_ = 0.0;
  std::vector<JumpComponent> components_;
  std::vector<std::vector<std::size_t>> component_nodes_;
  JumpNodes nodes_;
};

struct JumpEvent {
  double time;
  double size;
  // Index into LevyModel::nodes(), or -1 for a jump off the node set.
  int node;
  // Multiplicity carried by the event in the per-node counts (1 for Poisson).
  double count = 1.0;
};

class Path {
 public:
  Path(std::shared_ptr<const LevyModel> model, std::shared_ptr<const TimeGrid> grid,
       std::vector<double> brownian_increments, std::vector<JumpEvent> jumps);

  const LevyModel& model() const { return *model_; }
  const std::shared_ptr<const LevyModel>& model_ptr() const { return model_; }
  const TimeGrid& grid() const { return *grid_; }
  const std::shared_ptr<const TimeGrid>& grid_ptr() const { return grid_; }

  std::span<const double> brownian_increments() const { return dw_; }
  const std::vector<JumpEvent>& jumps() const { return jumps_; }
  std::span<const double> values() const { return values_; }
  double value(std::size_t i) const { return values_[i]; }
  double terminal() const { return values_.back(); }
  double dw(std::size_t step) const { return dw_[step]; }

  // Weighted number of jumps at `node` inside step (t_i, t_{i+1}].
  double jump_count(std::size_t step, std::size_t node) const {
    return counts_[step * model_->nodes().size() + node];
  }
  // ΔÑ_i(node) = count − w_node · Δt_i.
  double compensated_count(std::size_t step, std::size_t node) const;

  std::vector<double> brownian_path() const;  // W on the grid
  std::vector<double> jump_sum_path() const;  // cumulative raw jump sum

  // Rebuilds values from increments; used after the increments change.
  void rebuild();

  friend Path shift_path(const Path& path, double r, double v);
  friend Path cameron_martin_shift(const Path& path, const class CameronMartinDirection& dir,
                                   double u);

 private:
  std::shared_ptr<const LevyModel> model_;
  std::shared_ptr<const TimeGrid> grid_;
  std::vector<double> dw_;
  std::vector<JumpEvent> jumps_;
  std::vector<double> counts_;
  std::vector<double> values_;
};

struct PathBatch {
  std::shared_ptr<const LevyModel> model;
  std::shared_ptr<const TimeGrid> grid;
  std::vector<Path> paths;
  // Probability weights; empty means uniform 1/n.
  std::vector<double> weights;

  std::size_t size() const { return paths.size(); }
  double weight(std::size_t p) const {
    return weights.empty() ? 1.0 / static_cast<double>(paths.size()) : weights[p];
  }
  // Sums increments over `factor` consecutive steps; jump events are kept.
  PathBatch coarsen(std::size_t factor) const;
};

PathBatch sample_paths(const LevyModel& model, std::size_t n_steps, std::size_t n_paths,
                       std::uint64_t seed);

// Deterministic per-stream seed, independent of how work is split.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream);

// X + v·1_{[r,T]}: inserts the jump event (r, v) and raises values from r on.
Path shift_path(const Path& path, double r, double v);

// Cameron–Martin direction given by step values h_i on a grid.
class CameronMartinDirection {
 public:
  CameronMartinDirection(std::shared_ptr<const TimeGrid> grid, std::vector<double> h);
  static CameronMartinDirection constant(std::shared_ptr<const TimeGrid> grid, double c);
  static CameronMartinDirection from_function(std::shared_ptr<const TimeGrid> grid,
                                              const std::function<double(double)>& h);

  const TimeGrid& grid() const { return *grid_; }
  std::span<const double> h() const { return h_; }
  // g_h(t_i) = Σ_{k<i} h_k Δt_k.
  std::span<const double> path() const { return g_; }
  double norm_squared() const;  // Σ h_i² Δt_i

 private:
  std::shared_ptr<const TimeGrid> grid_;
  std::vector<double> h_;
  std::vector<double> g_;
};

// W ↦ W + u·g_h; jump events are untouched.
Path cameron_martin_shift(const Path& path, const CameronMartinDirection& dir, double u);

// ∫ h dW as the left-point sum Σ h_i ΔW_i.
double brownian_integral(const Path& path, const CameronMartinDirection& dir);

// Density of P∘ρ_h⁻¹ with respect to P: exp{−½‖h‖² − ∫h dW}.
double girsanov_density(const Path& path, const CameronMartinDirection& dir);

// exp{∫h dW − ½‖h‖²}, so that E[F(W + g_h)] = E[F(W)·weight].
double cameron_martin_weight(const Path& path, const CameronMartinDirection& dir);

struct ForwardSdeSpec {
  std::function<double(double)> b;
  std::function<double(double)> sigma_fn;
  std::function<double(double, double)> beta;
  double psi0 = 0.0;

  // Needed only for the first-variation process.
  std::function<double(double)> b_prime;
  std::function<double(double)> sigma_prime;
  std::function<double(double, double)> beta_psi;

  // Declared C_β in |β(ψ,x)| <= C_β (1 ∧ |x|).
  std::optional<double> beta_bound;

  // Largest ratio |β(ψ,x)| / (1 ∧ |x|) over the probe set; throws
  // ParameterError when it exceeds the declared bound.
  double check_beta_bound(std::span<const double> psi_probe,
                          std::span<const double> x_probe) const;
};

// Euler–Maruyama on the path grid; jumps inside a step act sequentially on the
// pre-jump state and all jumps are compensated with the node quadrature.
std::vector<double> simulate_forward(const ForwardSdeSpec& spec, const Path& path);

// D_{r,0}Ψ_t on the grid (mark-0 chaos channel), zero before the first grid
// point >= r. Exact derivative of the Euler map in the Brownian increment of
// the step containing r, divided by the model's σ.
std::vector<double> forward_first_variation(const ForwardSdeSpec& spec, const Path& path,
                                            std::span<const double> psi, double r);

}  // namespace levymal
