#include "levymal/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "levymal/errors.hpp"

namespace levymal {

// ---------------------------------------------------------------- terminals

TerminalFunctional TerminalFunctional::terminal_value() {
  return {"X_T", [](const Path& p) { return p.terminal(); },
          [](const Path&, double) { return 1.0; }, true};
}

TerminalFunctional TerminalFunctional::constant(double c) {
  return {"constant", [c](const Path&) { return c; }, [](const Path&, double) { return 0.0; },
          true};
}

TerminalFunctional TerminalFunctional::of_terminal(std::string name,
                                                   std::function<double(double)> phi,
                                                   std::function<double(double)> phi_prime) {
  TerminalFunctional xi;
  xi.name = std::move(name);
  xi.value = [phi](const Path& p) { return phi(p.terminal()); };
  if (phi_prime) {
    xi.brownian_derivative = [phi_prime](const Path& p, double) { return phi_prime(p.terminal()); };
  }
  xi.smooth_in_terminal = true;
  return xi;
}

// ---------------------------------------------------------------- generator

double Generator::jump_aggregate(std::span<const double> u) const {
  if (u.size() != nodes.size()) throw ShapeError("u has wrong length for the node set");
  double s = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double weight_g1 = g1.empty() ? 1.0 : g1[j];
    s += nodes.weights[j] * g(u[j]) * weight_g1;
  }
  return s;
}

double Generator::jump_sensitivity(std::span<const double> base_u,
                                   std::span<const double> u) const {
  if (u.size() != nodes.size() || base_u.size() != nodes.size()) {
    throw ShapeError("u has wrong length for the node set");
  }
  if (!g_prime) throw CapabilityError("generator has no g'");
  double s = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    const double weight_g1 = g1.empty() ? 1.0 : g1[j];
    s += nodes.weights[j] * g_prime(base_u[j]) * u[j] * weight_g1;
  }
  return s;
}

double Generator::operator()(const DriverContext& ctx, double y, double z,
                             std::span<const double> u) const {
  return f(ctx, y, z, jump_aggregate(u));
}

double Generator::contraction_constant() const {
  std::vector<double> ones;
  const std::vector<double>* weights_g1 = &g1;
  if (g1.empty()) {
    ones.assign(nodes.size(), 1.0);
    weights_g1 = &ones;
  }
  return lipschitz_f * (1.0 + g_lipschitz * nodes.l2_norm(*weights_g1));
}

double Generator::check_lipschitz(const DriverContext& ctx, std::size_t n_probes,
                                  std::uint64_t seed, double scale) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  double worst = 0.0;
  for (std::size_t k = 0; k < n_probes; ++k) {
    const double y1 = u(rng), z1 = u(rng), w1 = u(rng);
    const double y2 = u(rng), z2 = u(rng), w2 = u(rng);
    const double dist = std::sqrt((y1 - y2) * (y1 - y2) + (z1 - z2) * (z1 - z2) +
                                  (w1 - w2) * (w1 - w2));
    if (dist == 0.0) continue;
    worst = std::max(worst, std::abs(f(ctx, y1, z1, w1) - f(ctx, y2, z2, w2)) / dist);
  }
  if (worst > lipschitz_f * (1.0 + 1e-9)) {
    std::ostringstream os;
    os << "driver violates its declared Lipschitz constant: sampled " << worst << " > "
       << lipschitz_f;
    throw ParameterError(os.str());
  }
  return worst;
}

double Generator::check_g_derivative(double lo, double hi, std::size_t n) const {
  if (!g_prime) throw CapabilityError("generator has no g'");
  double worst = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n);
    worst = std::max(worst, std::abs(g_prime(x)));
  }
  if (worst > g_lipschitz * (1.0 + 1e-9)) {
    std::ostringstream os;
    os << "|g'| exceeds the declared bound: " << worst << " > " << g_lipschitz;
    throw ParameterError(os.str());
  }
  return worst;
}

Generator Generator::zero(const JumpNodes& nodes) {
  Generator gen;
  gen.f = [](const DriverContext&, double, double, double) { return 0.0; };
  gen.g = [](double x) { return x; };
  gen.g_prime = [](double) { return 1.0; };
  gen.g_lipschitz = 1.0;
  gen.nodes = nodes;
  gen.g1.assign(nodes.size(), 1.0);
  gen.lipschitz_f = 0.0;
  gen.df_dy = gen.df_dz = gen.df_dw = gen.f;
  gen.path_independent = true;
  gen.gamma_bound = [](double, double) { return 0.0; };
  return gen;
}

Generator Generator::linear(double alpha, const JumpNodes& nodes) {
  Generator gen = zero(nodes);
  gen.f = [alpha](const DriverContext&, double y, double, double) { return alpha * y; };
  gen.df_dy = [alpha](const DriverContext&, double, double, double) { return alpha; };
  gen.lipschitz_f = std::abs(alpha);
  return gen;
}

double g_nu_functional(const Generator& gen, std::span<const double> u_values) {
  return gen.jump_aggregate(u_values);
}

// ---------------------------------------------------------------- helpers

Eigen::VectorXd batch_weights(const PathBatch& batch) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t p = 0; p < batch.size(); ++p) w(static_cast<Eigen::Index>(p)) = batch.weight(p);
  return w;
}

std::vector<std::vector<double>> forward_states(const PathBatch& batch,
                                                const ForwardSdeSpec* spec) {
  std::vector<std::vector<double>> out;
  if (!spec) return out;
  out.resize(batch.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(batch.size()); ++p) {
    out[static_cast<std::size_t>(p)] = simulate_forward(*spec, batch.paths[static_cast<std::size_t>(p)]);
  }
  return out;
}

Eigen::MatrixXd step_features(const PathBatch& batch,
                              const std::vector<std::vector<double>>& forward,
                              std::size_t step) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd f(n, forward.empty() ? 1 : 2);
  for (Eigen::Index p = 0; p < n; ++p) {
    f(p, 0) = batch.paths[static_cast<std::size_t>(p)].value(step);
    if (!forward.empty()) f(p, 1) = forward[static_cast<std::size_t>(p)][step];
  }
  return f;
}

double BsdeSolution::y0(const PathBatch& batch) const {
  return batch_weights(batch).dot(Y.col(0));
}

std::vector<double> BsdeSolution::u_row(std::size_t path, std::size_t step) const {
  std::vector<double> row(U.size());
  for (std::size_t j = 0; j < U.size(); ++j) row[j] = u(path, step, j);
  return row;
}

double BsdeSolution::mark0_channel(std::size_t path, std::size_t step) const {
  if (!(sigma > 0.0)) return 0.0;
  return Z(static_cast<Eigen::Index>(path), static_cast<Eigen::Index>(step)) / sigma;
}

namespace {

BsdeSolution empty_solution(const PathBatch& batch) {
  BsdeSolution sol;
  sol.grid = batch.grid;
  sol.sigma = batch.model->sigma();
  sol.nodes = batch.model->nodes();
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto steps = static_cast<Eigen::Index>(batch.grid->steps());
  sol.Y = Eigen::MatrixXd::Zero(n, steps + 1);
  sol.Z = Eigen::MatrixXd::Zero(n, steps);
  sol.U.assign(sol.nodes.size(), Eigen::MatrixXd::Zero(n, steps));
  sol.driver_integral = Eigen::VectorXd::Zero(n);
  return sol;
}

// Conditional mean of `next` and the (Z, U) extraction at one step.
struct StepProjection {
  Eigen::VectorXd conditional;
  Eigen::VectorXd z;
  std::vector<Eigen::VectorXd> u;
};

StepProjection project_step(const PathBatch& batch, const Eigen::MatrixXd& features,
                            const Eigen::VectorXd& weights, const Eigen::VectorXd& next,
                            std::size_t step, const SchemeParams& scheme,
                            std::vector<std::string>& warnings) {
  const Regression reg(features, weights, scheme.basis);
  if (reg.condition_number() > scheme.condition_warning) {
    std::ostringstream os;
    os << "step " << step << ": regression condition number " << reg.condition_number()
       << " exceeds " << scheme.condition_warning;
    warnings.push_back(os.str());
  }
  const JumpNodes& nodes = batch.model->nodes();
  const double dt = batch.grid->dt(step);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto n_nodes = static_cast<Eigen::Index>(nodes.size());

  StepProjection out;
  out.conditional = reg.project(next);
  const Eigen::VectorXd centered = next - out.conditional;
  Eigen::MatrixXd targets(n, 1 + n_nodes);
  for (Eigen::Index p = 0; p < n; ++p) {
    const Path& path = batch.paths[static_cast<std::size_t>(p)];
    targets(p, 0) = centered(p) * path.dw(step);
    for (Eigen::Index j = 0; j < n_nodes; ++j) {
      targets(p, 1 + j) = centered(p) * path.compensated_count(step, static_cast<std::size_t>(j));
    }
  }
  const Eigen::MatrixXd fitted = reg.project(targets);
  out.z = batch.model->sigma() > 0.0 ? Eigen::VectorXd(fitted.col(0) / dt)
                                     : Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < n_nodes; ++j) {
    out.u.emplace_back(fitted.col(1 + j) / (nodes.weights[static_cast<std::size_t>(j)] * dt));
  }
  return out;
}

double standard_error(const Eigen::VectorXd& values, const Eigen::VectorXd& weights) {
  const double mean = weights.dot(values);
  const double var = weights.dot((values.array() - mean).square().matrix());
  const double n_eff = 1.0 / weights.squaredNorm();
  return std::sqrt(var / n_eff);
}

}  // namespace

BsdeSolution zero_solution(const PathBatch& batch) { return empty_solution(batch); }

// ---------------------------------------------------------------- backward solve

BsdeSolution solve_backward(const BackwardProblem& problem, const SchemeParams& scheme) {
  const PathBatch& batch = *problem.batch;
  if (batch.size() == 0) throw ParameterError("empty path batch");
  static const std::vector<std::vector<double>> no_forward;
  const auto& forward = problem.forward ? *problem.forward : no_forward;
  const TimeGrid& grid = *batch.grid;
  const std::size_t steps = grid.steps();
  if (problem.terminal.size() != static_cast<Eigen::Index>(batch.size())) {
    throw ShapeError("terminal vector does not match the batch");
  }
  if (!problem.terminal.allFinite()) throw ParameterError("non-finite terminal value");

  const double contraction = grid.max_dt() * problem.lipschitz;
  if (!(contraction < 1.0)) {
    std::ostringstream os;
    os << "Picard map does not contract: dt * L = " << contraction
       << " >= 1; use a smaller time step";
    throw ContractionError(os.str());
  }

  BsdeSolution sol = empty_solution(batch);
  sol.basis_spec = scheme.basis.describe();
  sol.inner_residuals.assign(steps, {});
  const Eigen::VectorXd weights = batch_weights(batch);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const std::size_t n_nodes = sol.nodes.size();
  const auto max_inner = static_cast<std::size_t>(std::max(1, scheme.max_inner_iterations));

  sol.Y.col(static_cast<Eigen::Index>(steps)) = problem.terminal;
  for (std::size_t ii = steps; ii-- > problem.first_index;) {
    const auto i = static_cast<Eigen::Index>(ii);
    const double dt = grid.dt(ii);
    const StepProjection proj = project_step(batch, step_features(batch, forward, ii), weights,
                                             sol.Y.col(i + 1), ii, scheme, sol.warnings);
    sol.Z.col(i) = proj.z;
    for (std::size_t j = 0; j < n_nodes; ++j) sol.U[j].col(i) = proj.u[j];

    std::vector<double> residual(max_inner, 0.0);
    std::size_t used = 0;
    bool failed = false;
    for (Eigen::Index p = 0; p < n; ++p) {
      std::vector<double> u(n_nodes);
      for (std::size_t j = 0; j < n_nodes; ++j) u[j] = proj.u[j](p);
      const double c = proj.conditional(p);
      const double z = proj.z(p);
      double y = c;
      double fy = 0.0;
      bool converged = false;
      for (std::size_t m = 0; m < max_inner; ++m) {
        fy = problem.driver(static_cast<std::size_t>(p), ii, y, z, u);
        const double next = c + dt * fy;
        const double r = std::abs(next - y);
        residual[m] = std::max(residual[m], r);
        used = std::max(used, m + 1);
        y = next;
        if (r <= scheme.picard_tol * std::max(1.0, std::abs(y))) {
          converged = true;
          break;
        }
      }
      if (!converged || !std::isfinite(y)) failed = true;
      sol.Y(p, i) = y;
      sol.driver_integral(p) += dt * fy;
    }
    if (failed) {
      throw ContractionError("inner Picard iteration did not converge at step " +
                             std::to_string(ii) + "; use a smaller time step");
    }
    residual.resize(used);
    sol.inner_residuals[ii] = std::move(residual);
  }
  sol.y0_standard_error = standard_error(problem.terminal + sol.driver_integral, weights);
  return sol;
}

BsdeSolution solve_bsde(const TerminalFunctional& xi, const Generator& gen,
                        const PathBatch& batch, const SchemeParams& scheme) {
  if (batch.size() == 0) throw ParameterError("empty path batch");
  const auto forward = forward_states(batch, gen.forward.get());
  Eigen::VectorXd terminal(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t p = 0; p < batch.size(); ++p) {
    terminal(static_cast<Eigen::Index>(p)) = xi(batch.paths[p]);
  }
  BackwardProblem problem;
  problem.batch = &batch;
  problem.forward = &forward;
  problem.terminal = std::move(terminal);
  problem.lipschitz = gen.contraction_constant();
  problem.driver = [&](std::size_t p, std::size_t i, double y, double z,
                       std::span<const double> u) {
    const DriverContext ctx{batch.paths[p],
                            forward.empty() ? std::span<const double>() : std::span<const double>(forward[p]),
                            i, batch.grid->time(i)};
    return gen(ctx, y, z, u);
  };
  return solve_backward(problem, scheme);
}

// ---------------------------------------------------------------- global Picard

double picard_gap(const BsdeSolution& a, const BsdeSolution& b, const PathBatch& batch,
                  double beta) {
  const Eigen::VectorXd w = batch_weights(batch);
  const TimeGrid& grid = *batch.grid;
  double total = 0.0;
  for (std::size_t ii = 0; ii < grid.steps(); ++ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    double step = w.dot((a.Y.col(i) - b.Y.col(i)).array().square().matrix()) +
                  w.dot((a.Z.col(i) - b.Z.col(i)).array().square().matrix());
    for (std::size_t j = 0; j < a.U.size(); ++j) {
      step += a.nodes.weights[j] * w.dot((a.U[j].col(i) - b.U[j].col(i)).array().square().matrix());
    }
    total += std::exp(beta * grid.time(ii)) * grid.dt(ii) * step;
  }
  return std::sqrt(total);
}

BsdeSolution picard_step(const BsdeSolution& prev, const TerminalFunctional& xi,
                         const Generator& gen, const PathBatch& batch,
                         const SchemeParams& scheme) {
  if (prev.paths() != batch.size() || !(*prev.grid == *batch.grid)) {
    throw ShapeError("previous iterate lives on a different batch");
  }
  const auto forward = forward_states(batch, gen.forward.get());
  const TimeGrid& grid = *batch.grid;
  const std::size_t steps = grid.steps();
  const Eigen::VectorXd weights = batch_weights(batch);
  const auto n = static_cast<Eigen::Index>(batch.size());

  BsdeSolution next = empty_solution(batch);
  next.basis_spec = scheme.basis.describe();
  next.inner_residuals.assign(steps, {});
  Eigen::VectorXd terminal(n);
  for (Eigen::Index p = 0; p < n; ++p) terminal(p) = xi(batch.paths[static_cast<std::size_t>(p)]);
  next.Y.col(static_cast<Eigen::Index>(steps)) = terminal;

  for (std::size_t ii = steps; ii-- > 0;) {
    const auto i = static_cast<Eigen::Index>(ii);
    const double dt = grid.dt(ii);
    const StepProjection proj = project_step(batch, step_features(batch, forward, ii), weights,
                                             next.Y.col(i + 1), ii, scheme, next.warnings);
    next.Z.col(i) = proj.z;
    for (std::size_t j = 0; j < next.U.size(); ++j) next.U[j].col(i) = proj.u[j];
    for (Eigen::Index p = 0; p < n; ++p) {
      const auto pp = static_cast<std::size_t>(p);
      const DriverContext ctx{batch.paths[pp],
                              forward.empty() ? std::span<const double>() : std::span<const double>(forward[pp]),
                              ii, grid.time(ii)};
      const std::vector<double> u = prev.u_row(pp, ii);
      const double fy = gen(ctx, prev.Y(p, i), prev.Z(p, i), u);
      next.Y(p, i) = proj.conditional(p) + dt * fy;
      next.driver_integral(p) += dt * fy;
    }
  }
  next.picard_gaps = prev.picard_gaps;
  next.picard_gaps.push_back(picard_gap(next, prev, batch, scheme.picard_weight));
  next.y0_standard_error = standard_error(terminal + next.driver_integral, weights);
  return next;
}

BsdeSolution solve_bsde_picard(const TerminalFunctional& xi, const Generator& gen,
                               const PathBatch& batch, const SchemeParams& scheme) {
  BsdeSolution current = zero_solution(batch);
  for (int it = 0; it < scheme.max_global_iterations; ++it) {
    current = picard_step(current, xi, gen, batch, scheme);
    if (current.picard_gaps.back() <= scheme.picard_tol) return current;
  }
  throw ContractionError("global Picard iteration did not reach tolerance in " +
                         std::to_string(scheme.max_global_iterations) + " iterations");
}

// ---------------------------------------------------------------- stability

StabilityReport stability_gap(const BsdeSolution& sol, const BsdeSolution& sol_prime,
                              const PathBatch& batch, double data_gap) {
  if (sol.paths() != sol_prime.paths() || sol.paths() != batch.size()) {
    throw ShapeError("solutions live on different batches");
  }
  const Eigen::VectorXd w = batch_weights(batch);
  const TimeGrid& grid = *batch.grid;
  StabilityReport r;
  const Eigen::MatrixXd dy = sol.Y - sol_prime.Y;
  Eigen::VectorXd sup(dy.rows());
  for (Eigen::Index p = 0; p < dy.rows(); ++p) sup(p) = dy.row(p).cwiseAbs().maxCoeff();
  r.y_sup = w.dot(sup.array().square().matrix());
  for (std::size_t ii = 0; ii < grid.steps(); ++ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    const double dt = grid.dt(ii);
    r.z_part += dt * w.dot((sol.Z.col(i) - sol_prime.Z.col(i)).array().square().matrix());
    for (std::size_t j = 0; j < sol.U.size(); ++j) {
      r.u_part += dt * sol.nodes.weights[j] *
                  w.dot((sol.U[j].col(i) - sol_prime.U[j].col(i)).array().square().matrix());
    }
  }
  r.lhs = r.y_sup + r.z_part + r.u_part;
  r.rhs = data_gap;
  r.ratio = r.rhs > 0.0 ? r.lhs / r.rhs : (r.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  return r;
}

double stability_data_gap(const TerminalFunctional& xi, const TerminalFunctional& xi_prime,
                          const Generator& gen, const Generator& gen_prime,
                          const BsdeSolution& sol, const PathBatch& batch) {
  const auto forward = forward_states(batch, gen.forward.get());
  const auto forward_prime = forward_states(batch, gen_prime.forward.get());
  const TimeGrid& grid = *batch.grid;
  double terminal = 0.0;
  double driver = 0.0;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const Path& path = batch.paths[p];
    const double d = xi(path) - xi_prime(path);
    terminal += batch.weight(p) * d * d;
    for (std::size_t i = 0; i < grid.steps(); ++i) {
      const auto pi = static_cast<Eigen::Index>(p);
      const auto ii = static_cast<Eigen::Index>(i);
      const std::vector<double> u = sol.u_row(p, i);
      const DriverContext ctx{path, forward.empty() ? std::span<const double>() : std::span<const double>(forward[p]), i,
                              grid.time(i)};
      const DriverContext ctx_prime{
          path, forward_prime.empty() ? std::span<const double>() : std::span<const double>(forward_prime[p]), i,
          grid.time(i)};
      const double df = gen(ctx, sol.Y(pi, ii), sol.Z(pi, ii), u) -
                        gen_prime(ctx_prime, sol.Y(pi, ii), sol.Z(pi, ii), u);
      driver += batch.weight(p) * grid.dt(i) * df * df;
    }
  }
  return terminal + driver;
}

// ---------------------------------------------------------------- g^α

double g_alpha(double alpha, double x) {
  if (!(alpha > 0.0)) throw ParameterError("alpha must be > 0");
  return (std::expm1(alpha * x) - alpha * x) / alpha;
}

double g_alpha_prime(double alpha, double x) {
  if (!(alpha > 0.0)) throw ParameterError("alpha must be > 0");
  return std::expm1(alpha * x);
}

namespace {

// 1 − smootherstep on [0, 1]: C² with zero first and second derivatives at both ends.
double blend(double s) {
  if (s <= 0.0) return 1.0;
  if (s >= 1.0) return 0.0;
  return 1.0 - s * s * s * (s * (6.0 * s - 15.0) + 10.0);
}

double blend_prime(double s) {
  if (s <= 0.0 || s >= 1.0) return 0.0;
  return -30.0 * s * s * (s - 1.0) * (s - 1.0);
}

}  // namespace

TruncatedGAlpha truncate_g_alpha(double alpha, double bound) {
  if (!(alpha > 0.0)) throw ParameterError("alpha must be > 0");
  if (!(bound > 0.0)) throw ParameterError("truncation bound must be > 0");
  TruncatedGAlpha t;
  t.alpha = alpha;
  t.bound = bound;
  const double k = bound;
  t.g = [alpha, k](double x) {
    const double s = (std::abs(x) - 2.0 * k) / k;
    if (s >= 1.0) return 0.0;
    return g_alpha(alpha, x) * blend(s);
  };
  t.g_prime = [alpha, k](double x) {
    const double s = (std::abs(x) - 2.0 * k) / k;
    if (s >= 1.0) return 0.0;
    const double sign = x < 0.0 ? -1.0 : 1.0;
    return g_alpha_prime(alpha, x) * blend(s) + g_alpha(alpha, x) * blend_prime(s) * sign / k;
  };
  // |ĝ'| on [0, 2K] peaks at 2K (g' is monotone); the collars are sampled densely.
  double lip = std::max(std::abs(g_alpha_prime(alpha, 2.0 * k)),
                        std::abs(g_alpha_prime(alpha, -2.0 * k)));
  const int n = 20000;
  for (int m = 0; m <= n; ++m) {
    const double s = static_cast<double>(m) / n;
    lip = std::max({lip, std::abs(t.g_prime((2.0 + s) * k)), std::abs(t.g_prime(-(2.0 + s) * k))});
  }
  t.lipschitz = lip;
  return t;
}

}  // namespace levymal
