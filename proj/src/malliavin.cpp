#include "levymal/malliavin.hpp"

#include <cmath>
#include <random>

#include "levymal/errors.hpp"

namespace levymal {

std::vector<BasePoint> base_point_grid(const TimeGrid& grid, std::size_t stride,
                                       const std::vector<double>& marks,
                                       const MeasureSpec& spec, bool include_zero_time) {
  if (stride == 0) throw ParameterError("base-point stride must be >= 1");
  std::vector<BasePoint> out;
  for (std::size_t i = include_zero_time ? 0 : stride; i < grid.steps(); i += stride) {
    const double len = grid.time(std::min(i + stride, grid.steps())) - grid.time(i);
    for (double v : marks) out.push_back({grid.time(i), v, len * spec.mu(v)});
  }
  return out;
}

double jump_derivative(const TerminalFunctional& xi, const Path& path, double r, double v) {
  if (v == 0.0) throw DirectionError("v = 0 is the Brownian channel; use the Brownian derivative");
  return xi(shift_path(path, r, v)) - xi(path);
}

MalliavinField functional_field(const TerminalFunctional& xi, const PathBatch& batch,
                                std::vector<BasePoint> base_points) {
  MalliavinField field;
  field.sigma = batch.model->sigma();
  field.values.resize(static_cast<Eigen::Index>(batch.size()),
                      static_cast<Eigen::Index>(base_points.size()));
  for (std::size_t b = 0; b < base_points.size(); ++b) {
    const auto& bp = base_points[b];
    if (bp.v == 0.0 && !xi.brownian_derivative) {
      throw CapabilityError("terminal functional '" + xi.name + "' has no Brownian derivative");
    }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(batch.size()); ++p) {
      const Path& path = batch.paths[static_cast<std::size_t>(p)];
      field.values(p, static_cast<Eigen::Index>(b)) =
          bp.v == 0.0 ? xi.brownian_derivative(path, bp.r) : jump_derivative(xi, path, bp.r, bp.v);
    }
  }
  field.base_points = std::move(base_points);
  return field;
}

double d12_norm_squared(const Eigen::VectorXd& xi_values, const MalliavinField& field,
                        const PathBatch& batch) {
  const Eigen::VectorXd w = batch_weights(batch);
  if (xi_values.size() != w.size() || field.values.rows() != w.size()) {
    throw ShapeError("field does not match the batch");
  }
  double norm = w.dot(xi_values.array().square().matrix());
  for (std::size_t b = 0; b < field.base_points.size(); ++b) {
    norm += field.base_points[b].weight *
            w.dot(field.values.col(static_cast<Eigen::Index>(b)).array().square().matrix());
  }
  return norm;
}

FdQuotients brownian_fd_derivative(const TerminalFunctional& xi, const Path& path,
                                   const CameronMartinDirection& dir,
                                   std::span<const double> u) {
  FdQuotients out;
  const double base = xi(path);
  for (double step : u) {
    if (step == 0.0) throw ParameterError("finite-difference step must be nonzero");
    out.u.push_back(step);
    out.quotients.push_back((xi(cameron_martin_shift(path, dir, step)) - base) / step);
  }
  if (xi.brownian_derivative) {
    const double sigma = path.model().sigma();
    double pairing = 0.0;
    for (std::size_t i = 0; i < dir.h().size(); ++i) {
      pairing += sigma * xi.brownian_derivative(path, dir.grid().time(i)) * dir.h()[i] * dir.grid().dt(i);
    }
    out.analytic = pairing;
  }
  return out;
}

PathBatch shifted_batch(const PathBatch& batch, double r, double v) {
  PathBatch out{batch.model, batch.grid, {}, batch.weights};
  out.paths.reserve(batch.size());
  for (const auto& p : batch.paths) out.paths.push_back(shift_path(p, r, v));
  return out;
}

namespace {

std::span<const double> row_or_empty(const std::shared_ptr<const std::vector<std::vector<double>>>& rows,
                                     std::size_t p) {
  if (!rows || rows->empty()) return {};
  return (*rows)[p];
}

}  // namespace

DerivativeProblem build_derivative_problem(const BsdeSolution& base, const TerminalFunctional& xi,
                                           const Generator& gen, const PathBatch& batch,
                                           double r, double v) {
  if (base.paths() != batch.size() || !(*base.grid == *batch.grid)) {
    throw ShapeError("base solution lives on a different batch");
  }
  const TimeGrid& grid = *batch.grid;
  DerivativeProblem prob;
  prob.base = {r, v, 0.0};
  prob.first_index = grid.index_at_or_after(r);
  prob.batch = &batch;
  prob.lipschitz = gen.contraction_constant();
  prob.forward = std::make_shared<const std::vector<std::vector<double>>>(
      forward_states(batch, gen.forward.get()));
  prob.terminal.resize(static_cast<Eigen::Index>(batch.size()));

  const auto generator = std::make_shared<const Generator>(gen);
  const BsdeSolution* sol = &base;
  const auto forward = prob.forward;

  if (v != 0.0) {
    prob.shifted = std::make_shared<const PathBatch>(shifted_batch(batch, r, v));
    prob.shifted_forward = std::make_shared<const std::vector<std::vector<double>>>(
        forward_states(*prob.shifted, gen.forward.get()));
    for (std::size_t p = 0; p < batch.size(); ++p) {
      prob.terminal(static_cast<Eigen::Index>(p)) = xi(prob.shifted->paths[p]) - xi(batch.paths[p]);
    }
    const auto shifted = prob.shifted;
    const auto shifted_forward = prob.shifted_forward;
    prob.driver = [generator, sol, forward, shifted, shifted_forward, &batch](
                      std::size_t p, std::size_t i, double y, double z, std::span<const double> u) {
      const auto pi = static_cast<Eigen::Index>(p);
      const auto ii = static_cast<Eigen::Index>(i);
      const double t = batch.grid->time(i);
      const DriverContext ctx{batch.paths[p], row_or_empty(forward, p), i, t, {}};
      const DriverContext ctx_shift{shifted->paths[p], row_or_empty(shifted_forward, p), i, t, {}};
      std::vector<double> base_u = sol->u_row(p, i);
      std::vector<double> moved(base_u.size());
      for (std::size_t j = 0; j < moved.size(); ++j) moved[j] = base_u[j] + u[j];
      const double y0 = sol->Y(pi, ii), z0 = sol->Z(pi, ii);
      return (*generator)(ctx_shift, y0 + y, z0 + z, moved) - (*generator)(ctx, y0, z0, base_u);
    };
    return prob;
  }

  if (!(batch.model->sigma() > 0.0)) throw CapabilityError("model has no Brownian channel (sigma = 0)");
  if (!gen.df_dy || !gen.df_dz || !gen.df_dw) {
    throw CapabilityError("Brownian derivative equation needs df/dy, df/dz and df/dw");
  }
  if (!gen.g_prime) throw CapabilityError("Brownian derivative equation needs g'");
  if (!xi.brownian_derivative) {
    throw CapabilityError("terminal functional '" + xi.name + "' has no Brownian derivative");
  }
  if (!gen.path_independent && !gen.malliavin_f) {
    throw CapabilityError("path-dependent driver needs its Malliavin derivative D_{r,0}f");
  }
  for (std::size_t p = 0; p < batch.size(); ++p) {
    prob.terminal(static_cast<Eigen::Index>(p)) = xi.brownian_derivative(batch.paths[p], r);
  }
  if (gen.forward && gen.malliavin_f) {
    auto variation = std::make_shared<std::vector<std::vector<double>>>(batch.size());
    for (std::size_t p = 0; p < batch.size(); ++p) {
      (*variation)[p] = forward_first_variation(*gen.forward, batch.paths[p], (*forward)[p], r);
    }
    prob.forward_variation = variation;
  }
  const auto variation = prob.forward_variation;
  prob.driver = [generator, sol, forward, variation, &batch, r](
                    std::size_t p, std::size_t i, double y, double z, std::span<const double> u) {
    const auto pi = static_cast<Eigen::Index>(p);
    const auto ii = static_cast<Eigen::Index>(i);
    const DriverContext ctx{batch.paths[p], row_or_empty(forward, p), i, batch.grid->time(i),
                            row_or_empty(variation, p)};
    const std::vector<double> base_u = sol->u_row(p, i);
    const double y0 = sol->Y(pi, ii), z0 = sol->Z(pi, ii);
    const double w0 = generator->jump_aggregate(base_u);
    const double df = generator->malliavin_f ? generator->malliavin_f(ctx, r, y0, z0, w0) : 0.0;
    return df + generator->df_dy(ctx, y0, z0, w0) * y + generator->df_dz(ctx, y0, z0, w0) * z +
           generator->df_dw(ctx, y0, z0, w0) * generator->jump_sensitivity(base_u, u);
  };
  return prob;
}

BsdeSolution solve_derivative_bsde(const DerivativeProblem& problem, const SchemeParams& scheme) {
  if (!problem.batch || !problem.driver) throw ParameterError("derivative problem is not built");
  BackwardProblem bp;
  bp.batch = problem.batch;
  bp.forward = problem.forward.get();
  bp.terminal = problem.terminal;
  bp.driver = problem.driver;
  bp.lipschitz = problem.lipschitz;
  bp.first_index = problem.first_index;
  BsdeSolution sol = solve_backward(bp, scheme);
  const auto k = static_cast<Eigen::Index>(problem.first_index);
  if (k > 0) {
    const bool zero = (sol.Y.leftCols(k).array() == 0.0).all() &&
                      (sol.Z.leftCols(k).array() == 0.0).all();
    if (!zero) throw Error("derivative solution is nonzero before its base time");
  }
  return sol;
}

double domination_excess(const DerivativeProblem& problem, const Generator& gen,
                         std::size_t n_probes, std::uint64_t seed, double scale) {
  if (!gen.gamma_bound) throw CapabilityError("generator declares no dominating field");
  const PathBatch& batch = *problem.batch;
  const std::size_t steps = batch.grid->steps();
  if (problem.first_index >= steps) return -std::numeric_limits<double>::infinity();
  const JumpNodes& nodes = batch.model->nodes();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_path(0, batch.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_step(problem.first_index, steps - 1);
  std::uniform_real_distribution<double> arg(-scale, scale);
  const double gamma = gen.gamma_bound(problem.base.r, problem.base.v);
  double worst = -std::numeric_limits<double>::infinity();
  std::vector<double> u(nodes.size());
  for (std::size_t k = 0; k < n_probes; ++k) {
    const std::size_t p = pick_path(rng), i = pick_step(rng);
    // Every fourth probe is the origin, where only Γ bounds the driver.
    const bool origin = k % 4 == 0;
    const double y = origin ? 0.0 : arg(rng);
    const double z = origin ? 0.0 : arg(rng);
    for (double& x : u) x = origin ? 0.0 : arg(rng);
    const double bound = problem.lipschitz * (std::abs(y) + std::abs(z) + nodes.l2_norm(u)) + gamma;
    worst = std::max(worst, std::abs(problem.driver(p, i, y, z, u)) - bound);
  }
  return worst;
}

std::vector<double> chain_rule_brownian(const ParametricFunctional& f, const VectorFunctional& g,
                                        const Path& path) {
  if (!f.path_derivative) throw CapabilityError("F has no path derivative");
  if (f.dy.size() != g.value.size() || g.derivative.size() != g.value.size()) {
    throw CapabilityError("chain rule needs dF/dy_k and D^W G_k for every component");
  }
  for (const auto& d : f.dy) {
    if (!d) throw CapabilityError("missing dF/dy");
  }
  std::vector<double> y(g.value.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = g.value[k](path);
  std::vector<double> field(path.grid().steps());
  for (std::size_t i = 0; i < field.size(); ++i) {
    double s = f.path_derivative(path, i, y);
    for (std::size_t k = 0; k < y.size(); ++k) s += f.dy[k](path, y) * g.derivative[k](path, i);
    field[i] = s;
  }
  return field;
}

RightLimit right_limit(const BsdeSolution& derivative, double r, double v) {
  const std::size_t k = derivative.grid->index_at_or_after(r);
  return {{r, v, 0.0}, k, derivative.Y.col(static_cast<Eigen::Index>(k))};
}

ResidualReport representation_residual(const BsdeSolution& base,
                                       const std::vector<RightLimit>& limits,
                                       const PathBatch& batch,
                                       const std::vector<std::vector<double>>& forward,
                                       const BasisSpec& basis, double tolerance) {
  if (limits.empty()) throw CoverageError("no derivative channel supplied");
  if (base.paths() != batch.size()) throw ShapeError("base solution lives on a different batch");
  const Eigen::VectorXd w = batch_weights(batch);
  ResidualReport report;
  double num_z = 0.0, den_z = 0.0, num_u = 0.0, den_u = 0.0;
  for (const auto& lim : limits) {
    if (lim.index == 0) throw CoverageError("base point at t = 0 has no strictly prior step");
    if (lim.values.size() != w.size()) throw ShapeError("right limit does not match the batch");
    const std::size_t prior = lim.index - 1;
    const Regression reg(step_features(batch, forward, prior), w, basis);
    Eigen::VectorXd estimate = reg.project(lim.values);
    Eigen::VectorXd target;
    if (lim.base.v == 0.0) {
      if (!(base.sigma > 0.0)) throw CoverageError("no Brownian channel in the base solution");
      estimate *= base.sigma;
      target = base.Z.col(static_cast<Eigen::Index>(prior));
    } else {
      const auto j = base.nodes.index_of(lim.base.v);
      if (!j) throw CoverageError("direction " + std::to_string(lim.base.v) + " is not a jump node");
      target = base.U[*j].col(static_cast<Eigen::Index>(prior));
    }
    const double num = w.dot((estimate - target).array().square().matrix());
    const double den = w.dot(target.array().square().matrix());
    const double residual = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
    report.rows.push_back({lim.base.r, lim.base.v, lim.index, residual, batch.size(), tolerance,
                           residual <= tolerance});
    if (lim.base.v == 0.0) {
      num_z += num;
      den_z += den;
      report.has_z = true;
    } else {
      num_u += num;
      den_u += den;
      report.has_u = true;
    }
  }
  if (report.has_z) report.residual_z = den_z > 0.0 ? std::sqrt(num_z / den_z) : std::sqrt(num_z);
  if (report.has_u) report.residual_u = den_u > 0.0 ? std::sqrt(num_u / den_u) : std::sqrt(num_u);
  return report;
}

}  // namespace levymal
