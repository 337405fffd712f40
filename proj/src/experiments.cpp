#include "levymal/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "levymal/bsde.hpp"
#include "levymal/chaos.hpp"
#include "levymal/errors.hpp"
#include "levymal/malliavin.hpp"
#include "levymal/oracles.hpp"

namespace levymal {

Check Check::at_most(std::string name, double value, double tolerance) {
  Check c;
  c.name = std::move(name);
  c.rule = "<=";
  c.value = value;
  c.tolerance = tolerance;
  c.pass = value <= tolerance;
  return c;
}

Check Check::at_least(std::string name, double value, double bound) {
  Check c;
  c.name = std::move(name);
  c.rule = ">=";
  c.value = value;
  c.tolerance = bound;
  c.pass = value >= bound;
  return c;
}

Check Check::within(std::string name, double value, double lo, double hi) {
  Check c;
  c.name = std::move(name);
  c.rule = "in";
  c.value = value;
  c.lower = lo;
  c.tolerance = hi;
  c.pass = value >= lo && value <= hi;
  return c;
}

Check Check::statistical(std::string name, double estimate, double target, double se) {
  Check c;
  c.name = std::move(name);
  c.rule = "z<=3";
  c.value = estimate;
  c.target = target;
  c.standard_error = se;
  c.tolerance = 3.0;
  c.pass = *c.z() <= 3.0;
  return c;
}

Check Check::statistical_or_relative(std::string name, double estimate, double target, double se,
                                     double relative) {
  Check c;
  c.name = std::move(name);
  c.rule = "|diff|<=max(3se,rel)";
  c.value = estimate;
  c.target = target;
  c.standard_error = se;
  c.tolerance = std::max(3.0 * se, relative * std::abs(target));
  c.pass = std::abs(estimate - target) <= c.tolerance;
  return c;
}

std::optional<double> Check::z() const {
  if (!target || !standard_error) return std::nullopt;
  const double diff = std::abs(value - *target);
  if (*standard_error > 0.0) return diff / *standard_error;
  return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

void Table::add(std::vector<double> row) {
  if (row.size() != columns.size()) throw ShapeError("table row width differs from header");
  rows.push_back(std::move(row));
}

bool ExperimentResult::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

LevyModel ModelConfig::build() const { return LevyModel(gamma, sigma, jumps, horizon); }

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double ExperimentSpec::param(const std::string& key) const {
  const auto values = param_list(key);
  if (values.size() != 1) throw ConfigError("parameter '" + key + "' of " + name + " must be a scalar");
  return values.front();
}

std::vector<double> ExperimentSpec::param_list(const std::string& key) const {
  if (auto it = params.find(key); it != params.end()) return it->second;
  for (const auto& doc : find_recipe(recipe).params) {
    if (doc.key == key) return doc.default_value;
  }
  throw ConfigError("recipe " + recipe + " has no parameter '" + key + "'");
}

double ExperimentSpec::tolerance(const std::string& key) const {
  const auto it = tolerances.find(key);
  if (it == tolerances.end()) throw ConfigError("experiment " + name + " is missing tolerance '" + key + "'");
  return it->second;
}

std::uint64_t ExperimentSpec::seed() const { return substream_seed(scheme.seed, fnv1a(name)); }

namespace {

std::size_t as_count(double x, const std::string& key) {
  if (!(x >= 1.0) || x != std::floor(x)) throw ConfigError("parameter '" + key + "' must be a positive integer");
  return static_cast<std::size_t>(x);
}

SchemeParams scheme_params(const SchemeConfig& cfg) {
  SchemeParams s;
  s.basis = cfg.basis;
  s.picard_tol = cfg.picard_tol;
  return s;
}

struct Sample {
  double mean = 0.0;
  double se = 0.0;
};

Sample sample_mean(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  Sample s;
  s.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - s.mean) * (v - s.mean);
  s.se = x.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return s;
}

TerminalFunctional exp_terminal() {
  return TerminalFunctional::of_terminal("exp", [](double x) { return std::exp(x); },
                                         [](double x) { return std::exp(x); });
}

TerminalFunctional cos_terminal() {
  return TerminalFunctional::of_terminal("cos", [](double x) { return std::cos(x); },
                                         [](double x) { return -std::sin(x); });
}

TerminalFunctional sup_functional() {
  return {"sup",
          [](const Path& p) {
            const auto v = p.values();
            return *std::max_element(v.begin(), v.end());
          },
          nullptr, false};
}

// f = sin(y) + z/2 + w/2 with g = id.
Generator sine_generator(const JumpNodes& nodes) {
  Generator gen = Generator::zero(nodes);
  gen.f = [](const DriverContext&, double y, double z, double w) { return std::sin(y) + 0.5 * z + 0.5 * w; };
  gen.df_dy = [](const DriverContext&, double y, double, double) { return std::cos(y); };
  gen.df_dz = [](const DriverContext&, double, double, double) { return 0.5; };
  gen.df_dw = [](const DriverContext&, double, double, double) { return 0.5; };
  gen.lipschitz_f = std::sqrt(1.5);
  return gen;
}

double sum_squares(const Eigen::MatrixXd& m, Eigen::Index first_col) {
  if (first_col >= m.cols()) return 0.0;
  return m.rightCols(m.cols() - first_col).squaredNorm();
}

// Σ_i Δt_i Σ_p w_p (m_{p,i} − target)², over steps.
double weighted_sq_error(const Eigen::MatrixXd& m, double target, const PathBatch& batch) {
  const Eigen::VectorXd w = batch_weights(batch);
  double total = 0.0;
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    total += batch.grid->dt(static_cast<std::size_t>(i)) * w.dot((m.col(i).array() - target).square().matrix());
  }
  return total;
}

// ---------------------------------------------------------------------------

ExperimentResult run_jump_exactness(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const std::size_t n_points = as_count(spec.param("base_points"), "base_points");
  const auto vs = spec.param_list("v");
  if (vs.empty()) throw ConfigError("parameter 'v' must not be empty");
  const auto xi = exp_terminal();
  const double T = model.horizon();

  res.table.columns = {"r", "v", "max_relative_error", "mean_derivative"};
  res.table.description = "per base point: largest |D - e^X(e^v-1)|/|e^X(e^v-1)| over paths";
  double worst = 0.0;
  for (std::size_t k = 0; k < n_points; ++k) {
    const double r = T * static_cast<double>(k) / static_cast<double>(n_points);
    const double v = vs[k % vs.size()];
    if (v == 0.0) throw ConfigError("parameter 'v' must not contain 0");
    double err = 0.0, mean = 0.0;
    for (const auto& p : batch.paths) {
      const double d = jump_derivative(xi, p, r, v);
      const double exact = std::exp(p.terminal()) * std::expm1(v);
      err = std::max(err, std::abs(d - exact) / std::abs(exact));
      mean += d / static_cast<double>(batch.size());
    }
    worst = std::max(worst, err);
    res.table.add({r, v, err, mean});
  }
  res.checks.push_back(Check::at_most("max relative error", worst, spec.tolerance("relative_error")));
  return res;
}

struct KernelPair {
  SimpleKernel1 first;
  SimpleKernel2 second;
};

std::vector<KernelPair> isometry_kernels(const std::shared_ptr<const TimeGrid>& grid, const LevyModel& model) {
  const double T = grid->horizon();
  const std::size_t n = grid->steps();
  if (n % 4 != 0) throw ConfigError("isometry kernels need a step count divisible by 4");
  std::vector<double> marks;
  if (model.sigma() > 0.0) marks.push_back(0.0);
  for (double x : model.nodes().sizes) marks.push_back(x);
  if (marks.size() < 2) throw ConfigError("isometry kernels need at least two marks");
  const double q = grid->time(n / 4), h = grid->time(n / 2);
  const double first = marks.front(), last = marks.back();

  Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(marks.size()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) values(i, j) = std::sin(1.0 + 0.7 * static_cast<double>(i) + 1.3 * static_cast<double>(j));
  }

  std::vector<KernelPair> out;
  out.push_back({SimpleKernel1::indicator(grid, 0.0, h, {first}),
                 SimpleKernel2({{1.0, {0.0, h, {first, last}}, {h, T, marks}}})});
  out.push_back({SimpleKernel1::indicator(grid, q, T, {first, last}, 2.0),
                 SimpleKernel2({{1.0, {0.0, T, {first}}, {0.0, T, {last}}}, {-0.5, {0.0, q, {last}}, {q, T, {first}}}})});
  out.push_back({SimpleKernel1(grid, marks, values),
                 SimpleKernel2({{1.5, {q, h, marks}, {h, T, marks}}})});
  return out;
}

ExperimentResult run_isometry(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const auto mspec = MeasureSpec::from_model(model);
  const auto kernels = isometry_kernels(batch.grid, model);

  res.table.columns = {"kernel", "mean_I1_sq", "se_I1_sq", "m_norm_sq", "z_I1_sq", "mean_I1_I2", "se_I1_I2", "z_I1_I2"};
  res.table.description = "per kernel: E[I1(f)^2] against |f|^2 in L2(m), E[I1(f) I2(g)] against 0";
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    std::vector<double> sq(batch.size()), cross(batch.size());
    for (std::size_t p = 0; p < batch.size(); ++p) {
      const double a = integrate_M1(kernels[k].first, batch.paths[p]);
      sq[p] = a * a;
      cross[p] = a * integrate_M2(kernels[k].second, batch.paths[p]);
    }
    const auto s = sample_mean(sq);
    const auto c = sample_mean(cross);
    const double exact = m_norm_squared(kernels[k].first, mspec);
    const auto check_sq = Check::statistical("E[I1^2] kernel " + std::to_string(k + 1), s.mean, exact, s.se);
    const auto check_x = Check::statistical("E[I1 I2] kernel " + std::to_string(k + 1), c.mean, 0.0, c.se);
    res.table.add({static_cast<double>(k + 1), s.mean, s.se, exact, *check_sq.z(), c.mean, c.se, *check_x.z()});
    res.checks.push_back(check_sq);
    res.checks.push_back(check_x);
  }
  return res;
}

ExperimentResult run_girsanov(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const auto dir = CameronMartinDirection::constant(batch.grid, spec.param("h"));
  const std::vector<TerminalFunctional> functionals{
      TerminalFunctional::terminal_value(),
      TerminalFunctional::of_terminal("X_T^2", [](double x) { return x * x; }, nullptr), sup_functional()};

  res.table.columns = {"functional", "mean_shifted", "mean_weighted", "difference", "se", "z"};
  res.table.description = "functional 1=X_T 2=X_T^2 3=sup X; paired difference xi(shifted) - xi * density";
  for (std::size_t k = 0; k < functionals.size(); ++k) {
    std::vector<double> lhs(batch.size()), rhs(batch.size()), diff(batch.size());
    for (std::size_t p = 0; p < batch.size(); ++p) {
      const Path& path = batch.paths[p];
      lhs[p] = functionals[k](cameron_martin_shift(path, dir, 1.0));
      rhs[p] = functionals[k](path) * cameron_martin_weight(path, dir);
      diff[p] = lhs[p] - rhs[p];
    }
    const auto d = sample_mean(diff);
    const auto check = Check::statistical("E[xi o rho_h] - E[xi density] for " + functionals[k].name, d.mean, 0.0, d.se);
    res.table.add({static_cast<double>(k + 1), sample_mean(lhs).mean, sample_mean(rhs).mean, d.mean, d.se, *check.z()});
    res.checks.push_back(check);
  }
  return res;
}

ExperimentResult run_martingale_bsde(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const auto sol = solve_bsde(TerminalFunctional::terminal_value(), Generator::zero(model.nodes()), batch,
                              scheme_params(spec.scheme));
  const double T = model.horizon();
  const double sigma = model.sigma();
  const auto& nodes = model.nodes();

  res.checks.push_back(Check::statistical("Y0", sol.y0(batch), T * model.mean_rate(), sol.y0_standard_error));
  if (sigma > 0.0) {
    const double rel = std::sqrt(weighted_sq_error(sol.Z, sigma, batch) / (T * sigma * sigma));
    res.checks.push_back(Check::at_most("Z relative L2 error", rel, spec.tolerance("z_relative_l2")));
  }
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const double x = nodes.sizes[j];
    const double rel = std::sqrt(weighted_sq_error(sol.U[j], x, batch) / (T * x * x));
    res.checks.push_back(Check::at_most("U relative L2 error at x=" + std::to_string(x), rel,
                                        spec.tolerance("u_relative_l2")));
  }

  res.table.columns = {"step", "t", "mean_Z", "rms_Z_error"};
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    res.table.columns.push_back("mean_U" + std::to_string(j));
    res.table.columns.push_back("rms_U" + std::to_string(j) + "_error");
  }
  res.table.description = "per step: mean and rms error of Z against sigma and of U_j against x_j";
  const Eigen::VectorXd w = batch_weights(batch);
  for (std::size_t i = 0; i < sol.steps(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    std::vector<double> row{static_cast<double>(i), batch.grid->time(i), w.dot(sol.Z.col(col)),
                            std::sqrt(w.dot((sol.Z.col(col).array() - sigma).square().matrix()))};
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      row.push_back(w.dot(sol.U[j].col(col)));
      row.push_back(std::sqrt(w.dot((sol.U[j].col(col).array() - nodes.sizes[j]).square().matrix())));
    }
    res.table.add(std::move(row));
  }
  return res;
}

ExperimentResult run_linear_bsde(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const double alpha = spec.param("alpha");
  const std::size_t levels = as_count(spec.param("sweep_levels"), "sweep_levels");
  const std::size_t coarsest = spec.scheme.steps >> (levels - 1);
  if (levels < 2 || (coarsest << (levels - 1)) != spec.scheme.steps) {
    throw ConfigError("linear_bsde needs at least two levels and steps divisible by 2^(levels-1)");
  }
  const auto fine = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const auto xi = TerminalFunctional::terminal_value();
  const Generator gen = Generator::linear(alpha, model.nodes());
  const auto cf = closed_form_linear(model, alpha, TerminalKind::terminal_value);
  const double T = model.horizon();
  const double target = cf.y(0.0, 0.0);

  // The sweep error compares with e^{αT} times the sample mean of ξ, which
  // removes the Monte Carlo error shared by all levels.
  double mean_xi = 0.0;
  for (std::size_t p = 0; p < fine.size(); ++p) mean_xi += fine.weight(p) * xi(fine.paths[p]);
  const double sweep_target = std::exp(alpha * T) * mean_xi;

  res.table.columns = {"steps", "dt", "Y0", "se", "sweep_target", "error", "ratio"};
  res.table.description = "Y0 per level on coarsened common paths; error = |Y0 - e^{aT} mean(xi)|, ratio = error(2dt)/error(dt)";
  std::vector<double> errors;
  for (std::size_t level = 0; level < levels; ++level) {
    const std::size_t factor = std::size_t{1} << (levels - 1 - level);
    const PathBatch batch = factor == 1 ? fine : fine.coarsen(factor);
    const auto sol = solve_bsde(xi, gen, batch, scheme_params(spec.scheme));
    const double y0 = sol.y0(batch);
    errors.push_back(std::abs(y0 - sweep_target));
    const double ratio = level == 0 ? std::numeric_limits<double>::quiet_NaN() : errors[level - 1] / errors[level];
    res.table.add({static_cast<double>(batch.grid->steps()), batch.grid->max_dt(), y0, sol.y0_standard_error,
                   sweep_target, errors.back(), ratio});
    if (level + 1 == levels) {
      res.checks.push_back(Check::statistical_or_relative("Y0 against closed form", y0, target,
                                                          sol.y0_standard_error, spec.tolerance("relative")));
    }
    if (level > 0) {
      res.checks.push_back(Check::within("error ratio " + std::to_string(batch.grid->steps() / 2) + "->" +
                                             std::to_string(batch.grid->steps()) + " steps",
                                         ratio, spec.tolerance("ratio_min"), spec.tolerance("ratio_max")));
    }
  }
  return res;
}

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

ExperimentResult run_tree_equivalence(const ExperimentSpec& spec) {
  ExperimentResult res;
  const auto model = std::make_shared<const LevyModel>(spec.model.build());
  const TreeModel tree(model, as_count(spec.param("tree_steps"), "tree_steps"));
  const auto xi = cos_terminal();
  const Generator gen = sine_generator(model->nodes());
  const auto exact = tree_backward(tree, xi, gen);
  SchemeParams scheme = scheme_params(spec.scheme);
  scheme.basis = BasisSpec::indicator();
  scheme.max_inner_iterations = 200;
  const auto fitted = solve_bsde(xi, gen, tree.batch(), scheme);
  const double tol = spec.tolerance("max_abs");

  res.notes.push_back("regression basis: " + scheme.basis.describe() + " on " + std::to_string(tree.leaves()) + " tree leaves");
  res.table.columns = {"step", "t", "max_abs_dY", "max_abs_dZ", "max_abs_dU"};
  res.table.description = "per grid point: largest |regression - exact tree| over leaves (U over all nodes)";
  const std::size_t n = tree.steps();
  double dy0 = 0.0, dz0 = 0.0, du0 = 0.0, dy = 0.0, dz = 0.0, du = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const double ey = max_abs_diff(fitted.Y.col(c), exact.Y.col(c));
    double ez = 0.0, eu = 0.0;
    if (i < n) {
      ez = max_abs_diff(fitted.Z.col(c), exact.Z.col(c));
      for (std::size_t j = 0; j < exact.U.size(); ++j) eu = std::max(eu, max_abs_diff(fitted.U[j].col(c), exact.U[j].col(c)));
    }
    if (i == 0) dy0 = ey, dz0 = ez, du0 = eu;
    dy = std::max(dy, ey), dz = std::max(dz, ez), du = std::max(du, eu);
    res.table.add({static_cast<double>(i), tree.grid().time(i), ey, ez, eu});
  }
  res.checks.push_back(Check::at_most("|Y0 - tree|", dy0, tol));
  res.checks.push_back(Check::at_most("|Z0 - tree|", dz0, tol));
  res.checks.push_back(Check::at_most("|U0 - tree|", du0, tol));
  res.checks.push_back(Check::at_most("max |Y - tree| all steps", dy, tol));
  res.checks.push_back(Check::at_most("max |Z - tree| all steps", dz, tol));
  res.checks.push_back(Check::at_most("max |U - tree| all steps", du, tol));
  return res;
}

std::vector<double> base_times(const TimeGrid& grid, std::size_t count) {
  if (count > grid.steps()) throw ConfigError("more base points than grid steps");
  std::vector<double> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(grid.time(k * grid.steps() / count));
  return out;
}

ExperimentResult run_derivative_triangle(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const auto xi = cos_terminal();
  const Generator gen = sine_generator(model.nodes());
  const SchemeParams scheme = scheme_params(spec.scheme);
  const auto base = solve_bsde(xi, gen, batch, scheme);
  const auto vs = spec.param_list("v");
  const auto times = base_times(*batch.grid, as_count(spec.param("base_points"), "base_points"));
  const double tol = spec.tolerance("relative_l2");

  res.table.columns = {"r", "v", "relative_gap_Y", "relative_gap_YZU"};
  res.table.description = "per base point: |derivative solve - (shifted resolve - base)| / |shifted resolve - base| on t >= r";
  double worst = 0.0, num_all = 0.0, den_all = 0.0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double r = times[k], v = vs[k % vs.size()];
    if (v == 0.0) throw ConfigError("parameter 'v' must not contain 0");
    const auto d = solve_derivative_bsde(build_derivative_problem(base, xi, gen, batch, r, v), scheme);
    const auto resolved = solve_bsde(xi, gen, shifted_batch(batch, r, v), scheme);
    const auto first = static_cast<Eigen::Index>(batch.grid->index_at_or_after(r));
    const double num_y = sum_squares(d.Y - (resolved.Y - base.Y), first);
    const double den_y = sum_squares(resolved.Y - base.Y, first);
    double num = num_y + sum_squares(d.Z - (resolved.Z - base.Z), first);
    double den = den_y + sum_squares(resolved.Z - base.Z, first);
    for (std::size_t j = 0; j < d.U.size(); ++j) {
      num += sum_squares(d.U[j] - (resolved.U[j] - base.U[j]), first);
      den += sum_squares(resolved.U[j] - base.U[j], first);
    }
    const double gap_y = std::sqrt(num_y / den_y), gap = std::sqrt(num / den);
    worst = std::max(worst, gap);
    num_all += num;
    den_all += den;
    res.table.add({r, v, gap_y, gap});
  }
  res.checks.push_back(Check::at_most("largest relative L2 gap over base points", worst, tol));
  res.checks.push_back(Check::at_most("pooled relative L2 gap", std::sqrt(num_all / den_all), tol));
  return res;
}

ExperimentResult run_chain_rule(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  if (model.sigma() <= 0.0) throw ConfigError("chain_rule needs sigma > 0");
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const auto dir = CameronMartinDirection::constant(batch.grid, spec.param("h"));
  const std::size_t levels = as_count(spec.param("levels"), "levels");
  if (levels < 2) throw ConfigError("chain_rule needs at least two levels");
  std::vector<double> us{spec.param("u0")};
  for (std::size_t k = 1; k < levels; ++k) us.push_back(us.back() / 2.0);

  // F(ω, y) = W_T y, G = W_T; the composite is W_T².
  auto w_t = [](const Path& p) { return p.brownian_path().back(); };
  const ParametricFunctional f{[w_t](const Path& p, std::span<const double> y) { return w_t(p) * y[0]; },
                               [](const Path&, std::size_t, std::span<const double> y) { return y[0]; },
                               {[w_t](const Path& p, std::span<const double>) { return w_t(p); }}};
  const VectorFunctional g{{w_t}, {[](const Path&, std::size_t) { return 1.0; }}};
  const TerminalFunctional composite{"W_T^2", [w_t](const Path& p) { return w_t(p) * w_t(p); }, nullptr, false};

  std::vector<double> err(us.size(), 0.0);
  const auto h = dir.h();
  for (const auto& p : batch.paths) {
    const auto field = chain_rule_brownian(f, g, p);
    double analytic = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i) analytic += field[i] * h[i] * batch.grid->dt(i);
    const auto fd = brownian_fd_derivative(composite, p, dir, us);
    for (std::size_t k = 0; k < us.size(); ++k) err[k] += std::abs(fd.quotients[k] - analytic) / static_cast<double>(batch.size());
  }

  res.table.columns = {"u", "mean_abs_error", "ratio"};
  res.table.description = "E|FD quotient of W_T^2 - <assembled chain-rule field, h>| per u; ratio = error(2u)/error(u)";
  for (std::size_t k = 0; k < us.size(); ++k) {
    const double ratio = k == 0 ? std::numeric_limits<double>::quiet_NaN() : err[k - 1] / err[k];
    res.table.add({us[k], err[k], ratio});
    if (k > 0) {
      res.checks.push_back(Check::within("error ratio at u=" + std::to_string(us[k]), ratio,
                                         spec.tolerance("ratio_min"), spec.tolerance("ratio_max")));
    }
  }
  return res;
}

void add_residual_rows(ExperimentResult& res, const ResidualReport& report) {
  res.table.columns = {"r", "v", "index", "residual", "sample_size"};
  res.table.description = "per base point: relative L2 gap between the projected right limit of D_{r,v}Y and Z or U(v)";
  for (const auto& row : report.rows) {
    res.table.add({row.r, row.v, static_cast<double>(row.index), row.residual, static_cast<double>(row.sample_size)});
  }
}

ExperimentResult run_representation_tree(const ExperimentSpec& spec) {
  ExperimentResult res;
  const auto model = std::make_shared<const LevyModel>(spec.model.build());
  const TreeModel tree(model, as_count(spec.param("tree_steps"), "tree_steps"));
  const auto sol = tree_backward(tree, cos_terminal(), sine_generator(model->nodes()));
  const double tol = spec.tolerance("residual");
  std::vector<RightLimit> limits;
  for (std::size_t k = 1; k <= tree.steps(); ++k) {
    const double r = tree.grid().time(k);
    if (model->sigma() > 0.0) limits.push_back({{r, 0.0, 0.0}, k, tree_derivative(tree, sol, k, std::nullopt)});
    for (std::size_t j = 0; j < model->nodes().size(); ++j) {
      limits.push_back({{r, model->nodes().sizes[j], 0.0}, k, tree_derivative(tree, sol, k, j)});
    }
  }
  const auto report = representation_residual(sol, limits, tree.batch(), {}, BasisSpec::indicator(), tol);
  add_residual_rows(res, report);
  if (report.has_z) res.checks.push_back(Check::at_most("residual_Z", report.residual_z, tol));
  if (report.has_u) res.checks.push_back(Check::at_most("residual_U", report.residual_u, tol));
  return res;
}

ExperimentResult run_representation_mc(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const auto xi = TerminalFunctional::terminal_value();
  const Generator gen = Generator::zero(model.nodes());
  const SchemeParams scheme = scheme_params(spec.scheme);
  const auto base = solve_bsde(xi, gen, batch, scheme);
  const double tol = spec.tolerance("residual");

  std::vector<double> marks;
  if (model.sigma() > 0.0) marks.push_back(0.0);
  for (double x : model.nodes().sizes) marks.push_back(x);
  std::vector<RightLimit> limits;
  for (double r : spec.param_list("r")) {
    for (double v : marks) {
      const auto d = solve_derivative_bsde(build_derivative_problem(base, xi, gen, batch, r, v), scheme);
      limits.push_back(right_limit(d, r, v));
    }
  }
  const auto report = representation_residual(base, limits, batch, {}, spec.scheme.basis, tol);
  add_residual_rows(res, report);
  if (report.has_z) res.checks.push_back(Check::at_most("residual_Z", report.residual_z, tol));
  if (report.has_u) res.checks.push_back(Check::at_most("residual_U", report.residual_u, tol));
  return res;
}

ExperimentResult run_picard_gronwall(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  SchemeParams scheme = scheme_params(spec.scheme);
  scheme.picard_weight = spec.param("beta");
  scheme.max_global_iterations = static_cast<int>(as_count(spec.param("max_iterations"), "max_iterations"));
  const double eps = spec.scheme.picard_tol;
  const auto sol = solve_bsde_picard(cos_terminal(), sine_generator(model.nodes()), batch, scheme);

  // g_0 = 0 and g_{n+1} = ‖Y^{n+1} − Yⁿ‖; the distance of the first iterate
  // from the zero start is the data term C_0.
  std::vector<double> gaps{0.0};
  gaps.insert(gaps.end(), sol.picard_gaps.begin(), sol.picard_gaps.end());
  std::vector<double> c_terms(gaps.size() - 1, 0.0);
  c_terms[0] = gaps[1];
  const auto verdict = gronwall_check(gaps, eps, c_terms);
  res.notes.push_back(verdict.message);

  res.table.columns = {"n", "gap", "hypothesis_bound"};
  res.table.description = "Picard gap g_n (e^{beta t}-weighted L2 over Y,Z,U) and eps + C_{n-1} + g_{n-1}/2";
  double excess = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < gaps.size(); ++n) {
    const double bound = n == 0 ? 0.0 : eps + c_terms[n - 1] + 0.5 * gaps[n - 1];
    if (n > 0) excess = std::max(excess, gaps[n] - bound);
    res.table.add({static_cast<double>(n), gaps[n], bound});
  }
  auto hyp = Check::at_most("hypothesis excess max(g_{n+1} - eps - C_n - g_n/2)", excess, 0.0);
  hyp.pass = hyp.pass && verdict.hypothesis_holds;
  res.checks.push_back(hyp);
  auto tail = Check::at_most("last-quarter max gap", verdict.tail_max, verdict.tail_bound);
  tail.pass = tail.pass && verdict.conclusion_holds;
  res.checks.push_back(tail);
  res.checks.push_back(Check::at_most("final gap", gaps.back(), eps));
  return res;
}

ExperimentResult run_stability(const ExperimentSpec& spec) {
  ExperimentResult res;
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const auto xi = cos_terminal();
  const Generator gen = sine_generator(model.nodes());
  const SchemeParams scheme = scheme_params(spec.scheme);
  const auto sol = solve_bsde(xi, gen, batch, scheme);

  res.table.columns = {"magnitude", "y_sup", "z_part", "u_part", "lhs", "rhs", "ratio"};
  res.table.description = "xi' = xi + magnitude * sin(X_T + W_T); lhs = E sup|dY|^2 + Z and U parts, rhs = data gap";
  std::vector<double> ratios;
  for (double m : spec.param_list("magnitudes")) {
    const TerminalFunctional perturbed{
        "perturbed",
        [m](const Path& p) { return std::cos(p.terminal()) + m * std::sin(p.terminal() + p.brownian_path().back()); },
        nullptr, false};
    const auto sol2 = solve_bsde(perturbed, gen, batch, scheme);
    const auto rep = stability_gap(sol, sol2, batch, stability_data_gap(xi, perturbed, gen, gen, sol, batch));
    ratios.push_back(rep.ratio);
    res.table.add({m, rep.y_sup, rep.z_part, rep.u_part, rep.lhs, rep.rhs, rep.ratio});
  }
  if (ratios.empty()) throw ConfigError("parameter 'magnitudes' must not be empty");
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  res.checks.push_back(Check::at_most("max ratio / min ratio", *hi / *lo, spec.tolerance("ratio_spread")));
  return res;
}

// Solves (ξ, gen) either by regression on a sampled batch or on a tree.
using Solver = std::function<BsdeSolution(const TerminalFunctional&, const Generator&)>;

ExperimentResult utility_comparison(const ExperimentSpec& spec, const PathBatch& batch, const Solver& solve) {
  ExperimentResult res;
  const double alpha = spec.param("alpha");
  const auto xi = TerminalFunctional::of_terminal("tanh", [](double x) { return std::tanh(x); }, nullptr);

  // f = φ(y, z) + w with φ = −y/2 + sin(z)/2.
  Generator gen = Generator::zero(batch.model->nodes());
  gen.f = [](const DriverContext&, double y, double z, double w) { return -0.5 * y + 0.5 * std::sin(z) + w; };
  gen.lipschitz_f = std::sqrt(1.5);
  double xi_sup = 0.0;
  for (const auto& p : batch.paths) xi_sup = std::max(xi_sup, std::abs(xi(p)));

  Generator exact = gen;
  exact.g = [alpha](double x) { return g_alpha(alpha, x); };
  exact.g_prime = [alpha](double x) { return g_alpha_prime(alpha, x); };
  // g^α is only locally Lipschitz; the bound on [−2K, 2K] serves the step check.
  exact.g_lipschitz = truncate_g_alpha(alpha, xi_sup).lipschitz;
  const auto sol = solve(xi, exact);
  const double y_sup = sol.Y.cwiseAbs().maxCoeff();

  const auto trunc = truncate_g_alpha(alpha, y_sup);
  Generator cut = gen;
  cut.g = trunc.g;
  cut.g_prime = trunc.g_prime;
  cut.g_lipschitz = trunc.lipschitz;
  BsdeSolution sol_cut;
  try {
    sol_cut = solve(xi, cut);
  } catch (const ContractionError& e) {
    res.notes.push_back(std::string("truncated solve rejected: ") + e.what());
    const double dt_l = batch.grid->max_dt() * cut.contraction_constant();
    res.checks.push_back(Check::at_most("dt * L of the truncated generator", dt_l, 1.0));
    res.checks.back().pass = false;
    res.table.columns = {"sup_Y", "truncated_lipschitz", "dt_times_L"};
    res.table.add({y_sup, trunc.lipschitz, dt_l});
    return res;
  }

  auto rel = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double scale = b.cwiseAbs().maxCoeff();
    return scale > 0.0 ? max_abs_diff(a, b) / scale : max_abs_diff(a, b);
  };
  double u_sup = 0.0, du = 0.0;
  for (std::size_t j = 0; j < sol.U.size(); ++j) {
    u_sup = std::max(u_sup, sol.U[j].cwiseAbs().maxCoeff());
    du = std::max(du, rel(sol_cut.U[j], sol.U[j]));
  }
  const double tol = spec.tolerance("relative");
  res.checks.push_back(Check::at_most("relative |Y - Y_trunc|", rel(sol_cut.Y, sol.Y), tol));
  res.checks.push_back(Check::at_most("relative |Z - Z_trunc|", rel(sol_cut.Z, sol.Z), tol));
  res.checks.push_back(Check::at_most("relative |U - U_trunc|", du, tol));
  res.checks.push_back(Check::at_most("sup|U| - 2 sup|Y|", u_sup - 2.0 * y_sup, spec.tolerance("u_bound")));

  res.table.columns = {"step", "t", "sup_Y", "sup_Z", "sup_U", "max_abs_dY", "max_abs_dZ", "max_abs_dU"};
  res.table.description = "per step: sup norms of the g^alpha solution and largest differences to the truncated one";
  for (std::size_t i = 0; i <= sol.steps(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    double su = 0.0, dz = 0.0, dz_u = 0.0, sz = 0.0;
    if (i < sol.steps()) {
      sz = sol.Z.col(c).cwiseAbs().maxCoeff();
      dz = max_abs_diff(sol.Z.col(c), sol_cut.Z.col(c));
      for (std::size_t j = 0; j < sol.U.size(); ++j) {
        su = std::max(su, sol.U[j].col(c).cwiseAbs().maxCoeff());
        dz_u = std::max(dz_u, max_abs_diff(sol.U[j].col(c), sol_cut.U[j].col(c)));
      }
    }
    res.table.add({static_cast<double>(i), batch.grid->time(i), sol.Y.col(c).cwiseAbs().maxCoeff(), sz, su,
                   max_abs_diff(sol.Y.col(c), sol_cut.Y.col(c)), dz, dz_u});
  }
  res.notes.push_back("truncation level K = sup|Y| = " + std::to_string(y_sup) +
                      ", truncated Lipschitz constant " + std::to_string(trunc.lipschitz));
  return res;
}

ExperimentResult run_utility_bsde(const ExperimentSpec& spec) {
  const LevyModel model = spec.model.build();
  const auto batch = sample_paths(model, spec.scheme.steps, spec.scheme.paths, spec.seed());
  const SchemeParams scheme = scheme_params(spec.scheme);
  return utility_comparison(spec, batch, [&](const TerminalFunctional& xi, const Generator& gen) {
    return solve_bsde(xi, gen, batch, scheme);
  });
}

ExperimentResult run_utility_bsde_tree(const ExperimentSpec& spec) {
  const auto model = std::make_shared<const LevyModel>(spec.model.build());
  const TreeModel tree(model, as_count(spec.param("tree_steps"), "tree_steps"));
  auto res = utility_comparison(spec, tree.batch(), [&](const TerminalFunctional& xi, const Generator& gen) {
    return tree_backward(tree, xi, gen);
  });
  res.notes.push_back("exact conditional expectations on " + std::to_string(tree.leaves()) + " tree leaves");
  return res;
}

}  // namespace

const std::vector<RecipeInfo>& recipes() {
  static const std::vector<RecipeInfo> list{
      {"jump_exactness", "D_{r,v} exp(X_T) by path shift against e^{X_T}(e^v - 1)",
       {{"base_points", {20}, "number of r values on [0, T)"},
        {"v", {-1.0, -0.5, 0.5, 1.0}, "jump sizes, cycled over the base points", true}},
       {{"relative_error", {}, "largest relative error"}},
       run_jump_exactness},
      {"isometry", "E[I1(f)^2] = |f|^2 and E[I1 I2] = 0 on three simple kernels", {}, {}, run_isometry},
      {"girsanov", "E[xi(W + g_h)] against E[xi density] for X_T, X_T^2, sup X",
       {{"h", {0.5}, "constant Cameron-Martin direction"}},
       {},
       run_girsanov},
      {"martingale_bsde", "xi = X_T, f = 0: Y0, Z = sigma, U(x) = x",
       {},
       {{"z_relative_l2", {}, "relative L2 error of Z"}, {"u_relative_l2", {}, "relative L2 error of U per node"}},
       run_martingale_bsde},
      {"linear_bsde", "xi = X_T, f = alpha y against the closed form plus a dt-halving sweep",
       {{"alpha", {0.5}, "linear driver coefficient"}, {"sweep_levels", {3}, "number of step counts, halving dt"}},
       {{"relative", {}, "relative Y0 tolerance (alongside 3 SE)"},
        {"ratio_min", {}, "lower bound of the error ratio"},
        {"ratio_max", {}, "upper bound of the error ratio"}},
       run_linear_bsde},
      {"tree_equivalence", "indicator-basis regression on tree leaves against exact tree induction",
       {{"tree_steps", {4}, "tree depth"}},
       {{"max_abs", {}, "largest absolute difference"}},
       run_tree_equivalence},
      {"derivative_triangle", "derivative BSDE against shifted-batch resolve, f = sin(y) + z/2 + w/2",
       {{"base_points", {10}, "number of r values on grid points"},
        {"v", {1.0, -1.0}, "jump sizes, cycled over the base points", true}},
       {{"relative_l2", {}, "relative L2 gap"}},
       run_derivative_triangle},
      {"chain_rule", "chain-rule field of W_T * W_T against Cameron-Martin finite differences",
       {{"h", {1.0}, "constant direction"}, {"u0", {0.2}, "largest step"}, {"levels", {4}, "number of halvings plus one"}},
       {{"ratio_min", {}, "lower bound of the error ratio"}, {"ratio_max", {}, "upper bound of the error ratio"}},
       run_chain_rule},
      {"representation_tree", "right limits of D_{r,v}Y against Z and U on an exact tree",
       {{"tree_steps", {4}, "tree depth"}},
       {{"residual", {}, "relative residual"}},
       run_representation_tree},
      {"representation_mc", "right limits of D_{r,v}Y against Z and U by regression, xi = X_T, f = 0",
       {{"r", {0.25, 0.5, 0.75}, "base times", true}},
       {{"residual", {}, "relative residual"}},
       run_representation_mc},
      {"picard_gronwall", "global Picard gaps of the sine-driver problem checked against the sequence bound",
       {{"beta", {4.0}, "weight exponent of the gap norm"}, {"max_iterations", {200}, "Picard iteration cap"}},
       {},
       run_picard_gronwall},
      {"stability", "stability ratio under xi perturbations of several magnitudes",
       {{"magnitudes", {0.1, 0.01, 0.001}, "perturbation sizes", true}},
       {{"ratio_spread", {}, "largest max/min ratio"}},
       run_stability},
      {"utility_bsde", "g^alpha driver against its truncation at K = sup|Y| by regression, xi = tanh(X_T)",
       {{"alpha", {1.0}, "exponent of g^alpha"}},
       {{"relative", {}, "relative difference of (Y, Z, U)"}, {"u_bound", {}, "slack in sup|U| <= 2 sup|Y|"}},
       run_utility_bsde},
      {"utility_bsde_tree", "as utility_bsde with exact conditional expectations on an enumerated tree",
       {{"alpha", {1.0}, "exponent of g^alpha"}, {"tree_steps", {5}, "tree depth"}},
       {{"relative", {}, "relative difference of (Y, Z, U)"}, {"u_bound", {}, "slack in sup|U| <= 2 sup|Y|"}},
       run_utility_bsde_tree},
  };
  return list;
}

const RecipeInfo& find_recipe(const std::string& name) {
  for (const auto& r : recipes()) {
    if (r.name == name) return r;
  }
  throw ConfigError("unknown recipe '" + name + "'");
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  const auto& info = find_recipe(spec.recipe);
  for (const auto& t : info.tolerances) spec.tolerance(t.key);
  ExperimentResult res = info.run(spec);
  res.name = spec.name;
  res.recipe = spec.recipe;
  res.seed = spec.seed();
  return res;
}

}  // namespace levymal
