#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "levymal/errors.hpp"
#include "levymal/malliavin.hpp"
#include "levymal/oracles.hpp"

using namespace levymal;

namespace {

LevyModel unit_model(double gamma = 0.0) {
  return LevyModel(gamma, 1.0, {{2.0, {-1.0, 1.0}, {0.5, 0.5}}}, 1.0);
}

TerminalFunctional exp_terminal() {
  return TerminalFunctional::of_terminal("exp", [](double x) { return std::exp(x); },
                                         [](double x) { return std::exp(x); });
}

TerminalFunctional sup_functional() {
  return {"sup",
          [](const Path& p) {
            const auto v = p.values();
            return *std::max_element(v.begin(), v.end());
          },
          nullptr, false};
}

Generator sine_generator(const JumpNodes& nodes) {
  Generator gen = Generator::zero(nodes);
  gen.f = [](const DriverContext&, double y, double z, double w) { return std::sin(y) + 0.5 * z + 0.5 * w; };
  gen.df_dy = [](const DriverContext&, double y, double, double) { return std::cos(y); };
  gen.df_dz = [](const DriverContext&, double, double, double) { return 0.5; };
  gen.df_dw = [](const DriverContext&, double, double, double) { return 0.5; };
  gen.lipschitz_f = std::sqrt(1.5);
  return gen;
}

}  // namespace

TEST(JumpDerivative, ClosedForms) {
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 20, 200, 1);
  const auto xt = TerminalFunctional::terminal_value();
  const auto ex = exp_terminal();
  const auto sup = sup_functional();
  for (const auto& p : batch.paths) {
    for (double r : {0.0, 0.13, 0.5, 1.0}) {
      for (double v : {-1.0, 0.3, 1.0}) {
        EXPECT_NEAR(jump_derivative(xt, p, r, v), v, 1e-13);
        const double exact = std::exp(p.terminal()) * std::expm1(v);
        EXPECT_LE(std::abs(jump_derivative(ex, p, r, v) - exact), 1e-12 * std::abs(exact));
        const double d = jump_derivative(sup, p, r, v);
        EXPECT_LE(std::abs(d), std::abs(v) + 1e-15);
        EXPECT_GE(d * v, -1e-15);
      }
    }
  }
  EXPECT_THROW(jump_derivative(xt, batch.paths[0], 0.5, 0.0), DirectionError);
}

TEST(JumpDerivative, DeterministicAndLinear) {
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 10, 20, 2);
  const auto ex = exp_terminal();
  const auto sup = sup_functional();
  const TerminalFunctional combo{"combo", [&](const Path& p) { return 2.0 * ex(p) - 3.0 * sup(p); }, nullptr, false};
  for (const auto& p : batch.paths) {
    const double a = jump_derivative(ex, p, 0.4, 1.0);
    EXPECT_EQ(a, jump_derivative(ex, p, 0.4, 1.0));
    EXPECT_NEAR(jump_derivative(combo, p, 0.4, 1.0), 2.0 * a - 3.0 * jump_derivative(sup, p, 0.4, 1.0), 1e-12);
  }
}

TEST(JumpDerivative, LipschitzPreservedUnderShift) {
  // f(path, y) = L sin(y + X_t) is L-Lipschitz in y on every path, shifted or not.
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 10, 50, 3);
  const double L = 1.7;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0), time(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, batch.size() - 1);
  for (int k = 0; k < 2000; ++k) {
    const Path shifted = shift_path(batch.paths[pick(rng)], time(rng), k % 2 ? 1.0 : -1.0);
    const std::size_t i = static_cast<std::size_t>(k) % 10;
    const double y = u(rng), y2 = u(rng);
    const double diff = L * std::sin(y + shifted.value(i)) - L * std::sin(y2 + shifted.value(i));
    EXPECT_LE(std::abs(diff), L * std::abs(y - y2) + 1e-14);
  }
}

TEST(BrownianFd, Examples) {
  const LevyModel brownian(0.0, 1.0, {}, 1.0);
  const auto batch = sample_paths(brownian, 16, 10, 4);
  const auto dir = CameronMartinDirection::constant(batch.grid, 1.0);
  const std::vector<double> us{0.1, 0.05, 0.025};
  const auto w_t = TerminalFunctional::of_terminal("W_T", [](double x) { return x; }, [](double) { return 1.0; });
  const auto w_sq = TerminalFunctional::of_terminal("W_T^2", [](double x) { return x * x; },
                                                    [](double x) { return 2.0 * x; });
  for (const auto& p : batch.paths) {
    const auto lin = brownian_fd_derivative(w_t, p, dir, us);
    for (double q : lin.quotients) EXPECT_NEAR(q, 1.0, 1e-12);
    ASSERT_TRUE(lin.analytic.has_value());
    EXPECT_NEAR(*lin.analytic, 1.0, 1e-14);

    const auto sq = brownian_fd_derivative(w_sq, p, dir, us);
    const double target = 2.0 * p.terminal();
    EXPECT_NEAR(*sq.analytic, target, 1e-12);
    for (std::size_t k = 1; k < us.size(); ++k) {
      const double ratio = (sq.quotients[k - 1] - target) / (sq.quotients[k] - target);
      EXPECT_NEAR(ratio, 2.0, 1e-6);
    }
    const auto c = brownian_fd_derivative(TerminalFunctional::constant(3.0), p, dir, us);
    for (double q : c.quotients) EXPECT_EQ(q, 0.0);
  }
}

TEST(ChainRule, Examples) {
  const LevyModel brownian(0.0, 1.0, {}, 1.0);
  const auto batch = sample_paths(brownian, 8, 5, 5);
  const VectorFunctional g{{[](const Path& p) { return p.brownian_path().back(); }},
                           {[](const Path&, std::size_t) { return 1.0; }}};
  const ParametricFunctional identity{[](const Path&, std::span<const double> y) { return y[0]; },
                                      [](const Path&, std::size_t, std::span<const double>) { return 0.0; },
                                      {[](const Path&, std::span<const double>) { return 1.0; }}};
  const ParametricFunctional constant_in_y{
      [](const Path& p, std::span<const double>) { return p.brownian_path().back(); },
      [](const Path&, std::size_t, std::span<const double>) { return 1.0; },
      {[](const Path&, std::span<const double>) { return 0.0; }}};
  const ParametricFunctional product{
      [](const Path& p, std::span<const double> y) { return p.brownian_path().back() * y[0]; },
      [](const Path&, std::size_t, std::span<const double> y) { return y[0]; },
      {[](const Path& p, std::span<const double>) { return p.brownian_path().back(); }}};
  for (const auto& p : batch.paths) {
    for (double v : chain_rule_brownian(identity, g, p)) EXPECT_EQ(v, 1.0);
    for (double v : chain_rule_brownian(constant_in_y, g, p)) EXPECT_EQ(v, 1.0);
    for (double v : chain_rule_brownian(product, g, p)) EXPECT_NEAR(v, 2.0 * p.brownian_path().back(), 1e-15);
  }
  ParametricFunctional missing = product;
  missing.dy.clear();
  EXPECT_THROW(chain_rule_brownian(missing, g, batch.paths[0]), CapabilityError);
}

TEST(DerivativeProblem, DriverExamples) {
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 10, 200, 6);
  const auto xt = TerminalFunctional::terminal_value();
  const Generator zero = Generator::zero(m.nodes());
  const auto base0 = solve_bsde(xt, zero, batch, {});
  const auto jump = build_derivative_problem(base0, xt, zero, batch, 0.3, 1.0);
  const std::vector<double> u{0.4, -0.2};
  EXPECT_EQ(jump.driver(3, 5, 0.7, 0.1, u), 0.0);
  for (Eigen::Index p = 0; p < 5; ++p) EXPECT_NEAR(jump.terminal(p), 1.0, 1e-14);

  Generator lin = Generator::linear(0.5, m.nodes());
  lin.df_dz = lin.df_dw = [](const DriverContext&, double, double, double) { return 0.0; };
  const auto base1 = solve_bsde(xt, lin, batch, {});
  const auto brown = build_derivative_problem(base1, xt, lin, batch, 0.3, 0.0);
  EXPECT_DOUBLE_EQ(brown.driver(3, 5, 0.7, 0.1, u), 0.35);

  Generator no_partials = Generator::linear(0.5, m.nodes());
  no_partials.df_dz = nullptr;
  EXPECT_THROW(build_derivative_problem(base1, xt, no_partials, batch, 0.3, 0.0), CapabilityError);
  Generator path_dependent = lin;
  path_dependent.path_independent = false;
  EXPECT_THROW(build_derivative_problem(base1, xt, path_dependent, batch, 0.3, 0.0), CapabilityError);
}

TEST(DerivativeProblem, GammaDomination) {
  // f = sin(y) + cos(X_t): |D_{r,v} f| ≤ |v| ∧ 2 for v ≠ 0.
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 10, 200, 7);
  Generator gen = Generator::zero(m.nodes());
  gen.f = [](const DriverContext& c, double y, double, double) { return std::sin(y) + std::cos(c.path.value(c.step)); };
  gen.lipschitz_f = 1.0;
  gen.path_independent = false;
  gen.gamma_bound = [](double, double v) { return std::min(std::abs(v), 2.0); };
  const auto xt = TerminalFunctional::terminal_value();
  const auto base = solve_bsde(xt, gen, batch, {});
  const auto prob = build_derivative_problem(base, xt, gen, batch, 0.2, 1.0);
  EXPECT_LE(domination_excess(prob, gen, 4000, 9), 1e-12);
  gen.gamma_bound = [](double, double) { return 0.0; };
  EXPECT_GT(domination_excess(prob, gen, 4000, 9), 0.0);
}

TEST(DerivativeBsde, ConstantTerminalDerivative) {
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 10, 500, 8);
  const auto xt = TerminalFunctional::terminal_value();
  const Generator zero = Generator::zero(m.nodes());
  const auto base = solve_bsde(xt, zero, batch, {});
  const auto sol = solve_derivative_bsde(build_derivative_problem(base, xt, zero, batch, 0.35, 1.0), {});
  const Eigen::Index k = 4;  // first grid index >= 0.35
  EXPECT_EQ(sol.Y.leftCols(k).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((sol.Y.rightCols(11 - k).array() - 1.0).abs().maxCoeff(), 1e-12);
  EXPECT_LT(sol.Z.cwiseAbs().maxCoeff(), 1e-12);
  for (const auto& u : sol.U) EXPECT_LT(u.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DerivativeBsde, LinearDriverMatchesClosedForm) {
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 40, 500, 9);
  const double alpha = 0.5;
  const auto xt = TerminalFunctional::terminal_value();
  const Generator lin = Generator::linear(alpha, m.nodes());
  const auto base = solve_bsde(xt, lin, batch, {});
  const auto cf = closed_form_linear(m, alpha, TerminalKind::terminal_value);
  const auto sol = solve_derivative_bsde(build_derivative_problem(base, xt, lin, batch, 0.25, -1.0), {});
  for (std::size_t i = 10; i <= 40; ++i) {
    const double t = batch.grid->time(i);
    // Implicit Euler: (1 − αΔt)^{-(N−i)} against e^{α(T−t)}; O(Δt) apart.
    EXPECT_NEAR(sol.Y(0, static_cast<Eigen::Index>(i)), cf.jump_derivative(t, 0.25, -1.0), 0.01);
  }
}

TEST(DerivativeBsde, MatchesShiftedResolve) {
  const LevyModel m = unit_model(0.2);
  const auto batch = sample_paths(m, 20, 3000, 10);
  const auto xi = TerminalFunctional::of_terminal("cos", [](double x) { return std::cos(x); },
                                                  [](double x) { return -std::sin(x); });
  const Generator gen = sine_generator(m.nodes());
  const auto base = solve_bsde(xi, gen, batch, {});
  for (double r : {0.2, 0.55}) {
    const auto sol = solve_derivative_bsde(build_derivative_problem(base, xi, gen, batch, r, 1.0), {});
    const auto resolved = solve_bsde(xi, gen, shifted_batch(batch, r, 1.0), {});
    const auto k = static_cast<Eigen::Index>(batch.grid->index_at_or_after(r));
    const Eigen::MatrixXd diff = resolved.Y.rightCols(21 - k) - base.Y.rightCols(21 - k);
    EXPECT_LT((sol.Y.rightCols(21 - k) - diff).norm() / diff.norm(), 0.1);
  }
}

TEST(DerivativeField, D12NormIsFinite) {
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 10, 2000, 11);
  const auto spec = MeasureSpec::from_model(m);
  const auto points = base_point_grid(*batch.grid, 2, {0.0, -1.0, 1.0}, spec);
  EXPECT_EQ(points.size(), 15u);
  const auto ex = exp_terminal();
  const auto field = functional_field(ex, batch, points);
  Eigen::VectorXd values(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t p = 0; p < batch.size(); ++p) values(static_cast<Eigen::Index>(p)) = ex(batch.paths[p]);
  const double norm = d12_norm_squared(values, field, batch);
  EXPECT_TRUE(std::isfinite(norm));
  EXPECT_GT(norm, 0.0);
  EXPECT_THROW(functional_field(sup_functional(), batch, points), CapabilityError);
}

TEST(Representation, MonteCarloExamples) {
  const LevyModel m = unit_model();
  const auto batch = sample_paths(m, 10, 20000, 12);
  const auto xt = TerminalFunctional::of_terminal("X_T", [](double x) { return x; }, [](double) { return 1.0; });
  const Generator zero = Generator::zero(m.nodes());
  const auto base = solve_bsde(xt, zero, batch, {});
  std::vector<RightLimit> limits;
  for (double r : {0.3, 0.7}) {
    for (double v : {0.0, 1.0}) {
      const auto sol = solve_derivative_bsde(build_derivative_problem(base, xt, zero, batch, r, v), {});
      limits.push_back(right_limit(sol, r, v));
      EXPECT_LT((limits.back().values.array() - (v == 0.0 ? 1.0 : v)).abs().maxCoeff(), 1e-12);
    }
  }
  const auto report = representation_residual(base, limits, batch, {}, BasisSpec::polynomial(3), 0.1);
  EXPECT_TRUE(report.has_z && report.has_u);
  EXPECT_LT(report.residual_z, 0.05);
  EXPECT_LT(report.residual_u, 0.1);
  for (const auto& row : report.rows) EXPECT_TRUE(row.pass);

  EXPECT_THROW(representation_residual(base, {}, batch, {}, BasisSpec::polynomial(3), 0.1), CoverageError);
  RightLimit bad = limits[1];
  bad.base.v = 0.5;
  EXPECT_THROW(representation_residual(base, {bad}, batch, {}, BasisSpec::polynomial(3), 0.1), CoverageError);
}

TEST(Representation, ExactOnTree) {
  const auto model = std::make_shared<const LevyModel>(0.1, 1.0, std::vector<JumpComponent>{{1.5, {0.8}, {1.0}}}, 1.0);
  const TreeModel tree(model, 4);
  const auto xi = TerminalFunctional::of_terminal("cos", [](double x) { return std::cos(x); }, nullptr);
  const auto sol = tree_backward(tree, xi, sine_generator(model->nodes()));
  std::vector<RightLimit> limits;
  for (std::size_t k = 1; k <= 4; ++k) {
    const double r = tree.grid().time(k);
    limits.push_back({{r, 0.0, 0.0}, k, tree_derivative(tree, sol, k, std::nullopt)});
    limits.push_back({{r, 0.8, 0.0}, k, tree_derivative(tree, sol, k, 0)});
  }
  const auto report = representation_residual(sol, limits, tree.batch(), {}, BasisSpec::indicator(), 1e-8);
  EXPECT_LT(report.residual_z, 1e-10);
  EXPECT_LT(report.residual_u, 1e-10);
}
