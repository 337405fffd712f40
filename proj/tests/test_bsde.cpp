#include <gtest/gtest.h>

#include <cmath>

#include "levymal/bsde.hpp"
#include "levymal/errors.hpp"
#include "levymal/oracles.hpp"

using namespace levymal;

namespace {

LevyModel unit_jump_model(double sigma = 1.0) {
  return LevyModel(0.0, sigma, {{2.0, {-1.0, 1.0}, {0.5, 0.5}}}, 1.0);
}

double rel_l2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

}  // namespace

TEST(GNuFunctional, LinearQuadrature) {
  Generator gen = Generator::zero({{-1.0, 1.0}, {1.0, 1.0}});
  const std::vector<double> u{3.0, 1.0};
  EXPECT_DOUBLE_EQ(g_nu_functional(gen, u), 4.0);
  gen.g = [](double x) { return g_alpha(0.7, x); };
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_DOUBLE_EQ(g_nu_functional(gen, zero), 0.0);
  const std::vector<double> short_u{1.0};
  EXPECT_THROW(g_nu_functional(gen, short_u), ShapeError);
}

TEST(GNuFunctional, QuadratureRefinement) {
  // ν(dx) = e^{-x²} on [-3, 3]; u(x) = sin x smooth.
  const auto density = [](double x) { return std::exp(-x * x); };
  const auto value = [&](std::size_t n) {
    Generator gen = Generator::zero(discretize_levy_density(density, -3.0, 3.0, n));
    gen.g = [](double x) { return x * x; };
    gen.g1.assign(gen.nodes.size(), 1.0);
    std::vector<double> u;
    for (double x : gen.nodes.sizes) u.push_back(std::sin(x));
    return g_nu_functional(gen, u);
  };
  const double coarse = value(60), fine = value(120), reference = value(1200);
  EXPECT_LT(std::abs(fine - reference), std::abs(coarse - reference));
  EXPECT_LT(std::abs(fine - reference), 1e-3);
}

TEST(Generator, LipschitzAndDerivativeChecks) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 2, 1, 1);
  const DriverContext ctx{batch.paths[0], {}, 0, 0.0};
  Generator gen = Generator::zero(m.nodes());
  gen.f = [](const DriverContext&, double y, double z, double w) { return std::sin(y) + 0.5 * z + 0.5 * w; };
  gen.lipschitz_f = std::sqrt(1.5);
  EXPECT_LE(gen.check_lipschitz(ctx, 2000, 3), gen.lipschitz_f);
  gen.lipschitz_f = 0.5;
  EXPECT_THROW(gen.check_lipschitz(ctx, 2000, 3), ParameterError);
  gen.g_prime = [](double x) { return 2.0 * x; };
  gen.g_lipschitz = 1.0;
  EXPECT_THROW(gen.check_g_derivative(-1.0, 1.0, 100), ParameterError);
}

TEST(SolveBsde, ConstantTerminal) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 10, 500, 4);
  const auto sol = solve_bsde(TerminalFunctional::constant(2.5), Generator::zero(m.nodes()), batch, {});
  EXPECT_TRUE((sol.Y.array() == 2.5).all() || (sol.Y.array() - 2.5).abs().maxCoeff() < 1e-13);
  EXPECT_LT(sol.Z.cwiseAbs().maxCoeff(), 1e-12);
  for (const auto& u : sol.U) EXPECT_LT(u.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SolveBsde, TerminalExactness) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 10, 300, 5);
  const auto xi = TerminalFunctional::of_terminal("cos", [](double x) { return std::cos(x); }, nullptr);
  const auto sol = solve_bsde(xi, Generator::linear(0.3, m.nodes()), batch, {});
  for (std::size_t p = 0; p < batch.size(); ++p) {
    EXPECT_EQ(sol.Y(static_cast<Eigen::Index>(p), 10), std::cos(batch.paths[p].terminal()));
  }
}

TEST(SolveBsde, MartingaleMatchesClosedForm) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 20, 20000, 6);
  const auto sol = solve_bsde(TerminalFunctional::terminal_value(), Generator::zero(m.nodes()), batch, {});
  const double target = m.mean_rate() * 1.0;
  EXPECT_LE(std::abs(sol.y0(batch) - target), 3.0 * sol.y0_standard_error);
  EXPECT_LT(rel_l2(sol.Z, Eigen::MatrixXd::Ones(sol.Z.rows(), sol.Z.cols())), 0.1);
  for (std::size_t j = 0; j < 2; ++j) {
    const double x = m.nodes().sizes[j];
    EXPECT_LT(rel_l2(sol.U[j], Eigen::MatrixXd::Constant(sol.Z.rows(), sol.Z.cols(), x)), 0.1);
  }
}

TEST(SolveBsde, LinearDriverMatchesClosedForm) {
  const LevyModel m(1.0, 1.0, {{2.0, {-1.0, 1.0}, {0.5, 0.5}}}, 1.0);
  const auto batch = sample_paths(m, 40, 20000, 7);
  const auto sol = solve_bsde(TerminalFunctional::terminal_value(), Generator::linear(0.5, m.nodes()), batch, {});
  const double target = closed_form_linear(m, 0.5, TerminalKind::terminal_value).y(0.0, 0.0);
  EXPECT_NEAR(sol.y0(batch), target, std::max(3.0 * sol.y0_standard_error, 0.02 * target));
}

TEST(SolveBsde, ShiftOfTerminalShiftsEveryY) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 10, 400, 8);
  const auto phi = [](double x) { return std::tanh(x); };
  const auto a = solve_bsde(TerminalFunctional::of_terminal("t", phi, nullptr), Generator::zero(m.nodes()), batch, {});
  const auto b = solve_bsde(
      TerminalFunctional::of_terminal("t+d", [&](double x) { return phi(x) + 0.3; }, nullptr),
      Generator::zero(m.nodes()), batch, {});
  EXPECT_LT((b.Y.array() - a.Y.array() - 0.3).abs().maxCoeff(), 1e-12);
  EXPECT_LT((b.Z - a.Z).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SolveBsde, ControlsAreFunctionsOfStepFeatures) {
  const LevyModel m = unit_jump_model();
  const auto source = sample_paths(m, 10, 800, 9);
  // Paths 2k and 2k+1 share their history up to t_5 and have independent futures.
  PathBatch batch{source.model, source.grid, {}, {}};
  for (std::size_t k = 0; k < 400; ++k) {
    const Path& a = source.paths[2 * k];
    const Path& b = source.paths[2 * k + 1];
    std::vector<double> dw(b.brownian_increments().begin(), b.brownian_increments().end());
    for (std::size_t i = 0; i < 5; ++i) dw[i] = a.dw(i);
    std::vector<JumpEvent> jumps;
    for (const auto& e : a.jumps()) if (e.time <= 0.5) jumps.push_back(e);
    for (const auto& e : b.jumps()) if (e.time > 0.5) jumps.push_back(e);
    batch.paths.push_back(a);
    batch.paths.emplace_back(batch.model, batch.grid, dw, jumps);
  }
  const auto xi = TerminalFunctional::of_terminal("sin", [](double x) { return std::sin(x); }, nullptr);
  const auto sol = solve_bsde(xi, Generator::linear(0.2, m.nodes()), batch, {});
  for (Eigen::Index k = 0; k < 400; ++k) {
    for (Eigen::Index i = 0; i <= 5; ++i) EXPECT_EQ(sol.Y(2 * k, i), sol.Y(2 * k + 1, i));
    for (Eigen::Index i = 0; i < 5; ++i) {
      EXPECT_EQ(sol.Z(2 * k, i), sol.Z(2 * k + 1, i));
      EXPECT_EQ(sol.U[0](2 * k, i), sol.U[0](2 * k + 1, i));
    }
  }
}

TEST(SolveBsde, ContractionErrorForLargeSteps) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 2, 50, 10);
  try {
    solve_bsde(TerminalFunctional::terminal_value(), Generator::linear(3.0, m.nodes()), batch, {});
    FAIL();
  } catch (const ContractionError& e) {
    EXPECT_NE(std::string(e.what()).find("smaller time step"), std::string::npos);
  }
}

TEST(SolveBsde, InnerIterationContractsGeometrically) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 20, 500, 11);
  Generator gen = Generator::zero(m.nodes());
  gen.f = [](const DriverContext&, double y, double, double) { return 4.0 * std::sin(y); };
  gen.lipschitz_f = 4.0;  // Δt L = 0.2 <= 1/2
  const auto sol = solve_bsde(TerminalFunctional::terminal_value(), gen, batch, {});
  for (const auto& r : sol.inner_residuals) {
    for (std::size_t m2 = 1; m2 < r.size(); ++m2) {
      if (r[m2 - 1] > 1e-13) EXPECT_LE(r[m2], 0.5 * r[m2 - 1] * (1.0 + 1e-9));
    }
  }
}

TEST(SolveBsde, DegenerateBasisWarnsInsteadOfAborting) {
  const LevyModel m(0.0, 0.0, {{1.0, {1.0}, {1.0}}}, 1.0);
  const auto batch = sample_paths(m, 5, 50, 12);
  SchemeParams scheme;
  scheme.basis = BasisSpec::polynomial(6);
  const auto sol = solve_bsde(TerminalFunctional::terminal_value(), Generator::zero(m.nodes()), batch, scheme);
  EXPECT_FALSE(sol.warnings.empty());
  EXPECT_LT(sol.Z.cwiseAbs().maxCoeff(), 1e-300);  // σ = 0 forces Z = 0
}

TEST(PicardStep, DataOnlyGeneratorIsFixedAfterOneStep) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 10, 300, 13);
  Generator gen = Generator::zero(m.nodes());
  gen.f = [](const DriverContext& ctx, double, double, double) { return std::cos(ctx.path.value(ctx.step)); };
  const auto xi = TerminalFunctional::terminal_value();
  const auto first = picard_step(zero_solution(batch), xi, gen, batch, {});
  const auto second = picard_step(first, xi, gen, batch, {});
  EXPECT_EQ((first.Y - second.Y).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(second.picard_gaps.back(), 0.0);
}

TEST(PicardStep, ZeroDriverReproducesSolve) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 10, 300, 14);
  const auto xi = TerminalFunctional::of_terminal("sq", [](double x) { return x * x; }, nullptr);
  const Generator gen = Generator::zero(m.nodes());
  const auto a = picard_step(zero_solution(batch), xi, gen, batch, {});
  const auto b = solve_bsde(xi, gen, batch, {});
  EXPECT_EQ((a.Y - b.Y).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((a.Z - b.Z).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PicardStep, GlobalIterationConvergesToSolve) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 20, 2000, 15);
  Generator gen = Generator::zero(m.nodes());
  gen.f = [](const DriverContext&, double y, double z, double w) { return std::sin(y) + 0.5 * z + 0.5 * w; };
  gen.lipschitz_f = std::sqrt(1.5);
  const auto xi = TerminalFunctional::of_terminal("cos", [](double x) { return std::cos(x); }, nullptr);
  SchemeParams scheme;
  scheme.picard_weight = 4.0;
  const auto picard = solve_bsde_picard(xi, gen, batch, scheme);
  const auto direct = solve_bsde(xi, gen, batch, scheme);
  // The two schemes differ by the explicit/implicit treatment at O(Δt).
  EXPECT_NEAR(picard.y0(batch), direct.y0(batch), 0.02);
  for (std::size_t n = 2; n < picard.picard_gaps.size(); ++n) {
    if (picard.picard_gaps[n - 1] > 1e-12) EXPECT_LE(picard.picard_gaps[n], 0.5 * picard.picard_gaps[n - 1]);
  }
}

TEST(Stability, IdenticalAndShiftedData) {
  const LevyModel m = unit_jump_model();
  const auto batch = sample_paths(m, 10, 500, 16);
  const Generator gen = Generator::zero(m.nodes());
  const auto xi = TerminalFunctional::terminal_value();
  const auto sol = solve_bsde(xi, gen, batch, {});
  const auto same = stability_gap(sol, sol, batch, stability_data_gap(xi, xi, gen, gen, sol, batch));
  EXPECT_EQ(same.lhs, 0.0);
  EXPECT_EQ(same.rhs, 0.0);
  EXPECT_EQ(same.ratio, 0.0);

  const auto xi2 = TerminalFunctional::of_terminal("x+d", [](double x) { return x + 0.25; }, nullptr);
  const auto sol2 = solve_bsde(xi2, gen, batch, {});
  const auto r = stability_gap(sol, sol2, batch, stability_data_gap(xi, xi2, gen, gen, sol, batch));
  EXPECT_NEAR(r.lhs, 0.0625, 1e-10);
  EXPECT_NEAR(r.rhs, 0.0625, 1e-12);
}

TEST(GAlpha, TruncationProperties) {
  const double alpha = 1.3, k = 0.8;
  const auto t = truncate_g_alpha(alpha, k);
  for (double x = -2.0 * k; x <= 2.0 * k; x += 0.01) EXPECT_EQ(t.g(x), g_alpha(alpha, x));
  for (double x : {3.0 * k, 3.5 * k, -3.0 * k, -10.0}) EXPECT_EQ(t.g(x), 0.0);
  EXPECT_THROW(truncate_g_alpha(0.0, 1.0), ParameterError);

  // Centered differences converge at second order to g' across both seams.
  for (double seam : {2.0 * k, 3.0 * k, -2.0 * k, -3.0 * k}) {
    for (double offset : {-0.013, 0.0, 0.021}) {
      const double x = seam + offset;
      const auto err = [&](double h) {
        return std::abs((t.g(x + h) - t.g(x - h)) / (2.0 * h) - t.g_prime(x));
      };
      const double e1 = err(1e-2), e2 = err(5e-3);
      if (e1 > 1e-9) EXPECT_GT(e1 / e2, 3.0) << x;
    }
  }
  double sampled = 0.0;
  for (double x = -4.0 * k; x <= 4.0 * k; x += 1e-4) sampled = std::max(sampled, std::abs(t.g_prime(x)));
  EXPECT_LE(sampled, t.lipschitz * (1.0 + 1e-6));
  EXPECT_GE(sampled, t.lipschitz * (1.0 - 1e-3));
}
