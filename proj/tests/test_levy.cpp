#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "levymal/errors.hpp"
#include "levymal/levy.hpp"

using namespace levymal;

namespace {

JumpComponent symmetric_unit_jumps(double intensity) {
  return {intensity, {-1.0, 1.0}, {0.5, 0.5}};
}

struct Moments {
  double mean;
  double se;
};

template <class F>
Moments sample_moments(const PathBatch& batch, F f) {
  double s = 0.0, s2 = 0.0;
  for (const auto& p : batch.paths) {
    const double x = f(p);
    s += x;
    s2 += x * x;
  }
  const double n = static_cast<double>(batch.size());
  const double mean = s / n;
  return {mean, std::sqrt((s2 / n - mean * mean) / n)};
}

}  // namespace

TEST(TimeGrid, UniformAndLookup) {
  const auto grid = TimeGrid::uniform(1.0, 4);
  EXPECT_EQ(grid.steps(), 4u);
  EXPECT_DOUBLE_EQ(grid.dt(2), 0.25);
  EXPECT_EQ(grid.index_at_or_after(0.25), 1u);
  EXPECT_EQ(grid.index_at_or_after(0.3), 2u);
  EXPECT_EQ(grid.step_containing(0.25), 0u);
  EXPECT_EQ(grid.step_containing(0.3), 1u);
  EXPECT_THROW(grid.index_at_or_after(1.5), RangeError);
  EXPECT_THROW(TimeGrid({0.0, 0.5, 0.5}), GridError);
  EXPECT_EQ(grid.coarsen(2).steps(), 2u);
  EXPECT_THROW(grid.coarsen(3), GridError);
}

TEST(LevyModel, Invariants) {
  EXPECT_THROW(LevyModel(0.0, -1.0, {}, 1.0), ParameterError);
  EXPECT_THROW(LevyModel(0.0, 0.0, {}, 1.0), ParameterError);
  EXPECT_THROW(LevyModel(NAN, 1.0, {}, 1.0), ParameterError);

  const LevyModel m(0.3, 1.0, {{2.0, {-1.0, 3.0}, {0.5, 0.5}}}, 1.0);
  // Only the |x| > 1 node contributes to the mean.
  EXPECT_DOUBLE_EQ(m.mean_rate(), 0.3 + 2.0 * 0.5 * 3.0);
  EXPECT_DOUBLE_EQ(m.small_jump_compensator(), -1.0);
  EXPECT_DOUBLE_EQ(m.variance_rate(), 1.0 + 1.0 + 9.0);
}

TEST(LevyModel, TruncationRecordsDroppedVariance) {
  const LevyModel m(0.0, 1.0, {{1.0, {0.01, 0.5}, {0.5, 0.5}}}, 1.0, 0.1);
  ASSERT_EQ(m.nodes().size(), 1u);
  EXPECT_DOUBLE_EQ(m.nodes().sizes[0], 0.5);
  EXPECT_DOUBLE_EQ(m.nodes().weights[0], 0.5);
  EXPECT_DOUBLE_EQ(m.dropped_variance_rate(), 0.5 * 1e-4);
}

TEST(SamplePaths, PureBrownianHasZeroMean) {
  const LevyModel m(0.0, 1.0, {}, 1.0);
  const auto batch = sample_paths(m, 10, 20000, 7);
  const auto mo = sample_moments(batch, [](const Path& p) { return p.terminal(); });
  EXPECT_LE(std::abs(mo.mean), 3.0 * mo.se);
  for (const auto& p : batch.paths) EXPECT_TRUE(p.jumps().empty());
}

TEST(SamplePaths, PoissonMeanCount) {
  const LevyModel m(0.0, 0.0, {symmetric_unit_jumps(2.0)}, 1.0);
  const auto batch = sample_paths(m, 10, 20000, 11);
  const auto mo = sample_moments(batch, [](const Path& p) { return double(p.jumps().size()); });
  EXPECT_LE(std::abs(mo.mean - 2.0), 3.0 * mo.se);
}

TEST(SamplePaths, TerminalVarianceMatchesLevyIto) {
  const LevyModel m(0.2, 0.7, {{1.5, {-0.5, 2.0}, {0.4, 0.6}}}, 2.0);
  const auto batch = sample_paths(m, 8, 40000, 3);
  const double mean = m.mean_rate() * 2.0;
  const double var = m.variance_rate() * 2.0;
  // Sample variance through the second central moment about the known mean.
  const auto mo = sample_moments(batch, [&](const Path& p) {
    const double d = p.terminal() - mean;
    return d * d;
  });
  EXPECT_LE(std::abs(mo.mean - var), 3.0 * mo.se);
}

TEST(SamplePaths, DeterministicAndReconstructs) {
  const LevyModel m(0.1, 1.0, {symmetric_unit_jumps(3.0)}, 1.0);
  const auto a = sample_paths(m, 16, 50, 99);
  const auto b = sample_paths(m, 16, 50, 99);
  for (std::size_t p = 0; p < a.size(); ++p) {
    const auto va = a.paths[p].values();
    const auto vb = b.paths[p].values();
    ASSERT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
    EXPECT_EQ(va[0], 0.0);
    Path rebuilt(a.model, a.grid,
                 std::vector<double>(a.paths[p].brownian_increments().begin(),
                                     a.paths[p].brownian_increments().end()),
                 a.paths[p].jumps());
    for (std::size_t i = 0; i < va.size(); ++i) EXPECT_NEAR(rebuilt.value(i), va[i], 1e-14);
  }
  const auto c = sample_paths(m, 16, 50, 100);
  EXPECT_NE(a.paths[0].terminal(), c.paths[0].terminal());
}

TEST(SamplePaths, IncrementDecomposition) {
  const LevyModel m(0.1, 0.5, {{2.0, {-0.5, 2.0}, {0.5, 0.5}}}, 1.0);
  const auto batch = sample_paths(m, 5, 20, 5);
  for (const auto& p : batch.paths) {
    const auto jumps = p.jump_sum_path();
    for (std::size_t i = 0; i < 5; ++i) {
      const double expected = (m.gamma() - m.small_jump_compensator()) * 0.2 +
                              0.5 * p.dw(i) + jumps[i + 1] - jumps[i];
      EXPECT_NEAR(p.value(i + 1) - p.value(i), expected, 1e-14);
    }
  }
}

TEST(SamplePaths, BrownianAndJumpCountsUncorrelated) {
  const LevyModel m(0.0, 1.0, {symmetric_unit_jumps(2.0)}, 1.0);
  const auto batch = sample_paths(m, 4, 20000, 21);
  const auto mo = sample_moments(batch, [](const Path& p) {
    return p.brownian_path().back() * (double(p.jumps().size()) - 2.0);
  });
  EXPECT_LE(std::abs(mo.mean), 3.0 * mo.se);
}

TEST(ShiftPath, AddsIndicator) {
  const LevyModel m(0.0, 1.0, {symmetric_unit_jumps(1.0)}, 1.0);
  const auto batch = sample_paths(m, 10, 5, 1);
  const Path& p = batch.paths[0];
  const Path s = shift_path(p, 0.35, 0.7);
  for (std::size_t i = 0; i <= 10; ++i) {
    const double expected = p.value(i) + (p.grid().time(i) >= 0.35 ? 0.7 : 0.0);
    EXPECT_DOUBLE_EQ(s.value(i), expected);
  }
  EXPECT_EQ(s.jumps().size(), p.jumps().size() + 1);
  EXPECT_DOUBLE_EQ(s.terminal(), p.terminal() + 0.7);

  const Path back = shift_path(s, 0.35, -0.7);
  for (std::size_t i = 0; i <= 10; ++i) EXPECT_NEAR(back.value(i), p.value(i), 1e-15);

  const auto sup = [](const Path& q) {
    const auto v = q.values();
    return *std::max_element(v.begin(), v.end());
  };
  EXPECT_LE(std::abs(sup(s) - sup(p)), 0.7 + 1e-15);
  EXPECT_THROW(shift_path(p, 1.5, 1.0), RangeError);
}

TEST(ShiftPath, NodeCountsFollowTheShift) {
  const LevyModel m(0.0, 1.0, {symmetric_unit_jumps(1.0)}, 1.0);
  const auto batch = sample_paths(m, 4, 1, 2);
  const Path s = shift_path(batch.paths[0], 0.6, 1.0);
  const auto node = m.nodes().index_of(1.0).value();
  EXPECT_DOUBLE_EQ(s.jump_count(2, node), batch.paths[0].jump_count(2, node) + 1.0);
}

TEST(CameronMartin, ShiftProperties) {
  const LevyModel m(0.0, 1.0, {symmetric_unit_jumps(1.0)}, 1.0);
  const auto batch = sample_paths(m, 10, 3, 4);
  const auto dir = CameronMartinDirection::constant(batch.grid, 1.0);
  EXPECT_DOUBLE_EQ(dir.path()[0], 0.0);
  EXPECT_NEAR(dir.path().back(), 1.0, 1e-15);
  EXPECT_NEAR(dir.norm_squared(), 1.0, 1e-15);
  for (const auto& p : batch.paths) {
    const Path same = cameron_martin_shift(p, dir, 0.0);
    EXPECT_EQ(same.terminal(), p.terminal());
    const Path s = cameron_martin_shift(p, dir, 0.3);
    EXPECT_NEAR(s.terminal(), p.terminal() + 0.3, 1e-14);
    ASSERT_EQ(s.jumps().size(), p.jumps().size());
    for (std::size_t k = 0; k < p.jumps().size(); ++k) {
      EXPECT_EQ(s.jumps()[k].time, p.jumps()[k].time);
      EXPECT_EQ(s.jumps()[k].size, p.jumps()[k].size);
    }
  }
  const auto other = std::make_shared<const TimeGrid>(TimeGrid::uniform(1.0, 5));
  EXPECT_THROW(cameron_martin_shift(batch.paths[0], CameronMartinDirection::constant(other, 1.0), 0.1),
               GridError);
}

TEST(CameronMartin, GirsanovDensity) {
  const LevyModel m(0.0, 1.0, {symmetric_unit_jumps(1.0)}, 1.0);
  const auto batch = sample_paths(m, 20, 40000, 8);
  const auto zero = CameronMartinDirection::constant(batch.grid, 0.0);
  EXPECT_DOUBLE_EQ(girsanov_density(batch.paths[0], zero), 1.0);

  const auto dir = CameronMartinDirection::from_function(batch.grid, [](double t) { return 1.0 - t; });
  const auto mo = sample_moments(batch, [&](const Path& p) { return cameron_martin_weight(p, dir); });
  EXPECT_LE(std::abs(mo.mean - 1.0), 3.0 * mo.se);
  for (const auto& p : batch.paths) {
    EXPECT_NEAR(girsanov_density(p, dir) * cameron_martin_weight(p, dir),
                std::exp(-dir.norm_squared()), 1e-12);
  }
}

TEST(ForwardSde, ReducesToSimpleCases) {
  const LevyModel m(0.0, 1.0, {symmetric_unit_jumps(1.0)}, 1.0);
  const auto batch = sample_paths(m, 10, 5, 9);
  ForwardSdeSpec still;
  still.psi0 = 1.5;
  for (double v : simulate_forward(still, batch.paths[0])) EXPECT_EQ(v, 1.5);

  ForwardSdeSpec brownian;
  brownian.sigma_fn = [](double) { return 1.0; };
  brownian.psi0 = 0.25;
  const auto psi = simulate_forward(brownian, batch.paths[1]);
  const auto w = batch.paths[1].brownian_path();
  for (std::size_t i = 0; i < psi.size(); ++i) EXPECT_NEAR(psi[i], 0.25 + w[i], 1e-14);
}

TEST(ForwardSde, GeometricMeanWithRefinement) {
  const LevyModel m(0.0, 1.0, {}, 1.0);
  ForwardSdeSpec gbm;
  gbm.b = [](double x) { return 0.5 * x; };
  gbm.sigma_fn = [](double x) { return 0.3 * x; };
  gbm.psi0 = 1.0;
  const double exact = std::exp(0.5);
  double previous_bias = 0.0;
  for (std::size_t steps : {4u, 8u, 16u}) {
    const auto batch = sample_paths(m, steps, 40000, 12);
    const auto mo = sample_moments(batch, [&](const Path& p) { return simulate_forward(gbm, p).back(); });
    // Euler mean is exactly (1 + μΔt)^N.
    const double euler = std::pow(1.0 + 0.5 / double(steps), double(steps));
    EXPECT_LE(std::abs(mo.mean - euler), 3.0 * mo.se);
    const double bias = exact - euler;
    if (previous_bias > 0.0) EXPECT_NEAR(previous_bias / bias, 2.0, 0.2);
    previous_bias = bias;
  }
}

TEST(ForwardSde, DivergenceNamesTheStep) {
  const LevyModel m(0.0, 1.0, {}, 1.0);
  const auto batch = sample_paths(m, 4, 1, 1);
  ForwardSdeSpec bad;
  bad.b = [](double x) { return x > 0.5 ? NAN : 1.0; };
  bad.psi0 = 0.0;
  try {
    simulate_forward(bad, batch.paths[0]);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(ForwardSde, BetaBoundCheck) {
  ForwardSdeSpec spec;
  spec.beta = [](double psi, double x) { return 0.5 * std::sin(psi) * x; };
  spec.beta_bound = 1.0;
  const std::vector<double> psi{-2.0, 0.0, 1.0, 3.0};
  const std::vector<double> xs{-2.0, -0.5, 0.5, 2.0};
  EXPECT_LE(spec.check_beta_bound(psi, xs), 1.0);
  spec.beta_bound = 0.1;
  EXPECT_THROW(spec.check_beta_bound(psi, xs), ParameterError);
}

TEST(ForwardSde, FirstVariationMatchesFiniteDifference) {
  const LevyModel m(0.0, 1.0, {symmetric_unit_jumps(2.0)}, 1.0);
  const auto batch = sample_paths(m, 10, 3, 31);
  ForwardSdeSpec spec;
  spec.b = [](double x) { return -x; };
  spec.b_prime = [](double) { return -1.0; };
  spec.sigma_fn = [](double x) { return 1.0 + 0.2 * std::sin(x); };
  spec.sigma_prime = [](double x) { return 0.2 * std::cos(x); };
  spec.beta = [](double x, double y) { return 0.3 * y * std::cos(x); };
  spec.beta_psi = [](double x, double y) { return -0.3 * y * std::sin(x); };
  spec.psi0 = 0.4;
  for (const auto& p : batch.paths) {
    const auto psi = simulate_forward(spec, p);
    const auto d = forward_first_variation(spec, p, psi, 0.35);
    // Perturb the Brownian increment of the step containing r.
    const double eps = 1e-6;
    std::vector<double> dw(p.brownian_increments().begin(), p.brownian_increments().end());
    dw[3] += eps;
    const Path bumped(p.model_ptr(), p.grid_ptr(), dw, p.jumps());
    const auto psi_b = simulate_forward(spec, bumped);
    for (std::size_t i = 0; i < psi.size(); ++i) {
      EXPECT_NEAR(d[i], (psi_b[i] - psi[i]) / eps, 1e-5) << i;
    }
    EXPECT_EQ(d[3], 0.0);
  }
}
