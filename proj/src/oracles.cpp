#include "levymal/oracles.hpp"

#include <cmath>
#include <sstream>

#include "levymal/errors.hpp"

namespace levymal {

// ---------------------------------------------------------------- closed form

LinearClosedForm::LinearClosedForm(const LevyModel& model, double alpha, TerminalKind kind,
                                   double c)
    : sigma_(model.sigma()),
      mean_rate_(model.mean_rate()),
      horizon_(model.horizon()),
      alpha_(alpha),
      kind_(kind),
      c_(c) {}

double LinearClosedForm::y(double t, double x_t) const {
  const double growth = std::exp(alpha_ * (horizon_ - t));
  if (kind_ == TerminalKind::constant) return c_ * growth;
  return growth * (x_t + mean_rate_ * (horizon_ - t));
}

double LinearClosedForm::z(double t) const {
  if (kind_ == TerminalKind::constant) return 0.0;
  return sigma_ * std::exp(alpha_ * (horizon_ - t));
}

double LinearClosedForm::u(double t, double x) const {
  if (kind_ == TerminalKind::constant) return 0.0;
  return x * std::exp(alpha_ * (horizon_ - t));
}

double LinearClosedForm::jump_derivative(double t, double r, double v) const {
  if (t < r || kind_ == TerminalKind::constant) return 0.0;
  return v * std::exp(alpha_ * (horizon_ - t));
}

double LinearClosedForm::mark0_channel(double t, double r) const {
  if (t < r || kind_ == TerminalKind::constant) return 0.0;
  return std::exp(alpha_ * (horizon_ - t));
}

LinearClosedForm closed_form_linear(const LevyModel& model, double alpha, TerminalKind kind,
                                    double c) {
  return LinearClosedForm(model, alpha, kind, c);
}

LinearClosedForm closed_form_linear(const LevyModel& model, double alpha,
                                    const std::string& kind, double c) {
  if (kind == "X_T") return LinearClosedForm(model, alpha, TerminalKind::terminal_value);
  if (kind == "constant") return LinearClosedForm(model, alpha, TerminalKind::constant, c);
  throw CapabilityError("no closed form for terminal kind '" + kind + "'");
}

// ---------------------------------------------------------------- tree

TreeModel::TreeModel(std::shared_ptr<const LevyModel> model, std::size_t n_steps) {
  if (n_steps == 0 || n_steps > max_steps) {
    throw SizeError("tree needs 1.." + std::to_string(max_steps) + " steps");
  }
  const JumpNodes& nodes = model->nodes();
  brownian_ = model->sigma() > 0.0;
  if (nodes.size() > 16) throw SizeError("too many jump nodes for enumeration");
  branching_ = (brownian_ ? 2u : 1u) << nodes.size();
  double leaves = 1.0;
  for (std::size_t i = 0; i < n_steps; ++i) leaves *= static_cast<double>(branching_);
  if (leaves > static_cast<double>(max_leaves)) {
    std::ostringstream os;
    os << "tree has " << leaves << " leaves, budget is " << max_leaves;
    throw SizeError(os.str());
  }

  batch_.model = model;
  batch_.grid = std::make_shared<const TimeGrid>(TimeGrid::uniform(model->horizon(), n_steps));
  const double dt = batch_.grid->dt(0);
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const double q = nodes.weights[j] * dt;
    coin_.push_back(1.0 + q);
    coin_prob_.push_back(q / (1.0 + q));
  }
  digit_prob_.resize(branching_);
  for (std::size_t d = 0; d < branching_; ++d) {
    double p = brownian_ ? 0.5 : 1.0;
    for (std::size_t j = 0; j < nodes.size(); ++j) p *= jump_on(d, j) ? coin_prob_[j] : 1.0 - coin_prob_[j];
    digit_prob_[d] = p;
  }

  const auto n_leaves = static_cast<std::size_t>(leaves);
  batch_.paths.reserve(n_leaves);
  batch_.weights.resize(n_leaves);
  const double root_dt = std::sqrt(dt);
  for (std::size_t leaf = 0; leaf < n_leaves; ++leaf) {
    std::vector<double> dw(n_steps, 0.0);
    std::vector<JumpEvent> jumps;
    double prob = 1.0;
    for (std::size_t i = 0; i < n_steps; ++i) {
      const std::size_t d = digit(leaf, i);
      prob *= digit_prob_[d];
      if (brownian_) dw[i] = brownian_sign(d) * root_dt;
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        if (jump_on(d, j)) {
          jumps.push_back({batch_.grid->time(i + 1), coin_[j] * nodes.sizes[j], static_cast<int>(j),
                           coin_[j]});
        }
      }
    }
    batch_.weights[leaf] = prob;
    batch_.paths.emplace_back(batch_.model, batch_.grid, std::move(dw), std::move(jumps));
  }
}

std::size_t TreeModel::block_size(std::size_t level) const {
  std::size_t s = 1;
  for (std::size_t i = level; i < steps(); ++i) s *= branching_;
  return s;
}

std::size_t TreeModel::digit(std::size_t leaf, std::size_t step) const {
  return (leaf / block_size(step + 1)) % branching_;
}

double TreeModel::brownian_sign(std::size_t d) const {
  if (!brownian_) return 0.0;
  return d % 2 == 0 ? 1.0 : -1.0;
}

bool TreeModel::jump_on(std::size_t d, std::size_t node) const {
  const std::size_t mask = brownian_ ? d / 2 : d;
  return ((mask >> node) & 1u) != 0;
}

std::size_t TreeModel::with_digit(std::size_t leaf, std::size_t step, std::size_t d) const {
  const std::size_t unit = block_size(step + 1);
  const std::size_t old = digit(leaf, step);
  return leaf - old * unit + d * unit;
}

double TreeModel::total_probability() const {
  // Neumaier summation.
  double sum = 0.0, comp = 0.0;
  for (double w : batch_.weights) {
    const double t = sum + w;
    comp += std::abs(sum) >= std::abs(w) ? (sum - t) + w : (w - t) + sum;
    sum = t;
  }
  return sum + comp;
}

std::pair<double, double> TreeModel::step_moments(std::size_t step) const {
  const JumpNodes& nodes = model().nodes();
  const double dt = grid().dt(step);
  const double drift = (model().gamma() - model().small_jump_compensator()) * dt;
  double mean = 0.0, second = 0.0;
  for (std::size_t d = 0; d < branching_; ++d) {
    double x = drift + model().sigma() * brownian_sign(d) * std::sqrt(dt);
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      if (jump_on(d, j)) x += coin_[j] * nodes.sizes[j];
    }
    mean += digit_prob_[d] * x;
    second += digit_prob_[d] * x * x;
  }
  return {mean, second - mean * mean};
}

BsdeSolution tree_backward(const TreeModel& tree, const TerminalFunctional& xi,
                           const Generator& gen, const TreeSolveOptions& options) {
  const PathBatch& batch = tree.batch();
  const TimeGrid& grid = tree.grid();
  const JumpNodes& nodes = tree.model().nodes();
  const std::size_t n_steps = grid.steps();
  const std::size_t n_nodes = nodes.size();
  const double sigma = tree.model().sigma();
  const auto forward = forward_states(batch, gen.forward.get());

  BsdeSolution sol = zero_solution(batch);
  sol.basis_spec = "exact tree expectation";
  sol.inner_residuals.assign(n_steps, {});
  for (std::size_t p = 0; p < batch.size(); ++p) {
    sol.Y(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(n_steps)) = xi(batch.paths[p]);
  }

  for (std::size_t ii = n_steps; ii-- > 0;) {
    const auto i = static_cast<Eigen::Index>(ii);
    const double dt = grid.dt(ii);
    const std::size_t block = tree.block_size(ii);
    const std::size_t child = tree.block_size(ii + 1);
    std::vector<double> residual;
    for (std::size_t start = 0; start < batch.size(); start += block) {
      double cond = 0.0;
      for (std::size_t d = 0; d < tree.branching(); ++d) {
        cond += tree.digit_probability(d) * sol.Y(static_cast<Eigen::Index>(start + d * child), i + 1);
      }
      double ez = 0.0;
      std::vector<double> eu(n_nodes, 0.0);
      for (std::size_t d = 0; d < tree.branching(); ++d) {
        const std::size_t leaf = start + d * child;
        const Path& path = batch.paths[leaf];
        const double centered = sol.Y(static_cast<Eigen::Index>(leaf), i + 1) - cond;
        const double pr = tree.digit_probability(d);
        ez += pr * centered * path.dw(ii);
        for (std::size_t j = 0; j < n_nodes; ++j) eu[j] += pr * centered * path.compensated_count(ii, j);
      }
      const double z = sigma > 0.0 ? ez / dt : 0.0;
      for (std::size_t j = 0; j < n_nodes; ++j) eu[j] /= nodes.weights[j] * dt;

      const Path& rep = batch.paths[start];
      const DriverContext ctx{rep,
                              forward.empty() ? std::span<const double>() : std::span<const double>(forward[start]),
                              ii, grid.time(ii)};
      double y = cond;
      double fy = 0.0;
      bool converged = false;
      for (int m = 0; m < options.max_inner_iterations; ++m) {
        fy = gen(ctx, y, z, eu);
        const double next = cond + dt * fy;
        const double r = std::abs(next - y);
        if (residual.size() <= static_cast<std::size_t>(m)) residual.push_back(0.0);
        residual[static_cast<std::size_t>(m)] = std::max(residual[static_cast<std::size_t>(m)], r);
        y = next;
        if (r <= options.inner_tol * std::max(1.0, std::abs(y))) {
          converged = true;
          break;
        }
      }
      if (!converged) {
        throw ContractionError("tree fixed point did not converge at step " + std::to_string(ii));
      }
      for (std::size_t leaf = start; leaf < start + block; ++leaf) {
        const auto p = static_cast<Eigen::Index>(leaf);
        sol.Y(p, i) = y;
        sol.Z(p, i) = z;
        for (std::size_t j = 0; j < n_nodes; ++j) sol.U[j](p, i) = eu[j];
        sol.driver_integral(p) += dt * fy;
      }
    }
    sol.inner_residuals[ii] = std::move(residual);
  }
  return sol;
}

Eigen::VectorXd tree_derivative(const TreeModel& tree, const BsdeSolution& sol, std::size_t k,
                                std::optional<std::size_t> node) {
  if (k == 0 || k > tree.steps()) throw RangeError("derivative step must be in 1..N");
  if (sol.paths() != tree.leaves()) throw ShapeError("solution does not live on the tree");
  const std::size_t step = k - 1;
  const auto col = static_cast<Eigen::Index>(k);
  const bool brownian = tree.model().sigma() > 0.0;
  Eigen::VectorXd out(static_cast<Eigen::Index>(tree.leaves()));
  for (std::size_t leaf = 0; leaf < tree.leaves(); ++leaf) {
    const std::size_t d = tree.digit(leaf, step);
    double value = 0.0;
    if (!node) {
      if (!brownian) throw CoverageError("tree has no Brownian channel");
      const std::size_t base = d - d % 2;
      const double up = sol.Y(static_cast<Eigen::Index>(tree.with_digit(leaf, step, base)), col);
      const double down = sol.Y(static_cast<Eigen::Index>(tree.with_digit(leaf, step, base + 1)), col);
      value = (up - down) / (2.0 * std::sqrt(tree.grid().dt(step)) * tree.model().sigma());
    } else {
      const std::size_t j = *node;
      if (j >= tree.model().nodes().size()) throw CoverageError("unknown jump node");
      const std::size_t bit = (brownian ? 2u : 1u) << j;
      const std::size_t off = tree.jump_on(d, j) ? d - bit : d;
      const double on_y = sol.Y(static_cast<Eigen::Index>(tree.with_digit(leaf, step, off + bit)), col);
      const double off_y = sol.Y(static_cast<Eigen::Index>(tree.with_digit(leaf, step, off)), col);
      value = (on_y - off_y) / tree.coin_size(j);
    }
    out(static_cast<Eigen::Index>(leaf)) = value;
  }
  return out;
}

// ---------------------------------------------------------------- Gronwall

GronwallVerdict gronwall_check(const std::vector<double>& gaps, double epsilon,
                               const std::vector<double>& c_terms) {
  if (gaps.empty() || gaps.front() != 0.0) throw ParameterError("gap sequence must start at g_0 = 0");
  if (!(epsilon >= 0.0)) throw ParameterError("epsilon must be >= 0");
  for (double g : gaps) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ParameterError("gaps must be finite and >= 0");
  }
  const std::size_t m_last = gaps.size() - 1;
  if (!c_terms.empty() && c_terms.size() < m_last) {
    throw ShapeError("need one C term per recorded transition");
  }
  const auto c = [&](std::size_t n) { return c_terms.empty() ? 0.0 : c_terms[n]; };

  GronwallVerdict v;
  std::ostringstream os;
  for (std::size_t n = 0; n < m_last; ++n) {
    const double rhs = epsilon + c(n) + 0.5 * gaps[n];
    if (gaps[n + 1] > rhs * (1.0 + 1e-12)) {
      v.hypothesis_holds = false;
      v.violation = n;
      os << "hypothesis violated at n=" << n << ": g_{n+1}=" << gaps[n + 1] << " > " << rhs;
      v.message = os.str();
      return v;
    }
  }

  bool c_zero = true;
  for (std::size_t n = 0; n < m_last; ++n) c_zero = c_zero && c(n) == 0.0;
  if (c_zero) {
    v.tail_bound = 2.0 * epsilon;
    for (double g : gaps) v.tail_max = std::max(v.tail_max, g);
    v.conclusion_holds = v.tail_max <= v.tail_bound * (1.0 + 1e-12);
    os << "C = 0: max_n g_n = " << v.tail_max << " vs 2*eps = " << v.tail_bound;
  } else {
    // limsup read as the maximum over the last quarter of the sequence.
    const std::size_t mid = m_last / 2;
    const std::size_t tail_start = m_last - m_last / 4;
    double sup_c = 0.0;
    for (std::size_t k = mid; k < m_last; ++k) sup_c = std::max(sup_c, c(k));
    bool ok = true;
    for (std::size_t n = tail_start; n <= m_last; ++n) {
      const double bound =
          2.0 * (epsilon + sup_c) + std::ldexp(gaps[mid], -static_cast<int>(n - mid));
      v.tail_max = std::max(v.tail_max, gaps[n]);
      v.tail_bound = std::max(v.tail_bound, bound);
      ok = ok && gaps[n] <= bound * (1.0 + 1e-12);
    }
    v.conclusion_holds = ok;
    os << "limsup read as max over the last quarter (n >= " << tail_start
       << "): max g_n = " << v.tail_max << " vs bound 2(eps + sup C) + 2^-(n-" << mid
       << ") g_" << mid << " <= " << v.tail_bound;
  }
  v.message = os.str();
  return v;
}

}  // namespace levymal
