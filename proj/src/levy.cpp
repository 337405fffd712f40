#include "levymal/levy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "levymal/errors.hpp"

namespace levymal {

namespace {

void require_finite(double x, const char* name) {
  if (!std::isfinite(x)) {
    throw ParameterError(std::string("non-finite model parameter: ") + name);
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool same_size(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b));
}

}  // namespace

// ---------------------------------------------------------------- TimeGrid

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) throw GridError("time grid needs at least one step");
  if (times_.front() != 0.0) throw GridError("time grid must start at 0");
  for (std::size_t i = 0; i + 1 < times_.size(); ++i) {
    if (!(times_[i + 1] > times_[i])) throw GridError("time grid must be strictly increasing");
  }
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t n_steps) {
  if (n_steps == 0) throw GridError("n_steps must be >= 1");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw GridError("horizon must be positive");
  std::vector<double> t(n_steps + 1);
  for (std::size_t i = 0; i <= n_steps; ++i) {
    t[i] = horizon * static_cast<double>(i) / static_cast<double>(n_steps);
  }
  t.back() = horizon;
  return TimeGrid(std::move(t));
}

double TimeGrid::max_dt() const {
  double m = 0.0;
  for (std::size_t i = 0; i < steps(); ++i) m = std::max(m, dt(i));
  return m;
}

std::size_t TimeGrid::index_at_or_after(double r) const {
  if (r < 0.0 || r > horizon()) throw RangeError("time outside [0, T]");
  auto it = std::lower_bound(times_.begin(), times_.end(), r - 1e-14 * horizon());
  return static_cast<std::size_t>(it - times_.begin());
}

std::size_t TimeGrid::step_containing(double t) const {
  if (t < 0.0 || t > horizon()) throw RangeError("time outside [0, T]");
  if (t <= times_.front()) return 0;
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  return static_cast<std::size_t>(it - times_.begin()) - 1;
}

TimeGrid TimeGrid::coarsen(std::size_t factor) const {
  if (factor == 0 || steps() % factor != 0) {
    throw GridError("coarsening factor must divide the number of steps");
  }
  std::vector<double> t;
  for (std::size_t i = 0; i <= steps(); i += factor) t.push_back(times_[i]);
  return TimeGrid(std::move(t));
}

TimeGrid TimeGrid::refine(std::size_t factor) const {
  if (factor == 0) throw GridError("refinement factor must be >= 1");
  std::vector<double> t{0.0};
  for (std::size_t i = 0; i < steps(); ++i) {
    for (std::size_t k = 1; k < factor; ++k) {
      t.push_back(times_[i] + dt(i) * static_cast<double>(k) / static_cast<double>(factor));
    }
    t.push_back(times_[i + 1]);
  }
  return TimeGrid(std::move(t));
}

bool TimeGrid::contains_points_of(const TimeGrid& other) const {
  const double tol = 1e-12 * horizon();
  if (std::abs(other.horizon() - horizon()) > tol) return false;
  for (double t : other.times_) {
    const std::size_t i = index_at_or_after(std::min(t, horizon()));
    if (i > steps() || std::abs(times_[i] - t) > tol) return false;
  }
  return true;
}

// ---------------------------------------------------------------- JumpNodes

double JumpNodes::total_mass() const {
  return std::accumulate(weights.begin(), weights.end(), 0.0);
}

std::optional<std::size_t> JumpNodes::index_of(double size) const {
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (same_size(sizes[j], size)) return j;
  }
  return std::nullopt;
}

double JumpNodes::l2_norm(std::span<const double> values) const {
  if (values.size() != sizes.size()) throw ShapeError("values do not match node count");
  double s = 0.0;
  for (std::size_t j = 0; j < sizes.size(); ++j) s += weights[j] * values[j] * values[j];
  return std::sqrt(s);
}

JumpNodes discretize_levy_density(const std::function<double(double)>& density, double lo,
                                  double hi, std::size_t n, double epsilon) {
  if (!(hi > lo) || n == 0) throw ParameterError("invalid density discretisation range");
  JumpNodes nodes;
  const double h = (hi - lo) / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double x = lo + (static_cast<double>(k) + 0.5) * h;
    if (x == 0.0 || std::abs(x) < epsilon) continue;
    const double w = density(x) * h;
    if (!std::isfinite(w) || w < 0.0) throw ParameterError("Lévy density must be finite and >= 0");
    if (w == 0.0) continue;
    nodes.sizes.push_back(x);
    nodes.weights.push_back(w);
  }
  return nodes;
}

JumpComponent JumpComponent::from_nodes(const JumpNodes& nodes) {
  JumpComponent c;
  c.intensity = nodes.total_mass();
  c.sizes = nodes.sizes;
  for (double w : nodes.weights) c.probabilities.push_back(w / c.intensity);
  return c;
}

// ---------------------------------------------------------------- LevyModel

LevyModel::LevyModel(double gamma, double sigma, std::vector<JumpComponent> jumps,
                     double horizon, double truncation_epsilon)
    : gamma_(gamma), sigma_(sigma), horizon_(horizon), truncation_epsilon_(truncation_epsilon) {
  require_finite(gamma, "gamma");
  require_finite(sigma, "sigma");
  require_finite(horizon, "horizon");
  require_finite(truncation_epsilon, "truncation_epsilon");
  if (sigma < 0.0) throw ParameterError("sigma must be >= 0");
  if (!(horizon > 0.0)) throw ParameterError("horizon must be > 0");
  if (truncation_epsilon < 0.0) throw ParameterError("truncation_epsilon must be >= 0");

  for (auto& c : jumps) {
    require_finite(c.intensity, "jump intensity");
    if (c.intensity < 0.0) throw ParameterError("jump intensity must be >= 0");
    if (c.sizes.size() != c.probabilities.size() || c.sizes.empty()) {
      throw ParameterError("jump component needs matching sizes and probabilities");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < c.sizes.size(); ++k) {
      require_finite(c.sizes[k], "jump size");
      require_finite(c.probabilities[k], "jump probability");
      if (c.probabilities[k] < 0.0) throw ParameterError("jump probabilities must be >= 0");
      if (c.sizes[k] == 0.0) throw ParameterError("jump size 0 is not a jump");
      total += c.probabilities[k];
    }
    if (std::abs(total - 1.0) > 1e-9) throw ParameterError("jump probabilities must sum to 1");

    // Drop small jumps; uncompensated ones (|x| > 1) move their mean into γ.
    JumpComponent kept{c.intensity, {}, {}};
    double kept_prob = 0.0;
    for (std::size_t k = 0; k < c.sizes.size(); ++k) {
      const double x = c.sizes[k];
      const double p = c.probabilities[k];
      if (std::abs(x) < truncation_epsilon) {
        dropped_variance_rate_ += c.intensity * p * x * x;
        if (std::abs(x) > 1.0) gamma_ += c.intensity * p * x;
        continue;
      }
      kept.sizes.push_back(x);
      kept.probabilities.push_back(p);
      kept_prob += p;
    }
    if (kept.sizes.empty() || c.intensity == 0.0) continue;
    kept.intensity = c.intensity * kept_prob;
    for (double& p : kept.probabilities) p /= kept_prob;
    components_.push_back(std::move(kept));
  }

  for (const auto& c : components_) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < c.sizes.size(); ++k) {
      const double mass = c.intensity * c.probabilities[k];
      auto j = nodes_.index_of(c.sizes[k]);
      if (!j) {
        nodes_.sizes.push_back(c.sizes[k]);
        nodes_.weights.push_back(0.0);
        j = nodes_.sizes.size() - 1;
      }
      nodes_.weights[*j] += mass;
      idx.push_back(*j);
    }
    component_nodes_.push_back(std::move(idx));
  }

  if (!(sigma_ > 0.0) && !(total_intensity() > 0.0)) {
    throw ParameterError("model needs sigma > 0 or a non-zero jump intensity");
  }
}

double LevyModel::mean_rate() const {
  double m = gamma_;
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    if (std::abs(nodes_.sizes[j]) > 1.0) m += nodes_.weights[j] * nodes_.sizes[j];
  }
  return m;
}

double LevyModel::small_jump_compensator() const {
  double c = 0.0;
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    if (std::abs(nodes_.sizes[j]) <= 1.0) c += nodes_.weights[j] * nodes_.sizes[j];
  }
  return c;
}

double LevyModel::variance_rate() const {
  double v = sigma_ * sigma_;
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    v += nodes_.weights[j] * nodes_.sizes[j] * nodes_.sizes[j];
  }
  return v;
}

// ---------------------------------------------------------------- Path

Path::Path(std::shared_ptr<const LevyModel> model, std::shared_ptr<const TimeGrid> grid,
           std::vector<double> brownian_increments, std::vector<JumpEvent> jumps)
    : model_(std::move(model)),
      grid_(std::move(grid)),
      dw_(std::move(brownian_increments)),
      jumps_(std::move(jumps)) {
  if (dw_.size() != grid_->steps()) throw GridError("increments do not match the grid");
  std::stable_sort(jumps_.begin(), jumps_.end(),
                   [](const JumpEvent& a, const JumpEvent& b) { return a.time < b.time; });
  for (const auto& e : jumps_) {
    if (!(e.time >= 0.0) || e.time > grid_->horizon()) {
      throw RangeError("jump times must lie in [0, T]");
    }
  }
  rebuild();
}

double Path::compensated_count(std::size_t step, std::size_t node) const {
  return jump_count(step, node) - model_->nodes().weights[node] * grid_->dt(step);
}

void Path::rebuild() {
  const std::size_t n = grid_->steps();
  const std::size_t n_nodes = model_->nodes().size();
  counts_.assign(n * n_nodes, 0.0);
  values_.assign(n + 1, 0.0);

  std::vector<double> step_jumps(n, 0.0);
  for (const auto& e : jumps_) {
    const std::size_t i = grid_->step_containing(e.time);
    // A jump at time 0 is already part of X_0.
    if (e.time == 0.0) {
      values_[0] += e.size;
    } else {
      step_jumps[i] += e.size;
    }
    if (e.node >= 0) counts_[i * n_nodes + static_cast<std::size_t>(e.node)] += e.count;
  }
  const double drift = model_->gamma() - model_->small_jump_compensator();
  const double sigma = model_->sigma();
  for (std::size_t i = 0; i < n; ++i) {
    values_[i + 1] = values_[i] + drift * grid_->dt(i) + sigma * dw_[i] + step_jumps[i];
  }
}

std::vector<double> Path::brownian_path() const {
  std::vector<double> w(dw_.size() + 1, 0.0);
  for (std::size_t i = 0; i < dw_.size(); ++i) w[i + 1] = w[i] + dw_[i];
  return w;
}

std::vector<double> Path::jump_sum_path() const {
  std::vector<double> j(grid_->steps() + 1, 0.0);
  std::size_t e = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i <= grid_->steps(); ++i) {
    while (e < jumps_.size() && jumps_[e].time <= grid_->time(i)) acc += jumps_[e++].size;
    j[i] = acc;
  }
  return j;
}

// ---------------------------------------------------------------- sampling

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

PathBatch sample_paths(const LevyModel& model, std::size_t n_steps, std::size_t n_paths,
                       std::uint64_t seed) {
  if (n_steps == 0) throw GridError("n_steps must be >= 1");
  if (n_paths == 0) throw ParameterError("n_paths must be >= 1");

  PathBatch batch;
  batch.model = std::make_shared<const LevyModel>(model);
  batch.grid = std::make_shared<const TimeGrid>(TimeGrid::uniform(model.horizon(), n_steps));
  const double horizon = model.horizon();
  const auto& components = model.components();

  std::vector<std::optional<Path>> slots(n_paths);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(n_paths); ++p) {
    std::mt19937_64 rng(substream_seed(seed, static_cast<std::uint64_t>(p)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    std::vector<double> dw(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i) {
      dw[i] = std::sqrt(batch.grid->dt(i)) * normal(rng);
    }
    std::vector<JumpEvent> jumps;
    for (std::size_t c = 0; c < components.size(); ++c) {
      std::poisson_distribution<long> count(components[c].intensity * horizon);
      std::discrete_distribution<std::size_t> pick(components[c].probabilities.begin(),
                                                   components[c].probabilities.end());
      const long k = count(rng);
      if (k < 0) throw SamplerError("Poisson sampler returned a negative count");
      for (long m = 0; m < k; ++m) {
        const double t = horizon * (1.0 - uniform(rng));
        const std::size_t s = pick(rng);
        if (s >= components[c].sizes.size()) throw SamplerError("jump-size sampler out of range");
        jumps.push_back({t, components[c].sizes[s],
                         static_cast<int>(model.component_node(c, s)), 1.0});
      }
    }
    slots[static_cast<std::size_t>(p)].emplace(batch.model, batch.grid, std::move(dw),
                                               std::move(jumps));
  }
  batch.paths.reserve(n_paths);
  for (auto& s : slots) batch.paths.push_back(std::move(*s));
  return batch;
}

PathBatch PathBatch::coarsen(std::size_t factor) const {
  PathBatch out;
  out.model = model;
  out.grid = std::make_shared<const TimeGrid>(grid->coarsen(factor));
  out.weights = weights;
  out.paths.reserve(paths.size());
  for (const auto& p : paths) {
    std::vector<double> dw(out.grid->steps(), 0.0);
    for (std::size_t i = 0; i < grid->steps(); ++i) dw[i / factor] += p.dw(i);
    out.paths.emplace_back(model, out.grid, std::move(dw), p.jumps());
  }
  return out;
}

// ---------------------------------------------------------------- shifts

Path shift_path(const Path& path, double r, double v) {
  const TimeGrid& grid = path.grid();
  if (!(r >= 0.0 && r <= grid.horizon())) throw RangeError("shift time outside [0, T]");
  Path out = path;
  const auto node = path.model().nodes().index_of(v);
  const double t = r;
  JumpEvent e{t, v, node ? static_cast<int>(*node) : -1, 1.0};
  auto pos = std::upper_bound(out.jumps_.begin(), out.jumps_.end(), t,
                              [](double a, const JumpEvent& b) { return a < b.time; });
  out.jumps_.insert(pos, e);
  const std::size_t step = grid.step_containing(t);
  if (node) out.counts_[step * path.model().nodes().size() + *node] += 1.0;
  for (std::size_t i = grid.index_at_or_after(t); i <= grid.steps(); ++i) out.values_[i] += v;
  return out;
}

CameronMartinDirection::CameronMartinDirection(std::shared_ptr<const TimeGrid> grid,
                                               std::vector<double> h)
    : grid_(std::move(grid)), h_(std::move(h)) {
  if (h_.size() != grid_->steps()) throw GridError("direction does not match the grid");
  g_.assign(h_.size() + 1, 0.0);
  for (std::size_t i = 0; i < h_.size(); ++i) g_[i + 1] = g_[i] + h_[i] * grid_->dt(i);
}

CameronMartinDirection CameronMartinDirection::constant(std::shared_ptr<const TimeGrid> grid,
                                                        double c) {
  std::vector<double> h(grid->steps(), c);
  return CameronMartinDirection(std::move(grid), std::move(h));
}

CameronMartinDirection CameronMartinDirection::from_function(
    std::shared_ptr<const TimeGrid> grid, const std::function<double(double)>& h) {
  std::vector<double> v(grid->steps());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = h(grid->time(i));
  return CameronMartinDirection(std::move(grid), std::move(v));
}

double CameronMartinDirection::norm_squared() const {
  double s = 0.0;
  for (std::size_t i = 0; i < h_.size(); ++i) s += h_[i] * h_[i] * grid_->dt(i);
  return s;
}

Path cameron_martin_shift(const Path& path, const CameronMartinDirection& dir, double u) {
  if (!(dir.grid() == path.grid())) throw GridError("direction grid differs from path grid");
  Path out = path;
  const auto g = dir.path();
  for (std::size_t i = 0; i < out.dw_.size(); ++i) out.dw_[i] += u * (g[i + 1] - g[i]);
  // Jumps and counts are unchanged; only the Brownian part moves.
  const double sigma = path.model().sigma();
  for (std::size_t i = 0; i < out.values_.size(); ++i) out.values_[i] += sigma * u * g[i];
  return out;
}

double brownian_integral(const Path& path, const CameronMartinDirection& dir) {
  if (!(dir.grid() == path.grid())) throw GridError("direction grid differs from path grid");
  double s = 0.0;
  for (std::size_t i = 0; i < dir.h().size(); ++i) s += dir.h()[i] * path.dw(i);
  return s;
}

double girsanov_density(const Path& path, const CameronMartinDirection& dir) {
  return std::exp(-0.5 * dir.norm_squared() - brownian_integral(path, dir));
}

double cameron_martin_weight(const Path& path, const CameronMartinDirection& dir) {
  return std::exp(brownian_integral(path, dir) - 0.5 * dir.norm_squared());
}

// ---------------------------------------------------------------- forward SDE

double ForwardSdeSpec::check_beta_bound(std::span<const double> psi_probe,
                                        std::span<const double> x_probe) const {
  double worst = 0.0;
  for (double psi : psi_probe) {
    for (double x : x_probe) {
      if (x == 0.0) continue;
      worst = std::max(worst, std::abs(beta(psi, x)) / std::min(1.0, std::abs(x)));
    }
  }
  if (beta_bound && worst > *beta_bound * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "jump coefficient violates |beta| <= C_beta (1 ^ |x|): ratio " << worst
       << " > " << *beta_bound;
    throw ParameterError(os.str());
  }
  return worst;
}

namespace {

void check_state(double psi, std::size_t step) {
  if (!std::isfinite(psi)) {
    throw DivergenceError("forward SDE state became non-finite at step " + std::to_string(step));
  }
}

}  // namespace

std::vector<double> simulate_forward(const ForwardSdeSpec& spec, const Path& path) {
  const TimeGrid& grid = path.grid();
  const JumpNodes& nodes = path.model().nodes();
  std::vector<double> psi(grid.steps() + 1);
  psi[0] = spec.psi0;
  check_state(psi[0], 0);
  std::size_t e = 0;
  const auto& jumps = path.jumps();
  for (std::size_t i = 0; i < grid.steps(); ++i) {
    const double s = psi[i];
    const double dt = grid.dt(i);
    double compensator = 0.0;
    if (spec.beta) {
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        compensator += nodes.weights[j] * spec.beta(s, nodes.sizes[j]);
      }
    }
    double pre = s;
    while (e < jumps.size() && jumps[e].time <= grid.time(i + 1)) {
      if (spec.beta) pre += spec.beta(pre, jumps[e].size);
      ++e;
    }
    const double drift = spec.b ? spec.b(s) : 0.0;
    const double diffusion = spec.sigma_fn ? spec.sigma_fn(s) : 0.0;
    psi[i + 1] = pre + drift * dt + diffusion * path.dw(i) - compensator * dt;
    check_state(psi[i + 1], i + 1);
  }
  return psi;
}

std::vector<double> forward_first_variation(const ForwardSdeSpec& spec, const Path& path,
                                            std::span<const double> psi, double r) {
  const TimeGrid& grid = path.grid();
  if (psi.size() != grid.steps() + 1) throw GridError("state trajectory does not match grid");
  const double sigma = path.model().sigma();
  if (!(sigma > 0.0)) throw CapabilityError("Brownian channel needs sigma > 0");
  if (!spec.sigma_fn || (spec.b && !spec.b_prime) || !spec.sigma_prime ||
      (spec.beta && !spec.beta_psi)) {
    throw CapabilityError("first variation needs b', sigma' and beta_psi");
  }
  const JumpNodes& nodes = path.model().nodes();
  const std::size_t k = grid.step_containing(r);
  std::vector<double> d(grid.steps() + 1, 0.0);
  d[k + 1] = spec.sigma_fn(psi[k]) / sigma;

  const auto& jumps = path.jumps();
  std::size_t e = 0;
  while (e < jumps.size() && jumps[e].time <= grid.time(k + 1)) ++e;
  for (std::size_t i = k + 1; i < grid.steps(); ++i) {
    const double s = psi[i];
    const double dt = grid.dt(i);
    double comp_prime = 0.0;
    if (spec.beta) {
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        comp_prime += nodes.weights[j] * spec.beta_psi(s, nodes.sizes[j]);
      }
    }
    double pre = s;
    double dpre = d[i];
    while (spec.beta && e < jumps.size() && jumps[e].time <= grid.time(i + 1)) {
      dpre *= 1.0 + spec.beta_psi(pre, jumps[e].size);
      pre += spec.beta(pre, jumps[e].size);
      ++e;
    }
    const double db = spec.b_prime ? spec.b_prime(s) : 0.0;
    d[i + 1] = dpre + (db * dt + spec.sigma_prime(s) * path.dw(i) - comp_prime * dt) * d[i];
  }
  return d;
}

}  // namespace levymal
