#include "levymal/chaos.hpp"

#include <algorithm>
#include <cmath>

#include "levymal/errors.hpp"

namespace levymal {

namespace {

bool same_mark(double a, double b) {
  return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b));
}

std::size_t grid_index(const TimeGrid& grid, double t, const char* what) {
  const double tol = 1e-12 * grid.horizon();
  if (t < -tol || t > grid.horizon() + tol) throw RangeError(std::string(what) + " outside [0, T]");
  const std::size_t i = grid.index_at_or_after(std::clamp(t, 0.0, grid.horizon()));
  if (i > grid.steps() || std::abs(grid.time(i) - t) > tol) {
    throw GridError(std::string(what) + " is not a grid point");
  }
  return i;
}

}  // namespace

MeasureSpec MeasureSpec::from_model(const LevyModel& model) {
  return {model.sigma() * model.sigma(), model.nodes(), model.horizon()};
}

double MeasureSpec::mu(double mark) const {
  if (mark == 0.0) return sigma_sq;
  const auto j = nodes.index_of(mark);
  if (!j) throw MarkError("mark " + std::to_string(mark) + " is not a node of the measure");
  return nodes.weights[*j];
}

// ---------------------------------------------------------------- order 1

SimpleKernel1::SimpleKernel1(std::shared_ptr<const TimeGrid> grid, std::vector<double> marks,
                             Eigen::MatrixXd values)
    : grid_(std::move(grid)), marks_(std::move(marks)), values_(std::move(values)) {
  if (values_.rows() != static_cast<Eigen::Index>(grid_->steps()) ||
      values_.cols() != static_cast<Eigen::Index>(marks_.size())) {
    throw ShapeError("kernel values must be cells x marks");
  }
  for (std::size_t a = 0; a < marks_.size(); ++a) {
    for (std::size_t b = a + 1; b < marks_.size(); ++b) {
      if (same_mark(marks_[a], marks_[b])) throw KernelError("duplicate kernel mark");
    }
  }
  if (!values_.allFinite()) throw KernelError("kernel values must be finite");
}

SimpleKernel1 SimpleKernel1::indicator(std::shared_ptr<const TimeGrid> grid, double t0, double t1,
                                       std::vector<double> marks, double c) {
  const std::size_t i0 = grid_index(*grid, t0, "box start");
  const std::size_t i1 = grid_index(*grid, t1, "box end");
  if (i1 < i0) throw KernelError("box end before start");
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid->steps()),
                                            static_cast<Eigen::Index>(marks.size()));
  v.middleRows(static_cast<Eigen::Index>(i0), static_cast<Eigen::Index>(i1 - i0)).setConstant(c);
  return SimpleKernel1(std::move(grid), std::move(marks), std::move(v));
}

double SimpleKernel1::at(std::size_t cell, double mark) const {
  for (std::size_t j = 0; j < marks_.size(); ++j) {
    if (same_mark(marks_[j], mark)) {
      return values_(static_cast<Eigen::Index>(cell), static_cast<Eigen::Index>(j));
    }
  }
  return 0.0;
}

SimpleKernel1 SimpleKernel1::refine(std::size_t factor) const {
  auto fine = std::make_shared<const TimeGrid>(grid_->refine(factor));
  Eigen::MatrixXd v(static_cast<Eigen::Index>(fine->steps()), values_.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) = values_.row(i / static_cast<Eigen::Index>(factor));
  return SimpleKernel1(std::move(fine), marks_, std::move(v));
}

SimpleKernel1 SimpleKernel1::operator+(const SimpleKernel1& other) const {
  if (!(*grid_ == *other.grid_)) throw GridError("kernels live on different grids");
  std::vector<double> marks = marks_;
  for (double x : other.marks_) {
    if (std::none_of(marks.begin(), marks.end(), [&](double y) { return same_mark(x, y); })) {
      marks.push_back(x);
    }
  }
  Eigen::MatrixXd v(values_.rows(), static_cast<Eigen::Index>(marks.size()));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (std::size_t j = 0; j < marks.size(); ++j) {
      v(i, static_cast<Eigen::Index>(j)) = at(static_cast<std::size_t>(i), marks[j]) +
                                           other.at(static_cast<std::size_t>(i), marks[j]);
    }
  }
  return SimpleKernel1(grid_, std::move(marks), std::move(v));
}

SimpleKernel1 SimpleKernel1::operator*(double c) const {
  return SimpleKernel1(grid_, marks_, values_ * c);
}

double m_integral(const SimpleKernel1& f, const MeasureSpec& spec) {
  double s = 0.0;
  for (std::size_t j = 0; j < f.marks().size(); ++j) {
    const double mu = spec.mu(f.marks()[j]);
    for (std::size_t i = 0; i < f.grid().steps(); ++i) {
      s += f.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * f.grid().dt(i) * mu;
    }
  }
  return s;
}

double m_norm_squared(const SimpleKernel1& f, const MeasureSpec& spec) {
  double s = 0.0;
  for (std::size_t j = 0; j < f.marks().size(); ++j) {
    const double mu = spec.mu(f.marks()[j]);
    for (std::size_t i = 0; i < f.grid().steps(); ++i) {
      const double v = f.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      s += v * v * f.grid().dt(i) * mu;
    }
  }
  return s;
}

double integrate_M1(const SimpleKernel1& f, const Path& path) {
  const MeasureSpec spec = MeasureSpec::from_model(path.model());
  const TimeGrid& kg = f.grid();
  if (!path.grid().contains_points_of(kg)) {
    throw GridError("kernel cells must be unions of path grid cells");
  }
  for (double x : f.marks()) spec.mu(x);  // MarkError for marks outside the model

  const double sigma = path.model().sigma();
  const auto w = path.brownian_path();
  double brownian = 0.0;
  for (std::size_t i = 0; i < kg.steps(); ++i) {
    const double c = f.at(i, 0.0);
    if (c == 0.0) continue;
    const std::size_t a = path.grid().index_at_or_after(kg.time(i));
    const std::size_t b = path.grid().index_at_or_after(kg.time(i + 1));
    brownian += c * (w[b] - w[a]);
  }
  double jumps = 0.0;
  for (const auto& e : path.jumps()) {
    // A jump at s belongs to the cell (t_i, t_{i+1}] that contains it.
    jumps += e.count * f.at(kg.step_containing(e.time), e.node >= 0
                                                            ? path.model().nodes().sizes[static_cast<std::size_t>(e.node)]
                                                            : e.size);
  }
  double compensator = 0.0;
  for (std::size_t j = 0; j < f.marks().size(); ++j) {
    if (f.marks()[j] == 0.0) continue;
    const double nu = spec.mu(f.marks()[j]);
    for (std::size_t i = 0; i < kg.steps(); ++i) {
      compensator += f.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * kg.dt(i) * nu;
    }
  }
  return sigma * brownian + jumps - compensator;
}

// ---------------------------------------------------------------- order 2

namespace {

double time_overlap(const MarkedBox& a, const MarkedBox& b) {
  return std::max(0.0, std::min(a.t1, b.t1) - std::max(a.t0, b.t0));
}

bool marks_meet(const MarkedBox& a, const MarkedBox& b) {
  for (double x : a.marks) {
    for (double y : b.marks) {
      if (same_mark(x, y)) return true;
    }
  }
  return false;
}

}  // namespace

double m_measure(const MarkedBox& box, const MeasureSpec& spec) {
  double mu = 0.0;
  for (double x : box.marks) mu += spec.mu(x);
  return (box.t1 - box.t0) * mu;
}

double m_overlap(const MarkedBox& a, const MarkedBox& b, const MeasureSpec& spec) {
  const double dt = time_overlap(a, b);
  if (dt == 0.0) return 0.0;
  double mu = 0.0;
  for (double x : a.marks) {
    for (double y : b.marks) {
      if (same_mark(x, y)) mu += spec.mu(x);
    }
  }
  return dt * mu;
}

bool boxes_disjoint(const MarkedBox& a, const MarkedBox& b) {
  return time_overlap(a, b) == 0.0 || !marks_meet(a, b);
}

double m_of_box(const MarkedBox& box, const Path& path) {
  return integrate_M1(SimpleKernel1::indicator(path.grid_ptr(), box.t0, box.t1, box.marks), path);
}

SimpleKernel2::SimpleKernel2(std::vector<Term> terms) : terms_(std::move(terms)) {
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const auto& t = terms_[k];
    if (!(t.first.t1 > t.first.t0) || !(t.second.t1 > t.second.t0)) {
      throw KernelError("box intervals must be non-empty");
    }
    if (!boxes_disjoint(t.first, t.second)) {
      throw KernelError("boxes of term " + std::to_string(k) + " overlap");
    }
  }
}

double integrate_M2(const SimpleKernel2& f, const Path& path) {
  double s = 0.0;
  for (const auto& t : f.terms()) s += t.a * m_of_box(t.first, path) * m_of_box(t.second, path);
  return s;
}

double second_moment_I2(const SimpleKernel2& f, const MeasureSpec& spec) {
  double direct = 0.0, swapped = 0.0;
  for (const auto& k : f.terms()) {
    for (const auto& l : f.terms()) {
      direct += k.a * l.a * m_overlap(k.first, l.first, spec) * m_overlap(k.second, l.second, spec);
      swapped += k.a * l.a * m_overlap(k.first, l.second, spec) * m_overlap(k.second, l.first, spec);
    }
  }
  return direct + swapped;
}

}  // namespace levymal
