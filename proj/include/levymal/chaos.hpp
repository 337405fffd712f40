#pragma once

// The random measure M(dt, dx) = σ dW_t δ₀(dx) + Ñ(dt, dx), its control
// measure 𝕞 = λ ⊗ (σ²δ₀ + ν), and single and double integrals of simple
// kernels against it.

#include <Eigen/Dense>

#include <memory>
#include <vector>

#include "levymal/levy.hpp"

namespace levymal {

struct MeasureSpec {
  double sigma_sq = 0.0;
  JumpNodes nodes;
  double horizon = 1.0;

  static MeasureSpec from_model(const LevyModel& model);
  // μ({mark}); mark 0 is the Brownian atom. MarkError for an unknown mark.
  double mu(double mark) const;
  // 𝕞([0,T] × ℝ) = T (σ² + ν(ℝ)).
  double total_mass() const { return horizon * (sigma_sq + nodes.total_mass()); }
};

// Order-1 kernel, piecewise constant on grid cells [t_i, t_{i+1}) × marks.
class SimpleKernel1 {
 public:
  SimpleKernel1(std::shared_ptr<const TimeGrid> grid, std::vector<double> marks,
                Eigen::MatrixXd values);
  // f(t, x) = c on [t0, t1) × {marks}; t0 and t1 must be grid points.
  static SimpleKernel1 indicator(std::shared_ptr<const TimeGrid> grid, double t0, double t1,
                                 std::vector<double> marks, double c = 1.0);

  const TimeGrid& grid() const { return *grid_; }
  const std::shared_ptr<const TimeGrid>& grid_ptr() const { return grid_; }
  const std::vector<double>& marks() const { return marks_; }
  const Eigen::MatrixXd& values() const { return values_; }  // cells × marks
  // f on cell i at mark x; 0 for a mark the kernel does not carry.
  double at(std::size_t cell, double mark) const;

  SimpleKernel1 refine(std::size_t factor) const;

  SimpleKernel1 operator+(const SimpleKernel1& other) const;
  SimpleKernel1 operator*(double c) const;

 private:
  std::shared_ptr<const TimeGrid> grid_;
  std::vector<double> marks_;
  Eigen::MatrixXd values_;
};

// ∫ f d𝕞 and ∫ f² d𝕞 by exact cell sums.
double m_integral(const SimpleKernel1& f, const MeasureSpec& spec);
double m_norm_squared(const SimpleKernel1& f, const MeasureSpec& spec);

// I₁(f) = σ Σ f(t_i, 0) ΔW_i + Σ_{jumps (s,x)} f(s, x) − ∫∫ f dt ν(dx).
// The kernel's grid points must be points of the path grid.
double integrate_M1(const SimpleKernel1& f, const Path& path);

// [t0, t1) × marks.
struct MarkedBox {
  double t0;
  double t1;
  std::vector<double> marks;
};

double m_measure(const MarkedBox& box, const MeasureSpec& spec);
double m_overlap(const MarkedBox& a, const MarkedBox& b, const MeasureSpec& spec);
bool boxes_disjoint(const MarkedBox& a, const MarkedBox& b);
// M(box) on one path.
double m_of_box(const MarkedBox& box, const Path& path);

// f₂ = Σ_k a_k 1_{B₁ᵏ} ⊗ 1_{B₂ᵏ} with B₁ᵏ ∩ B₂ᵏ = ∅ for every k.
class SimpleKernel2 {
 public:
  struct Term {
    double a;
    MarkedBox first;
    MarkedBox second;
  };

  explicit SimpleKernel2(std::vector<Term> terms);
  const std::vector<Term>& terms() const { return terms_; }

 private:
  std::vector<Term> terms_;
};

double integrate_M2(const SimpleKernel2& f, const Path& path);

// E[I₂(f)²] = 2‖f̃‖² = ‖f‖² + ⟨f, f∘swap⟩ for the symmetrisation f̃.
double second_moment_I2(const SimpleKernel2& f, const MeasureSpec& spec);

}  // namespace levymal
