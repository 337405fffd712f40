#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace levymal {

struct BasisSpec {
  enum class Kind { polynomial, indicator };

  Kind kind = Kind::polynomial;
  // Total degree of the monomials in the standardised features.
  int degree = 3;

  static BasisSpec polynomial(int degree) { return {Kind::polynomial, degree}; }
  // One-hot on the distinct feature tuples: exact conditional expectation
  // whenever the features take finitely many values.
  static BasisSpec indicator() { return {Kind::indicator, 0}; }

  std::string describe() const;
};

// Weighted least-squares projection onto a basis of the step features.
//
// Rank-deficient systems are solved in the minimum-norm sense through the
// pseudo-inverse of the Gram matrix; features that are constant over the
// sample are dropped before the basis is built.
class Regression {
 public:
  Regression(const Eigen::MatrixXd& features, const Eigen::VectorXd& weights,
             const BasisSpec& basis);

  // Fitted values of each target column at the sample points.
  Eigen::MatrixXd project(const Eigen::MatrixXd& targets) const;
  Eigen::VectorXd project(const Eigen::VectorXd& target) const;

  std::size_t basis_size() const { return basis_size_; }
  std::size_t rank() const { return rank_; }
  // λ_max / λ_min of the Gram matrix; +inf when rank-deficient.
  double condition_number() const { return condition_; }

 private:
  Eigen::VectorXd weights_;
  BasisSpec::Kind kind_;
  std::size_t basis_size_ = 0;
  std::size_t rank_ = 0;
  double condition_ = 1.0;

  // polynomial
  Eigen::MatrixXd design_;
  Eigen::MatrixXd gram_pinv_;

  // indicator
  std::vector<std::size_t> group_;
  Eigen::VectorXd group_weight_;
};

}  // namespace levymal
