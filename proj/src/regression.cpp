#include "levymal/regression.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "levymal/errors.hpp"

namespace levymal {

std::string BasisSpec::describe() const {
  if (kind == Kind::indicator) return "indicator";
  return "polynomial(degree=" + std::to_string(degree) + ")";
}

namespace {

void exponents(std::size_t dims, int degree, std::vector<int>& current,
               std::vector<std::vector<int>>& out) {
  if (current.size() == dims) {
    out.push_back(current);
    return;
  }
  int used = 0;
  for (int e : current) used += e;
  for (int e = 0; e + used <= degree; ++e) {
    current.push_back(e);
    exponents(dims, degree, current, out);
    current.pop_back();
  }
}

}  // namespace

Regression::Regression(const Eigen::MatrixXd& features, const Eigen::VectorXd& weights,
                       const BasisSpec& basis)
    : weights_(weights), kind_(basis.kind) {
  const Eigen::Index n = features.rows();
  if (weights.size() != n || n == 0) throw BasisError("regression needs one weight per sample");
  if (!weights.allFinite() || (weights.array() < 0.0).any()) {
    throw BasisError("regression weights must be finite and non-negative");
  }

  if (kind_ == BasisSpec::Kind::indicator) {
    std::map<std::vector<long long>, std::size_t> ids;
    group_.resize(static_cast<std::size_t>(n));
    std::vector<long long> key(static_cast<std::size_t>(features.cols()));
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index c = 0; c < features.cols(); ++c) {
        key[static_cast<std::size_t>(c)] = std::llround(features(p, c) * 1e9);
      }
      auto [it, inserted] = ids.emplace(key, ids.size());
      group_[static_cast<std::size_t>(p)] = it->second;
    }
    group_weight_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ids.size()));
    for (Eigen::Index p = 0; p < n; ++p) {
      group_weight_(static_cast<Eigen::Index>(group_[static_cast<std::size_t>(p)])) += weights(p);
    }
    basis_size_ = rank_ = ids.size();
    return;
  }

  if (basis.degree < 0) throw BasisError("polynomial degree must be >= 0");
  const double total = weights.sum();
  if (!(total > 0.0)) throw BasisError("regression weights sum to zero");

  // Standardise each feature; drop the ones that do not vary.
  std::vector<Eigen::VectorXd> columns;
  for (Eigen::Index c = 0; c < features.cols(); ++c) {
    const Eigen::VectorXd x = features.col(c);
    if (!x.allFinite()) throw BasisError("non-finite regression feature");
    const double mean = weights.dot(x) / total;
    const double var = weights.dot((x.array() - mean).square().matrix()) / total;
    if (!(var > 1e-28 * (1.0 + mean * mean))) continue;
    columns.push_back((x.array() - mean) / std::sqrt(var));
  }

  std::vector<std::vector<int>> powers;
  std::vector<int> current;
  exponents(columns.size(), columns.empty() ? 0 : basis.degree, current, powers);
  basis_size_ = powers.size();

  design_.resize(n, static_cast<Eigen::Index>(basis_size_));
  for (std::size_t b = 0; b < powers.size(); ++b) {
    Eigen::ArrayXd col = Eigen::ArrayXd::Ones(n);
    for (std::size_t d = 0; d < columns.size(); ++d) {
      for (int e = 0; e < powers[b][d]; ++e) col *= columns[d].array();
    }
    design_.col(static_cast<Eigen::Index>(b)) = col.matrix();
  }

  const Eigen::MatrixXd gram = design_.transpose() * weights.asDiagonal() * design_;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd lambda = eig.eigenvalues();
  const double lmax = lambda.maxCoeff();
  if (!(lmax > 0.0) || !std::isfinite(lmax)) throw BasisError("singular regression system");
  const double cutoff = lmax * 1e-13;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(lambda.size());
  double lmin = lmax;
  for (Eigen::Index k = 0; k < lambda.size(); ++k) {
    if (lambda(k) > cutoff) {
      inv(k) = 1.0 / lambda(k);
      lmin = std::min(lmin, lambda(k));
      ++rank_;
    }
  }
  condition_ = rank_ < basis_size_ ? std::numeric_limits<double>::infinity() : lmax / lmin;
  gram_pinv_ = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::MatrixXd Regression::project(const Eigen::MatrixXd& targets) const {
  if (targets.rows() != weights_.size()) throw ShapeError("target length differs from sample");
  if (kind_ == BasisSpec::Kind::indicator) {
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(group_weight_.size(), targets.cols());
    for (Eigen::Index p = 0; p < targets.rows(); ++p) {
      sums.row(static_cast<Eigen::Index>(group_[static_cast<std::size_t>(p)])) +=
          weights_(p) * targets.row(p);
    }
    Eigen::MatrixXd out(targets.rows(), targets.cols());
    for (Eigen::Index p = 0; p < targets.rows(); ++p) {
      const auto g = static_cast<Eigen::Index>(group_[static_cast<std::size_t>(p)]);
      out.row(p) = group_weight_(g) > 0.0 ? Eigen::RowVectorXd(sums.row(g) / group_weight_(g))
                                          : Eigen::RowVectorXd::Zero(targets.cols());
    }
    return out;
  }
  const Eigen::MatrixXd rhs = design_.transpose() * (weights_.asDiagonal() * targets);
  return design_ * (gram_pinv_ * rhs);
}

Eigen::VectorXd Regression::project(const Eigen::VectorXd& target) const {
  return project(Eigen::MatrixXd(target)).col(0);
}

}  // namespace levymal
