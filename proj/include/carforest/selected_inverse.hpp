#pragma once

// Entries of A^-1 on the sparsity pattern of a sparse Cholesky factor of A,
// computed with the Takahashi recursion. The pattern always contains the
// diagonal and every structural nonzero of A.

#include "carforest/core.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <vector>

namespace carforest {

template <typename Scalar = double>
class SelectedInverse {
 public:
  /// `llt` is a successful Eigen SimplicialLLT (P A P^T = L L^T).
  template <typename Solver>
  explicit SelectedInverse(const Solver& llt) {
    const Eigen::SparseMatrix<Scalar, Eigen::ColMajor> factor = llt.matrixL();
    n_ = factor.cols();
    perm_.resize(n_);
    const auto& p = llt.permutationP().indices();
    for (Index i = 0; i < n_; ++i) perm_[static_cast<std::size_t>(i)] = p(i);

    cols_.resize(static_cast<std::size_t>(n_));
    for (Index j = 0; j < n_; ++j) {
      auto& col = cols_[static_cast<std::size_t>(j)];
      std::vector<std::pair<Index, Scalar>> entries;
      for (typename Eigen::SparseMatrix<Scalar>::InnerIterator it(factor, j); it; ++it) {
        if (it.row() == j) col.diag_l = it.value();
        else if (it.row() > j) entries.emplace_back(it.row(), it.value());
      }
      std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      for (const auto& [r, v] : entries) {
        col.rows.push_back(r);
        col.l.push_back(v);
      }
      col.sigma.assign(col.rows.size(), Scalar(0));
    }

    for (Index j = n_ - 1; j >= 0; --j) {
      auto& col = cols_[static_cast<std::size_t>(j)];
      const std::size_t m = col.rows.size();
      for (std::size_t a = 0; a < m; ++a) {
        Scalar acc = 0;
        for (std::size_t b = 0; b < m; ++b) acc += col.l[b] * permuted(col.rows[b], col.rows[a]);
        col.sigma[a] = -acc / col.diag_l;
      }
      Scalar acc = 0;
      for (std::size_t b = 0; b < m; ++b) acc += col.l[b] * col.sigma[b];
      col.diag_sigma = (Scalar(1) / col.diag_l - acc) / col.diag_l;
    }
  }

  Index size() const { return n_; }

  /// (A^-1)_{ij} in the original ordering. Throws when (i, j) lies outside
  /// the factor pattern.
  Scalar operator()(Index i, Index j) const {
    return permuted(perm_[static_cast<std::size_t>(i)], perm_[static_cast<std::size_t>(j)]);
  }

  bool in_pattern(Index i, Index j) const {
    Index a = perm_[static_cast<std::size_t>(i)];
    Index b = perm_[static_cast<std::size_t>(j)];
    if (a == b) return true;
    if (a < b) std::swap(a, b);
    const auto& col = cols_[static_cast<std::size_t>(b)];
    return std::binary_search(col.rows.begin(), col.rows.end(), a);
  }

  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> diagonal() const {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> d(n_);
    for (Index i = 0; i < n_; ++i) d(i) = cols_[static_cast<std::size_t>(perm_[static_cast<std::size_t>(i)])].diag_sigma;
    return d;
  }

  /// log det A = 2 sum log L_jj.
  Scalar log_determinant() const {
    Scalar s = 0;
    for (const auto& c : cols_) s += std::log(c.diag_l);
    return Scalar(2) * s;
  }

 private:
  struct Column {
    Scalar diag_l = 0;
    Scalar diag_sigma = 0;
    std::vector<Index> rows;
    std::vector<Scalar> l;
    std::vector<Scalar> sigma;
  };

  Scalar permuted(Index a, Index b) const {
    if (a == b) return cols_[static_cast<std::size_t>(a)].diag_sigma;
    if (a < b) std::swap(a, b);
    const auto& col = cols_[static_cast<std::size_t>(b)];
    auto it = std::lower_bound(col.rows.begin(), col.rows.end(), a);
    if (it == col.rows.end() || *it != a) throw NumericalError("selected inverse queried outside the factor pattern");
    return col.sigma[static_cast<std::size_t>(it - col.rows.begin())];
  }

  Index n_ = 0;
  std::vector<Index> perm_;
  std::vector<Column> cols_;
};

/// log det of the matrix factorized by a SimplicialLLT.
template <typename Solver>
double log_determinant(const Solver& llt) {
  const auto& l = llt.matrixL().nestedExpression();
  double s = 0.0;
  for (Index j = 0; j < l.cols(); ++j) s += std::log(l.coeff(j, j));
  return 2.0 * s;
}

}  // namespace carforest
