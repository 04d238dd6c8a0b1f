#pragma once

// D-nearest-neighbour adjacency and Leroux CAR precision matrices.

#include "carforest/core.hpp"

#include <Eigen/Sparse>

#include <iosfwd>
#include <vector>

namespace carforest {

/// Binary symmetric neighbourhood structure with zero diagonal. Each
/// adjacency list is sorted ascending.
class NeighbourhoodMatrix {
 public:
  NeighbourhoodMatrix() = default;
  NeighbourhoodMatrix(std::vector<std::vector<Index>> adjacency, int d_param);

  Index size() const { return static_cast<Index>(adj_.size()); }
  int d_param() const { return d_; }
  const std::vector<Index>& neighbours(Index k) const { return adj_[static_cast<std::size_t>(k)]; }
  Index degree(Index k) const { return static_cast<Index>(neighbours(k).size()); }
  Vector degrees() const;
  Index edge_count() const;
  bool adjacent(Index i, Index j) const;

  /// W with both triangles stored.
  template <typename Scalar = double>
  Eigen::SparseMatrix<Scalar> sparse() const {
    std::vector<Eigen::Triplet<Scalar>> trips;
    trips.reserve(static_cast<std::size_t>(2 * edge_count()));
    for (Index i = 0; i < size(); ++i)
      for (Index j : neighbours(i)) trips.emplace_back(i, j, Scalar(1));
    Eigen::SparseMatrix<Scalar> w(size(), size());
    w.setFromTriplets(trips.begin(), trips.end());
    return w;
  }

  /// Graph Laplacian diag(W 1) - W.
  template <typename Scalar = double>
  Eigen::SparseMatrix<Scalar> laplacian() const {
    std::vector<Eigen::Triplet<Scalar>> trips;
    for (Index i = 0; i < size(); ++i) {
      trips.emplace_back(i, i, Scalar(degree(i)));
      for (Index j : neighbours(i)) trips.emplace_back(i, j, Scalar(-1));
    }
    Eigen::SparseMatrix<Scalar> l(size(), size());
    l.setFromTriplets(trips.begin(), trips.end());
    return l;
  }

  /// Adds the reverse of every directed edge. Idempotent.
  NeighbourhoodMatrix symmetrized() const;

  friend bool operator==(const NeighbourhoodMatrix&, const NeighbourhoodMatrix&) = default;

 private:
  std::vector<std::vector<Index>> adj_;
  int d_ = 0;
};

/// Indices of the d nearest points to `query` among `points`, nearest first.
/// Distance ties go to the lower index; `exclude` (if >= 0) is skipped.
IndexList nearest_indices(const Coordinates& points, double qx, double qy, Index d,
                          Index exclude = -1);

/// Directed D-NN edges by Euclidean inter-centroid distance, then symmetrized.
NeighbourhoodMatrix knn_adjacency(const Coordinates& centroids, int d);

/// Edge list "i j" with i < j, sorted, one edge per line.
void write_edge_list(const NeighbourhoodMatrix& w, std::ostream& out);

template <typename Scalar>
struct LerouxPrecision {
  Eigen::SparseMatrix<Scalar> Q;
  Scalar rho;
};

/// Q = rho (diag(W 1) - W) + (1 - rho) I, defined for rho in [0, 1).
template <typename Scalar = double>
LerouxPrecision<Scalar> leroux_precision(const NeighbourhoodMatrix& w, Scalar rho) {
  if (!(rho >= Scalar(0) && rho < Scalar(1)))
    throw ValidationError("rho must lie in [0, 1), got " + format_double(static_cast<double>(rho)));
  std::vector<Eigen::Triplet<Scalar>> trips;
  for (Index i = 0; i < w.size(); ++i) {
    trips.emplace_back(i, i, rho * Scalar(w.degree(i)) + Scalar(1) - rho);
    for (Index j : w.neighbours(i)) trips.emplace_back(i, j, -rho);
  }
  LerouxPrecision<Scalar> out{Eigen::SparseMatrix<Scalar>(w.size(), w.size()), rho};
  out.Q.setFromTriplets(trips.begin(), trips.end());
  return out;
}

/// Full conditional of phi_k given the rest under the Leroux prior with
/// precision tau: mean rho sum_j w_kj phi_j / (rho sum_j w_kj + 1 - rho) and
/// variance 1 / (tau (rho sum_j w_kj + 1 - rho)).
template <typename Scalar, typename Derived>
std::pair<Scalar, Scalar> leroux_conditional(const NeighbourhoodMatrix& w, Scalar rho, Scalar tau,
                                             const Eigen::MatrixBase<Derived>& phi, Index k) {
  Scalar sum = 0;
  for (Index j : w.neighbours(k)) sum += phi(j);
  const Scalar denom = rho * Scalar(w.degree(k)) + Scalar(1) - rho;
  return {rho * sum / denom, Scalar(1) / (tau * denom)};
}

}  // namespace carforest
