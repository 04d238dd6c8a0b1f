#include "carforest/spatial_graph.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace carforest {

NeighbourhoodMatrix::NeighbourhoodMatrix(std::vector<std::vector<Index>> adjacency, int d_param)
    : adj_(std::move(adjacency)), d_(d_param) {
  for (std::size_t i = 0; i < adj_.size(); ++i) {
    auto& row = adj_[i];
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    for (Index j : row) {
      if (j < 0 || j >= size()) throw ValidationError("neighbour index out of range");
      if (j == static_cast<Index>(i)) throw ValidationError("self-neighbour at unit " + std::to_string(i));
    }
  }
}

Vector NeighbourhoodMatrix::degrees() const {
  Vector d(size());
  for (Index i = 0; i < size(); ++i) d(i) = static_cast<double>(degree(i));
  return d;
}

Index NeighbourhoodMatrix::edge_count() const {
  Index total = 0;
  for (const auto& row : adj_) total += static_cast<Index>(row.size());
  return total / 2;
}

bool NeighbourhoodMatrix::adjacent(Index i, Index j) const {
  const auto& row = neighbours(i);
  return std::binary_search(row.begin(), row.end(), j);
}

NeighbourhoodMatrix NeighbourhoodMatrix::symmetrized() const {
  auto adj = adj_;
  for (Index i = 0; i < size(); ++i)
    for (Index j : neighbours(i)) adj[static_cast<std::size_t>(j)].push_back(i);
  return NeighbourhoodMatrix(std::move(adj), d_);
}

IndexList nearest_indices(const Coordinates& points, double qx, double qy, Index d, Index exclude) {
  const Index n = points.rows();
  std::vector<std::pair<double, Index>> dist;
  dist.reserve(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    if (j == exclude) continue;
    const double dx = points(j, 0) - qx;
    const double dy = points(j, 1) - qy;
    dist.emplace_back(dx * dx + dy * dy, j);
  }
  const auto take = static_cast<std::size_t>(std::min<Index>(d, static_cast<Index>(dist.size())));
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
  IndexList out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = dist[i].second;
  return out;
}

NeighbourhoodMatrix knn_adjacency(const Coordinates& centroids, int d) {
  const Index n = centroids.rows();
  if (d < 1) throw ValidationError("D must be at least 1");
  if (d >= n)
    throw ValidationError("D = " + std::to_string(d) + " must be smaller than the unit count " +
                          std::to_string(n));
  if (!centroids.allFinite()) throw ValidationError("centroid coordinates must be finite");
  std::vector<std::vector<Index>> directed(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
    const auto kk = static_cast<Index>(k);
    directed[k] = nearest_indices(centroids, centroids(kk, 0), centroids(kk, 1), d, kk);
  });
  return NeighbourhoodMatrix(std::move(directed), d).symmetrized();
}

void write_edge_list(const NeighbourhoodMatrix& w, std::ostream& out) {
  for (Index i = 0; i < w.size(); ++i)
    for (Index j : w.neighbours(i))
      if (i < j) out << i << ' ' << j << '\n';
}

}  // namespace carforest
