#pragma once

#include "carforest/areal_data.hpp"
#include "carforest/spatial_graph.hpp"

#include <random>

namespace fixtures {

using namespace carforest;

/// n units scattered on a square with p standard-normal features and a
/// target that is observed for the first n_train units only.
inline ArealDataset random_areal(Index n, Index p, Index n_train, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  std::vector<std::string> ids;
  Coordinates c(n, 2);
  Matrix x(n, p);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    ids.push_back("u" + std::to_string(i));
    c(i, 0) = u(rng);
    c(i, 1) = u(rng);
    for (Index j = 0; j < p; ++j) x(i, j) = z(rng);
    y(i) = 1.0 + (p > 0 ? 0.5 * x(i, 0) : 0.0) + 0.02 * c(i, 0) / 100.0 + 0.4 * z(rng);
    if (i >= n_train) y(i) = kMissing;
  }
  std::vector<std::string> names;
  for (Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return ArealDataset(ids, c, x, y, names, TargetScale::log);
}

/// Erdos-Renyi style symmetric graph in which every node has a neighbour.
inline NeighbourhoodMatrix random_graph(Index n, double prob, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution edge(prob);
  std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (edge(rng) || j == i + 1) {
        adj[static_cast<std::size_t>(i)].push_back(j);
        adj[static_cast<std::size_t>(j)].push_back(i);
      }
  return NeighbourhoodMatrix(adj, 0);
}

}  // namespace fixtures
