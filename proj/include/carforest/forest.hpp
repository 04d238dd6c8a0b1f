#pragma once

// Regression random forest: CART trees on bootstrap samples with per-split
// feature subsampling, out-of-bag predictions and OOB-error intervals.

#include "carforest/core.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace carforest {

struct ForestConfig {
  int n_trees = 1000;
  int m_try = 0;  // 0 selects every feature
  int min_node = 5;
  std::uint64_t seed = 1;
};

/// Throws ValidationError unless the config is usable with p features.
void validate(const ForestConfig& cfg, Index p);
int resolved_m_try(const ForestConfig& cfg, Index p);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf mean

  bool leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;        // root first
  std::vector<std::uint32_t> in_bag;  // bootstrap multiplicity per training row

  template <typename Row>
  double predict(const Row& x) const {
    int k = 0;
    while (!nodes[static_cast<std::size_t>(k)].leaf()) {
      const TreeNode& nd = nodes[static_cast<std::size_t>(k)];
      k = x(nd.feature) <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(k)].value;
  }
  Index leaf_count() const;
  Index depth() const;
};

/// One accepted split, reported to an observer during fitting. Rows index
/// the training matrix and repeat according to bootstrap multiplicity.
struct SplitRecord {
  int tree = 0;
  int node = 0;
  IndexList rows;
  std::vector<int> candidates;  // sampled features, ascending
  int feature = -1;
  double threshold = 0.0;
  double child_sse = 0.0;  // SSE(left) + SSE(right)
};

using SplitObserver = std::function<void(const SplitRecord&)>;

struct ForestFitExtras {
  /// Invoked once per accepted split, serialized across worker threads.
  SplitObserver observer;
  /// When set, rows are canonically ordered by id before fitting so that the
  /// forest does not depend on input row order.
  std::vector<std::string> row_ids;
};

class Forest {
 public:
  ForestConfig config;
  Index n_features = 0;
  std::vector<RegressionTree> trees;
  /// Per training row, in input order.
  Vector oob_predictions;
  std::vector<int> oob_tree_counts;
  /// z - OOB prediction over rows with at least one OOB tree.
  Vector oob_errors;
  /// Rows with no OOB tree; their OOB prediction uses the full forest.
  IndexList oob_fallback_rows;
  std::vector<std::string> warnings;

  Index n_train() const { return oob_predictions.size(); }
};

Forest fit_forest(const Matrix& x, const Vector& z, const ForestConfig& cfg, const ForestFitExtras& extras = {});

/// Mean of all tree outputs, per row of x_new.
Vector predict_forest(const Forest& f, const Matrix& x_new);

/// Mean over each training row's out-of-bag trees.
const Vector& oob_predict(const Forest& f);

struct Interval {
  Vector lower;
  Vector upper;
};

/// point + type-7 quantiles (2.5%, 97.5%) of the OOB errors. Needs at least
/// 40 errors.
Interval interval_oob(const Forest& f, const Vector& point);
Interval interval_from_errors(const Vector& errors, const Vector& point);

/// Unbiased sample variance of the OOB errors.
double oob_variance(const Forest& f);
double unbiased_variance(const Vector& v);

nlohmann::json to_json(const Forest& f);
Forest forest_from_json(const nlohmann::json& j);

}  // namespace carforest
