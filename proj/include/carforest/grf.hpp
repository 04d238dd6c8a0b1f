#pragma once

// Geographically weighted random forest: a global forest blended with a
// local forest per prediction unit, fitted on its bw nearest training units.

#include "carforest/forest.hpp"
#include "carforest/prediction.hpp"

#include <optional>

namespace carforest {

struct GrfConfig {
  ForestConfig global;
  int local_n_trees = 100;
  int bw = 100;
  double alpha = 0.5;
  std::optional<std::uint64_t> local_seed;  // defaults to the global seed
};

void validate(const GrfConfig& cfg, Index n_train, Index p);

struct GrfResult {
  Vector local;   // per prediction unit
  Vector global;  // per prediction unit
  Forest global_forest;
  PredictionSet predictions;  // blended at cfg.alpha
  double oob_variance = 0.0;  // of the global forest
};

/// Uses every feature of `train`/`test`; add coordinates beforehand when wanted.
GrfResult fit_predict_grf(const ArealDataset& train, const ArealDataset& test, const GrfConfig& cfg);

/// Re-blends stored components: alpha local + (1 - alpha) global, with
/// intervals from the global forest's OOB errors.
PredictionSet blend(const GrfResult& r, double alpha);

}  // namespace carforest
