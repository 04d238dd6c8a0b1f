#pragma once

// Iterative fusion of a random forest (feature effects) and a Gaussian
// Leroux CAR model (residual spatial structure).
//
//   phi <- 0
//   repeat R times:
//     Z = Y - phi                                 (training units)
//     forest on (x, Z); m = OOB predictions on training, forest predictions on test
//     CAR fit of Y with fixed offset m over the joint D-NN graph
//     phi <- posterior mean of the training random effects
//   predict test units from the final CAR posterior predictive

#include "carforest/car_model.hpp"
#include "carforest/forest.hpp"

#include <functional>

namespace carforest {

struct CarForestConfig {
  int r_iterations = 5;
  int d_param = 7;
  ForestConfig forest;
  /// interval_mode applies to the final iteration; earlier ones use plug-in.
  CarFitOptions car;
};

void validate(const CarForestConfig& cfg, Index p);

struct CarForestIteration {
  int r = 0;
  Vector forest_offset;  // OOB on training units, then forest predictions on test units
  CarFit car;
  double oob_rmse = 0.0;  // RMSE of Z against its OOB prediction
  Vector z;               // decorrelated target fed to the forest
};

struct CarForestFit {
  std::vector<CarForestIteration> history;
  Forest final_forest;
  Index n_train = 0;

  const CarFit& final_car() const { return history.back().car; }
  Vector test_offset() const;
};

struct CarForestResult {
  CarForestFit fit;
  PredictionSet predictions;  // test units, modelling scale
};

/// Called after each iteration with plug-in predictions for the test units.
using IterationCallback = std::function<void(int r, const PredictionSet& predictions)>;

CarForestResult run_carforest(const ArealDataset& train, const ArealDataset& test, const CarForestConfig& cfg,
                              const CarPriors& priors = {}, const IterationCallback& on_iteration = {});

/// Observed units train the model; units with a missing target are predicted.
CarForestResult predict_missing(const ArealDataset& full, const CarForestConfig& cfg, const CarPriors& priors = {});

nlohmann::json to_json(const CarForestFit& fit);

}  // namespace carforest
