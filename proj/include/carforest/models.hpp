#pragma once

// Uniform fit-and-predict entry point for the five compared models.

#include "carforest/carforest.hpp"
#include "carforest/grf.hpp"
#include "carforest/linear_model.hpp"

#include <functional>

namespace carforest {

enum class ModelKind { lm, car, rf, grf, carforest };

std::string to_string(ModelKind k);        // lm, car, rf, grf, carforest
std::string display_name(ModelKind k);     // LM, CAR, RF, GRF, CAR-Forest
ModelKind model_kind_from_string(const std::string& s);

/// Tuning parameters; each model reads only the ones it uses.
struct ModelParams {
  int d = 5;
  int m_try = 0;  // 0 selects every feature
  int min_node = 5;
  int r = 1;
  int bw = 100;
  double alpha = 0.5;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

nlohmann::json to_json(ModelKind kind, const ModelParams& p);
ModelParams model_params_from_json(const nlohmann::json& j);

/// Settings shared by every fit that are not tuned.
struct ModelSettings {
  int n_trees = 1000;
  int local_n_trees = 100;
  std::uint64_t seed = 1;
  CarFitOptions car;  // interval_mode is overridden per call
  CarPriors priors;
  /// Easting and northing become extra features for LM, RF and GRF.
  bool coordinates_as_features = true;
};

nlohmann::json to_json(const ModelSettings& s);

struct ModelOutput {
  PredictionSet predictions;     // modelling scale
  Vector backtransform_variance;  // per prediction unit
  nlohmann::json model;           // fitted-model summary
  /// CAR-Forest only: plug-in predictions after each iteration.
  std::vector<PredictionSet> per_iteration;
};

/// Fits on the observed units of `train` and predicts every unit of `test`.
ModelOutput fit_predict(ModelKind kind, const ModelParams& params, const ModelSettings& settings,
                        const ArealDataset& train, const ArealDataset& test,
                        IntervalMode mode = IntervalMode::plug_in);

/// Feature count the model actually sees.
Index effective_feature_count(ModelKind kind, const ModelSettings& s, Index p);

}  // namespace carforest
