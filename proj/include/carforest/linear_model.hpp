#pragma once

// Normal linear model fitted by maximum likelihood.

#include "carforest/prediction.hpp"

namespace carforest {

struct LmFit {
  double beta0 = 0.0;
  Vector beta;
  double sigma2 = 0.0;  // RSS / K
  Matrix covariance;    // of (beta0, beta), sigma2 (X'X)^-1
  std::vector<std::string> feature_names;
};

/// Fits on the observed units of `train`. Throws naming the linearly
/// dependent columns when the design is rank deficient.
LmFit fit_lm(const ArealDataset& train);

/// point = beta0 + x'beta, 95% interval point +/- 1.96 sqrt(sigma2 + a' Cov a)
/// with a = (1, x).
PredictionSet predict_lm(const LmFit& fit, const ArealDataset& test);

nlohmann::json to_json(const LmFit& fit);
LmFit lm_fit_from_json(const nlohmann::json& j);

}  // namespace carforest
