#pragma once

#include "carforest/areal_data.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace carforest {

/// Two-sided 95% standard normal quantile.
inline constexpr double kZ975 = 1.959963984540054;

/// Point predictions with 95% intervals. `variance` holds the predictive
/// variance on the modelling scale when the model provides one.
struct PredictionSet {
  std::vector<std::string> ids;
  Vector point;
  Vector lower;
  Vector upper;
  Vector variance;
  TargetScale scale = TargetScale::log;

  Index size() const { return point.size(); }
  PredictionSet subset(const IndexList& rows) const;
};

/// Gaussian intervals mean +/- z sqrt(var).
PredictionSet gaussian_predictions(std::vector<std::string> ids, const Vector& mean, const Vector& variance,
                                   TargetScale scale);

/// CSV with header `id,point,lower95,upper95`.
void write_predictions_csv(const PredictionSet& p, std::ostream& out);
void write_predictions_csv(const PredictionSet& p, const std::string& path);
PredictionSet read_predictions_csv(const std::string& path, TargetScale scale);

nlohmann::json to_json(const PredictionSet& p);

}  // namespace carforest
