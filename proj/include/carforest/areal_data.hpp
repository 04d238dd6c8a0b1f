#pragma once

// Areal-unit datasets: loading, writing, preprocessing, splitting and
// synthetic generation.

#include "carforest/core.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace carforest {

enum class TargetScale { original, log };

std::string to_string(TargetScale s);
TargetScale target_scale_from_string(const std::string& s);

struct ArealUnit {
  std::string id;
  double easting = 0.0;
  double northing = 0.0;
  std::vector<double> features;  // NaN marks a missing cell
  std::optional<double> target;
  std::string group;
};

/// Units stored column-wise. Missing feature cells and missing targets are NaN.
class ArealDataset {
 public:
  ArealDataset() = default;
  ArealDataset(std::vector<std::string> ids, Coordinates centroids, Matrix features, Vector target,
               std::vector<std::string> feature_names, TargetScale scale = TargetScale::original,
               std::vector<std::string> groups = {});

  static ArealDataset from_units(const std::vector<ArealUnit>& units,
                                 std::vector<std::string> feature_names,
                                 TargetScale scale = TargetScale::original);

  Index n_total() const { return static_cast<Index>(ids_.size()); }
  Index n_observed() const;
  Index n_features() const { return features_.cols(); }

  const std::vector<std::string>& ids() const { return ids_; }
  const Coordinates& centroids() const { return centroids_; }
  const Matrix& features() const { return features_; }
  const Vector& target() const { return target_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::string>& groups() const { return groups_; }
  bool has_groups() const { return !groups_.empty(); }
  TargetScale target_scale() const { return scale_; }

  bool observed(Index k) const { return !is_missing(target_(k)); }
  IndexList observed_indices() const;
  IndexList missing_indices() const;
  Index feature_index(const std::string& name) const;  // throws if absent
  bool has_missing_features() const;

  ArealUnit unit(Index k) const;
  ArealDataset subset(const IndexList& rows) const;

  // Replacements return a new dataset; the original is never modified.
  ArealDataset with_features(Matrix features, std::vector<std::string> names) const;
  ArealDataset with_target(Vector target, TargetScale scale) const;
  /// Features with easting/northing appended as the last two columns.
  ArealDataset with_coordinate_features() const;

  friend bool operator==(const ArealDataset& a, const ArealDataset& b);

 private:
  void validate() const;

  std::vector<std::string> ids_;
  Coordinates centroids_;
  Matrix features_;
  Vector target_;
  std::vector<std::string> feature_names_;
  TargetScale scale_ = TargetScale::original;
  std::vector<std::string> groups_;
};

/// Column roles for CSV input. An empty feature list selects every column
/// not claimed by another role, in file order.
struct ColumnSchema {
  std::string id = "id";
  std::string easting = "easting";
  std::string northing = "northing";
  std::string target = "target";
  std::vector<std::string> features;
  std::optional<std::string> group;
};

ArealDataset load_csv(const std::string& path, const ColumnSchema& schema = {},
                      TargetScale scale = TargetScale::original);
ArealDataset parse_csv(std::istream& in, const ColumnSchema& schema = {},
                       TargetScale scale = TargetScale::original);
void write_csv(const ArealDataset& ds, const std::string& path);
void write_csv(const ArealDataset& ds, std::ostream& out);

nlohmann::json to_json(const ArealDataset& ds);
ArealDataset dataset_from_json(const nlohmann::json& j);

/// Stable digest of ids, centroids, features and target, used to detect
/// stale fit bundles.
std::string dataset_digest(const ArealDataset& ds);

// ---------------------------------------------------------------------------
// Preprocessing

struct StandardizeParams {
  std::vector<std::string> names;
  Vector mean;
  Vector sd;
};

struct PcaBlock {
  std::string label;
  std::vector<std::string> features;
  Vector center;
  Matrix loadings;  // features x retained components
  Index retained = 0;
  Vector variance_fraction;  // per retained component
};

struct PreprocessModel {
  int impute_k = 5;
  std::optional<StandardizeParams> standardize;
  std::vector<PcaBlock> pca_blocks;
};

nlohmann::json to_json(const PreprocessModel& m);
PreprocessModel preprocess_model_from_json(const nlohmann::json& j);

/// Fills each missing feature cell with the mean of that feature over the k
/// nearest units holding a value. Distance is Euclidean over the standardized
/// complete columns; ties go to the lower unit index.
ArealDataset knn_impute(const ArealDataset& ds, int k = 5);

std::pair<ArealDataset, PreprocessModel> standardize(const ArealDataset& ds);

/// Replaces a block of standardized features by its leading principal
/// components, keeping the fewest whose cumulative variance fraction reaches
/// the threshold.
std::pair<ArealDataset, PreprocessModel> pca_reduce(const ArealDataset& ds,
                                                    const std::vector<std::string>& block,
                                                    double threshold,
                                                    const std::string& label = "pca");

/// Applies stored standardization and PCA blocks to new data.
ArealDataset apply_preprocess(const PreprocessModel& model, const ArealDataset& ds);

ArealDataset log_target(const ArealDataset& ds);

struct Split {
  ArealDataset train;
  ArealDataset test;
  IndexList train_rows;  // row indices into the input
  IndexList test_rows;
};

/// Random partition of the observed units; the training part holds
/// round(train_fraction * n) units.
Split train_test_split(const ArealDataset& ds, double train_fraction, std::uint64_t seed);

/// Training units followed by prediction units, with the prediction units'
/// targets masked. Used to build joint graphs over train and test.
ArealDataset stack_for_prediction(const ArealDataset& train, const ArealDataset& test);

// ---------------------------------------------------------------------------
// Simulation

enum class Layout { grid, uniform_random };
enum class MeanFunction { linear, nonlinear };

struct SimulationScenario {
  Index n_units = 1000;
  Layout layout = Layout::uniform_random;
  double rho_true = 0.9;
  double tau_true = 1.0;
  double sigma2_true = 0.25;
  MeanFunction mean_function = MeanFunction::nonlinear;
  Index n_features = 5;
  double intercept = 0.0;
  std::vector<double> coefficients;  // linear mean; defaults to 1, -0.5, 0.5, 0.25, 0, ...
  int d_param = 5;
  bool include_spatial = true;
  double missing_fraction = 0.0;  // targets masked at random after generation
  bool exponentiate = false;      // store exp(Y) as the target (log-normal data)
  std::uint64_t seed = 1;
};

struct SimulatedData {
  ArealDataset data;
  Vector mean_function;   // f(x)
  Vector spatial_effect;  // phi*
  Vector full_target;     // Y on the generating scale before masking or exponentiation
};

void validate(const SimulationScenario& sc);

/// Nonlinear mean used by the generator: 2 sin(pi x1) + x2^2 - |x3| + x1 x2.
double nonlinear_mean(double x1, double x2, double x3);

SimulatedData simulate(const SimulationScenario& sc);

nlohmann::json to_json(const SimulationScenario& sc);

}  // namespace carforest
