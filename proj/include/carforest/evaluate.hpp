#pragma once

// Predictive metrics, log-normal back-transformation, cross-validated tuning
// and the repeated train/test benchmark.

#include "carforest/models.hpp"

#include <functional>
#include <map>

namespace carforest {

double rmse(const Vector& pred, const Vector& obs);
/// Median absolute error; even lengths average the two central values.
double mae(const Vector& pred, const Vector& obs);
/// Share of closed intervals [lower, upper] containing obs.
double coverage(const Vector& lower, const Vector& upper, const Vector& obs);
/// Average interval width.
double interval_width(const Vector& lower, const Vector& upper);

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
  double cp = 0.0;
  double aiw = 0.0;
};

Metrics score(const PredictionSet& p, const Vector& obs);
nlohmann::json to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);

/// point -> exp(point + sigma2 / 2), endpoints exponentiated.
PredictionSet backtransform(const PredictionSet& p, double sigma2);
PredictionSet backtransform(const PredictionSet& p, const Vector& sigma2);

/// Fold label per unit: a seeded shuffle dealt round-robin.
std::vector<int> make_folds(Index n, int folds, std::uint64_t seed);

struct TuningGrid {
  ModelKind kind = ModelKind::lm;
  std::vector<int> d{5};
  std::vector<int> m_try{0};
  std::vector<int> min_node{5};
  std::vector<int> r{1};
  std::vector<int> bw{100};
  std::vector<double> alpha{0.5};

  /// D in {3,5,7,9}; m_try in {10,20,30,40,p}; min_node in {1,5,10};
  /// R in 1..5; bw in {100,500,1000}; alpha in {0.25,0.5,0.75,1}.
  static TuningGrid defaults(ModelKind kind, Index p);

  /// m_try clamped to [1, p] (0 means p), duplicates dropped, p included.
  TuningGrid normalized(Index p) const;
  void validate() const;
  /// Grid order: D, m_try, min_node, R, bw, alpha (last varies fastest),
  /// restricted to the parameters the model uses.
  std::vector<ModelParams> combinations() const;
};

nlohmann::json to_json(const TuningGrid& g);
TuningGrid tuning_grid_from_json(ModelKind kind, const nlohmann::json& j, Index p);

struct ComboScore {
  ModelParams params;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string reason;
};

struct TuningResult {
  ModelKind kind = ModelKind::lm;
  std::vector<ComboScore> scores;
  std::size_t chosen = 0;
  std::vector<int> folds;
  std::uint64_t seed = 0;
  bool evaluated = true;  // false when the grid had one combination

  const ModelParams& best() const { return scores[chosen].params; }
};

/// Pooled out-of-fold RMSE on the modelling scale for every combination.
TuningResult cv_tune(const ArealDataset& train, const TuningGrid& grid, const ModelSettings& settings, int folds,
                     std::uint64_t seed);

nlohmann::json to_json(const TuningResult& r);

using CustomModel = std::function<ModelOutput(const ArealDataset& train, const ArealDataset& test)>;

struct ModelSpec {
  std::string name;
  ModelKind kind = ModelKind::lm;
  TuningGrid grid;
  CustomModel custom;  // replaces tuning and fitting when set
};

ModelSpec model_spec(ModelKind kind, Index p);

struct BenchmarkOptions {
  int n_splits = 5;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
  int folds = 10;
  /// Model log(target) and back-transform predictions before scoring.
  bool log_target = true;
  IntervalMode final_interval_mode = IntervalMode::grid_mixture;
  ModelSettings settings;
};

struct SplitOutcome {
  Metrics metrics;
  ModelParams params;
  TuningResult tuning;
  PredictionSet predictions;  // scoring scale
  Vector observed;
  IndexList test_rows;
};

struct ModelReport {
  std::string name;
  ModelKind kind = ModelKind::lm;
  std::vector<SplitOutcome> splits;
  Metrics mean;
  ModelParams deployment;  // per-parameter mode across splits, ties to the smaller value
};

struct BenchmarkReport {
  std::vector<ModelReport> models;
  int n_splits = 0;
  double train_fraction = 0.0;
  std::uint64_t seed = 0;
  std::string dataset_digest;
  nlohmann::json settings;
};

BenchmarkReport benchmark(const ArealDataset& ds, const std::vector<ModelSpec>& models, const BenchmarkOptions& opt);

/// Parameter-wise mode; ties go to the smaller value.
ModelParams mode_of(const std::vector<ModelParams>& ps);

/// Aligned text: one block per metric, one row per model, one column per
/// split and a final mean column.
std::string format_table(const BenchmarkReport& r);
nlohmann::json to_json(const BenchmarkReport& r);
/// Restores metrics, names and deployment parameters; predictions and
/// tuning details are not part of the JSON report.
BenchmarkReport benchmark_report_from_json(const nlohmann::json& j);

struct GroupMetrics {
  std::string group;
  Index units = 0;  // test units over all splits
  double rmse = 0.0;
  double mae = 0.0;
};

/// Mean over splits of per-group RMSE and MAE for one model.
std::vector<GroupMetrics> group_breakdown(const BenchmarkReport& r, const ArealDataset& ds, const std::string& model);

/// split,model,id,observed,point,lower95,upper95
void write_scatter_csv(const BenchmarkReport& r, std::ostream& out);
/// source,id,value with source in {observed, predicted}
void write_density_csv(const ArealDataset& observed, const PredictionSet& predicted, std::ostream& out);

}  // namespace carforest
