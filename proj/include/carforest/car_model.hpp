#pragma once

// Gaussian Leroux CAR regression:
//
//   Y_k = beta0 [+ x_k' beta] + offset_k + phi_k + eps_k,  eps_k ~ N(0, sigma2)
//   phi ~ N(0, (tau Q(rho))^-1),  Q(rho) = rho (D - W) + (1 - rho) I
//
// The latent field (phi, beta0, beta) is integrated out exactly, so the log
// marginal posterior of the three hyperparameters is available in closed form
// from one sparse Cholesky factorization per evaluation. Hyperparameters are
// optimized on the internal scale (logit rho, ln tau, ln 1/sigma2).

#include "carforest/nelder_mead.hpp"
#include "carforest/prediction.hpp"
#include "carforest/spatial_graph.hpp"

#include <Eigen/SparseCholesky>

#include <memory>
#include <optional>

namespace carforest {

struct CarPriors {
  double beta_variance = 100000.0;
  double logit_rho_mean = 0.0;
  double logit_rho_variance = 100.0;
  // log-gamma(shape, rate) on ln(1/sigma2) and ln(tau)
  double precision_shape = 1.0;
  double precision_rate = 0.01;
};

struct CarHyper {
  double rho = 0.5;
  double tau = 1.0;
  double sigma2 = 1.0;
};

using HyperVector = Eigen::Vector3d;

HyperVector to_internal(const CarHyper& h);
CarHyper from_internal(const HyperVector& theta);

enum class IntervalMode { plug_in, grid_mixture };

std::string to_string(IntervalMode m);
IntervalMode interval_mode_from_string(const std::string& s);

struct CarFitOptions {
  IntervalMode interval_mode = IntervalMode::plug_in;
  std::optional<CarHyper> fixed_hyper;  // skips optimization when set
  int grid_points = 8;                  // per axis, grid-mixture mode
  double grid_span = 3.0;               // standardized half-width of the grid
  int posterior_draws = 1000;
  std::uint64_t seed = 1;
  NelderMeadOptions optimizer{};
  double gradient_tolerance = 1e-3;  // on half the Newton decrement at the mode
  int max_restarts = 2;
};

/// Posterior summaries at one hyperparameter value. Latent ordering is
/// (phi_1..phi_N, beta0, beta_1..beta_p).
struct LatentState {
  Vector mean;
  Vector variance;
  Vector eta_mean;  // beta0 [+ x'beta] + offset + phi, per joint unit
  Vector eta_var;   // posterior variance of the linear predictor
};

/// Exact Gaussian algebra for one dataset, offset and graph. Not thread-safe:
/// each instance owns its factorization workspace.
class CarPosterior {
 public:
  /// Units of `joint` with a missing target carry no likelihood term.
  CarPosterior(const ArealDataset& joint, const Vector& offset, const NeighbourhoodMatrix& w, CarPriors priors,
               bool features_in_mean);
  ~CarPosterior();
  CarPosterior(CarPosterior&&) noexcept;
  CarPosterior& operator=(CarPosterior&&) noexcept;

  Index n_units() const;
  Index n_fixed() const;
  Index n_latent() const;
  const IndexList& training() const;

  double log_marginal_likelihood(const HyperVector& theta);
  double log_prior(const HyperVector& theta) const;
  double log_marginal_posterior(const HyperVector& theta);
  /// Analytic gradient of log_marginal_posterior in internal coordinates.
  HyperVector gradient(const HyperVector& theta);
  LatentState latent(const HyperVector& theta);
  /// Posterior precision of the latent vector (both triangles).
  Eigen::SparseMatrix<double> posterior_precision(const HyperVector& theta);

  /// Starting points spread over (rho, spatial share, noise share), scaled
  /// by the residual variance of a least-squares fit.
  std::vector<HyperVector> starting_points() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct CarFit {
  struct GridPoint {
    HyperVector theta;
    double weight = 0.0;
    double sigma2 = 0.0;
    Vector eta_mean;
    Vector eta_var;
  };

  CarHyper hyper;
  HyperVector theta = HyperVector::Zero();
  double log_marginal_posterior = 0.0;
  HyperVector gradient = HyperVector::Zero();
  int evaluations = 0;
  nlohmann::json trace;
  bool optimized = true;

  bool features_in_mean = false;
  std::vector<std::string> ids;  // joint units
  IndexList training;            // joint indices carrying a likelihood term
  Vector offset;
  Vector latent_mean;
  Vector latent_variance;
  Vector eta_mean;
  Vector eta_var;
  int d_param = 0;

  std::vector<GridPoint> grid;
  int posterior_draws = 1000;
  std::uint64_t seed = 1;

  Index n_units() const { return static_cast<Index>(ids.size()); }
  Vector phi() const { return latent_mean.head(n_units()); }
  double beta0() const { return latent_mean(n_units()); }
  Vector beta() const { return latent_mean.tail(latent_mean.size() - n_units() - 1); }
  Index index_of(const std::string& id) const;
};

/// Fits by maximizing the log marginal posterior with Nelder-Mead from the
/// spread starting points, then polishes with Newton steps built from the
/// analytic gradient.
CarFit fit_car(const ArealDataset& joint, const Vector& offset, const NeighbourhoodMatrix& w_joint,
               const CarPriors& priors, bool features_in_mean, const CarFitOptions& options = {});

/// Posterior predictive for joint units. Plug-in mode uses Gaussian quantiles
/// at the mode; grid-mixture mode samples the stored hyperparameter grid.
PredictionSet predict_car(const CarFit& fit, const IndexList& units, IntervalMode mode = IntervalMode::plug_in,
                          TargetScale scale = TargetScale::log);

nlohmann::json to_json(const CarFit& fit);

}  // namespace carforest
