#include "carforest/carforest.hpp"

namespace carforest {

void validate(const CarForestConfig& cfg, Index p) {
  if (cfg.r_iterations < 1) throw ValidationError("R must be at least 1");
  if (cfg.d_param < 1) throw ValidationError("D must be at least 1");
  validate(cfg.forest, p);
}

Vector CarForestFit::test_offset() const {
  const Vector& off = history.back().forest_offset;
  return off.tail(off.size() - n_train);
}

namespace {

template <typename Fn>
auto with_iteration(int r, Fn&& fn) {
  const std::string tag = "iteration " + std::to_string(r) + ": ";
  try {
    return fn();
  } catch (const ParseError& e) {
    throw ParseError(tag + e.what(), 0);
  } catch (const ValidationError& e) {
    throw ValidationError(tag + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(tag + e.what());
  } catch (const std::exception& e) {
    throw Error(tag + e.what());
  }
}

}  // namespace

CarForestResult run_carforest(const ArealDataset& train, const ArealDataset& test, const CarForestConfig& cfg,
                              const CarPriors& priors, const IterationCallback& on_iteration) {
  validate(cfg, train.n_features());
  if (train.n_observed() != train.n_total()) throw ValidationError("training data contains missing targets");
  if (test.n_features() != train.n_features()) throw ValidationError("train and test feature counts differ");

  const Index k = train.n_total();
  const ArealDataset joint = stack_for_prediction(train, test);
  const NeighbourhoodMatrix w = knn_adjacency(joint.centroids(), cfg.d_param);
  IndexList test_units(static_cast<std::size_t>(test.n_total()));
  for (Index i = 0; i < test.n_total(); ++i) test_units[static_cast<std::size_t>(i)] = k + i;

  CarForestResult out;
  out.fit.n_train = k;
  Vector phi = Vector::Zero(k);
  for (int r = 1; r <= cfg.r_iterations; ++r) {
    CarForestIteration it;
    it.r = r;
    it.z = train.target() - phi;
    ForestConfig fc = cfg.forest;
    fc.seed = derive_seed(cfg.forest.seed, static_cast<std::uint64_t>(r));
    Forest forest = with_iteration(r, [&] { return fit_forest(train.features(), it.z, fc); });
    it.oob_rmse = std::sqrt((it.z - forest.oob_predictions).squaredNorm() / static_cast<double>(k));
    it.forest_offset.resize(joint.n_total());
    it.forest_offset.head(k) = forest.oob_predictions;
    it.forest_offset.tail(test.n_total()) = predict_forest(forest, test.features());

    CarFitOptions opts = cfg.car;
    if (r < cfg.r_iterations) opts.interval_mode = IntervalMode::plug_in;
    it.car = with_iteration(r, [&] { return fit_car(joint, it.forest_offset, w, priors, false, opts); });
    phi = it.car.phi().head(k);
    if (on_iteration) on_iteration(r, predict_car(it.car, test_units, IntervalMode::plug_in, train.target_scale()));
    if (r == cfg.r_iterations) out.fit.final_forest = std::move(forest);
    out.fit.history.push_back(std::move(it));
  }
  out.predictions = predict_car(out.fit.final_car(), test_units, cfg.car.interval_mode, train.target_scale());
  return out;
}

CarForestResult predict_missing(const ArealDataset& full, const CarForestConfig& cfg, const CarPriors& priors) {
  const IndexList obs = full.observed_indices();
  const IndexList miss = full.missing_indices();
  if (obs.empty()) throw ValidationError("no observed targets to train on");
  if (miss.empty()) throw ValidationError("nothing to predict: every unit has an observed target");
  return run_carforest(full.subset(obs), full.subset(miss), cfg, priors);
}

nlohmann::json to_json(const CarForestFit& fit) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& it : fit.history) {
    hist.push_back({{"iteration", it.r},
                    {"oob_rmse", it.oob_rmse},
                    {"rho", it.car.hyper.rho},
                    {"tau", it.car.hyper.tau},
                    {"sigma2", it.car.hyper.sigma2},
                    {"beta0", it.car.beta0()},
                    {"log_marginal_posterior", it.car.log_marginal_posterior},
                    {"optimizer_evaluations", it.car.evaluations}});
  }
  return {{"history", hist},
          {"n_train", fit.n_train},
          {"forest", to_json(fit.final_forest)},
          {"car", to_json(fit.final_car())}};
}

}  // namespace carforest
