#include "carforest/grf.hpp"

#include "carforest/spatial_graph.hpp"

namespace carforest {

void validate(const GrfConfig& cfg, Index n_train, Index p) {
  validate(cfg.global, p);
  if (cfg.local_n_trees < 1) throw ValidationError("local_n_trees must be at least 1");
  if (cfg.bw < 1) throw ValidationError("bw must be at least 1");
  if (cfg.bw > n_train)
    throw ValidationError("bw = " + std::to_string(cfg.bw) + " exceeds the training size " + std::to_string(n_train));
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
}

namespace {
Vector observed_target(const ArealDataset& ds) {
  if (ds.n_observed() != ds.n_total()) throw ValidationError("training data contains missing targets");
  return ds.target();
}
}  // namespace

GrfResult fit_predict_grf(const ArealDataset& train, const ArealDataset& test, const GrfConfig& cfg) {
  validate(cfg, train.n_total(), train.n_features());
  if (test.n_features() != train.n_features()) throw ValidationError("train and test feature counts differ");
  const Vector z = observed_target(train);

  GrfResult out;
  out.global_forest = fit_forest(train.features(), z, cfg.global);
  out.global = predict_forest(out.global_forest, test.features());
  out.oob_variance = oob_variance(out.global_forest);

  ForestConfig local_cfg = cfg.global;
  local_cfg.n_trees = cfg.local_n_trees;
  local_cfg.seed = cfg.local_seed.value_or(cfg.global.seed);
  local_cfg.m_try = std::min(resolved_m_try(cfg.global, train.n_features()), static_cast<int>(train.n_features()));

  const Index m = test.n_total();
  out.local.resize(m);
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t rr) {
    const auto r = static_cast<Index>(rr);
    IndexList nb = nearest_indices(train.centroids(), test.centroids()(r, 0), test.centroids()(r, 1), cfg.bw);
    std::sort(nb.begin(), nb.end());
    Matrix xl(static_cast<Index>(nb.size()), train.n_features());
    Vector zl(static_cast<Index>(nb.size()));
    for (std::size_t i = 0; i < nb.size(); ++i) {
      xl.row(static_cast<Index>(i)) = train.features().row(nb[i]);
      zl(static_cast<Index>(i)) = z(nb[i]);
    }
    const Forest local = fit_forest(xl, zl, local_cfg);
    out.local(r) = predict_forest(local, test.features().row(r))(0);
  });
  out.predictions.ids = test.ids();
  out.predictions.scale = train.target_scale();
  out.predictions = blend(out, cfg.alpha);
  return out;
}

PredictionSet blend(const GrfResult& r, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  PredictionSet p;
  p.ids = r.predictions.ids;
  p.scale = r.predictions.scale;
  p.point = alpha * r.local + (1.0 - alpha) * r.global;
  const Interval iv = interval_oob(r.global_forest, p.point);
  p.lower = iv.lower;
  p.upper = iv.upper;
  p.variance = Vector::Constant(p.point.size(), r.oob_variance);
  return p;
}

}  // namespace carforest
