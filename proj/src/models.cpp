#include "carforest/models.hpp"

namespace carforest {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::lm: return "lm";
    case ModelKind::car: return "car";
    case ModelKind::rf: return "rf";
    case ModelKind::grf: return "grf";
    case ModelKind::carforest: return "carforest";
  }
  return "";
}

std::string display_name(ModelKind k) {
  switch (k) {
    case ModelKind::lm: return "LM";
    case ModelKind::car: return "CAR";
    case ModelKind::rf: return "RF";
    case ModelKind::grf: return "GRF";
    case ModelKind::carforest: return "CAR-Forest";
  }
  return "";
}

ModelKind model_kind_from_string(const std::string& s) {
  for (ModelKind k : {ModelKind::lm, ModelKind::car, ModelKind::rf, ModelKind::grf, ModelKind::carforest})
    if (s == to_string(k) || s == display_name(k)) return k;
  throw ValidationError("unknown model '" + s + "' (expected lm, car, rf, grf or carforest)");
}

nlohmann::json to_json(ModelKind kind, const ModelParams& p) {
  nlohmann::json j = nlohmann::json::object();
  switch (kind) {
    case ModelKind::lm: break;
    case ModelKind::car: j["D"] = p.d; break;
    case ModelKind::rf:
      j["m_try"] = p.m_try;
      j["min_node"] = p.min_node;
      break;
    case ModelKind::grf:
      j["m_try"] = p.m_try;
      j["min_node"] = p.min_node;
      j["bw"] = p.bw;
      j["alpha"] = p.alpha;
      break;
    case ModelKind::carforest:
      j["D"] = p.d;
      j["m_try"] = p.m_try;
      j["min_node"] = p.min_node;
      j["R"] = p.r;
      break;
  }
  return j;
}

ModelParams model_params_from_json(const nlohmann::json& j) {
  ModelParams p;
  p.d = j.value("D", p.d);
  p.m_try = j.value("m_try", p.m_try);
  p.min_node = j.value("min_node", p.min_node);
  p.r = j.value("R", p.r);
  p.bw = j.value("bw", p.bw);
  p.alpha = j.value("alpha", p.alpha);
  return p;
}

nlohmann::json to_json(const ModelSettings& s) {
  return {{"n_trees", s.n_trees},
          {"local_n_trees", s.local_n_trees},
          {"seed", s.seed},
          {"coordinates_as_features", s.coordinates_as_features},
          {"posterior_draws", s.car.posterior_draws},
          {"grid_points", s.car.grid_points},
          {"priors",
           {{"beta_variance", s.priors.beta_variance},
            {"logit_rho_mean", s.priors.logit_rho_mean},
            {"logit_rho_variance", s.priors.logit_rho_variance},
            {"precision_shape", s.priors.precision_shape},
            {"precision_rate", s.priors.precision_rate}}}};
}

Index effective_feature_count(ModelKind kind, const ModelSettings& s, Index p) {
  const bool coords = s.coordinates_as_features && (kind == ModelKind::lm || kind == ModelKind::rf || kind == ModelKind::grf);
  return coords ? p + 2 : p;
}

namespace {

ForestConfig forest_config(const ModelParams& p, const ModelSettings& s) {
  ForestConfig fc;
  fc.n_trees = s.n_trees;
  fc.m_try = p.m_try;
  fc.min_node = p.min_node;
  fc.seed = s.seed;
  return fc;
}

}  // namespace

ModelOutput fit_predict(ModelKind kind, const ModelParams& params, const ModelSettings& settings,
                        const ArealDataset& train_in, const ArealDataset& test_in, IntervalMode mode) {
  const ArealDataset train = train_in.subset(train_in.observed_indices());
  const bool coords = effective_feature_count(kind, settings, train.n_features()) != train.n_features();
  const ArealDataset tr = coords ? train.with_coordinate_features() : train;
  const ArealDataset te = coords ? test_in.with_coordinate_features() : test_in;

  ModelOutput out;
  switch (kind) {
    case ModelKind::lm: {
      const LmFit fit = fit_lm(tr);
      out.predictions = predict_lm(fit, te);
      out.backtransform_variance = out.predictions.variance;
      out.model = to_json(fit);
      break;
    }
    case ModelKind::car: {
      const ArealDataset joint = stack_for_prediction(tr, te);
      const NeighbourhoodMatrix w = knn_adjacency(joint.centroids(), params.d);
      CarFitOptions opts = settings.car;
      opts.interval_mode = mode;
      opts.seed = settings.seed;
      const CarFit fit = fit_car(joint, Vector::Zero(joint.n_total()), w, settings.priors, true, opts);
      IndexList units;
      for (Index i = 0; i < te.n_total(); ++i) units.push_back(tr.n_total() + i);
      out.predictions = predict_car(fit, units, mode, tr.target_scale());
      out.backtransform_variance = out.predictions.variance;
      out.model = to_json(fit);
      break;
    }
    case ModelKind::rf: {
      const Forest f = fit_forest(tr.features(), tr.target(), forest_config(params, settings));
      const Vector point = predict_forest(f, te.features());
      const Interval iv = interval_oob(f, point);
      const double v = oob_variance(f);
      out.predictions.ids = te.ids();
      out.predictions.point = point;
      out.predictions.lower = iv.lower;
      out.predictions.upper = iv.upper;
      out.predictions.variance = Vector::Constant(point.size(), v);
      out.predictions.scale = tr.target_scale();
      out.backtransform_variance = out.predictions.variance;
      out.model = {{"oob_variance", v}, {"n_trees", f.config.n_trees}, {"oob_warnings", f.warnings}};
      break;
    }
    case ModelKind::grf: {
      GrfConfig gc;
      gc.global = forest_config(params, settings);
      gc.local_n_trees = settings.local_n_trees;
      gc.bw = params.bw;
      gc.alpha = params.alpha;
      const GrfResult r = fit_predict_grf(tr, te, gc);
      out.predictions = r.predictions;
      out.backtransform_variance = Vector::Constant(r.predictions.size(), r.oob_variance);
      out.model = {{"oob_variance", r.oob_variance}};
      break;
    }
    case ModelKind::carforest: {
      CarForestConfig cc;
      cc.r_iterations = params.r;
      cc.d_param = params.d;
      cc.forest = forest_config(params, settings);
      cc.car = settings.car;
      cc.car.interval_mode = mode;
      cc.car.seed = settings.seed;
      auto res = run_carforest(tr, te, cc, settings.priors,
                               [&](int, const PredictionSet& p) { out.per_iteration.push_back(p); });
      out.predictions = std::move(res.predictions);
      out.backtransform_variance = out.predictions.variance;
      out.model = to_json(res.fit);
      out.model.erase("forest");
      break;
    }
  }
  return out;
}

}  // namespace carforest
