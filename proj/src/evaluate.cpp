#include "carforest/evaluate.hpp"

#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace carforest {

namespace {
void check_lengths(Index a, Index b) {
  if (a != b) throw ValidationError("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  if (a == 0) throw ValidationError("metrics need at least one value");
}
}  // namespace

double rmse(const Vector& pred, const Vector& obs) {
  check_lengths(pred.size(), obs.size());
  return std::sqrt((pred - obs).squaredNorm() / static_cast<double>(pred.size()));
}

double mae(const Vector& pred, const Vector& obs) {
  check_lengths(pred.size(), obs.size());
  std::vector<double> e(static_cast<std::size_t>(pred.size()));
  for (Index i = 0; i < pred.size(); ++i) e[static_cast<std::size_t>(i)] = std::abs(pred(i) - obs(i));
  std::sort(e.begin(), e.end());
  const std::size_t m = e.size();
  return m % 2 == 1 ? e[m / 2] : 0.5 * (e[m / 2 - 1] + e[m / 2]);
}

double coverage(const Vector& lower, const Vector& upper, const Vector& obs) {
  check_lengths(lower.size(), obs.size());
  check_lengths(upper.size(), obs.size());
  Index hits = 0;
  for (Index i = 0; i < obs.size(); ++i) {
    if (lower(i) > upper(i)) throw ValidationError("inverted interval at position " + std::to_string(i));
    if (obs(i) >= lower(i) && obs(i) <= upper(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(obs.size());
}

double interval_width(const Vector& lower, const Vector& upper) {
  check_lengths(lower.size(), upper.size());
  if ((lower.array() > upper.array()).any()) throw ValidationError("inverted interval");
  return (upper - lower).mean();
}

Metrics score(const PredictionSet& p, const Vector& obs) {
  return {rmse(p.point, obs), mae(p.point, obs), coverage(p.lower, p.upper, obs), interval_width(p.lower, p.upper)};
}

nlohmann::json to_json(const Metrics& m) { return {{"rmse", m.rmse}, {"mae", m.mae}, {"cp", m.cp}, {"aiw", m.aiw}}; }

Metrics metrics_from_json(const nlohmann::json& j) {
  return {j.at("rmse").get<double>(), j.at("mae").get<double>(), j.at("cp").get<double>(), j.at("aiw").get<double>()};
}

PredictionSet backtransform(const PredictionSet& p, const Vector& sigma2) {
  if (p.scale != TargetScale::log) throw ValidationError("predictions are already on the original scale");
  if (sigma2.size() != p.size()) throw ValidationError("one variance per prediction is required");
  if ((sigma2.array() < 0.0).any()) throw ValidationError("negative variance in back-transformation");
  PredictionSet out = p;
  out.point = (p.point + 0.5 * sigma2).array().exp().matrix();
  out.lower = p.lower.array().exp().matrix();
  out.upper = p.upper.array().exp().matrix();
  out.scale = TargetScale::original;
  return out;
}

PredictionSet backtransform(const PredictionSet& p, double sigma2) {
  return backtransform(p, Vector::Constant(p.size(), sigma2));
}

std::vector<int> make_folds(Index n, int folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("at least 2 folds are required");
  if (n < folds) throw ValidationError("fewer units than folds");
  IndexList perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < perm.size(); ++i) out[static_cast<std::size_t>(perm[i])] = static_cast<int>(i % static_cast<std::size_t>(folds));
  return out;
}

// ---------------------------------------------------------------------------
// Grids

TuningGrid TuningGrid::defaults(ModelKind kind, Index p) {
  TuningGrid g;
  g.kind = kind;
  g.d = {3, 5, 7, 9};
  g.m_try = {10, 20, 30, 40, static_cast<int>(p)};
  g.min_node = {1, 5, 10};
  g.r = {1, 2, 3, 4, 5};
  g.bw = {100, 500, 1000};
  g.alpha = {0.25, 0.5, 0.75, 1.0};
  return g.normalized(p);
}

TuningGrid TuningGrid::normalized(Index p) const {
  TuningGrid g = *this;
  const int pi = static_cast<int>(std::max<Index>(p, 1));
  std::vector<int> m;
  for (int v : m_try) {
    const int c = v == 0 ? pi : std::clamp(v, 1, pi);
    if (std::find(m.begin(), m.end(), c) == m.end()) m.push_back(c);
  }
  if (std::find(m.begin(), m.end(), pi) == m.end()) m.push_back(pi);
  g.m_try = m;
  return g;
}

void TuningGrid::validate() const {
  auto nonempty = [](const auto& v, const char* name) {
    if (v.empty()) throw ValidationError(std::string("tuning grid list '") + name + "' is empty");
  };
  nonempty(d, "D");
  nonempty(m_try, "m_try");
  nonempty(min_node, "min_node");
  nonempty(r, "R");
  nonempty(bw, "bw");
  nonempty(alpha, "alpha");
  for (int v : d)
    if (v < 1) throw ValidationError("D candidates must be positive");
  for (int v : min_node)
    if (v < 1) throw ValidationError("min_node candidates must be positive");
  for (int v : r)
    if (v < 1) throw ValidationError("R candidates must be positive");
  for (int v : bw)
    if (v < 1) throw ValidationError("bw candidates must be positive");
  for (double v : alpha)
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("alpha candidates must lie in [0, 1]");
}

std::vector<ModelParams> TuningGrid::combinations() const {
  const bool uses_d = kind == ModelKind::car || kind == ModelKind::carforest;
  const bool uses_forest = kind == ModelKind::rf || kind == ModelKind::grf || kind == ModelKind::carforest;
  const bool uses_r = kind == ModelKind::carforest;
  const bool uses_local = kind == ModelKind::grf;
  const ModelParams base;
  auto pick = [](bool used, const auto& v, auto def) { return used ? v : std::vector<decltype(def)>{def}; };
  std::vector<ModelParams> out;
  for (int dd : pick(uses_d, d, base.d))
    for (int mt : pick(uses_forest, m_try, base.m_try))
      for (int mn : pick(uses_forest, min_node, base.min_node))
        for (int rr : pick(uses_r, r, base.r))
          for (int b : pick(uses_local, bw, base.bw))
            for (double a : pick(uses_local, alpha, base.alpha)) out.push_back({dd, mt, mn, rr, b, a});
  return out;
}

nlohmann::json to_json(const TuningGrid& g) {
  nlohmann::json j = {{"model", to_string(g.kind)}};
  switch (g.kind) {
    case ModelKind::lm: break;
    case ModelKind::car: j["D"] = g.d; break;
    case ModelKind::rf:
      j["m_try"] = g.m_try;
      j["min_node"] = g.min_node;
      break;
    case ModelKind::grf:
      j["m_try"] = g.m_try;
      j["min_node"] = g.min_node;
      j["bw"] = g.bw;
      j["alpha"] = g.alpha;
      break;
    case ModelKind::carforest:
      j["D"] = g.d;
      j["m_try"] = g.m_try;
      j["min_node"] = g.min_node;
      j["R"] = g.r;
      break;
  }
  return j;
}

TuningGrid tuning_grid_from_json(ModelKind kind, const nlohmann::json& j, Index p) {
  TuningGrid g = TuningGrid::defaults(kind, p);
  if (j.contains("D")) g.d = j.at("D").get<std::vector<int>>();
  if (j.contains("m_try")) g.m_try = j.at("m_try").get<std::vector<int>>();
  if (j.contains("min_node")) g.min_node = j.at("min_node").get<std::vector<int>>();
  if (j.contains("R")) g.r = j.at("R").get<std::vector<int>>();
  if (j.contains("bw")) g.bw = j.at("bw").get<std::vector<int>>();
  if (j.contains("alpha")) g.alpha = j.at("alpha").get<std::vector<double>>();
  g.validate();
  return g.normalized(p);
}

// ---------------------------------------------------------------------------
// Cross-validation

TuningResult cv_tune(const ArealDataset& train_in, const TuningGrid& grid_in, const ModelSettings& settings, int n_folds,
                     std::uint64_t seed) {
  grid_in.validate();
  const ArealDataset train = train_in.subset(train_in.observed_indices());
  const Index p_eff = effective_feature_count(grid_in.kind, settings, train.n_features());
  const TuningGrid grid = grid_in.normalized(p_eff);
  const std::vector<ModelParams> combos = grid.combinations();

  TuningResult res;
  res.kind = grid.kind;
  res.seed = seed;
  res.folds = make_folds(train.n_total(), n_folds, seed);
  for (const auto& c : combos) res.scores.push_back({c, std::numeric_limits<double>::quiet_NaN(), false, ""});
  if (combos.size() == 1) {
    res.evaluated = false;
    return res;
  }

  std::vector<IndexList> fold_train(static_cast<std::size_t>(n_folds)), fold_test(static_cast<std::size_t>(n_folds));
  for (Index i = 0; i < train.n_total(); ++i) {
    const auto f = static_cast<std::size_t>(res.folds[static_cast<std::size_t>(i)]);
    fold_test[f].push_back(i);
    for (std::size_t g = 0; g < fold_train.size(); ++g)
      if (g != f) fold_train[g].push_back(i);
  }

  // Runs: one per combination, except CAR-Forest shares a run across R.
  const bool shared_r = grid.kind == ModelKind::carforest;
  std::vector<ModelParams> runs;
  std::vector<std::size_t> run_of(combos.size());
  for (std::size_t c = 0; c < combos.size(); ++c) {
    ModelParams key = combos[c];
    if (shared_r) key.r = 0;
    auto it = std::find(runs.begin(), runs.end(), key);
    if (it == runs.end()) {
      run_of[c] = runs.size();
      runs.push_back(key);
    } else {
      run_of[c] = static_cast<std::size_t>(it - runs.begin());
    }
  }
  if (shared_r)
    for (std::size_t c = 0; c < combos.size(); ++c) runs[run_of[c]].r = std::max(runs[run_of[c]].r, combos[c].r);

  struct TaskOut {
    std::vector<Vector> preds;  // per iteration for CAR-Forest, otherwise one
    std::string error;
  };
  const auto nf = static_cast<std::size_t>(n_folds);
  std::vector<TaskOut> tasks(runs.size() * nf);
  parallel_for(tasks.size(), [&](std::size_t t) {
    const std::size_t run = t / nf;
    const std::size_t f = t % nf;
    try {
      const ArealDataset tr = train.subset(fold_train[f]);
      const ArealDataset te = train.subset(fold_test[f]);
      ModelOutput out = fit_predict(grid.kind, runs[run], settings, tr, te, IntervalMode::plug_in);
      if (shared_r) {
        for (const auto& p : out.per_iteration) tasks[t].preds.push_back(p.point);
      } else {
        tasks[t].preds.push_back(out.predictions.point);
      }
    } catch (const std::exception& e) {
      tasks[t].error = e.what();
    }
  });

  const Vector& y = train.target();
  for (std::size_t c = 0; c < combos.size(); ++c) {
    Vector pooled(train.n_total());
    auto& sc = res.scores[c];
    for (std::size_t f = 0; f < nf && !sc.failed; ++f) {
      const TaskOut& t = tasks[run_of[c] * nf + f];
      if (!t.error.empty()) {
        sc.failed = true;
        sc.reason = "fold " + std::to_string(f + 1) + ": " + t.error;
        break;
      }
      const Vector& pr = shared_r ? t.preds[static_cast<std::size_t>(combos[c].r - 1)] : t.preds[0];
      for (std::size_t i = 0; i < fold_test[f].size(); ++i) pooled(fold_test[f][i]) = pr(static_cast<Index>(i));
    }
    if (!sc.failed) sc.rmse = rmse(pooled, y);
  }

  bool any = false;
  for (std::size_t c = 0; c < combos.size(); ++c) {
    const auto& sc = res.scores[c];
    if (sc.failed) continue;
    if (!any || sc.rmse < res.scores[res.chosen].rmse) res.chosen = c;
    any = true;
  }
  if (!any) {
    std::string why;
    for (const auto& sc : res.scores) why += "\n  " + to_json(grid.kind, sc.params).dump() + ": " + sc.reason;
    throw Error("every tuning combination failed:" + why);
  }
  return res;
}

nlohmann::json to_json(const TuningResult& r) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& s : r.scores) {
    nlohmann::json e = {{"params", to_json(r.kind, s.params)}};
    if (s.failed) {
      e["failed"] = true;
      e["reason"] = s.reason;
    } else if (r.evaluated) {
      e["cv_rmse"] = s.rmse;
    }
    scores.push_back(e);
  }
  return {{"model", to_string(r.kind)},
          {"seed", r.seed},
          {"evaluated", r.evaluated},
          {"chosen", to_json(r.kind, r.best())},
          {"scores", scores},
          {"folds", r.folds}};
}

// ---------------------------------------------------------------------------
// Benchmark

ModelSpec model_spec(ModelKind kind, Index p) { return {display_name(kind), kind, TuningGrid::defaults(kind, p), {}}; }

namespace {
template <typename T>
T mode_value(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  T best = v.front();
  std::size_t best_n = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    if (j - i > best_n) {
      best_n = j - i;
      best = v[i];
    }
    i = j;
  }
  return best;
}
}  // namespace

ModelParams mode_of(const std::vector<ModelParams>& ps) {
  if (ps.empty()) return {};
  auto field = [&](auto member) {
    std::vector<std::remove_cvref_t<decltype(ps[0].*member)>> v;
    for (const auto& p : ps) v.push_back(p.*member);
    return mode_value(v);
  };
  ModelParams m;
  m.d = field(&ModelParams::d);
  m.m_try = field(&ModelParams::m_try);
  m.min_node = field(&ModelParams::min_node);
  m.r = field(&ModelParams::r);
  m.bw = field(&ModelParams::bw);
  m.alpha = field(&ModelParams::alpha);
  return m;
}

BenchmarkReport benchmark(const ArealDataset& ds_in, const std::vector<ModelSpec>& models, const BenchmarkOptions& opt) {
  if (opt.n_splits < 1) throw ValidationError("at least one split is required");
  if (models.empty()) throw ValidationError("no models to benchmark");
  const IndexList obs_rows = ds_in.observed_indices();
  const ArealDataset ds = ds_in.subset(obs_rows);
  const ArealDataset work = opt.log_target ? log_target(ds) : ds;

  BenchmarkReport rep;
  rep.n_splits = opt.n_splits;
  rep.train_fraction = opt.train_fraction;
  rep.seed = opt.seed;
  rep.dataset_digest = dataset_digest(ds_in);
  rep.settings = to_json(opt.settings);
  rep.settings["folds"] = opt.folds;
  rep.settings["log_target"] = opt.log_target;
  rep.settings["final_interval_mode"] = to_string(opt.final_interval_mode);
  for (const auto& m : models) rep.models.push_back({m.name, m.kind, {}, {}, {}});

  for (int s = 0; s < opt.n_splits; ++s) {
    const Split split = train_test_split(work, opt.train_fraction, derive_seed(opt.seed, static_cast<std::uint64_t>(s)));
    Vector observed(static_cast<Index>(split.test_rows.size()));
    IndexList rows;
    for (std::size_t i = 0; i < split.test_rows.size(); ++i) {
      observed(static_cast<Index>(i)) = ds.target()(split.test_rows[i]);
      rows.push_back(obs_rows[static_cast<std::size_t>(split.test_rows[i])]);
    }
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      const ModelSpec& spec = models[mi];
      const std::string ctx = spec.name + ", split " + std::to_string(s + 1) + ": ";
      SplitOutcome out;
      try {
        ModelOutput mo;
        if (spec.custom) {
          mo = spec.custom(split.train, split.test);
        } else {
          out.tuning = cv_tune(split.train, spec.grid, opt.settings, opt.folds,
                               derive_seed(opt.seed, static_cast<std::uint64_t>(s), 1));
          out.params = out.tuning.best();
          mo = fit_predict(spec.kind, out.params, opt.settings, split.train, split.test, opt.final_interval_mode);
        }
        out.predictions = opt.log_target ? backtransform(mo.predictions, mo.backtransform_variance) : mo.predictions;
        out.metrics = score(out.predictions, observed);
      } catch (const ValidationError& e) {
        throw ValidationError(ctx + e.what());
      } catch (const NumericalError& e) {
        throw NumericalError(ctx + e.what());
      } catch (const std::exception& e) {
        throw Error(ctx + e.what());
      }
      out.observed = observed;
      out.test_rows = rows;
      rep.models[mi].splits.push_back(std::move(out));
    }
  }

  for (auto& m : rep.models) {
    std::vector<ModelParams> ps;
    for (const auto& s : m.splits) {
      m.mean.rmse += s.metrics.rmse / opt.n_splits;
      m.mean.mae += s.metrics.mae / opt.n_splits;
      m.mean.cp += s.metrics.cp / opt.n_splits;
      m.mean.aiw += s.metrics.aiw / opt.n_splits;
      ps.push_back(s.params);
    }
    m.deployment = mode_of(ps);
  }
  return rep;
}

namespace {

struct MetricColumn {
  const char* name;
  double Metrics::*field;
  const char* fmt;
};
constexpr MetricColumn kMetrics[] = {
    {"RMSE", &Metrics::rmse, "%.4f"}, {"MAE", &Metrics::mae, "%.4f"}, {"CP", &Metrics::cp, "%.3f"}, {"AIW", &Metrics::aiw, "%.4f"}};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

}  // namespace

std::string format_table(const BenchmarkReport& r) {
  std::vector<std::string> header{"Model"};
  for (int s = 1; s <= r.n_splits; ++s) header.push_back(std::to_string(s));
  header.push_back("Mean");

  std::vector<std::vector<std::string>> rows;
  for (const auto& mc : kMetrics) {
    rows.push_back({mc.name});
    for (const auto& m : r.models) {
      std::vector<std::string> row{m.name};
      for (const auto& s : m.splits) row.push_back(fmt(mc.fmt, s.metrics.*mc.field));
      row.push_back(fmt(mc.fmt, m.mean.*mc.field));
      rows.push_back(row);
    }
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());

  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        out << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
      }
    }
    out << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  return out.str();
}

nlohmann::json to_json(const BenchmarkReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& mc : kMetrics)
    for (const auto& m : r.models) {
      for (std::size_t s = 0; s < m.splits.size(); ++s)
        rows.push_back({{"metric", mc.name}, {"model", m.name}, {"split", std::to_string(s + 1)}, {"value", m.splits[s].metrics.*mc.field}});
      rows.push_back({{"metric", mc.name}, {"model", m.name}, {"split", "mean"}, {"value", m.mean.*mc.field}});
    }
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : r.models) {
    nlohmann::json splits = nlohmann::json::array();
    for (std::size_t s = 0; s < m.splits.size(); ++s) {
      const auto& o = m.splits[s];
      nlohmann::json e = {{"split", s + 1}, {"metrics", to_json(o.metrics)}};
      if (!o.tuning.scores.empty()) {
        e["params"] = to_json(m.kind, o.params);
        e["tuning"] = to_json(o.tuning);
        e["tuning"].erase("folds");
      }
      splits.push_back(e);
    }
    models.push_back({{"name", m.name},
                      {"model", to_string(m.kind)},
                      {"mean", to_json(m.mean)},
                      {"deployment", to_json(m.kind, m.deployment)},
                      {"splits", splits}});
  }
  return {{"version", kVersion},
          {"n_splits", r.n_splits},
          {"train_fraction", r.train_fraction},
          {"seed", r.seed},
          {"dataset_digest", r.dataset_digest},
          {"settings", r.settings},
          {"rows", rows},
          {"models", models}};
}

BenchmarkReport benchmark_report_from_json(const nlohmann::json& j) {
  BenchmarkReport r;
  r.n_splits = j.at("n_splits").get<int>();
  r.train_fraction = j.at("train_fraction").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.dataset_digest = j.at("dataset_digest").get<std::string>();
  r.settings = j.at("settings");
  for (const auto& m : j.at("models")) {
    ModelReport mr;
    mr.name = m.at("name").get<std::string>();
    mr.kind = model_kind_from_string(m.at("model").get<std::string>());
    mr.mean = metrics_from_json(m.at("mean"));
    mr.deployment = model_params_from_json(m.at("deployment"));
    for (const auto& s : m.at("splits")) {
      SplitOutcome o;
      o.metrics = metrics_from_json(s.at("metrics"));
      if (s.contains("params")) o.params = model_params_from_json(s.at("params"));
      mr.splits.push_back(std::move(o));
    }
    r.models.push_back(std::move(mr));
  }
  return r;
}

std::vector<GroupMetrics> group_breakdown(const BenchmarkReport& r, const ArealDataset& ds, const std::string& model) {
  if (!ds.has_groups()) throw ValidationError("dataset has no group column");
  const ModelReport* mr = nullptr;
  for (const auto& m : r.models)
    if (m.name == model) mr = &m;
  if (!mr) throw ValidationError("model '" + model + "' is not in the report");

  std::map<std::string, GroupMetrics> acc;
  std::map<std::string, int> n_splits;
  for (const auto& s : mr->splits) {
    std::map<std::string, std::vector<Index>> members;
    for (std::size_t i = 0; i < s.test_rows.size(); ++i)
      members[ds.groups()[static_cast<std::size_t>(s.test_rows[i])]].push_back(static_cast<Index>(i));
    for (const auto& [g, idx] : members) {
      Vector p(static_cast<Index>(idx.size())), o(static_cast<Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) {
        p(static_cast<Index>(i)) = s.predictions.point(idx[i]);
        o(static_cast<Index>(i)) = s.observed(idx[i]);
      }
      auto& a = acc[g];
      a.group = g;
      a.units += static_cast<Index>(idx.size());
      a.rmse += rmse(p, o);
      a.mae += mae(p, o);
      ++n_splits[g];
    }
  }
  std::vector<GroupMetrics> out;
  for (auto& [g, a] : acc) {
    a.rmse /= n_splits[g];
    a.mae /= n_splits[g];
    out.push_back(a);
  }
  return out;
}

void write_scatter_csv(const BenchmarkReport& r, std::ostream& out) {
  out << "split,model,id,observed,point,lower95,upper95\n";
  for (const auto& m : r.models)
    for (std::size_t s = 0; s < m.splits.size(); ++s) {
      const auto& o = m.splits[s];
      for (Index i = 0; i < o.predictions.size(); ++i)
        out << (s + 1) << ',' << m.name << ',' << o.predictions.ids[static_cast<std::size_t>(i)] << ','
            << format_double(o.observed(i)) << ',' << format_double(o.predictions.point(i)) << ','
            << format_double(o.predictions.lower(i)) << ',' << format_double(o.predictions.upper(i)) << '\n';
    }
}

void write_density_csv(const ArealDataset& observed, const PredictionSet& predicted, std::ostream& out) {
  out << "source,id,value\n";
  for (Index k : observed.observed_indices())
    out << "observed," << observed.ids()[static_cast<std::size_t>(k)] << ',' << format_double(observed.target()(k)) << '\n';
  for (Index i = 0; i < predicted.size(); ++i)
    out << "predicted," << predicted.ids[static_cast<std::size_t>(i)] << ',' << format_double(predicted.point(i)) << '\n';
}

}  // namespace carforest
