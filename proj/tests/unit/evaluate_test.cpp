#include "doctest.h"

#include "carforest/evaluate.hpp"
#include "fixtures.hpp"

#include <random>
#include <sstream>

using namespace carforest;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ModelSpec oracle_spec() {
  ModelSpec m;
  m.name = "Oracle";
  m.custom = [](const ArealDataset&, const ArealDataset& test) {
    ModelOutput o;
    o.predictions = gaussian_predictions(test.ids(), test.target(), Vector::Zero(test.n_total()), test.target_scale());
    o.backtransform_variance = Vector::Zero(test.n_total());
    return o;
  };
  return m;
}

ArealDataset positive_data(Index n, std::uint64_t seed) {
  auto ds = fixtures::random_areal(n, 2, n, seed);
  Vector y = ds.target().array().exp() * 1000.0;
  return ds.with_target(y, TargetScale::original);
}

}  // namespace

TEST_SUITE("evaluate") {

TEST_CASE("rmse") {
  CHECK(rmse(vec({1, 2, 3}), vec({1, 2, 3})) == 0.0);
  CHECK(rmse(vec({2, 4}), vec({1, 2})) == doctest::Approx(std::sqrt(2.5)));
  CHECK_THROWS_AS(rmse(vec({1}), vec({1, 2})), ValidationError);
}

TEST_CASE("median absolute error") {
  CHECK(mae(vec({1, 2, 3}), vec({1, 2, 3})) == 0.0);
  CHECK(mae(vec({1, 2, 9}), vec({0, 0, 0})) == 2.0);
  CHECK(mae(vec({0, 0}), vec({1, -3})) == 2.0);
  CHECK_THROWS_AS(mae(vec({1}), vec({1, 2})), ValidationError);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = 1 + trial % 7;
    Vector p(n), o(n);
    for (Index i = 0; i < n; ++i) p(i) = z(rng), o(i) = z(rng);
    std::vector<double> abs_err;
    for (Index i = 0; i < n; ++i) abs_err.push_back(std::abs(p(i) - o(i)));
    const double base = mae(p, o);
    CHECK(base == doctest::Approx(median_of(abs_err)).epsilon(1e-14));
    Vector pr = p.reverse(), orr = o.reverse();
    CHECK(mae(pr, orr) == base);
    const Index k = trial % n;
    Vector q = p;
    q(k) += z(rng);
    CHECK(std::abs(mae(q, o) - base) <= std::abs(std::abs(q(k) - o(k)) - abs_err[static_cast<std::size_t>(k)]) + 1e-15);
  }
}

TEST_CASE("coverage and interval width") {
  CHECK(coverage(vec({0, 0}), vec({2, 4}), vec({1, 2})) == 1.0);
  CHECK(coverage(vec({0, 0}), vec({2, 4}), vec({2, 5})) == 0.5);
  CHECK(coverage(vec({0}), vec({1}), vec({0})) == 1.0);
  CHECK(interval_width(vec({0, 0}), vec({1, 3})) == 2.0);
  CHECK_THROWS_AS(coverage(vec({1}), vec({0}), vec({0.5})), ValidationError);
  CHECK_THROWS_AS(interval_width(vec({1}), vec({0})), ValidationError);
}

TEST_CASE("back-transformation") {
  auto ps = gaussian_predictions({"a", "b"}, vec({0.0, std::log(1e5)}), vec({0.0, 0.0}), TargetScale::log);
  const auto zero = backtransform(ps, 0.0);
  CHECK(zero.point(0) == 1.0);
  CHECK(zero.scale == TargetScale::original);
  const auto b = backtransform(ps, vec({0.0, 0.2}));
  CHECK(std::abs(b.point(1) - 110517.09) < 0.005);
  CHECK_THROWS_AS(backtransform(zero, 0.0), ValidationError);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0.0, 1.0);
  Vector mu(500), obs(500);
  for (Index i = 0; i < 500; ++i) mu(i) = 10.0 + z(rng), obs(i) = mu(i) + 0.5 * z(rng);
  const auto lp = gaussian_predictions(std::vector<std::string>(500, "u"), mu, Vector::Constant(500, 0.2), TargetScale::log);
  const auto op = backtransform(lp, 0.2);
  CHECK(coverage(op.lower, op.upper, obs.array().exp().matrix()) == coverage(lp.lower, lp.upper, obs));
}

TEST_CASE("log-normal back-transformation is nearly unbiased") {
  SimulationScenario sc;
  sc.n_units = 25000;
  sc.mean_function = MeanFunction::linear;
  sc.n_features = 2;
  sc.coefficients = {0.4, -0.3};
  sc.intercept = 11.0;
  sc.sigma2_true = 0.2;
  sc.include_spatial = false;
  sc.exponentiate = true;
  sc.seed = 3;
  const auto ds = log_target(simulate(sc).data);
  const auto split = train_test_split(ds, 0.2, 3);
  const auto p = predict_lm(fit_lm(split.train), split.test);
  const Vector obs = split.test.target().array().exp();
  const auto bt = backtransform(p, p.variance);
  CHECK(std::abs(bt.point.mean() - obs.mean()) / obs.mean() < 0.01);
}

TEST_CASE("folds") {
  const auto f = make_folds(5011, 10, 4);
  std::vector<int> size(10, 0);
  for (int k : f) {
    REQUIRE(k >= 0);
    REQUIRE(k < 10);
    ++size[static_cast<std::size_t>(k)];
  }
  for (int s : size) CHECK((s == 501 || s == 502));
  CHECK(make_folds(5011, 10, 4) == f);
  CHECK(make_folds(5011, 10, 5) != f);
  CHECK_THROWS_AS(make_folds(5, 10, 1), ValidationError);
  CHECK_THROWS_AS(make_folds(50, 1, 1), ValidationError);
}

TEST_CASE("default grids") {
  const auto car = TuningGrid::defaults(ModelKind::car, 51);
  CHECK(car.d == std::vector<int>{3, 5, 7, 9});
  CHECK(car.combinations().size() == 4);
  const auto rf = TuningGrid::defaults(ModelKind::rf, 51);
  CHECK(rf.m_try == std::vector<int>{10, 20, 30, 40, 51});
  CHECK(rf.min_node == std::vector<int>{1, 5, 10});
  CHECK(rf.combinations().size() == 15);
  const auto cf = TuningGrid::defaults(ModelKind::carforest, 51);
  CHECK(cf.r == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(cf.combinations().size() == 4 * 5 * 3 * 5);
  CHECK(TuningGrid::defaults(ModelKind::grf, 51).combinations().size() == 5 * 3 * 3 * 4);
  CHECK(TuningGrid::defaults(ModelKind::lm, 51).combinations().size() == 1);
  CHECK(TuningGrid::defaults(ModelKind::rf, 25).normalized(25).m_try == std::vector<int>{10, 20, 25});
  const auto back = tuning_grid_from_json(ModelKind::grf, to_json(TuningGrid::defaults(ModelKind::grf, 8)), 8);
  CHECK(back.combinations() == TuningGrid::defaults(ModelKind::grf, 8).normalized(8).combinations());
  TuningGrid bad;
  bad.kind = ModelKind::grf;
  bad.alpha = {};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("single combination is chosen without fitting") {
  TuningGrid g;
  g.kind = ModelKind::rf;
  g.m_try = {0};
  g.min_node = {7};
  ModelSettings s;
  s.n_trees = 10;
  const auto r = cv_tune(fixtures::random_areal(40, 2, 40, 5), g, s, 10, 1);
  CHECK_FALSE(r.evaluated);
  CHECK(r.scores.size() == 1);
  CHECK(r.best().min_node == 7);
  CHECK(r.best().m_try == 4);
}

TEST_CASE("adding a dominated combination keeps the choice") {
  const auto ds = fixtures::random_areal(120, 3, 120, 6);
  ModelSettings s;
  s.n_trees = 40;
  TuningGrid g;
  g.kind = ModelKind::rf;
  g.m_try = {0};
  g.min_node = {3, 10};
  const auto a = cv_tune(ds, g, s, 5, 2);
  g.min_node = {3, 10, 500};
  const auto b = cv_tune(ds, g, s, 5, 2);
  CHECK(b.scores[2].rmse > std::min(b.scores[0].rmse, b.scores[1].rmse));
  CHECK(b.best() == a.best());
  CHECK(b.scores[0].rmse == a.scores[0].rmse);
  for (std::size_t c = 0; c < b.scores.size(); ++c) CHECK(b.scores[b.chosen].rmse <= b.scores[c].rmse);
}

TEST_CASE("failing combinations are disqualified with a reason") {
  const auto ds = fixtures::random_areal(60, 2, 60, 7);
  ModelSettings s;
  s.n_trees = 20;
  TuningGrid g;
  g.kind = ModelKind::grf;
  g.bw = {20, 1000};
  g.alpha = {0.5};
  g.min_node = {5};
  const auto r = cv_tune(ds, g, s, 5, 3);
  CHECK(r.scores[1].failed);
  CHECK(r.scores[1].reason.find("fold 1") != std::string::npos);
  CHECK(r.best().bw == 20);
}

TEST_CASE("CAR-Forest tuning scores every R from one run") {
  const auto ds = fixtures::random_areal(80, 2, 80, 8);
  ModelSettings s;
  s.n_trees = 20;
  TuningGrid g;
  g.kind = ModelKind::carforest;
  g.d = {5};
  g.m_try = {0};
  g.min_node = {5};
  g.r = {1, 2};
  const auto shared = cv_tune(ds, g, s, 4, 9);
  g.r = {2};
  g.min_node = {5, 6};
  const auto alone = cv_tune(ds, g, s, 4, 9);
  CHECK(shared.scores[1].rmse == alone.scores[0].rmse);
}

TEST_CASE("CV picks the generating graph") {
  int hits = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    SimulationScenario sc;
    sc.n_units = 150;
    sc.rho_true = 0.95;
    sc.tau_true = 1.0;
    sc.sigma2_true = 0.05;
    sc.mean_function = MeanFunction::linear;
    sc.n_features = 2;
    sc.d_param = 3;
    sc.seed = 500 + s;
    const auto sim = simulate(sc);
    TuningGrid g;
    g.kind = ModelKind::car;
    g.d = {12, 3};
    const auto r = cv_tune(sim.data.with_target(sim.data.target(), TargetScale::log), g, {}, 5, s);
    hits += r.best().d == 3;
  }
  CHECK(hits >= 8);
}

TEST_CASE("mode across splits prefers the smaller value on ties") {
  ModelParams a, b, c;
  a.d = 7, b.d = 3, c.d = 7;
  a.min_node = 1, b.min_node = 5, c.min_node = 10;
  a.alpha = 0.75, b.alpha = 0.25, c.alpha = 0.25;
  const auto m = mode_of({a, b, c});
  CHECK(m.d == 7);
  CHECK(m.min_node == 1);
  CHECK(m.alpha == 0.25);
}

TEST_CASE("oracle model scores zero error on every split") {
  BenchmarkOptions opt;
  opt.n_splits = 3;
  opt.log_target = false;
  const auto r = benchmark(positive_data(50, 9), {oracle_spec()}, opt);
  for (const auto& s : r.models[0].splits) {
    CHECK(s.metrics.rmse == 0.0);
    CHECK(s.metrics.cp == 1.0);
  }
  opt.log_target = true;
  const auto l = benchmark(positive_data(50, 9), {oracle_spec()}, opt);
  for (const auto& s : l.models[0].splits) CHECK(s.metrics.rmse < 1e-9 * s.observed.mean());
}

TEST_CASE("report layout") {
  const auto ds = positive_data(60, 10);
  BenchmarkOptions opt;
  opt.n_splits = 2;
  opt.folds = 3;
  opt.settings.n_trees = 20;
  opt.final_interval_mode = IntervalMode::plug_in;
  auto rf = model_spec(ModelKind::rf, 2);
  rf.grid.min_node = {5};
  rf.grid.m_try = {0};
  const std::vector<ModelSpec> models{model_spec(ModelKind::lm, 2), rf, oracle_spec()};
  const auto r = benchmark(ds, models, opt);
  const auto j = to_json(r);
  CHECK(j["rows"].size() == 4 * models.size() * 3);
  CHECK(j["version"] == kVersion);
  CHECK(j["dataset_digest"] == dataset_digest(ds));
  const auto table = format_table(r);
  CHECK(std::count(table.begin(), table.end(), '\n') == 1 + 4 * (1 + 3));
  CHECK(table.rfind("Model", 0) == 0);
  CHECK(r.models[0].name == "LM");
  CHECK(r.models[1].name == "RF");
  for (const auto& m : r.models)
    for (const auto& s : m.splits) CHECK(s.predictions.scale == TargetScale::original);

  std::ostringstream scatter;
  write_scatter_csv(r, scatter);
  const std::string text = scatter.str();
  CHECK(text.rfind("split,model,id,observed,point,lower95,upper95\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3 * 2 * 12);
  std::ostringstream density;
  write_density_csv(ds, r.models[0].splits[0].predictions, density);
  CHECK(density.str().rfind("source,id,value\n", 0) == 0);
}

TEST_CASE("per-group breakdown") {
  auto base = positive_data(60, 11);
  std::vector<std::string> groups;
  for (Index i = 0; i < 60; ++i) groups.push_back(i % 2 ? "East" : "West");
  const ArealDataset ds(base.ids(), base.centroids(), base.features(), base.target(), base.feature_names(),
                        base.target_scale(), groups);
  BenchmarkOptions opt;
  opt.n_splits = 2;
  const auto r = benchmark(ds, {oracle_spec(), model_spec(ModelKind::lm, 2)}, opt);
  const auto g = group_breakdown(r, ds, "LM");
  REQUIRE(g.size() == 2);
  CHECK(g[0].units + g[1].units == 24);
  CHECK(g[0].rmse > 0.0);
  CHECK(group_breakdown(r, ds, "Oracle")[0].rmse < 1e-6 * ds.target().mean());
  CHECK_THROWS_AS(group_breakdown(r, base, "LM"), ValidationError);
  CHECK_THROWS_AS(group_breakdown(r, ds, "GRF"), ValidationError);
}

}
