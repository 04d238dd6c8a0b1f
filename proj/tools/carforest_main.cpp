#include "carforest/evaluate.hpp"
#include "carforest/spatial_graph.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

using namespace carforest;
using nlohmann::json;

namespace {

// Reads nested JSON objects as CLI11 config: top-level keys are global
// options, objects named after a subcommand hold that subcommand's options.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j;
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      if (opt->count() > 0) j[opt->get_lnames()[0]] = opt->as<std::string>();
      else if (default_also && !opt->get_default_str().empty()) j[opt->get_lnames()[0]] = opt->get_default_str();
    }
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static void collect(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& items) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        collect(*it, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs = {scalar(*it)};
      }
      items.push_back(std::move(item));
    }
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }
};

struct Global {
  int threads = 0;
  std::uint64_t seed = 1;
  bool no_log = false;
};

struct Schema {
  std::string id = "id";
  std::string easting = "easting";
  std::string northing = "northing";
  std::string target = "target";
  std::string features;
  std::string group;

  void add_to(CLI::App* app) {
    app->add_option("--id-col", id, "Unit id column")->capture_default_str();
    app->add_option("--easting-col", easting, "Easting column")->capture_default_str();
    app->add_option("--northing-col", northing, "Northing column")->capture_default_str();
    app->add_option("--target-col", target, "Target column")->capture_default_str();
    app->add_option("--features", features, "Comma-separated feature columns (default: all remaining)");
    app->add_option("--group-col", group, "Optional grouping column, e.g. a local authority label");
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur.erase(0, cur.find_first_not_of(" \t"));
    cur.erase(cur.find_last_not_of(" \t") + 1);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const std::string& flag) {
  std::vector<T> out;
  for (const auto& tok : split_list(s)) {
    if constexpr (std::is_same_v<T, int>) {
      if (tok == "max") {
        out.push_back(0);
        continue;
      }
    }
    try {
      std::size_t used = 0;
      T v;
      if constexpr (std::is_same_v<T, int>) v = std::stoi(tok, &used);
      else v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ValidationError(flag + ": \"" + tok + "\" is not a number");
    }
  }
  if (out.empty()) throw ValidationError(flag + " needs at least one value");
  return out;
}

ArealDataset load(const std::string& path, const Schema& s) {
  ColumnSchema cs;
  cs.id = s.id;
  cs.easting = s.easting;
  cs.northing = s.northing;
  cs.target = s.target;
  cs.features = split_list(s.features);
  if (!s.group.empty()) cs.group = s.group;
  return load_csv(path, cs);
}

/// Effective option values of a command, excluding anything that cannot
/// change the result (help, config path, thread count).
json provenance(const CLI::App* app) {
  json j = json::object();
  for (const CLI::Option* opt : app->get_options({})) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames()[0];
    if (name == "help" || name == "version" || name == "config" || name == "threads") continue;
    if (opt->get_type_size_max() == 0 || opt->get_expected_max() == 0) {
      j[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      if (r.size() == 1) j[name] = r[0];
      else j[name] = r;
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

json artifact_header(const std::string& kind, const CLI::App* root, const CLI::App* cmd, const Global& g) {
  return {{"format", kind},
          {"version", kVersion},
          {"command", cmd->get_name()},
          {"seed", g.seed},
          {"config", {{"global", provenance(root)}, {cmd->get_name(), provenance(cmd)}}}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write \"" + path + "\"");
  out << text;
  if (!out) throw Error("failed writing \"" + path + "\"");
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open \"" + path + "\"");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw carforest::ParseError("\"" + path + "\" is not valid JSON: " + e.what(), 0);
  }
}

/// CSV outputs carry their provenance in a sidecar `<path>.meta.json`.
void write_meta(const std::string& csv_path, json header) { write_json(csv_path + ".meta.json", header); }

std::string stem(const std::string& path) {
  const auto dot = path.rfind('.');
  const auto slash = path.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path;
  return path.substr(0, dot);
}

ModelKind parse_kind(const std::string& s) {
  try {
    return model_kind_from_string(s);
  } catch (const std::exception&) {
    throw ValidationError("unknown model \"" + s + "\"; expected lm, car, rf, grf or carforest");
  }
}

struct ModelFlags {
  int trees = 1000;
  int local_trees = 100;
  int grid_points = 8;
  int draws = 1000;
  bool no_coords = false;

  void add_to(CLI::App* app) {
    app->add_option("--trees", trees, "Trees per forest")->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--local-trees", local_trees, "Trees per GRF local forest")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--grid-points", grid_points, "Hyperparameter grid points per axis")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--draws", draws, "Posterior predictive draws for grid-mixture intervals")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_flag("--no-coords", no_coords, "Do not append coordinates as LM/RF/GRF features");
  }

  ModelSettings settings(const Global& g) const {
    ModelSettings s;
    s.n_trees = trees;
    s.local_n_trees = local_trees;
    s.seed = g.seed;
    s.car.grid_points = grid_points;
    s.car.posterior_draws = draws;
    s.coordinates_as_features = !no_coords;
    return s;
  }
};

struct ParamFlags {
  int d = 5;
  std::string m_try = "max";
  int min_node = 5;
  int r = 1;
  int bw = 100;
  double alpha = 0.5;

  void add_to(CLI::App* app) {
    app->add_option("--D", d, "Neighbours per unit in the D-NN graph")->capture_default_str();
    app->add_option("--mtry", m_try, "Features tried per split, or 'max'")->capture_default_str();
    app->add_option("--min-node", min_node, "Minimum rows per leaf")->capture_default_str();
    app->add_option("--R", r, "CAR-Forest iterations")->capture_default_str();
    app->add_option("--bw", bw, "GRF neighbourhood size")->capture_default_str();
    app->add_option("--alpha", alpha, "GRF local weight")->capture_default_str();
  }

  ModelParams params() const {
    ModelParams p;
    p.d = d;
    p.m_try = parse_list<int>(m_try, "--mtry").front();
    p.min_node = min_node;
    p.r = r;
    p.bw = bw;
    p.alpha = alpha;
    return p;
  }
};

struct GridFlags {
  std::string d, m_try, min_node, r, bw, alpha, file;

  void add_to(CLI::App* app) {
    app->add_option("--D", d, "Candidate D values, comma-separated");
    app->add_option("--mtry", m_try, "Candidate m_try values ('max' = all features)");
    app->add_option("--min-node", min_node, "Candidate min_node values");
    app->add_option("--R", r, "Candidate R values");
    app->add_option("--bw", bw, "Candidate GRF bw values");
    app->add_option("--alpha", alpha, "Candidate GRF alpha values");
    app->add_option("--grid-file", file, "JSON grid; an object per model when several models are given");
  }

  TuningGrid grid(ModelKind kind, Index p, bool multi) const {
    TuningGrid g = TuningGrid::defaults(kind, p);
    if (!file.empty()) {
      const json j = read_json(file);
      const std::string key = to_string(kind);
      if (!multi) g = tuning_grid_from_json(kind, j.contains(key) ? j.at(key) : j, p);
      else if (j.contains(key)) g = tuning_grid_from_json(kind, j.at(key), p);
    }
    if (!d.empty()) g.d = parse_list<int>(d, "--D");
    if (!m_try.empty()) g.m_try = parse_list<int>(m_try, "--mtry");
    if (!min_node.empty()) g.min_node = parse_list<int>(min_node, "--min-node");
    if (!r.empty()) g.r = parse_list<int>(r, "--R");
    if (!bw.empty()) g.bw = parse_list<int>(bw, "--bw");
    if (!alpha.empty()) g.alpha = parse_list<double>(alpha, "--alpha");
    g.validate();
    return g.normalized(p);
  }
};

IntervalMode parse_mode(const std::string& s) {
  if (s == "plug-in" || s == "plug_in") return IntervalMode::plug_in;
  if (s == "grid-mixture" || s == "grid_mixture") return IntervalMode::grid_mixture;
  throw ValidationError("unknown interval mode \"" + s + "\"; expected plug-in or grid-mixture");
}

ArealDataset modelling_scale(const ArealDataset& ds, const Global& g) {
  return g.no_log ? ds : log_target(ds);
}

json prediction_json(const PredictionSet& p, const Vector& bt) {
  auto as_vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"scale", to_string(p.scale)},   {"ids", p.ids},
          {"point", as_vec(p.point)},      {"lower", as_vec(p.lower)},
          {"upper", as_vec(p.upper)},      {"variance", as_vec(p.variance)},
          {"backtransform_variance", as_vec(bt)}};
}

PredictionSet prediction_from_json(const json& j, Vector& bt) {
  PredictionSet p;
  p.ids = j.at("ids").get<std::vector<std::string>>();
  auto vec = [&](const char* key) {
    const auto v = j.at(key).get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
  };
  p.point = vec("point");
  p.lower = vec("lower");
  p.upper = vec("upper");
  p.variance = vec("variance");
  p.scale = target_scale_from_string(j.at("scale").get<std::string>());
  bt = vec("backtransform_variance");
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAR-Forest: random forests fused with Leroux CAR models for areal data"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with option values (command-line flags take precedence)");

  Global g;
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores); results do not depend on it")
      ->capture_default_str();
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_flag("--no-log", g.no_log, "Model the target as given instead of its natural log");

  // simulate -----------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic areal dataset with known truth");
  SimulationScenario sc;
  std::string sim_layout = "uniform", sim_mean = "nonlinear", sim_coef, sim_out, sim_truth;
  bool sim_no_spatial = false, sim_gaussian = false;
  sim->add_option("--n", sc.n_units, "Number of units")->capture_default_str();
  sim->add_option("--layout", sim_layout, "grid or uniform")->capture_default_str();
  sim->add_option("--rho", sc.rho_true, "Spatial dependence, in [0, 1)")->capture_default_str();
  sim->add_option("--tau", sc.tau_true, "Random-effect precision")->capture_default_str();
  sim->add_option("--sigma2", sc.sigma2_true, "Noise variance")->capture_default_str();
  sim->add_option("--mean", sim_mean, "linear or nonlinear")->capture_default_str();
  sim->add_option("--p", sc.n_features, "Number of features")->capture_default_str();
  sim->add_option("--intercept", sc.intercept, "Intercept of the mean")->capture_default_str();
  sim->add_option("--coefficients", sim_coef, "Linear coefficients, comma-separated");
  sim->add_option("--D", sc.d_param, "Neighbours per unit in the generating graph")->capture_default_str();
  sim->add_option("--missing", sc.missing_fraction, "Fraction of targets masked at random")->capture_default_str();
  sim->add_flag("--no-spatial", sim_no_spatial, "Omit the spatial random effect");
  sim->add_flag("--gaussian", sim_gaussian, "Write Y itself instead of exp(Y)");
  sim->add_option("--out", sim_out, "Output CSV")->required();
  sim->add_option("--truth", sim_truth, "Truth sidecar JSON (default: <out>.truth.json)");

  // preprocess ---------------------------------------------------------------
  auto* pre = app.add_subcommand("preprocess", "Impute, standardize and PCA-reduce features");
  Schema pre_schema;
  pre_schema.add_to(pre);
  std::string pre_in, pre_out, pre_model_out, pre_apply;
  int pre_k = 5;
  bool pre_std = false;
  std::vector<std::string> pre_pca;
  double pre_threshold = 0.95;
  pre->add_option("--input", pre_in, "Input CSV")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "Output CSV")->required();
  pre->add_option("--impute-k", pre_k, "Neighbours for KNN imputation (0 disables)")->capture_default_str();
  pre->add_flag("--standardize", pre_std, "Standardize every feature");
  pre->add_option("--pca", pre_pca, "PCA block 'label=f1,f2,...' (repeatable)");
  pre->add_option("--pca-threshold", pre_threshold, "Cumulative variance to retain per block")->capture_default_str();
  pre->add_option("--model-out", pre_model_out, "Preprocess model JSON (default: <out>.preprocess.json)");
  pre->add_option("--apply", pre_apply, "Apply a saved preprocess model instead of fitting one")
      ->check(CLI::ExistingFile);

  // tune ---------------------------------------------------------------------
  auto* tune = app.add_subcommand("tune", "Cross-validate a model over a tuning grid");
  Schema tune_schema;
  tune_schema.add_to(tune);
  std::string tune_in, tune_model, tune_out;
  int tune_folds = 10;
  GridFlags tune_grid;
  ModelFlags tune_flags;
  tune->add_option("--input", tune_in, "Input CSV")->required()->check(CLI::ExistingFile);
  tune->add_option("--model", tune_model, "lm, car, rf, grf or carforest")->required();
  tune->add_option("--folds", tune_folds, "CV folds")->capture_default_str();
  tune->add_option("--out", tune_out, "Tuning result JSON")->required();
  tune_grid.add_to(tune);
  tune_flags.add_to(tune);

  // fit ----------------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "Fit a model to the observed units and predict the missing ones");
  Schema fit_schema;
  fit_schema.add_to(fit);
  std::string fit_in, fit_model, fit_out, fit_mode = "grid-mixture", fit_params;
  ParamFlags fit_pf;
  ModelFlags fit_flags;
  fit->add_option("--input", fit_in, "Input CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--model", fit_model, "lm, car, rf, grf or carforest")->required();
  fit->add_option("--out", fit_out, "Fit bundle JSON")->required();
  fit->add_option("--interval-mode", fit_mode, "plug-in or grid-mixture")->capture_default_str();
  fit->add_option("--params-from", fit_params, "Take tuning parameters from a tune result JSON")
      ->check(CLI::ExistingFile);
  fit_pf.add_to(fit);
  fit_flags.add_to(fit);

  // predict ------------------------------------------------------------------
  auto* pred = app.add_subcommand("predict", "Write predictions for the units with a missing target");
  Schema pred_schema;
  pred_schema.add_to(pred);
  std::string pred_bundle, pred_in, pred_out, pred_scale = "original";
  pred->add_option("--bundle", pred_bundle, "Fit bundle JSON")->required()->check(CLI::ExistingFile);
  pred->add_option("--input", pred_in, "The CSV the bundle was fitted on")->required()->check(CLI::ExistingFile);
  pred->add_option("--out", pred_out, "Prediction CSV")->required();
  pred->add_option("--scale", pred_scale, "original or log")->capture_default_str();

  // benchmark ----------------------------------------------------------------
  auto* bench = app.add_subcommand("benchmark", "Repeated train/test comparison of several models");
  Schema bench_schema;
  bench_schema.add_to(bench);
  std::string bench_in, bench_models = "lm,car,rf,grf,carforest", bench_out, bench_table, bench_scatter,
                        bench_mode = "grid-mixture";
  int bench_splits = 5, bench_folds = 10;
  double bench_fraction = 0.8;
  GridFlags bench_grid;
  ModelFlags bench_flags;
  bench->add_option("--input", bench_in, "Input CSV")->required()->check(CLI::ExistingFile);
  bench->add_option("--models", bench_models, "Comma-separated model list")->capture_default_str();
  bench->add_option("--splits", bench_splits, "Train/test splits")->capture_default_str();
  bench->add_option("--train-fraction", bench_fraction, "Training share per split")->capture_default_str();
  bench->add_option("--folds", bench_folds, "CV folds for tuning")->capture_default_str();
  bench->add_option("--interval-mode", bench_mode, "Interval mode for the final fits")->capture_default_str();
  bench->add_option("--out", bench_out, "Report JSON")->required();
  bench->add_option("--table", bench_table, "Aligned text table");
  bench->add_option("--scatter", bench_scatter, "Per-unit observed vs predicted CSV");
  bench_grid.add_to(bench);
  bench_flags.add_to(bench);

  // report -------------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "Render a benchmark report or a density comparison");
  std::string rep_in, rep_out, rep_density, rep_data, rep_preds;
  Schema rep_schema;
  rep_schema.add_to(rep);
  rep->add_option("--report", rep_in, "Benchmark report JSON")->check(CLI::ExistingFile);
  rep->add_option("--out", rep_out, "Write the text table here instead of stdout");
  rep->add_option("--density", rep_density, "Write observed/predicted density CSV here");
  rep->add_option("--data", rep_data, "Dataset with observed targets (for --density)")->check(CLI::ExistingFile);
  rep->add_option("--predictions", rep_preds, "Prediction CSV on the original scale (for --density)")
      ->check(CLI::ExistingFile);

  // graph --------------------------------------------------------------------
  auto* graph = app.add_subcommand("graph", "Export the D-nearest-neighbour adjacency as an edge list");
  Schema graph_schema;
  graph_schema.add_to(graph);
  std::string graph_in, graph_out;
  int graph_d = 5;
  graph->add_option("--input", graph_in, "Input CSV")->required()->check(CLI::ExistingFile);
  graph->add_option("--D", graph_d, "Neighbours per unit")->capture_default_str();
  graph->add_option("--out", graph_out, "Edge list")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    set_thread_count(g.threads > 0 ? g.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));

    if (*sim) {
      if (sim_layout == "grid") sc.layout = Layout::grid;
      else if (sim_layout == "uniform") sc.layout = Layout::uniform_random;
      else throw ValidationError("--layout must be grid or uniform");
      if (sim_mean == "linear") sc.mean_function = MeanFunction::linear;
      else if (sim_mean == "nonlinear") sc.mean_function = MeanFunction::nonlinear;
      else throw ValidationError("--mean must be linear or nonlinear");
      if (!sim_coef.empty()) sc.coefficients = parse_list<double>(sim_coef, "--coefficients");
      sc.include_spatial = !sim_no_spatial;
      sc.exponentiate = !sim_gaussian;
      sc.seed = g.seed;
      const SimulatedData d = simulate(sc);
      write_csv(d.data, sim_out);
      json truth = artifact_header("carforest-truth", &app, sim, g);
      truth["scenario"] = to_json(sc);
      truth["ids"] = d.data.ids();
      auto as_vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
      truth["mean_function"] = as_vec(d.mean_function);
      truth["spatial_effect"] = as_vec(d.spatial_effect);
      truth["full_target"] = as_vec(d.full_target);
      write_json(sim_truth.empty() ? stem(sim_out) + ".truth.json" : sim_truth, truth);
      write_meta(sim_out, artifact_header("carforest-csv", &app, sim, g));
      std::cout << "wrote " << d.data.n_total() << " units (" << d.data.n_observed() << " with a target) to "
                << sim_out << "\n";
      return 0;
    }

    if (*pre) {
      ArealDataset ds = load(pre_in, pre_schema);
      PreprocessModel model;
      if (!pre_apply.empty()) {
        model = preprocess_model_from_json(read_json(pre_apply).at("model"));
        if (ds.has_missing_features()) ds = knn_impute(ds, model.impute_k);
        ds = apply_preprocess(model, ds);
      } else {
        model.impute_k = pre_k;
        if (pre_k > 0 && ds.has_missing_features()) ds = knn_impute(ds, pre_k);
        if (pre_std) {
          auto [out, m] = standardize(ds);
          ds = std::move(out);
          model.standardize = m.standardize;
        }
        for (const auto& spec : pre_pca) {
          const auto eq = spec.find('=');
          if (eq == std::string::npos) throw ValidationError("--pca expects 'label=f1,f2,...', got \"" + spec + "\"");
          auto [out, m] = pca_reduce(ds, split_list(spec.substr(eq + 1)), pre_threshold, spec.substr(0, eq));
          ds = std::move(out);
          model.pca_blocks.push_back(m.pca_blocks.front());
          const auto& b = model.pca_blocks.back();
          std::cout << b.label << ": " << b.retained << " of " << b.features.size() << " components retained ("
                    << format_double(b.variance_fraction.sum()) << " of the variance)\n";
        }
      }
      write_csv(ds, pre_out);
      write_meta(pre_out, artifact_header("carforest-csv", &app, pre, g));
      json mj = artifact_header("carforest-preprocess", &app, pre, g);
      mj["model"] = to_json(model);
      write_json(pre_model_out.empty() ? stem(pre_out) + ".preprocess.json" : pre_model_out, mj);
      return 0;
    }

    if (*tune) {
      const ModelKind kind = parse_kind(tune_model);
      const ArealDataset ds = modelling_scale(load(tune_in, tune_schema), g);
      const ArealDataset train = ds.subset(ds.observed_indices());
      const ModelSettings settings = tune_flags.settings(g);
      const TuningGrid grid =
          tune_grid.grid(kind, effective_feature_count(kind, settings, train.n_features()), false);
      const TuningResult r = cv_tune(train, grid, settings, tune_folds, g.seed);
      json out = artifact_header("carforest-tuning", &app, tune, g);
      out["model"] = to_string(kind);
      out["grid"] = to_json(grid);
      out["result"] = to_json(r);
      out["dataset_digest"] = dataset_digest(ds);
      write_json(tune_out, out);
      std::cout << "best " << to_json(kind, r.best()).dump() << "\n";
      return 0;
    }

    if (*fit) {
      const ModelKind kind = parse_kind(fit_model);
      const ArealDataset raw = load(fit_in, fit_schema);
      const ArealDataset ds = modelling_scale(raw, g);
      ModelParams params = fit_pf.params();
      if (!fit_params.empty()) {
        const json t = read_json(fit_params);
        if (t.value("format", "") != "carforest-tuning") throw ValidationError("\"" + fit_params + "\" is not a tune result");
        if (t.at("model").get<std::string>() != to_string(kind))
          throw ValidationError("tune result is for model " + t.at("model").get<std::string>() + ", not " + to_string(kind));
        params = model_params_from_json(t.at("result").at("chosen"));
      }
      const ModelSettings settings = fit_flags.settings(g);
      const ArealDataset train = ds.subset(ds.observed_indices());
      const ArealDataset test = ds.subset(ds.missing_indices());
      const ModelOutput mo = fit_predict(kind, params, settings, train, test, parse_mode(fit_mode));
      json out = artifact_header("carforest-fit", &app, fit, g);
      out["model"] = to_string(kind);
      out["params"] = to_json(kind, params);
      out["settings"] = to_json(settings);
      out["log_target"] = !g.no_log;
      out["dataset_digest"] = dataset_digest(raw);
      out["features"] = raw.feature_names();
      out["n_train"] = train.n_total();
      out["fitted"] = mo.model;
      out["predictions"] = prediction_json(mo.predictions, mo.backtransform_variance);
      write_json(fit_out, out);
      std::cout << "fitted " << display_name(kind) << " on " << train.n_total() << " units; " << test.n_total()
                << " units predicted\n";
      return 0;
    }

    if (*pred) {
      const json bundle = read_json(pred_bundle);
      if (bundle.value("format", "") != "carforest-fit") throw ValidationError("\"" + pred_bundle + "\" is not a fit bundle");
      const ArealDataset raw = load(pred_in, pred_schema);
      const auto features = bundle.at("features").get<std::vector<std::string>>();
      if (features != raw.feature_names()) {
        std::string missing;
        for (const auto& f : features)
          if (std::find(raw.feature_names().begin(), raw.feature_names().end(), f) == raw.feature_names().end())
            missing += (missing.empty() ? "" : ", ") + f;
        throw ValidationError("input columns do not match the fit bundle" +
                              (missing.empty() ? std::string(" (different order or extra columns)")
                                               : "; missing: " + missing));
      }
      if (bundle.at("dataset_digest").get<std::string>() != dataset_digest(raw))
        throw ValidationError("stale fit bundle: it was fitted to a different version of \"" + pred_in +
                              "\"; rerun fit");
      if (raw.missing_indices().empty())
        throw ValidationError("nothing to predict: every unit has an observed target");
      Vector bt;
      PredictionSet p = prediction_from_json(bundle.at("predictions"), bt);
      const bool logged = bundle.at("log_target").get<bool>();
      if (pred_scale == "original") {
        if (logged) p = backtransform(p, bt);
      } else if (pred_scale == "log") {
        if (!logged) throw ValidationError("the bundle was fitted without a log transform; use --scale original");
      } else {
        throw ValidationError("--scale must be original or log");
      }
      write_predictions_csv(p, pred_out);
      json meta = artifact_header("carforest-csv", &app, pred, g);
      meta["bundle_config"] = bundle.at("config");
      meta["bundle_seed"] = bundle.at("seed");
      write_meta(pred_out, meta);
      std::cout << "wrote " << p.size() << " predictions to " << pred_out << "\n";
      return 0;
    }

    if (*bench) {
      const ArealDataset ds = load(bench_in, bench_schema);
      BenchmarkOptions opt;
      opt.n_splits = bench_splits;
      opt.train_fraction = bench_fraction;
      opt.seed = g.seed;
      opt.folds = bench_folds;
      opt.log_target = !g.no_log;
      opt.final_interval_mode = parse_mode(bench_mode);
      opt.settings = bench_flags.settings(g);
      std::vector<ModelSpec> specs;
      const auto names = split_list(bench_models);
      if (names.empty()) throw ValidationError("--models is empty");
      for (const auto& name : names) {
        const ModelKind kind = parse_kind(name);
        ModelSpec spec = model_spec(kind, ds.n_features());
        spec.grid = bench_grid.grid(kind, effective_feature_count(kind, opt.settings, ds.n_features()), names.size() > 1);
        specs.push_back(std::move(spec));
      }
      const BenchmarkReport r = benchmark(ds, specs, opt);
      json out = artifact_header("carforest-benchmark", &app, bench, g);
      out["report"] = to_json(r);
      if (ds.has_groups()) {
        json groups = json::object();
        for (const auto& m : r.models) {
          json rows = json::array();
          for (const auto& gm : group_breakdown(r, ds, m.name))
            rows.push_back({{"group", gm.group}, {"units", gm.units}, {"rmse", gm.rmse}, {"mae", gm.mae}});
          groups[m.name] = rows;
        }
        out["groups"] = groups;
      }
      write_json(bench_out, out);
      const std::string table = format_table(r);
      if (!bench_table.empty()) write_text(bench_table, table);
      if (!bench_scatter.empty()) {
        std::ofstream sc_out(bench_scatter, std::ios::binary);
        if (!sc_out) throw Error("cannot write \"" + bench_scatter + "\"");
        write_scatter_csv(r, sc_out);
        write_meta(bench_scatter, artifact_header("carforest-csv", &app, bench, g));
      }
      std::cout << table;
      return 0;
    }

    if (*rep) {
      if (rep_in.empty() && rep_density.empty()) throw ValidationError("report needs --report or --density");
      if (!rep_in.empty()) {
        const json j = read_json(rep_in);
        if (j.value("format", "") != "carforest-benchmark")
          throw ValidationError("\"" + rep_in + "\" is not a benchmark report");
        const BenchmarkReport r = benchmark_report_from_json(j.at("report"));
        std::ostringstream text;
        text << format_table(r);
        text << "\nDeployment parameters (mode across splits)\n";
        for (const auto& m : r.models)
          if (!m.splits.empty() && m.kind != ModelKind::lm)
            text << "  " << m.name << ": " << to_json(m.kind, m.deployment).dump() << "\n";
        if (j.contains("groups")) {
          text << "\nPer-group mean RMSE / MAE\n";
          for (auto it = j.at("groups").begin(); it != j.at("groups").end(); ++it)
            for (const auto& row : *it) {
              char buf[256];
              std::snprintf(buf, sizeof(buf), "  %-12s %-24s %6lld %12.4f %12.4f\n", it.key().c_str(),
                            row.at("group").get<std::string>().c_str(), row.at("units").get<long long>(),
                            row.at("rmse").get<double>(), row.at("mae").get<double>());
              text << buf;
            }
        }
        if (rep_out.empty()) std::cout << text.str();
        else write_text(rep_out, text.str());
      }
      if (!rep_density.empty()) {
        if (rep_data.empty() || rep_preds.empty()) throw ValidationError("--density needs --data and --predictions");
        const ArealDataset ds = load(rep_data, rep_schema);
        const PredictionSet p = read_predictions_csv(rep_preds, TargetScale::original);
        std::ofstream out(rep_density, std::ios::binary);
        if (!out) throw Error("cannot write \"" + rep_density + "\"");
        write_density_csv(ds, p, out);
        write_meta(rep_density, artifact_header("carforest-csv", &app, rep, g));
      }
      return 0;
    }

    if (*graph) {
      const ArealDataset ds = load(graph_in, graph_schema);
      const NeighbourhoodMatrix w = knn_adjacency(ds.centroids(), graph_d);
      std::ofstream out(graph_out, std::ios::binary);
      if (!out) throw Error("cannot write \"" + graph_out + "\"");
      write_edge_list(w, out);
      std::cout << w.edge_count() << " edges\n";
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const carforest::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
