#include "carforest/forest.hpp"

#include <mutex>
#include <numeric>
#include <random>

namespace carforest {

void validate(const ForestConfig& cfg, Index p) {
  if (cfg.n_trees < 1) throw ValidationError("n_trees must be at least 1");
  if (cfg.min_node < 1) throw ValidationError("min_node must be at least 1");
  if (cfg.m_try < 0) throw ValidationError("m_try must be positive");
  if (cfg.m_try > p)
    throw ValidationError("m_try = " + std::to_string(cfg.m_try) + " exceeds the feature count " + std::to_string(p));
}

int resolved_m_try(const ForestConfig& cfg, Index p) { return cfg.m_try == 0 ? static_cast<int>(p) : cfg.m_try; }

Index RegressionTree::leaf_count() const {
  return std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf(); });
}

Index RegressionTree::depth() const {
  std::vector<Index> d(nodes.size(), 0);
  Index best = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    best = std::max(best, d[k]);
    if (!nodes[k].leaf()) {
      d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
      d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
    }
  }
  return best;
}

namespace {

struct Candidate {
  int feature = -1;
  double threshold = 0.0;
  double score = -std::numeric_limits<double>::infinity();  // sL^2/nL + sR^2/nR
};

double sse_of(const Vector& z, const IndexList& rows, std::size_t begin, std::size_t end) {
  double mean = 0.0;
  for (std::size_t i = begin; i < end; ++i) mean += z(rows[i]);
  mean /= static_cast<double>(end - begin);
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += (z(rows[i]) - mean) * (z(rows[i]) - mean);
  return s;
}

class TreeGrower {
 public:
  TreeGrower(const Matrix& x, const Vector& z, int m_try, int min_node, int tree_index, std::uint64_t seed,
             const std::function<void(SplitRecord&&)>* report)
      : x_(x), z_(z), m_try_(m_try), min_node_(min_node), tree_(tree_index), rng_(seed), report_(report) {}

  RegressionTree grow() {
    const Index n = x_.rows();
    RegressionTree tree;
    tree.in_bag.assign(static_cast<std::size_t>(n), 0);
    std::uniform_int_distribution<Index> draw(0, n - 1);
    for (Index i = 0; i < n; ++i) ++tree.in_bag[static_cast<std::size_t>(draw(rng_))];
    IndexList rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
      for (std::uint32_t c = 0; c < tree.in_bag[static_cast<std::size_t>(i)]; ++c) rows.push_back(i);

    features_.resize(static_cast<std::size_t>(x_.cols()));
    std::iota(features_.begin(), features_.end(), 0);

    struct Task {
      int node;
      std::size_t begin, end;
    };
    tree.nodes.emplace_back();
    std::vector<Task> stack{{0, 0, rows.size()}};
    while (!stack.empty()) {
      const Task t = stack.back();
      stack.pop_back();
      double sum = 0.0;
      for (std::size_t i = t.begin; i < t.end; ++i) sum += z_(rows[i]);
      const auto m = static_cast<double>(t.end - t.begin);
      tree.nodes[static_cast<std::size_t>(t.node)].value = sum / m;

      if (t.end - t.begin < 2 * static_cast<std::size_t>(min_node_)) continue;
      const double node_sse = sse_of(z_, rows, t.begin, t.end);
      if (!(node_sse > 0.0)) continue;

      const std::vector<int> cand = sample_features();
      const Candidate best = best_split(rows, t.begin, t.end, cand);
      if (best.feature < 0) continue;
      const double reduction = best.score - sum * sum / m;
      if (!(reduction > 1e-12 * node_sse)) continue;

      auto mid = std::stable_partition(rows.begin() + static_cast<std::ptrdiff_t>(t.begin),
                                       rows.begin() + static_cast<std::ptrdiff_t>(t.end),
                                       [&](Index r) { return x_(r, best.feature) <= best.threshold; });
      const auto split = static_cast<std::size_t>(mid - rows.begin());

      if (report_ && *report_) {
        SplitRecord rec;
        rec.tree = tree_;
        rec.node = t.node;
        rec.rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(t.begin),
                        rows.begin() + static_cast<std::ptrdiff_t>(t.end));
        rec.candidates = cand;
        rec.feature = best.feature;
        rec.threshold = best.threshold;
        rec.child_sse = sse_of(z_, rows, t.begin, split) + sse_of(z_, rows, split, t.end);
        (*report_)(std::move(rec));
      }

      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& nd = tree.nodes[static_cast<std::size_t>(t.node)];
      nd.feature = best.feature;
      nd.threshold = best.threshold;
      nd.left = left;
      nd.right = left + 1;
      stack.push_back({left + 1, split, t.end});
      stack.push_back({left, t.begin, split});
    }
    return tree;
  }

 private:
  std::vector<int> sample_features() {
    const int p = static_cast<int>(features_.size());
    for (int i = 0; i < m_try_; ++i) {
      std::uniform_int_distribution<int> pick(i, p - 1);
      std::swap(features_[static_cast<std::size_t>(i)], features_[static_cast<std::size_t>(pick(rng_))]);
    }
    std::vector<int> out(features_.begin(), features_.begin() + m_try_);
    std::sort(out.begin(), out.end());
    return out;
  }

  Candidate best_split(const IndexList& rows, std::size_t begin, std::size_t end, const std::vector<int>& cand) {
    Candidate best;
    const std::size_t m = end - begin;
    const auto min_node = static_cast<std::size_t>(min_node_);
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) total += z_(rows[i]);
    for (int f : cand) {
      buf_.resize(m);
      for (std::size_t i = 0; i < m; ++i) buf_[i] = {x_(rows[begin + i], f), z_(rows[begin + i])};
      std::sort(buf_.begin(), buf_.end());
      double left = 0.0;
      for (std::size_t i = 0; i + 1 < m; ++i) {
        left += buf_[i].second;
        if (!(buf_[i].first < buf_[i + 1].first)) continue;
        const std::size_t nl = i + 1;
        if (nl < min_node || m - nl < min_node) continue;
        const double right = total - left;
        const double score = left * left / static_cast<double>(nl) + right * right / static_cast<double>(m - nl);
        if (score > best.score) {
          double thr = 0.5 * (buf_[i].first + buf_[i + 1].first);
          if (!(thr < buf_[i + 1].first)) thr = buf_[i].first;
          best = {f, thr, score};
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  const Vector& z_;
  int m_try_;
  int min_node_;
  int tree_;
  std::mt19937_64 rng_;
  const std::function<void(SplitRecord&&)>* report_;
  std::vector<int> features_;
  std::vector<std::pair<double, double>> buf_;
};

void compute_oob(Forest& f, const Matrix& x, const Vector& z) {
  const Index n = x.rows();
  f.oob_predictions.resize(n);
  f.oob_tree_counts.assign(static_cast<std::size_t>(n), 0);
  std::vector<char> fallback(static_cast<std::size_t>(n), 0);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    double sum = 0.0;
    int count = 0;
    for (const auto& t : f.trees) {
      if (t.in_bag[i] != 0) continue;
      sum += t.predict(x.row(static_cast<Index>(i)));
      ++count;
    }
    f.oob_tree_counts[i] = count;
    if (count == 0) {
      fallback[i] = 1;
      for (const auto& t : f.trees) sum += t.predict(x.row(static_cast<Index>(i)));
      count = static_cast<int>(f.trees.size());
    }
    f.oob_predictions(static_cast<Index>(i)) = sum / count;
  });
  std::vector<double> errors;
  f.oob_fallback_rows.clear();
  for (Index i = 0; i < n; ++i) {
    if (fallback[static_cast<std::size_t>(i)]) f.oob_fallback_rows.push_back(i);
    else errors.push_back(z(i) - f.oob_predictions(i));
  }
  f.oob_errors = Eigen::Map<const Vector>(errors.data(), static_cast<Index>(errors.size()));
  f.warnings.clear();
  if (!f.oob_fallback_rows.empty())
    f.warnings.push_back(std::to_string(f.oob_fallback_rows.size()) +
                         " training rows were in every bootstrap sample; their OOB prediction uses the full forest");
}

}  // namespace

Forest fit_forest(const Matrix& x_in, const Vector& z_in, const ForestConfig& cfg, const ForestFitExtras& extras) {
  const Index n = x_in.rows();
  if (n < 2) throw ValidationError("forest needs at least 2 training rows");
  if (z_in.size() != n) throw ValidationError("feature rows and target length differ");
  if (x_in.cols() < 1) throw ValidationError("forest needs at least one feature");
  validate(cfg, x_in.cols());
  if (!x_in.allFinite()) throw ValidationError("forest features contain missing or non-finite values");
  if (!z_in.allFinite()) throw ValidationError("forest target contains missing or non-finite values");

  // Canonical row order for the id-keyed mode.
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const bool keyed = !extras.row_ids.empty();
  if (keyed) {
    if (static_cast<Index>(extras.row_ids.size()) != n) throw ValidationError("row_ids length must match the row count");
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return extras.row_ids[static_cast<std::size_t>(a)] < extras.row_ids[static_cast<std::size_t>(b)];
    });
  }
  Matrix xc(n, x_in.cols());
  Vector zc(n);
  for (Index i = 0; i < n; ++i) {
    xc.row(i) = x_in.row(order[static_cast<std::size_t>(i)]);
    zc(i) = z_in(order[static_cast<std::size_t>(i)]);
  }

  std::mutex observer_mutex;
  std::function<void(SplitRecord&&)> report;
  if (extras.observer) {
    report = [&](SplitRecord&& rec) {
      for (Index& r : rec.rows) r = order[static_cast<std::size_t>(r)];
      std::lock_guard lock(observer_mutex);
      extras.observer(rec);
    };
  }

  Forest f;
  f.config = cfg;
  f.n_features = x_in.cols();
  f.trees.resize(static_cast<std::size_t>(cfg.n_trees));
  const int m_try = resolved_m_try(cfg, x_in.cols());
  parallel_for(f.trees.size(), [&](std::size_t t) {
    TreeGrower g(xc, zc, m_try, cfg.min_node, static_cast<int>(t), derive_seed(cfg.seed, t), &report);
    RegressionTree tree = g.grow();
    std::vector<std::uint32_t> in_bag(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
      in_bag[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = tree.in_bag[static_cast<std::size_t>(i)];
    tree.in_bag = std::move(in_bag);
    f.trees[t] = std::move(tree);
  });
  compute_oob(f, x_in, z_in);
  return f;
}

Vector predict_forest(const Forest& f, const Matrix& x_new) {
  if (x_new.cols() != f.n_features)
    throw ValidationError("prediction data has " + std::to_string(x_new.cols()) + " features, forest expects " +
                          std::to_string(f.n_features));
  Vector out(x_new.rows());
  parallel_for(static_cast<std::size_t>(x_new.rows()), [&](std::size_t i) {
    double sum = 0.0;
    for (const auto& t : f.trees) sum += t.predict(x_new.row(static_cast<Index>(i)));
    out(static_cast<Index>(i)) = sum / static_cast<double>(f.trees.size());
  });
  return out;
}

const Vector& oob_predict(const Forest& f) { return f.oob_predictions; }

Interval interval_from_errors(const Vector& errors, const Vector& point) {
  if (errors.size() < 40)
    throw ValidationError("OOB intervals need at least 40 OOB errors, got " + std::to_string(errors.size()));
  const double lo = quantile_type7(errors, 0.025);
  const double hi = quantile_type7(errors, 0.975);
  return {(point.array() + lo).matrix(), (point.array() + hi).matrix()};
}

Interval interval_oob(const Forest& f, const Vector& point) { return interval_from_errors(f.oob_errors, point); }

double unbiased_variance(const Vector& v) {
  if (v.size() < 2) throw ValidationError("variance needs at least 2 values");
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

double oob_variance(const Forest& f) { return unbiased_variance(f.oob_errors); }

nlohmann::json to_json(const Forest& f) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : f.trees) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, value;
    for (const auto& nd : t.nodes) {
      feature.push_back(nd.feature);
      threshold.push_back(nd.threshold);
      left.push_back(nd.left);
      right.push_back(nd.right);
      value.push_back(nd.value);
    }
    trees.push_back({{"feature", feature},
                     {"threshold", threshold},
                     {"left", left},
                     {"right", right},
                     {"value", value},
                     {"in_bag", t.in_bag}});
  }
  return {{"format", "carforest-forest"},
          {"version", 1},
          {"config",
           {{"n_trees", f.config.n_trees},
            {"m_try", f.config.m_try},
            {"min_node", f.config.min_node},
            {"seed", f.config.seed}}},
          {"n_features", f.n_features},
          {"trees", trees},
          {"oob_predictions", std::vector<double>(f.oob_predictions.begin(), f.oob_predictions.end())},
          {"oob_tree_counts", f.oob_tree_counts},
          {"oob_errors", std::vector<double>(f.oob_errors.begin(), f.oob_errors.end())},
          {"oob_fallback_rows", f.oob_fallback_rows},
          {"warnings", f.warnings}};
}

Forest forest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "carforest-forest") throw ParseError("not a forest document", 0);
  if (j.value("version", 0) != 1) throw ParseError("unsupported forest format version", 0);
  Forest f;
  const auto& c = j.at("config");
  f.config.n_trees = c.at("n_trees").get<int>();
  f.config.m_try = c.at("m_try").get<int>();
  f.config.min_node = c.at("min_node").get<int>();
  f.config.seed = c.at("seed").get<std::uint64_t>();
  f.n_features = j.at("n_features").get<Index>();
  for (const auto& t : j.at("trees")) {
    RegressionTree tree;
    const auto feature = t.at("feature").get<std::vector<int>>();
    const auto threshold = t.at("threshold").get<std::vector<double>>();
    const auto left = t.at("left").get<std::vector<int>>();
    const auto right = t.at("right").get<std::vector<int>>();
    const auto value = t.at("value").get<std::vector<double>>();
    for (std::size_t k = 0; k < feature.size(); ++k)
      tree.nodes.push_back({feature[k], threshold[k], left[k], right[k], value[k]});
    tree.in_bag = t.at("in_bag").get<std::vector<std::uint32_t>>();
    f.trees.push_back(std::move(tree));
  }
  const auto oob = j.at("oob_predictions").get<std::vector<double>>();
  f.oob_predictions = Eigen::Map<const Vector>(oob.data(), static_cast<Index>(oob.size()));
  f.oob_tree_counts = j.at("oob_tree_counts").get<std::vector<int>>();
  const auto err = j.at("oob_errors").get<std::vector<double>>();
  f.oob_errors = Eigen::Map<const Vector>(err.data(), static_cast<Index>(err.size()));
  f.oob_fallback_rows = j.at("oob_fallback_rows").get<IndexList>();
  f.warnings = j.at("warnings").get<std::vector<std::string>>();
  return f;
}

}  // namespace carforest
