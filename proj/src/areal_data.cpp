#include "carforest/areal_data.hpp"

#include "carforest/spatial_graph.hpp"

#include <Eigen/SparseCholesky>

#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace carforest {

using nlohmann::json;

std::string to_string(TargetScale s) { return s == TargetScale::log ? "log" : "original"; }

TargetScale target_scale_from_string(const std::string& s) {
  if (s == "log") return TargetScale::log;
  if (s == "original") return TargetScale::original;
  throw ValidationError("unknown target scale '" + s + "'");
}

// ---------------------------------------------------------------------------
// ArealDataset

ArealDataset::ArealDataset(std::vector<std::string> ids, Coordinates centroids, Matrix features,
                           Vector target, std::vector<std::string> feature_names, TargetScale scale,
                           std::vector<std::string> groups)
    : ids_(std::move(ids)),
      centroids_(std::move(centroids)),
      features_(std::move(features)),
      target_(std::move(target)),
      feature_names_(std::move(feature_names)),
      scale_(scale),
      groups_(std::move(groups)) {
  validate();
}

void ArealDataset::validate() const {
  const auto n = static_cast<Index>(ids_.size());
  if (centroids_.rows() != n || features_.rows() != n || target_.size() != n)
    throw ValidationError("dataset columns have inconsistent lengths");
  if (static_cast<Index>(feature_names_.size()) != features_.cols())
    throw ValidationError("feature name count does not match the feature matrix");
  if (!groups_.empty() && static_cast<Index>(groups_.size()) != n)
    throw ValidationError("group labels must cover every unit");
  std::unordered_set<std::string> seen;
  for (const auto& id : ids_)
    if (!seen.insert(id).second) throw ValidationError("duplicate unit id \"" + id + "\"");
  std::unordered_set<std::string> names;
  for (const auto& name : feature_names_)
    if (!names.insert(name).second) throw ValidationError("duplicate feature name \"" + name + "\"");
  for (Index k = 0; k < n; ++k)
    if (!std::isfinite(centroids_(k, 0)) || !std::isfinite(centroids_(k, 1)))
      throw ValidationError("unit \"" + ids_[static_cast<std::size_t>(k)] + "\" has a non-finite centroid");
}

ArealDataset ArealDataset::from_units(const std::vector<ArealUnit>& units,
                                      std::vector<std::string> feature_names, TargetScale scale) {
  const auto n = static_cast<Index>(units.size());
  const auto p = static_cast<Index>(feature_names.size());
  std::vector<std::string> ids;
  std::vector<std::string> groups;
  Coordinates c(n, 2);
  Matrix x(n, p);
  Vector y(n);
  bool any_group = false;
  for (Index k = 0; k < n; ++k) {
    const auto& u = units[static_cast<std::size_t>(k)];
    if (static_cast<Index>(u.features.size()) != p)
      throw ValidationError("unit \"" + u.id + "\" has " + std::to_string(u.features.size()) +
                            " features, expected " + std::to_string(p));
    ids.push_back(u.id);
    groups.push_back(u.group);
    any_group = any_group || !u.group.empty();
    c(k, 0) = u.easting;
    c(k, 1) = u.northing;
    for (Index j = 0; j < p; ++j) x(k, j) = u.features[static_cast<std::size_t>(j)];
    y(k) = u.target ? *u.target : kMissing;
  }
  if (!any_group) groups.clear();
  return ArealDataset(std::move(ids), std::move(c), std::move(x), std::move(y), std::move(feature_names),
                      scale, std::move(groups));
}

Index ArealDataset::n_observed() const {
  Index count = 0;
  for (Index k = 0; k < n_total(); ++k) count += observed(k) ? 1 : 0;
  return count;
}

IndexList ArealDataset::observed_indices() const {
  IndexList out;
  for (Index k = 0; k < n_total(); ++k)
    if (observed(k)) out.push_back(k);
  return out;
}

IndexList ArealDataset::missing_indices() const {
  IndexList out;
  for (Index k = 0; k < n_total(); ++k)
    if (!observed(k)) out.push_back(k);
  return out;
}

Index ArealDataset::feature_index(const std::string& name) const {
  auto it = std::find(feature_names_.begin(), feature_names_.end(), name);
  if (it == feature_names_.end()) throw ValidationError("unknown feature \"" + name + "\"");
  return static_cast<Index>(it - feature_names_.begin());
}

bool ArealDataset::has_missing_features() const { return features_.array().isNaN().any(); }

ArealUnit ArealDataset::unit(Index k) const {
  ArealUnit u;
  u.id = ids_[static_cast<std::size_t>(k)];
  u.easting = centroids_(k, 0);
  u.northing = centroids_(k, 1);
  u.features.assign(features_.cols(), 0.0);
  for (Index j = 0; j < features_.cols(); ++j) u.features[static_cast<std::size_t>(j)] = features_(k, j);
  if (observed(k)) u.target = target_(k);
  if (has_groups()) u.group = groups_[static_cast<std::size_t>(k)];
  return u;
}

ArealDataset ArealDataset::subset(const IndexList& rows) const {
  const auto m = static_cast<Index>(rows.size());
  std::vector<std::string> ids;
  std::vector<std::string> groups;
  Coordinates c(m, 2);
  Matrix x(m, n_features());
  Vector y(m);
  for (Index i = 0; i < m; ++i) {
    const Index k = rows[static_cast<std::size_t>(i)];
    if (k < 0 || k >= n_total()) throw ValidationError("row index out of range");
    ids.push_back(ids_[static_cast<std::size_t>(k)]);
    if (has_groups()) groups.push_back(groups_[static_cast<std::size_t>(k)]);
    c.row(i) = centroids_.row(k);
    x.row(i) = features_.row(k);
    y(i) = target_(k);
  }
  return ArealDataset(std::move(ids), std::move(c), std::move(x), std::move(y), feature_names_, scale_,
                      std::move(groups));
}

ArealDataset ArealDataset::with_features(Matrix features, std::vector<std::string> names) const {
  return ArealDataset(ids_, centroids_, std::move(features), target_, std::move(names), scale_, groups_);
}

ArealDataset ArealDataset::with_target(Vector target, TargetScale scale) const {
  return ArealDataset(ids_, centroids_, features_, std::move(target), feature_names_, scale, groups_);
}

ArealDataset ArealDataset::with_coordinate_features() const {
  Matrix x(n_total(), n_features() + 2);
  x << features_, centroids_;
  auto names = feature_names_;
  names.emplace_back("easting");
  names.emplace_back("northing");
  return with_features(std::move(x), std::move(names));
}

namespace {
bool same_values(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return ((a == b) || (a.isNaN() && b.isNaN())).all();
}
}  // namespace

bool operator==(const ArealDataset& a, const ArealDataset& b) {
  return a.ids_ == b.ids_ && a.feature_names_ == b.feature_names_ && a.scale_ == b.scale_ &&
         a.groups_ == b.groups_ && same_values(a.centroids_.array(), b.centroids_.array()) &&
         same_values(a.features_.array(), b.features_.array()) &&
         same_values(a.target_.array(), b.target_.array());
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line, long line_no) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(ch);
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  cells.push_back(std::move(cell));
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_missing_token(const std::string& cell) { return cell.empty() || cell == "NA"; }

double parse_number(const std::string& cell, const std::string& column, long line_no) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw ParseError("column \"" + column + "\": \"" + cell + "\" is not a number", line_no);
  return v;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  return out + "\"";
}

}  // namespace

ArealDataset parse_csv(std::istream& in, const ColumnSchema& schema, TargetScale scale) {
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty file, expected a header row", 1);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line, line_no);
  for (auto& h : header) h = trim(h);

  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("missing column \"" + name + "\" in header", 1);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column_of(schema.id);
  const std::size_t e_col = column_of(schema.easting);
  const std::size_t n_col = column_of(schema.northing);
  const std::size_t t_col = column_of(schema.target);
  std::optional<std::size_t> g_col;
  if (schema.group) g_col = column_of(*schema.group);

  std::vector<std::string> feature_names = schema.features;
  std::vector<std::size_t> f_cols;
  if (feature_names.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == id_col || c == e_col || c == n_col || c == t_col || (g_col && c == *g_col)) continue;
      feature_names.push_back(header[c]);
      f_cols.push_back(c);
    }
  } else {
    for (const auto& name : feature_names) f_cols.push_back(column_of(name));
  }

  std::vector<ArealUnit> units;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line, line_no);
    if (cells.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(cells.size()),
                       line_no);
    for (auto& c : cells) c = trim(c);
    ArealUnit u;
    u.id = cells[id_col];
    if (u.id.empty()) throw ParseError("empty id", line_no);
    if (is_missing_token(cells[e_col]) || is_missing_token(cells[n_col]))
      throw ParseError("unit \"" + u.id + "\" has a missing centroid", line_no);
    u.easting = parse_number(cells[e_col], schema.easting, line_no);
    u.northing = parse_number(cells[n_col], schema.northing, line_no);
    for (std::size_t j = 0; j < f_cols.size(); ++j) {
      const auto& cell = cells[f_cols[j]];
      u.features.push_back(is_missing_token(cell) ? kMissing : parse_number(cell, feature_names[j], line_no));
    }
    if (!is_missing_token(cells[t_col])) u.target = parse_number(cells[t_col], schema.target, line_no);
    if (g_col) u.group = cells[*g_col];
    units.push_back(std::move(u));
  }
  return ArealDataset::from_units(units, feature_names, scale);
}

ArealDataset load_csv(const std::string& path, const ColumnSchema& schema, TargetScale scale) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open \"" + path + "\"");
  return parse_csv(in, schema, scale);
}

void write_csv(const ArealDataset& ds, std::ostream& out) {
  out << "id,easting,northing";
  for (const auto& name : ds.feature_names()) out << ',' << quote_if_needed(name);
  if (ds.has_groups()) out << ",group";
  out << ",target\n";
  for (Index k = 0; k < ds.n_total(); ++k) {
    out << quote_if_needed(ds.ids()[static_cast<std::size_t>(k)]) << ',' << format_double(ds.centroids()(k, 0))
        << ',' << format_double(ds.centroids()(k, 1));
    for (Index j = 0; j < ds.n_features(); ++j) {
      out << ',';
      if (!is_missing(ds.features()(k, j))) out << format_double(ds.features()(k, j));
    }
    if (ds.has_groups()) out << ',' << quote_if_needed(ds.groups()[static_cast<std::size_t>(k)]);
    out << ',';
    if (ds.observed(k)) out << format_double(ds.target()(k));
    out << '\n';
  }
}

void write_csv(const ArealDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write \"" + path + "\"");
  write_csv(ds, out);
}

json to_json(const ArealDataset& ds) {
  json units = json::array();
  for (Index k = 0; k < ds.n_total(); ++k) {
    json feats = json::array();
    for (Index j = 0; j < ds.n_features(); ++j) {
      const double v = ds.features()(k, j);
      feats.push_back(is_missing(v) ? json(nullptr) : json(v));
    }
    json u = {{"id", ds.ids()[static_cast<std::size_t>(k)]},
              {"easting", ds.centroids()(k, 0)},
              {"northing", ds.centroids()(k, 1)},
              {"features", feats},
              {"target", ds.observed(k) ? json(ds.target()(k)) : json(nullptr)}};
    if (ds.has_groups()) u["group"] = ds.groups()[static_cast<std::size_t>(k)];
    units.push_back(std::move(u));
  }
  return {{"feature_names", ds.feature_names()}, {"target_scale", to_string(ds.target_scale())}, {"units", units}};
}

ArealDataset dataset_from_json(const json& j) {
  std::vector<ArealUnit> units;
  for (const auto& u : j.at("units")) {
    ArealUnit unit;
    unit.id = u.at("id").get<std::string>();
    unit.easting = u.at("easting").get<double>();
    unit.northing = u.at("northing").get<double>();
    for (const auto& v : u.at("features")) unit.features.push_back(v.is_null() ? kMissing : v.get<double>());
    if (!u.at("target").is_null()) unit.target = u.at("target").get<double>();
    if (u.contains("group")) unit.group = u.at("group").get<std::string>();
    units.push_back(std::move(unit));
  }
  return ArealDataset::from_units(units, j.at("feature_names").get<std::vector<std::string>>(),
                                  target_scale_from_string(j.at("target_scale").get<std::string>()));
}

std::string dataset_digest(const ArealDataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  };
  for (const auto& name : ds.feature_names()) feed(name);
  for (Index k = 0; k < ds.n_total(); ++k) {
    feed(ds.ids()[static_cast<std::size_t>(k)]);
    feed(format_double(ds.centroids()(k, 0)));
    feed(format_double(ds.centroids()(k, 1)));
    for (Index j = 0; j < ds.n_features(); ++j) feed(format_double(ds.features()(k, j)));
    feed(ds.observed(k) ? format_double(ds.target()(k)) : "NA");
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Preprocessing

json to_json(const PreprocessModel& m) {
  json out = {{"impute_k", m.impute_k}};
  if (m.standardize) {
    const auto& s = *m.standardize;
    out["standardize"] = {{"names", s.names},
                          {"mean", std::vector<double>(s.mean.begin(), s.mean.end())},
                          {"sd", std::vector<double>(s.sd.begin(), s.sd.end())}};
  }
  json blocks = json::array();
  for (const auto& b : m.pca_blocks) {
    std::vector<std::vector<double>> load;
    for (Index r = 0; r < b.loadings.rows(); ++r) {
      std::vector<double> row(b.loadings.cols());
      for (Index c = 0; c < b.loadings.cols(); ++c) row[static_cast<std::size_t>(c)] = b.loadings(r, c);
      load.push_back(std::move(row));
    }
    blocks.push_back({{"label", b.label},
                      {"features", b.features},
                      {"center", std::vector<double>(b.center.begin(), b.center.end())},
                      {"loadings", load},
                      {"retained", b.retained},
                      {"variance_fraction", std::vector<double>(b.variance_fraction.begin(), b.variance_fraction.end())}});
  }
  out["pca_blocks"] = blocks;
  return out;
}

namespace {
Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }
}  // namespace

PreprocessModel preprocess_model_from_json(const json& j) {
  PreprocessModel m;
  m.impute_k = j.value("impute_k", 5);
  if (j.contains("standardize")) {
    const auto& s = j.at("standardize");
    m.standardize = StandardizeParams{s.at("names").get<std::vector<std::string>>(),
                                      to_vector(s.at("mean").get<std::vector<double>>()),
                                      to_vector(s.at("sd").get<std::vector<double>>())};
  }
  for (const auto& b : j.value("pca_blocks", json::array())) {
    PcaBlock block;
    block.label = b.at("label").get<std::string>();
    block.features = b.at("features").get<std::vector<std::string>>();
    block.center = to_vector(b.at("center").get<std::vector<double>>());
    const auto rows = b.at("loadings").get<std::vector<std::vector<double>>>();
    block.retained = b.at("retained").get<Index>();
    block.loadings.resize(static_cast<Index>(rows.size()), block.retained);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (Index c = 0; c < block.retained; ++c) block.loadings(static_cast<Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
    block.variance_fraction = to_vector(b.at("variance_fraction").get<std::vector<double>>());
    m.pca_blocks.push_back(std::move(block));
  }
  return m;
}

ArealDataset knn_impute(const ArealDataset& ds, int k) {
  const Index n = ds.n_total();
  const Index p = ds.n_features();
  if (k < 1) throw ValidationError("impute k must be positive");
  if (k >= n) throw ValidationError("impute k = " + std::to_string(k) + " must be smaller than the unit count");
  const Matrix& x = ds.features();
  if (!ds.has_missing_features()) return ds;

  std::vector<Index> complete;
  for (Index j = 0; j < p; ++j) {
    const Index present = (!x.col(j).array().isNaN()).count();
    if (present == 0) throw ValidationError("feature \"" + ds.feature_names()[static_cast<std::size_t>(j)] + "\" is entirely missing");
    if (present < k)
      throw ValidationError("feature \"" + ds.feature_names()[static_cast<std::size_t>(j)] + "\" has fewer than k observed values");
    if (present == n) complete.push_back(j);
  }
  if (complete.empty()) throw ValidationError("knn imputation needs at least one complete feature column");

  // Standardized complete columns; zero-variance columns carry no distance information.
  Matrix basis(n, static_cast<Index>(complete.size()));
  for (std::size_t c = 0; c < complete.size(); ++c) {
    const auto col = x.col(complete[c]);
    const double mean = col.mean();
    const double sd = n > 1 ? std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n - 1)) : 0.0;
    if (sd > 0) basis.col(static_cast<Index>(c)) = (col.array() - mean) / sd;
    else basis.col(static_cast<Index>(c)).setZero();
  }

  Matrix out = x;
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t uu) {
    const auto u = static_cast<Index>(uu);
    if (!x.row(u).array().isNaN().any()) return;
    std::vector<std::pair<double, Index>> order;
    order.reserve(static_cast<std::size_t>(n));
    for (Index v = 0; v < n; ++v)
      if (v != u) order.emplace_back((basis.row(v) - basis.row(u)).squaredNorm(), v);
    std::sort(order.begin(), order.end());
    for (Index j = 0; j < p; ++j) {
      if (!is_missing(x(u, j))) continue;
      double sum = 0.0;
      int used = 0;
      for (const auto& [dist, v] : order) {
        if (is_missing(x(v, j))) continue;
        sum += x(v, j);
        if (++used == k) break;
      }
      out(u, j) = sum / used;
    }
  });
  return ds.with_features(std::move(out), ds.feature_names());
}

std::pair<ArealDataset, PreprocessModel> standardize(const ArealDataset& ds) {
  const Index p = ds.n_features();
  StandardizeParams params{ds.feature_names(), Vector(p), Vector(p)};
  Matrix out = ds.features();
  for (Index j = 0; j < p; ++j) {
    const auto col = ds.features().col(j);
    double sum = 0.0;
    Index m = 0;
    for (Index k = 0; k < col.size(); ++k)
      if (!is_missing(col(k))) {
        sum += col(k);
        ++m;
      }
    const double mean = m > 0 ? sum / static_cast<double>(m) : 0.0;
    double ss = 0.0;
    for (Index k = 0; k < col.size(); ++k)
      if (!is_missing(col(k))) ss += (col(k) - mean) * (col(k) - mean);
    const double sd = m > 1 ? std::sqrt(ss / static_cast<double>(m - 1)) : 0.0;
    if (!(sd > 0.0))
      throw ValidationError("feature \"" + ds.feature_names()[static_cast<std::size_t>(j)] + "\" has zero variance");
    params.mean(j) = mean;
    params.sd(j) = sd;
    out.col(j) = (col.array() - mean) / sd;
  }
  PreprocessModel model;
  model.standardize = std::move(params);
  return {ds.with_features(std::move(out), ds.feature_names()), std::move(model)};
}

namespace {

Matrix apply_pca(const PcaBlock& block, const Matrix& x_block) {
  return (x_block.rowwise() - block.center.transpose()) * block.loadings;
}

ArealDataset replace_block(const ArealDataset& ds, const std::vector<Index>& cols, const Matrix& scores,
                           const std::string& label) {
  const Index first = *std::min_element(cols.begin(), cols.end());
  std::vector<std::string> names;
  std::vector<Index> kept;
  const Index p = ds.n_features();
  Matrix out(ds.n_total(), p - static_cast<Index>(cols.size()) + scores.cols());
  Index c = 0;
  for (Index j = 0; j < p; ++j) {
    if (j == first) {
      for (Index s = 0; s < scores.cols(); ++s) {
        out.col(c++) = scores.col(s);
        names.push_back(label + "_PC" + std::to_string(s + 1));
      }
    }
    if (std::find(cols.begin(), cols.end(), j) != cols.end()) continue;
    out.col(c++) = ds.features().col(j);
    names.push_back(ds.feature_names()[static_cast<std::size_t>(j)]);
  }
  return ds.with_features(std::move(out), std::move(names));
}

}  // namespace

std::pair<ArealDataset, PreprocessModel> pca_reduce(const ArealDataset& ds, const std::vector<std::string>& block,
                                                    double threshold, const std::string& label) {
  if (block.size() < 2) throw ValidationError("a PCA block needs at least 2 features");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ValidationError("PCA threshold must lie in (0, 1]");
  std::vector<Index> cols;
  for (const auto& name : block) cols.push_back(ds.feature_index(name));
  const Index n = ds.n_total();
  if (n < 2) throw ValidationError("PCA needs at least 2 units");
  Matrix xb(n, static_cast<Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) xb.col(static_cast<Index>(c)) = ds.features().col(cols[c]);
  if (xb.array().isNaN().any()) throw ValidationError("PCA block contains missing values; impute first");

  PcaBlock out;
  out.label = label;
  out.features = block;
  out.center = xb.colwise().mean().transpose();
  const Matrix centered = xb.rowwise() - out.center.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  // Eigen returns ascending order.
  const Vector values = eig.eigenvalues().reverse();
  const Matrix vectors = eig.eigenvectors().rowwise().reverse();
  const double total = values.cwiseMax(0.0).sum();
  const double tol = 1e-12 * std::max(1.0, values(0));
  Index positive = 0;
  while (positive < values.size() && values(positive) > tol) ++positive;
  if (positive == 0 || total <= 0) throw ValidationError("PCA block has zero variance");

  Index retained = 0;
  double cumulative = 0.0;
  while (retained < positive) {
    cumulative += values(retained) / total;
    ++retained;
    if (cumulative >= threshold - 1e-12) break;
  }
  out.retained = retained;
  out.loadings = vectors.leftCols(retained);
  for (Index c = 0; c < retained; ++c) {
    Index arg = 0;
    out.loadings.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.loadings(arg, c) < 0) out.loadings.col(c) *= -1.0;
  }
  out.variance_fraction = values.head(retained) / total;

  const Matrix scores = apply_pca(out, xb);
  PreprocessModel model;
  model.pca_blocks.push_back(out);
  return {replace_block(ds, cols, scores, label), std::move(model)};
}

ArealDataset apply_preprocess(const PreprocessModel& model, const ArealDataset& ds) {
  ArealDataset cur = ds;
  if (cur.has_missing_features()) cur = knn_impute(cur, model.impute_k);
  if (model.standardize) {
    const auto& s = *model.standardize;
    Matrix x = cur.features();
    for (std::size_t j = 0; j < s.names.size(); ++j) {
      const Index c = cur.feature_index(s.names[j]);
      x.col(c) = (x.col(c).array() - s.mean(static_cast<Index>(j))) / s.sd(static_cast<Index>(j));
    }
    cur = cur.with_features(std::move(x), cur.feature_names());
  }
  for (const auto& block : model.pca_blocks) {
    std::vector<Index> cols;
    for (const auto& name : block.features) cols.push_back(cur.feature_index(name));
    Matrix xb(cur.n_total(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) xb.col(static_cast<Index>(c)) = cur.features().col(cols[c]);
    cur = replace_block(cur, cols, apply_pca(block, xb), block.label);
  }
  return cur;
}

ArealDataset log_target(const ArealDataset& ds) {
  if (ds.target_scale() != TargetScale::original) throw ValidationError("target is already on the log scale");
  Vector y = ds.target();
  for (Index k = 0; k < y.size(); ++k) {
    if (!ds.observed(k)) continue;
    if (!(y(k) > 0.0))
      throw ValidationError("unit \"" + ds.ids()[static_cast<std::size_t>(k)] + "\" has non-positive target " +
                            format_double(y(k)) + "; cannot take its logarithm");
    y(k) = std::log(y(k));
  }
  return ds.with_target(std::move(y), TargetScale::log);
}

Split train_test_split(const ArealDataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train fraction must lie in (0, 1)");
  IndexList obs = ds.observed_indices();
  const auto n = static_cast<Index>(obs.size());
  if (n < 2) throw ValidationError("need at least 2 observed units to split");
  const Index n_train = std::clamp<Index>(std::llround(train_fraction * static_cast<double>(n)), 1, n - 1);
  std::mt19937_64 rng(seed);
  std::shuffle(obs.begin(), obs.end(), rng);
  IndexList train(obs.begin(), obs.begin() + n_train);
  IndexList test(obs.begin() + n_train, obs.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test), train, test};
}

ArealDataset stack_for_prediction(const ArealDataset& train, const ArealDataset& test) {
  if (train.feature_names() != test.feature_names())
    throw ValidationError("training and prediction data have different feature columns");
  const Index a = train.n_total();
  const Index b = test.n_total();
  std::vector<std::string> ids = train.ids();
  ids.insert(ids.end(), test.ids().begin(), test.ids().end());
  Coordinates c(a + b, 2);
  c << train.centroids(), test.centroids();
  Matrix x(a + b, train.n_features());
  x << train.features(), test.features();
  Vector y(a + b);
  y << train.target(), Vector::Constant(b, kMissing);
  std::vector<std::string> groups;
  if (train.has_groups() && test.has_groups()) {
    groups = train.groups();
    groups.insert(groups.end(), test.groups().begin(), test.groups().end());
  }
  return ArealDataset(std::move(ids), std::move(c), std::move(x), std::move(y), train.feature_names(),
                      train.target_scale(), std::move(groups));
}

// ---------------------------------------------------------------------------
// Simulation

void validate(const SimulationScenario& sc) {
  if (sc.n_units < 10) throw ValidationError("simulation needs at least 10 units");
  if (!(sc.rho_true >= 0.0 && sc.rho_true < 1.0))
    throw ValidationError("rho must lie in [0, 1) (rho = 1 gives an improper joint prior), got " +
                          format_double(sc.rho_true));
  if (!(sc.tau_true > 0.0)) throw ValidationError("tau must be positive");
  if (!(sc.sigma2_true > 0.0)) throw ValidationError("sigma2 must be positive");
  if (sc.n_features < 1) throw ValidationError("simulation needs at least 1 feature");
  if (sc.mean_function == MeanFunction::nonlinear && sc.n_features < 3)
    throw ValidationError("the nonlinear mean needs at least 3 features");
  if (sc.d_param < 1 || sc.d_param >= sc.n_units) throw ValidationError("D must lie in [1, n_units)");
  if (!(sc.missing_fraction >= 0.0 && sc.missing_fraction < 1.0))
    throw ValidationError("missing fraction must lie in [0, 1)");
  if (!sc.coefficients.empty() && static_cast<Index>(sc.coefficients.size()) != sc.n_features)
    throw ValidationError("coefficient count must equal the feature count");
}

double nonlinear_mean(double x1, double x2, double x3) {
  return 2.0 * std::sin(std::numbers::pi * x1) + x2 * x2 - std::abs(x3) + x1 * x2;
}

namespace {
Vector default_coefficients(Index p) {
  const double base[] = {1.0, -0.5, 0.5, 0.25};
  Vector b = Vector::Zero(p);
  for (Index j = 0; j < std::min<Index>(p, 4); ++j) b(j) = base[j];
  return b;
}
}  // namespace

SimulatedData simulate(const SimulationScenario& sc) {
  validate(sc);
  const Index n = sc.n_units;
  const Index p = sc.n_features;
  std::mt19937_64 rng(sc.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Centroids in metres, roughly one unit per square kilometre.
  constexpr double kSpacing = 1000.0;
  Coordinates c(n, 2);
  if (sc.layout == Layout::grid) {
    const auto side = static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(n))));
    for (Index k = 0; k < n; ++k) {
      c(k, 0) = kSpacing * static_cast<double>(k % side);
      c(k, 1) = kSpacing * static_cast<double>(k / side);
    }
  } else {
    std::uniform_real_distribution<double> unif(0.0, kSpacing * std::sqrt(static_cast<double>(n)));
    for (Index k = 0; k < n; ++k) {
      c(k, 0) = unif(rng);
      c(k, 1) = unif(rng);
    }
  }

  Matrix x(n, p);
  for (Index k = 0; k < n; ++k)
    for (Index j = 0; j < p; ++j) x(k, j) = normal(rng);

  Vector f(n);
  if (sc.mean_function == MeanFunction::linear) {
    const Vector beta = sc.coefficients.empty() ? default_coefficients(p) : to_vector(sc.coefficients);
    f = (x * beta).array() + sc.intercept;
  } else {
    for (Index k = 0; k < n; ++k) f(k) = sc.intercept + nonlinear_mean(x(k, 0), x(k, 1), x(k, 2));
  }

  // phi ~ N(0, (tau Q)^-1): with P (tau Q) P^T = L L^T, phi = P^T L^-T z.
  Vector phi = Vector::Zero(n);
  {
    Vector z(n);
    for (Index k = 0; k < n; ++k) z(k) = normal(rng);
    if (sc.include_spatial) {
      const auto w = knn_adjacency(c, sc.d_param);
      Eigen::SparseMatrix<double> prec = leroux_precision(w, sc.rho_true).Q * sc.tau_true;
      Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(prec);
      if (llt.info() != Eigen::Success) throw NumericalError("prior precision factorization failed");
      const Vector u = llt.matrixU().solve(z);
      phi = llt.permutationPinv() * u;
    }
  }

  Vector y(n);
  const double sd = std::sqrt(sc.sigma2_true);
  for (Index k = 0; k < n; ++k) y(k) = f(k) + phi(k) + sd * normal(rng);

  Vector stored = sc.exponentiate ? Vector(y.array().exp()) : y;
  if (sc.missing_fraction > 0.0) {
    IndexList order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto masked = static_cast<std::size_t>(std::llround(sc.missing_fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < masked; ++i) stored(order[i]) = kMissing;
  }

  const int width = static_cast<int>(std::to_string(n).size());
  std::vector<std::string> ids;
  for (Index k = 0; k < n; ++k) {
    std::ostringstream os;
    os << "U" << std::setw(width) << std::setfill('0') << k + 1;
    ids.push_back(os.str());
  }
  std::vector<std::string> names;
  for (Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));

  return {ArealDataset(std::move(ids), std::move(c), std::move(x), std::move(stored), std::move(names),
                       TargetScale::original),
          std::move(f), std::move(phi), std::move(y)};
}

json to_json(const SimulationScenario& sc) {
  return {{"n_units", sc.n_units},
          {"layout", sc.layout == Layout::grid ? "grid" : "uniform-random"},
          {"rho", sc.rho_true},
          {"tau", sc.tau_true},
          {"sigma2", sc.sigma2_true},
          {"mean_function", sc.mean_function == MeanFunction::linear ? "linear" : "nonlinear"},
          {"n_features", sc.n_features},
          {"intercept", sc.intercept},
          {"coefficients", sc.coefficients},
          {"d_param", sc.d_param},
          {"include_spatial", sc.include_spatial},
          {"missing_fraction", sc.missing_fraction},
          {"exponentiate", sc.exponentiate},
          {"seed", sc.seed}};
}

}  // namespace carforest
