#include "carforest/prediction.hpp"

#include <fstream>
#include <sstream>

namespace carforest {

PredictionSet PredictionSet::subset(const IndexList& rows) const {
  PredictionSet out;
  out.scale = scale;
  const auto m = static_cast<Index>(rows.size());
  out.point.resize(m);
  out.lower.resize(m);
  out.upper.resize(m);
  if (variance.size() > 0) out.variance.resize(m);
  for (Index i = 0; i < m; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    out.ids.push_back(ids[static_cast<std::size_t>(r)]);
    out.point(i) = point(r);
    out.lower(i) = lower(r);
    out.upper(i) = upper(r);
    if (variance.size() > 0) out.variance(i) = variance(r);
  }
  return out;
}

PredictionSet gaussian_predictions(std::vector<std::string> ids, const Vector& mean, const Vector& variance,
                                   TargetScale scale) {
  PredictionSet out;
  out.ids = std::move(ids);
  out.point = mean;
  out.variance = variance;
  const Vector half = kZ975 * variance.cwiseMax(0.0).cwiseSqrt();
  out.lower = mean - half;
  out.upper = mean + half;
  out.scale = scale;
  return out;
}

void write_predictions_csv(const PredictionSet& p, std::ostream& out) {
  out << "id,point,lower95,upper95\n";
  for (Index i = 0; i < p.size(); ++i)
    out << p.ids[static_cast<std::size_t>(i)] << ',' << format_double(p.point(i)) << ','
        << format_double(p.lower(i)) << ',' << format_double(p.upper(i)) << '\n';
}

void write_predictions_csv(const PredictionSet& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write \"" + path + "\"");
  write_predictions_csv(p, out);
}

PredictionSet read_predictions_csv(const std::string& path, TargetScale scale) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open \"" + path + "\"");
  std::string line;
  std::getline(in, line);
  if (line.rfind("id,point,lower95,upper95", 0) != 0) throw ParseError("unexpected prediction header", 1);
  std::vector<std::string> ids;
  std::vector<double> pt, lo, up;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, a, b, c;
    if (!std::getline(ss, id, ',') || !std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
      throw ParseError("expected 4 fields", line_no);
    ids.push_back(id);
    try {
      pt.push_back(std::stod(a));
      lo.push_back(std::stod(b));
      up.push_back(std::stod(c));
    } catch (const std::exception&) {
      throw ParseError("non-numeric prediction value", line_no);
    }
  }
  PredictionSet p;
  p.ids = std::move(ids);
  p.point = Eigen::Map<Vector>(pt.data(), static_cast<Index>(pt.size()));
  p.lower = Eigen::Map<Vector>(lo.data(), static_cast<Index>(lo.size()));
  p.upper = Eigen::Map<Vector>(up.data(), static_cast<Index>(up.size()));
  p.scale = scale;
  return p;
}

nlohmann::json to_json(const PredictionSet& p) {
  nlohmann::json units = nlohmann::json::array();
  for (Index i = 0; i < p.size(); ++i) {
    nlohmann::json u = {{"id", p.ids[static_cast<std::size_t>(i)]},
                        {"point", p.point(i)},
                        {"lower95", p.lower(i)},
                        {"upper95", p.upper(i)}};
    if (p.variance.size() > 0) u["variance"] = p.variance(i);
    units.push_back(std::move(u));
  }
  return {{"scale", to_string(p.scale)}, {"units", units}};
}

}  // namespace carforest
