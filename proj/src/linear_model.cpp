#include "carforest/linear_model.hpp"

namespace carforest {

namespace {
Matrix design(const Matrix& x, const IndexList& rows) {
  Matrix d(static_cast<Index>(rows.size()), x.cols() + 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d(static_cast<Index>(i), 0) = 1.0;
    d.row(static_cast<Index>(i)).tail(x.cols()) = x.row(rows[i]);
  }
  return d;
}
}  // namespace

LmFit fit_lm(const ArealDataset& train) {
  const IndexList rows = train.observed_indices();
  const auto k = static_cast<Index>(rows.size());
  const Index p = train.n_features();
  if (k <= p + 1)
    throw ValidationError("linear model needs more than p + 1 = " + std::to_string(p + 1) + " observations, got " +
                          std::to_string(k));
  const Matrix x = design(train.features(), rows);
  if (x.array().isNaN().any()) throw ValidationError("linear model features contain missing values");
  Vector y(k);
  for (Index i = 0; i < k; ++i) y(i) = train.target()(rows[static_cast<std::size_t>(i)]);

  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) {
    const Index r = qr.rank();
    const Matrix rm = qr.matrixR().topRows(r).template triangularView<Eigen::Upper>();
    const auto& perm = qr.colsPermutation().indices();
    std::vector<bool> involved(static_cast<std::size_t>(x.cols()), false);
    for (Index c = r; c < x.cols(); ++c) {
      const Vector coef = rm.topLeftCorner(r, r).triangularView<Eigen::Upper>().solve(rm.col(c));
      const double scale = std::max(1.0, coef.cwiseAbs().maxCoeff());
      involved[static_cast<std::size_t>(perm(c))] = true;
      for (Index j = 0; j < r; ++j)
        if (std::abs(coef(j)) > 1e-8 * scale) involved[static_cast<std::size_t>(perm(j))] = true;
    }
    std::string names;
    for (Index col = 0; col < x.cols(); ++col) {
      if (!involved[static_cast<std::size_t>(col)]) continue;
      if (!names.empty()) names += ", ";
      names += col == 0 ? std::string("(intercept)") : train.feature_names()[static_cast<std::size_t>(col - 1)];
    }
    throw ValidationError("rank-deficient design; linearly dependent columns: " + names);
  }
  const Vector coef = qr.solve(y);
  LmFit fit;
  fit.beta0 = coef(0);
  fit.beta = coef.tail(p);
  const Vector resid = y - x * coef;
  fit.sigma2 = resid.squaredNorm() / static_cast<double>(k);
  const Matrix xtx_inv = (x.transpose() * x).ldlt().solve(Matrix::Identity(p + 1, p + 1));
  fit.covariance = fit.sigma2 * 0.5 * (xtx_inv + xtx_inv.transpose());
  fit.feature_names = train.feature_names();
  return fit;
}

PredictionSet predict_lm(const LmFit& fit, const ArealDataset& test) {
  if (test.n_features() != fit.beta.size())
    throw ValidationError("test data has " + std::to_string(test.n_features()) + " features, model expects " +
                          std::to_string(fit.beta.size()));
  const Index n = test.n_total();
  Vector mean(n);
  Vector var(n);
  Vector a(fit.beta.size() + 1);
  for (Index r = 0; r < n; ++r) {
    a(0) = 1.0;
    a.tail(fit.beta.size()) = test.features().row(r).transpose();
    mean(r) = fit.beta0 + test.features().row(r).dot(fit.beta);
    var(r) = fit.sigma2 + a.dot(fit.covariance * a);
  }
  return gaussian_predictions(test.ids(), mean, var, test.target_scale());
}

nlohmann::json to_json(const LmFit& fit) {
  std::vector<std::vector<double>> cov;
  for (Index r = 0; r < fit.covariance.rows(); ++r) {
    std::vector<double> row(fit.covariance.cols());
    for (Index c = 0; c < fit.covariance.cols(); ++c) row[static_cast<std::size_t>(c)] = fit.covariance(r, c);
    cov.push_back(std::move(row));
  }
  return {{"beta0", fit.beta0},
          {"beta", std::vector<double>(fit.beta.begin(), fit.beta.end())},
          {"sigma2", fit.sigma2},
          {"covariance", cov},
          {"feature_names", fit.feature_names}};
}

LmFit lm_fit_from_json(const nlohmann::json& j) {
  LmFit fit;
  fit.beta0 = j.at("beta0").get<double>();
  const auto b = j.at("beta").get<std::vector<double>>();
  fit.beta = Eigen::Map<const Vector>(b.data(), static_cast<Index>(b.size()));
  fit.sigma2 = j.at("sigma2").get<double>();
  const auto cov = j.at("covariance").get<std::vector<std::vector<double>>>();
  fit.covariance.resize(static_cast<Index>(cov.size()), static_cast<Index>(cov.size()));
  for (std::size_t r = 0; r < cov.size(); ++r)
    for (std::size_t c = 0; c < cov.size(); ++c) fit.covariance(static_cast<Index>(r), static_cast<Index>(c)) = cov[r][c];
  fit.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  return fit;
}

}  // namespace carforest
