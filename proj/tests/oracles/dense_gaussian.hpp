#pragma once

// Dense covariance-form reference for the Gaussian CAR regression. Builds the
// prior covariance of (phi, beta0, beta) explicitly and conditions on the
// training observations with textbook Gaussian formulas. The arithmetic type
// is a template parameter so the reference can run in extended precision.

#include "carforest/car_model.hpp"

#include <Eigen/Dense>

namespace oracle {

using carforest::Index;
using carforest::Vector;

template <typename Scalar>
struct DenseCarT {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vec mean;        // latent posterior mean
  Mat covariance;  // latent posterior covariance
  Vec eta_mean;    // per joint unit, including offset
  Vec eta_var;
  Scalar log_marginal_likelihood = 0;
};

template <typename Scalar>
DenseCarT<Scalar> dense_car_t(const carforest::ArealDataset& joint, const Vector& offset_in,
                              const carforest::NeighbourhoodMatrix& w, const carforest::CarPriors& priors,
                              bool features_in_mean, const carforest::CarHyper& h) {
  using Mat = typename DenseCarT<Scalar>::Mat;
  using Vec = typename DenseCarT<Scalar>::Vec;
  const Index n = joint.n_total();
  const Index p = features_in_mean ? joint.n_features() : 0;
  const Index q = n + 1 + p;
  const Scalar rho = h.rho, tau = h.tau, sigma2 = h.sigma2;
  const Vec offset = offset_in.cast<Scalar>();

  Mat wd = Mat::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j : w.neighbours(i)) wd(i, j) = 1;
  const Mat d = wd.rowwise().sum().asDiagonal();
  const Mat qmat = rho * (d - wd) + (Scalar(1) - rho) * Mat::Identity(n, n);

  Mat prior = Mat::Zero(q, q);
  prior.topLeftCorner(n, n) = (tau * qmat).inverse();
  prior.bottomRightCorner(1 + p, 1 + p) = Scalar(priors.beta_variance) * Mat::Identity(1 + p, 1 + p);

  Mat a = Mat::Zero(n, q);
  for (Index j = 0; j < n; ++j) {
    a(j, j) = 1;
    a(j, n) = 1;
    for (Index c = 0; c < p; ++c) a(j, n + 1 + c) = joint.features()(j, c);
  }
  const auto train = joint.observed_indices();
  const auto k = static_cast<Index>(train.size());
  Mat hmat(k, q);
  Vec y(k);
  for (Index r = 0; r < k; ++r) {
    const Index t = train[static_cast<std::size_t>(r)];
    hmat.row(r) = a.row(t);
    y(r) = Scalar(joint.target()(t)) - offset(t);
  }
  const Mat s = hmat * prior * hmat.transpose() + sigma2 * Mat::Identity(k, k);
  const Eigen::LDLT<Mat> sl(s);
  const Mat gain = prior * hmat.transpose();

  DenseCarT<Scalar> out;
  out.mean = gain * sl.solve(y);
  out.covariance = prior - gain * sl.solve(gain.transpose());
  out.eta_mean = a * out.mean + offset;
  out.eta_var = (a * out.covariance * a.transpose()).diagonal();
  const Scalar log_det = sl.vectorD().array().log().sum();
  out.log_marginal_likelihood = -Scalar(0.5) * Scalar(k) * std::log(Scalar(2) * Scalar(M_PI)) - Scalar(0.5) * log_det -
                                Scalar(0.5) * y.dot(sl.solve(y));
  return out;
}

struct DenseCar {
  Vector mean;
  carforest::Matrix covariance;
  Vector eta_mean;
  Vector eta_var;
  double log_marginal_likelihood = 0.0;
};

template <typename Scalar = double>
DenseCar dense_car(const carforest::ArealDataset& joint, const Vector& offset, const carforest::NeighbourhoodMatrix& w,
                   const carforest::CarPriors& priors, bool features_in_mean, const carforest::CarHyper& h) {
  const auto o = dense_car_t<Scalar>(joint, offset, w, priors, features_in_mean, h);
  return {o.mean.template cast<double>(), o.covariance.template cast<double>(), o.eta_mean.template cast<double>(),
          o.eta_var.template cast<double>(), static_cast<double>(o.log_marginal_likelihood)};
}

}  // namespace oracle
