#include "carforest/car_model.hpp"

#include "carforest/selected_inverse.hpp"

#include <numbers>
#include <random>
#include <unordered_map>

namespace carforest {

using SpMat = Eigen::SparseMatrix<double>;
using Llt = Eigen::SimplicialLLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>>;

HyperVector to_internal(const CarHyper& h) {
  return {std::log(h.rho / (1.0 - h.rho)), std::log(h.tau), -std::log(h.sigma2)};
}

CarHyper from_internal(const HyperVector& theta) {
  return {1.0 / (1.0 + std::exp(-theta(0))), std::exp(theta(1)), std::exp(-theta(2))};
}

std::string to_string(IntervalMode m) { return m == IntervalMode::plug_in ? "plug-in" : "grid-mixture"; }

IntervalMode interval_mode_from_string(const std::string& s) {
  if (s == "plug-in" || s == "plugin") return IntervalMode::plug_in;
  if (s == "grid-mixture" || s == "grid") return IntervalMode::grid_mixture;
  throw ValidationError("unknown interval mode '" + s + "'");
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Box on the internal scale; outside it the objective is a wall.
bool inside_box(const HyperVector& t) {
  return std::abs(t(0)) <= 10.0 && t(1) >= -15.0 && t(1) <= 20.0 && t(2) >= -15.0 && t(2) <= 25.0;
}

// Values of several matrices aligned on one shared sparsity pattern.
struct AlignedPattern {
  SpMat pattern;
  std::vector<Vector> values;

  AlignedPattern(Index n, const std::vector<std::vector<Eigen::Triplet<double>>>& parts) {
    std::vector<Eigen::Triplet<double>> all;
    for (const auto& p : parts)
      for (const auto& t : p) all.emplace_back(t.row(), t.col(), 1.0);
    pattern.resize(n, n);
    pattern.setFromTriplets(all.begin(), all.end());
    pattern.makeCompressed();
    for (const auto& p : parts) {
      SpMat m(n, n);
      m.setFromTriplets(p.begin(), p.end());
      Vector v(pattern.nonZeros());
      Index pos = 0;
      for (Index c = 0; c < pattern.outerSize(); ++c)
        for (SpMat::InnerIterator it(pattern, c); it; ++it) v(pos++) = m.coeff(it.row(), it.col());
      values.push_back(std::move(v));
    }
  }

  // sum_i w_i * part_i written into the pattern.
  SpMat& combine(const std::vector<double>& weights) {
    Eigen::Map<Vector> out(pattern.valuePtr(), pattern.nonZeros());
    out.setZero();
    for (std::size_t i = 0; i < weights.size(); ++i)
      if (weights[i] != 0.0) out += weights[i] * values[i];
    return pattern;
  }
};

}  // namespace

struct CarPosterior::Impl {
  CarPriors priors;
  bool features_in_mean;
  Index n;        // joint units
  Index p;        // features in the mean
  Index nb;       // fixed effects: 1 + p
  Index q;        // latent dimension
  Matrix x;       // joint features (n x p)
  IndexList train;
  Vector y_tilde;  // training targets minus offset
  Vector offset;
  NeighbourhoodMatrix w;
  Vector hty;      // H' y_tilde

  // Posterior precision = base + tau I_phi + tau rho (L - I)_phi + kappa H'H
  std::unique_ptr<AlignedPattern> prec;
  std::unique_ptr<AlignedPattern> qrho;  // Q(rho) = I + rho (L - I)
  SpMat laplacian_minus_identity;
  Llt prec_llt;
  Llt q_llt;
  bool analyzed = false;

  Impl(const ArealDataset& joint, const Vector& off, const NeighbourhoodMatrix& graph, CarPriors pr, bool feats)
      : priors(pr), features_in_mean(feats), offset(off), w(graph) {
    n = joint.n_total();
    if (w.size() != n) throw ValidationError("graph size does not match the joint unit count");
    if (offset.size() != n) throw ValidationError("offset length must equal the joint unit count");
    if (!offset.allFinite()) throw ValidationError("offset contains non-finite values");
    p = feats ? joint.n_features() : 0;
    nb = 1 + p;
    q = n + nb;
    x = feats ? joint.features() : Matrix(n, 0);
    if (x.array().isNaN().any()) throw ValidationError("CAR features contain missing values");
    train = joint.observed_indices();
    if (static_cast<Index>(train.size()) < nb + 2)
      throw ValidationError("CAR model needs at least " + std::to_string(nb + 2) + " observed units");
    y_tilde.resize(static_cast<Index>(train.size()));
    for (std::size_t k = 0; k < train.size(); ++k)
      y_tilde(static_cast<Index>(k)) = joint.target()(train[k]) - offset(train[k]);

    hty = Vector::Zero(q);
    for (std::size_t k = 0; k < train.size(); ++k) {
      const Index j = train[k];
      const double yk = y_tilde(static_cast<Index>(k));
      hty(j) += yk;
      hty(n) += yk;
      if (p > 0) hty.segment(n + 1, p) += yk * x.row(j).transpose();
    }

    std::vector<Eigen::Triplet<double>> base, eye, lmi, gram;
    for (Index b = 0; b < nb; ++b) base.emplace_back(n + b, n + b, 1.0 / priors.beta_variance);
    for (Index j = 0; j < n; ++j) {
      eye.emplace_back(j, j, 1.0);
      lmi.emplace_back(j, j, static_cast<double>(w.degree(j)) - 1.0);
      for (Index l : w.neighbours(j)) lmi.emplace_back(j, l, -1.0);
    }
    Matrix fixed_gram = Matrix::Zero(nb, nb);
    Vector a(nb);
    for (Index j : train) {
      a(0) = 1.0;
      if (p > 0) a.tail(p) = x.row(j).transpose();
      gram.emplace_back(j, j, 1.0);
      for (Index b = 0; b < nb; ++b) {
        gram.emplace_back(j, n + b, a(b));
        gram.emplace_back(n + b, j, a(b));
      }
      fixed_gram += a * a.transpose();
    }
    for (Index r = 0; r < nb; ++r)
      for (Index c = 0; c < nb; ++c) gram.emplace_back(n + r, n + c, fixed_gram(r, c));
    prec = std::make_unique<AlignedPattern>(q, std::vector{base, eye, lmi, gram});
    qrho = std::make_unique<AlignedPattern>(n, std::vector{eye, lmi});
    laplacian_minus_identity.resize(n, n);
    laplacian_minus_identity.setFromTriplets(lmi.begin(), lmi.end());
  }

  void ensure_analyzed() {
    if (analyzed) return;
    prec_llt.analyzePattern(prec->pattern);
    q_llt.analyzePattern(qrho->pattern);
    analyzed = true;
  }

  bool factorize(const HyperVector& theta) {
    ensure_analyzed();
    const CarHyper h = from_internal(theta);
    const double kappa = std::exp(theta(2));
    prec_llt.factorize(prec->combine({1.0, h.tau, h.tau * h.rho, kappa}));
    if (prec_llt.info() != Eigen::Success) return false;
    q_llt.factorize(qrho->combine({1.0, h.rho}));
    return q_llt.info() == Eigen::Success;
  }

  // Linear predictor H mu for training units (without the offset).
  Vector apply_h(const Vector& mu) const {
    Vector out(static_cast<Index>(train.size()));
    for (std::size_t k = 0; k < train.size(); ++k) {
      const Index j = train[k];
      double v = mu(j) + mu(n);
      if (p > 0) v += x.row(j).dot(mu.segment(n + 1, p));
      out(static_cast<Index>(k)) = v;
    }
    return out;
  }

  struct Evaluation {
    double log_ml;
    Vector mu;
  };

  std::optional<Evaluation> evaluate(const HyperVector& theta) {
    if (!factorize(theta)) return std::nullopt;
    const CarHyper h = from_internal(theta);
    const double kappa = std::exp(theta(2));
    const auto k = static_cast<double>(train.size());
    Vector mu = prec_llt.solve(kappa * hty);
    const Vector resid = y_tilde - apply_h(mu);
    const Vector phi = mu.head(n);
    const SpMat& q_mat = qrho->pattern;
    const double quad = h.tau * phi.dot(q_mat * phi) + mu.tail(nb).squaredNorm() / priors.beta_variance;
    const double log_det_prior = static_cast<double>(nb) * std::log(1.0 / priors.beta_variance) +
                                 static_cast<double>(n) * theta(1) + log_determinant(q_llt);
    const double log_ml = -0.5 * k * kLog2Pi + 0.5 * k * theta(2) - 0.5 * kappa * resid.squaredNorm() +
                          0.5 * log_det_prior - 0.5 * quad - 0.5 * log_determinant(prec_llt);
    if (!std::isfinite(log_ml)) return std::nullopt;
    return Evaluation{log_ml, std::move(mu)};
  }

  double log_prior(const HyperVector& t) const {
    const double v = priors.logit_rho_variance;
    const double d = t(0) - priors.logit_rho_mean;
    const double a = priors.precision_shape;
    const double b = priors.precision_rate;
    auto log_gamma_density = [&](double th) { return a * std::log(b) - std::lgamma(a) + a * th - b * std::exp(th); };
    return -0.5 * std::log(2.0 * std::numbers::pi * v) - d * d / (2.0 * v) + log_gamma_density(t(1)) +
           log_gamma_density(t(2));
  }

  // Columns of the posterior covariance for the fixed effects (q x nb).
  Matrix fixed_columns() {
    Matrix e = Matrix::Zero(q, nb);
    for (Index b = 0; b < nb; ++b) e(n + b, b) = 1.0;
    return prec_llt.solve(e);
  }

  // Var(a_j' latent) for every joint unit, a_j selecting phi_j, beta0 and x_j.
  Vector eta_variance(const SelectedInverse<double>& sigma, const Matrix& fixed_cols) const {
    const Matrix sigma_bb = fixed_cols.bottomRows(nb);
    Vector out(n);
    Vector a(nb);
    for (Index j = 0; j < n; ++j) {
      a(0) = 1.0;
      if (p > 0) a.tail(p) = x.row(j).transpose();
      out(j) = sigma(j, j) + 2.0 * fixed_cols.row(j).dot(a) + a.dot(sigma_bb * a);
    }
    return out;
  }

  Vector eta_mean(const Vector& mu) const {
    Vector out = mu.head(n) + offset;
    out.array() += mu(n);
    if (p > 0) out += x * mu.segment(n + 1, p);
    return out;
  }
};

CarPosterior::CarPosterior(const ArealDataset& joint, const Vector& offset, const NeighbourhoodMatrix& w,
                           CarPriors priors, bool features_in_mean)
    : impl_(std::make_unique<Impl>(joint, offset, w, priors, features_in_mean)) {}
CarPosterior::~CarPosterior() = default;
CarPosterior::CarPosterior(CarPosterior&&) noexcept = default;
CarPosterior& CarPosterior::operator=(CarPosterior&&) noexcept = default;

Index CarPosterior::n_units() const { return impl_->n; }
Index CarPosterior::n_fixed() const { return impl_->nb; }
Index CarPosterior::n_latent() const { return impl_->q; }
const IndexList& CarPosterior::training() const { return impl_->train; }

double CarPosterior::log_marginal_likelihood(const HyperVector& theta) {
  auto e = impl_->evaluate(theta);
  return e ? e->log_ml : -std::numeric_limits<double>::infinity();
}

double CarPosterior::log_prior(const HyperVector& theta) const { return impl_->log_prior(theta); }

double CarPosterior::log_marginal_posterior(const HyperVector& theta) {
  return log_marginal_likelihood(theta) + log_prior(theta);
}

HyperVector CarPosterior::gradient(const HyperVector& theta) {
  auto& m = *impl_;
  auto e = m.evaluate(theta);
  if (!e) throw NumericalError("gradient requested outside the feasible hyperparameter region");
  const CarHyper h = from_internal(theta);
  const double kappa = std::exp(theta(2));
  const Index n = m.n;
  const Vector& mu = e->mu;
  const Vector phi = mu.head(n);
  const Vector resid = m.y_tilde - m.apply_h(mu);

  const SelectedInverse<double> sigma(m.prec_llt);
  const SelectedInverse<double> q_inv(m.q_llt);
  const Matrix fixed_cols = m.fixed_columns();
  const Vector eta_var = m.eta_variance(sigma, fixed_cols);

  double tr_sigma_gram = 0.0;
  for (Index j : m.train) tr_sigma_gram += eta_var(j);

  double tr_sigma_lmi = 0.0;  // tr(Sigma_phiphi (L - I))
  double tr_qinv_lmi = 0.0;   // tr(Q^-1 (L - I))
  for (Index j = 0; j < n; ++j) {
    const double dm1 = static_cast<double>(m.w.degree(j)) - 1.0;
    tr_sigma_lmi += dm1 * sigma(j, j);
    tr_qinv_lmi += dm1 * q_inv(j, j);
    for (Index l : m.w.neighbours(j)) {
      tr_sigma_lmi -= sigma(j, l);
      tr_qinv_lmi -= q_inv(j, l);
    }
  }
  double tr_sigma_i = 0.0;
  for (Index j = 0; j < n; ++j) tr_sigma_i += sigma(j, j);
  const double tr_sigma_q = tr_sigma_i + h.rho * tr_sigma_lmi;

  const double phi_q_phi = phi.dot(m.qrho->pattern * phi);
  const double phi_lmi_phi = phi.dot(m.laplacian_minus_identity * phi);
  const auto k = static_cast<double>(m.train.size());

  HyperVector g;
  g(0) = h.rho * (1.0 - h.rho) * (0.5 * tr_qinv_lmi - 0.5 * h.tau * phi_lmi_phi - 0.5 * h.tau * tr_sigma_lmi);
  g(1) = 0.5 * static_cast<double>(n) - 0.5 * h.tau * phi_q_phi - 0.5 * h.tau * tr_sigma_q;
  g(2) = 0.5 * k - 0.5 * kappa * resid.squaredNorm() - 0.5 * kappa * tr_sigma_gram;

  const auto& pr = m.priors;
  g(0) += -(theta(0) - pr.logit_rho_mean) / pr.logit_rho_variance;
  g(1) += pr.precision_shape - pr.precision_rate * std::exp(theta(1));
  g(2) += pr.precision_shape - pr.precision_rate * std::exp(theta(2));
  return g;
}

LatentState CarPosterior::latent(const HyperVector& theta) {
  auto& m = *impl_;
  auto e = m.evaluate(theta);
  if (!e) throw NumericalError("posterior precision is not positive definite at the requested hyperparameters");
  const SelectedInverse<double> sigma(m.prec_llt);
  const Matrix fixed_cols = m.fixed_columns();
  LatentState s;
  s.variance = sigma.diagonal();
  s.eta_mean = m.eta_mean(e->mu);
  s.eta_var = m.eta_variance(sigma, fixed_cols);
  s.mean = std::move(e->mu);
  return s;
}

SpMat CarPosterior::posterior_precision(const HyperVector& theta) {
  const CarHyper h = from_internal(theta);
  return impl_->prec->combine({1.0, h.tau, h.tau * h.rho, std::exp(theta(2))});
}

std::vector<HyperVector> CarPosterior::starting_points() const {
  const auto& m = *impl_;
  const auto k = static_cast<Index>(m.train.size());
  Matrix design(k, m.nb);
  for (Index i = 0; i < k; ++i) {
    design(i, 0) = 1.0;
    if (m.p > 0) design.row(i).tail(m.p) = m.x.row(m.train[static_cast<std::size_t>(i)]);
  }
  const Vector coef = design.colPivHouseholderQr().solve(m.y_tilde);
  double v = (m.y_tilde - design * coef).squaredNorm() / static_cast<double>(k);
  if (!(v > 1e-8)) v = 1e-8;
  auto logit = [](double r) { return std::log(r / (1.0 - r)); };
  // (rho, share of variance given to phi, share given to noise)
  const double spec[4][3] = {{0.2, 0.5, 0.5}, {0.8, 0.5, 0.5}, {0.5, 0.8, 0.2}, {0.5, 0.2, 0.8}};
  std::vector<HyperVector> out;
  for (const auto& s : spec) out.emplace_back(logit(s[0]), std::log(1.0 / (s[1] * v)), std::log(1.0 / (s[2] * v)));
  return out;
}

// ---------------------------------------------------------------------------

Index CarFit::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return static_cast<Index>(i);
  throw ValidationError("unit \"" + id + "\" is not part of the fitted graph");
}

namespace {

// Negative Hessian of the log posterior by central differences.
Eigen::Matrix3d negative_hessian(CarPosterior& post, const HyperVector& mode, double h = 1e-3) {
  Eigen::Matrix3d out;
  const double f0 = post.log_marginal_posterior(mode);
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      HyperVector pp = mode, pm = mode, mp = mode, mm = mode;
      double v;
      if (i == j) {
        pp(i) += h;
        mm(i) -= h;
        v = (post.log_marginal_posterior(pp) - 2.0 * f0 + post.log_marginal_posterior(mm)) / (h * h);
      } else {
        pp(i) += h, pp(j) += h;
        pm(i) += h, pm(j) -= h;
        mp(i) -= h, mp(j) += h;
        mm(i) -= h, mm(j) -= h;
        v = (post.log_marginal_posterior(pp) - post.log_marginal_posterior(pm) - post.log_marginal_posterior(mp) +
             post.log_marginal_posterior(mm)) /
            (4.0 * h * h);
      }
      out(i, j) = out(j, i) = -v;
    }
  }
  return out;
}

// Negative Hessian from forward differences of the analytic gradient.
Eigen::Matrix3d hessian_from_gradient(CarPosterior& post, const HyperVector& x, const HyperVector& g) {
  constexpr double h = 1e-4;
  Eigen::Matrix3d out;
  for (int i = 0; i < 3; ++i) {
    HyperVector xp = x;
    xp(i) += h;
    out.col(i) = -(post.gradient(xp) - g) / h;
  }
  return 0.5 * (out + out.transpose());
}

// Half the Newton decrement: the predicted gain of a full Newton step.
// Infinite when the curvature is not negative definite.
double newton_decrement(CarPosterior& post, const HyperVector& x, const HyperVector& g) {
  Eigen::LLT<Eigen::Matrix3d> llt(hessian_from_gradient(post, x, g));
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  return 0.5 * g.dot(llt.solve(g));
}

// Damped Newton ascent step; returns false when no step improves.
bool newton_step(CarPosterior& post, HyperVector& x, double& fx, const HyperVector& g) {
  Eigen::LLT<Eigen::Matrix3d> llt(hessian_from_gradient(post, x, g));
  if (llt.info() != Eigen::Success) return false;
  const HyperVector dir = llt.solve(g);
  for (double t = 1.0; t > 1e-3; t *= 0.5) {
    const HyperVector cand = x + t * dir;
    const double fc = post.log_marginal_posterior(cand);
    if (std::isfinite(fc) && fc > fx) {
      x = cand;
      fx = fc;
      return true;
    }
  }
  return false;
}

std::vector<CarFit::GridPoint> build_grid(CarPosterior& post, const HyperVector& mode, const CarFitOptions& opt) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(negative_hessian(post, mode));
  // Directions with little curvature get a bounded standard deviation.
  const Eigen::Vector3d sd = eig.eigenvalues().cwiseMax(0.25).cwiseSqrt().cwiseInverse().cwiseMax(0.02);
  const Eigen::Matrix3d axes = eig.eigenvectors();
  const int m = std::max(1, opt.grid_points);
  std::vector<double> z(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    z[static_cast<std::size_t>(i)] = m == 1 ? 0.0 : -opt.grid_span + 2.0 * opt.grid_span * i / (m - 1);

  std::vector<std::pair<HyperVector, double>> pts;
  double best = -std::numeric_limits<double>::infinity();
  for (double a : z)
    for (double b : z)
      for (double c : z) {
        const HyperVector t = mode + axes * Eigen::Vector3d(a * sd(0), b * sd(1), c * sd(2));
        const double lp = post.log_marginal_posterior(t);
        if (!std::isfinite(lp)) continue;
        pts.emplace_back(t, lp);
        best = std::max(best, lp);
      }
  if (pts.empty()) throw NumericalError("hyperparameter grid has no feasible point");
  double total = 0.0;
  for (auto& [t, lp] : pts) total += (lp = std::exp(lp - best));
  std::stable_sort(pts.begin(), pts.end(), [](const auto& l, const auto& r) { return l.second > r.second; });

  // Keep the heaviest points carrying 99.9% of the mass.
  std::vector<CarFit::GridPoint> grid;
  double kept = 0.0;
  for (const auto& [t, wgt] : pts) {
    if (kept >= 0.999 * total) break;
    kept += wgt;
    CarFit::GridPoint g;
    g.theta = t;
    g.weight = wgt;
    g.sigma2 = from_internal(t).sigma2;
    auto s = post.latent(t);
    g.eta_mean = std::move(s.eta_mean);
    g.eta_var = std::move(s.eta_var);
    grid.push_back(std::move(g));
  }
  for (auto& g : grid) g.weight /= kept;
  return grid;
}

nlohmann::json hyper_json(const HyperVector& t) {
  const CarHyper h = from_internal(t);
  return {{"rho", h.rho}, {"tau", h.tau}, {"sigma2", h.sigma2}};
}

}  // namespace

CarFit fit_car(const ArealDataset& joint, const Vector& offset, const NeighbourhoodMatrix& w_joint,
               const CarPriors& priors, bool features_in_mean, const CarFitOptions& options) {
  CarPosterior post(joint, offset, w_joint, priors, features_in_mean);
  CarFit fit;
  fit.trace = nlohmann::json::array();

  HyperVector mode;
  if (options.fixed_hyper) {
    mode = to_internal(*options.fixed_hyper);
    fit.optimized = false;
  } else {
    auto objective = [&](const HyperVector& t) {
      return inside_box(t) ? -post.log_marginal_posterior(t) : std::numeric_limits<double>::infinity();
    };
    NelderMeadResult<3> best;
    best.value = std::numeric_limits<double>::infinity();
    for (const auto& start : post.starting_points()) {
      auto r = nelder_mead<3>(objective, start, options.optimizer);
      fit.evaluations += r.evaluations;
      fit.trace.push_back({{"start", hyper_json(start)},
                           {"end", hyper_json(r.x)},
                           {"log_posterior", -r.value},
                           {"evaluations", r.evaluations},
                           {"converged", r.converged}});
      if (r.value < best.value) best = r;
    }
    if (!std::isfinite(best.value)) throw NumericalError("CAR optimizer found no feasible point; trace: " + fit.trace.dump());
    HyperVector x = best.x;
    double fx = -best.value;
    HyperVector grad = post.gradient(x);
    double decrement = newton_decrement(post, x, grad);
    NelderMeadOptions refine = options.optimizer;
    refine.initial_step = 0.25;
    int restarts = 0;
    for (int polish = 0; polish < 8 && !(decrement <= options.gradient_tolerance); ++polish) {
      if (newton_step(post, x, fx, grad)) {
        grad = post.gradient(x);
        decrement = newton_decrement(post, x, grad);
        fit.trace.push_back({{"newton", polish + 1}, {"end", hyper_json(x)}, {"log_posterior", fx}});
        continue;
      }
      if (restarts >= options.max_restarts) break;
      ++restarts;
      auto r = nelder_mead<3>(objective, x, refine);
      fit.evaluations += r.evaluations;
      fit.trace.push_back({{"restart", restarts},
                           {"end", hyper_json(r.x)},
                           {"log_posterior", -r.value},
                           {"evaluations", r.evaluations},
                           {"converged", r.converged}});
      if (-r.value >= fx) {
        x = r.x;
        fx = -r.value;
      }
      grad = post.gradient(x);
      decrement = newton_decrement(post, x, grad);
      refine.initial_step *= 0.5;
    }
    if (!(decrement <= options.gradient_tolerance))
      throw NumericalError("CAR optimizer did not converge (Newton decrement " + format_double(decrement) +
                           "); trace: " + fit.trace.dump());
    best.x = x;
    mode = best.x;
    fit.gradient = grad;
  }

  fit.theta = mode;
  fit.hyper = from_internal(mode);
  fit.log_marginal_posterior = post.log_marginal_posterior(mode);
  if (!std::isfinite(fit.log_marginal_posterior))
    throw NumericalError("posterior precision factorization failed at the selected hyperparameters");
  LatentState s = post.latent(mode);
  fit.latent_mean = std::move(s.mean);
  fit.latent_variance = std::move(s.variance);
  fit.eta_mean = std::move(s.eta_mean);
  fit.eta_var = std::move(s.eta_var);
  fit.features_in_mean = features_in_mean;
  fit.ids = joint.ids();
  fit.training = post.training();
  fit.offset = offset;
  fit.d_param = w_joint.d_param();
  fit.posterior_draws = options.posterior_draws;
  fit.seed = options.seed;
  if (options.interval_mode == IntervalMode::grid_mixture) fit.grid = build_grid(post, mode, options);
  return fit;
}

PredictionSet predict_car(const CarFit& fit, const IndexList& units, IntervalMode mode, TargetScale scale) {
  const auto m = static_cast<Index>(units.size());
  std::vector<std::string> ids;
  for (Index u : units) {
    if (u < 0 || u >= fit.n_units()) throw ValidationError("unit index " + std::to_string(u) + " is not in the fit");
    ids.push_back(fit.ids[static_cast<std::size_t>(u)]);
  }
  if (mode == IntervalMode::plug_in) {
    Vector mean(m), var(m);
    for (Index i = 0; i < m; ++i) {
      const Index u = units[static_cast<std::size_t>(i)];
      mean(i) = fit.eta_mean(u);
      var(i) = fit.eta_var(u) + fit.hyper.sigma2;
    }
    return gaussian_predictions(std::move(ids), mean, var, scale);
  }

  if (fit.grid.empty()) throw ValidationError("fit has no hyperparameter grid; refit with grid-mixture intervals");
  PredictionSet out;
  out.ids = std::move(ids);
  out.scale = scale;
  out.point = Vector::Zero(m);
  out.variance = Vector::Zero(m);
  Vector second = Vector::Zero(m);
  for (const auto& g : fit.grid)
    for (Index i = 0; i < m; ++i) {
      const Index u = units[static_cast<std::size_t>(i)];
      const double mu = g.eta_mean(u);
      out.point(i) += g.weight * mu;
      second(i) += g.weight * (g.eta_var(u) + g.sigma2 + mu * mu);
    }
  out.variance = (second.array() - out.point.array().square()).max(0.0).matrix();

  std::vector<double> weights;
  for (const auto& g : fit.grid) weights.push_back(g.weight);
  std::mt19937_64 rng(fit.seed);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  const int s = std::max(2, fit.posterior_draws);
  Matrix draws(m, s);
  for (int d = 0; d < s; ++d) {
    const auto& g = fit.grid[pick(rng)];
    for (Index i = 0; i < m; ++i) {
      const Index u = units[static_cast<std::size_t>(i)];
      draws(i, d) = g.eta_mean(u) + std::sqrt(g.eta_var(u) + g.sigma2) * normal(rng);
    }
  }
  out.lower.resize(m);
  out.upper.resize(m);
  for (Index i = 0; i < m; ++i) {
    const Vector row = draws.row(i).transpose();
    out.lower(i) = quantile_type7(row, 0.025);
    out.upper(i) = quantile_type7(row, 0.975);
  }
  return out;
}

nlohmann::json to_json(const CarFit& fit) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.begin(), v.end()); };
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& g : fit.grid) grid.push_back({{"hyper", hyper_json(g.theta)}, {"weight", g.weight}});
  const Index n = fit.n_units();
  return {{"hyper", {{"rho", fit.hyper.rho}, {"tau", fit.hyper.tau}, {"sigma2", fit.hyper.sigma2}}},
          {"internal", {{"logit_rho", fit.theta(0)}, {"log_tau", fit.theta(1)}, {"log_precision", fit.theta(2)}}},
          {"diagnostics",
           {{"log_marginal_posterior", fit.log_marginal_posterior},
            {"optimizer_evaluations", fit.evaluations},
            {"gradient", vec(fit.gradient)},
            {"optimized", fit.optimized},
            {"trace", fit.trace}}},
          {"features_in_mean", fit.features_in_mean},
          {"d_param", fit.d_param},
          {"ids", fit.ids},
          {"training", fit.training},
          {"offset", vec(fit.offset)},
          {"beta0", fit.beta0()},
          {"beta", vec(fit.beta())},
          {"phi_mean", vec(fit.latent_mean.head(n))},
          {"phi_variance", vec(fit.latent_variance.head(n))},
          {"eta_mean", vec(fit.eta_mean)},
          {"eta_variance", vec(fit.eta_var)},
          {"grid", grid}};
}

}  // namespace carforest
