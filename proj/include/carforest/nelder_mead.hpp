#pragma once

#include "carforest/core.hpp"

#include <array>
#include <functional>
#include <limits>

namespace carforest {

struct NelderMeadOptions {
  double initial_step = 1.0;
  double x_tolerance = 1e-4;
  double f_tolerance = 1e-7;
  int max_evaluations = 600;
};

template <int Dim>
struct NelderMeadResult {
  Eigen::Matrix<double, Dim, 1> x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Minimizes f with the standard Nelder-Mead simplex (reflection 1,
/// expansion 2, contraction 1/2, shrink 1/2). Non-finite values act as walls.
template <int Dim, typename F>
NelderMeadResult<Dim> nelder_mead(F&& f, const Eigen::Matrix<double, Dim, 1>& start,
                                  const NelderMeadOptions& opt = {}) {
  using Point = Eigen::Matrix<double, Dim, 1>;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  NelderMeadResult<Dim> out;
  auto eval = [&](const Point& x) {
    ++out.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : kInf;
  };

  std::array<Point, Dim + 1> pts;
  std::array<double, Dim + 1> vals;
  pts[0] = start;
  vals[0] = eval(start);
  for (int i = 0; i < Dim; ++i) {
    pts[i + 1] = start;
    pts[i + 1](i) += opt.initial_step;
    vals[i + 1] = eval(pts[i + 1]);
  }

  std::array<int, Dim + 1> order;
  while (true) {
    for (int i = 0; i <= Dim; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    const int best = order[0];
    const int worst = order[Dim];
    const int second = order[Dim - 1];

    double fspread = 0.0;
    double xspread = 0.0;
    for (int i = 1; i <= Dim; ++i) {
      fspread = std::max(fspread, std::abs(vals[order[i]] - vals[best]));
      xspread = std::max(xspread, (pts[order[i]] - pts[best]).cwiseAbs().maxCoeff());
    }
    if (std::isfinite(vals[best]) && fspread <= opt.f_tolerance * (1.0 + std::abs(vals[best])) &&
        xspread <= opt.x_tolerance) {
      out.converged = true;
      break;
    }
    if (out.evaluations >= opt.max_evaluations) break;

    Point centroid = Point::Zero();
    for (int i = 0; i < Dim; ++i) centroid += pts[order[i]];
    centroid /= Dim;

    const Point reflected = centroid + (centroid - pts[worst]);
    const double fr = eval(reflected);
    if (fr < vals[best]) {
      const Point expanded = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(expanded);
      if (fe < fr) {
        pts[worst] = expanded;
        vals[worst] = fe;
      } else {
        pts[worst] = reflected;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = reflected;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Point contracted = outside ? Point(centroid + 0.5 * (reflected - centroid))
                                     : Point(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(contracted);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = contracted;
      vals[worst] = fc;
      continue;
    }
    for (int i = 1; i <= Dim; ++i) {
      const int k = order[i];
      pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
      vals[k] = eval(pts[k]);
    }
  }
  int best = 0;
  for (int i = 1; i <= Dim; ++i)
    if (vals[i] < vals[best]) best = i;
  out.x = pts[best];
  out.value = vals[best];
  return out;
}

}  // namespace carforest
