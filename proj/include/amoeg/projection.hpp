#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "amoeg/market.hpp"

namespace amoeg {

/// Euclidean projection onto { x : 0 <= x_i <= cap_i, sum_i x_i <= total }.
/// Exact threshold search: x_i = clip(y_i - tau, 0, cap_i) where tau = 0 if
/// the clipped sum already fits, else the unique root of
/// g(tau) = sum_i clip(y_i - tau, 0, cap_i) = total. g is piecewise linear
/// and non-increasing, so the root is found by sorting the breakpoints
/// {y_i, y_i - cap_i} and interpolating on the bracketing segment.
inline Eigen::VectorXd project_capped_column(const Eigen::VectorXd& y,
                                             const Eigen::VectorXd& cap, double total) {
  const int n = static_cast<int>(y.size());
  Eigen::VectorXd x = y.cwiseMax(0.0).cwiseMin(cap);
  if (x.sum() <= total) return x;

  auto g = [&](double tau) {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      s += std::clamp(y(i) - tau, 0.0, cap(i));
    return s;
  };

  std::vector<double> bp;
  bp.reserve(2 * static_cast<std::size_t>(n) + 1);
  bp.push_back(0.0);
  for (int i = 0; i < n; ++i) {
    if (y(i) > 0.0) bp.push_back(y(i));
    if (y(i) - cap(i) > 0.0) bp.push_back(y(i) - cap(i));
  }
  std::sort(bp.begin(), bp.end());
  bp.erase(std::unique(bp.begin(), bp.end()), bp.end());

  // binary search for the segment [bp[lo], bp[lo+1]] with g crossing total
  std::size_t lo = 0, hi = bp.size() - 1;
  while (lo + 1 < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (g(bp[mid]) > total)
      lo = mid;
    else
      hi = mid;
  }
  const double glo = g(bp[lo]);
  const double ghi = g(bp[hi]);
  double tau;
  if (glo <= total)
    tau = bp[lo];
  else if (glo == ghi)
    tau = bp[hi];
  else
    tau = bp[lo] + (glo - total) * (bp[hi] - bp[lo]) / (glo - ghi);

  for (int i = 0; i < n; ++i) x(i) = std::clamp(y(i) - tau, 0.0, cap(i));
  return x;
}

inline Eigen::VectorXd project_capped_column(const Eigen::VectorXd& y, double cap,
                                             double total) {
  return project_capped_column(y, Eigen::VectorXd::Constant(y.size(), cap), total);
}

/// Projects every item column onto its supply polytope {0 <= x <= cap,
/// sum_i x_ij <= s_j}. cap = 1 gives the at-most-one box; cap = +inf gives
/// the plain Eisenberg-Gale feasible set.
inline void project_columns_inplace(Eigen::MatrixXd& x, const Eigen::VectorXd& supplies,
                                    double cap) {
  const int m = static_cast<int>(x.cols());
  const Eigen::VectorXd caps =
      Eigen::VectorXd::Constant(x.rows(), std::isfinite(cap) ? cap : std::numeric_limits<double>::max());
  for (int j = 0; j < m; ++j)
    x.col(j) = project_capped_column(x.col(j), caps, supplies(j));
}

struct DykstraReport {
  int iterations = 0;
  double displacement = 0.0;  // sup-norm gap between the two family projections
  bool converged = true;
};

/// Projects one buyer row onto all of its group caps {0 <= x_ij <= 1,
/// sum_{j in k} x_ij <= 1 for each k}. Groups are disjoint so this is exact.
inline void project_row_groups_inplace(Eigen::MatrixXd& x, int i,
                                       const std::vector<std::vector<int>>& groups) {
  for (const auto& g : groups) {
    if (g.size() == 1) {
      const int j = g.front();
      x(i, j) = std::clamp(x(i, j), 0.0, 1.0);
      continue;
    }
    Eigen::VectorXd slice(static_cast<int>(g.size()));
    for (std::size_t t = 0; t < g.size(); ++t) slice(static_cast<int>(t)) = x(i, g[t]);
    slice = project_capped_column(slice, 1.0, 1.0);
    for (std::size_t t = 0; t < g.size(); ++t) x(i, g[t]) = slice(static_cast<int>(t));
  }
}

/// Projection onto the AMO-EG feasible set. For singleton groups one pass of
/// per-column projection with cap 1 is exact (the group cap coincides with
/// the box). For general groups runs Dykstra's alternating projection between
/// the per-item family and the per-buyer-group family, which converges to the
/// true Euclidean projection onto the intersection.
inline DykstraReport project_feasible_inplace(Eigen::MatrixXd& x, const Market& market,
                                              int dykstra_iters = 50,
                                              double tol = 1e-10) {
  DykstraReport rep;
  bool all_singletons = true;
  for (const auto& g : market.groups)
    if (g.size() != 1) {
      all_singletons = false;
      break;
    }
  if (all_singletons) {
    project_columns_inplace(x, market.supplies, 1.0);
    rep.iterations = 1;
    rep.displacement = 0.0;
    return rep;
  }

  const int n = market.n_buyers();
  Eigen::MatrixXd inc_a = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  Eigen::MatrixXd inc_b = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  Eigen::MatrixXd a, y = x;
  for (int it = 0; it < dykstra_iters; ++it) {
    a = y + inc_a;
    Eigen::MatrixXd pa = a;
    project_columns_inplace(pa, market.supplies, 1.0);
    inc_a = a - pa;

    Eigen::MatrixXd b = pa + inc_b;
    y = b;
    for (int i = 0; i < n; ++i) project_row_groups_inplace(y, i, market.groups);
    inc_b = b - y;

    rep.iterations = it + 1;
    rep.displacement = (pa - y).cwiseAbs().maxCoeff();
    if (rep.displacement < tol) break;
  }
  rep.converged = rep.displacement < tol;
  x = y;  // group caps hold exactly; supply overshoot bounded by displacement
  return rep;
}

inline Eigen::MatrixXd project_feasible(Eigen::MatrixXd x, const Market& market,
                                        int dykstra_iters = 50, double tol = 1e-10) {
  project_feasible_inplace(x, market, dykstra_iters, tol);
  return x;
}

}  // namespace amoeg
