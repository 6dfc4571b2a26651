#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "amoeg/market.hpp"
#include "amoeg/solver.hpp"

namespace amoeg {

/// One representative of the demand set at the given prices, plus the demand
/// utility level (shared by every representative).
struct DemandResult {
  Eigen::VectorXd bundle;
  double utility = 0.0;
  double spend = 0.0;
  bool tie_flag = false;  // demand set is non-singleton at the margin
};

/// Greedy demand under prices and group caps: free valued items are taken at
/// cap first (higher value first within a group), then the budget is spent in
/// descending bang-per-buck order, each purchase limited by the item cap and
/// the remaining group capacity, fractional at exhaustion. Ties break by item
/// index. Exact for singleton groups (fractional knapsack); a documented
/// heuristic for larger groups.
inline DemandResult demand(const Eigen::VectorXd& prices, const Eigen::VectorXd& v_i,
                           double B_i, const std::vector<std::vector<int>>& groups,
                           double item_cap = 1.0) {
  const int m = static_cast<int>(v_i.size());
  DemandResult r;
  r.bundle = Eigen::VectorXd::Zero(m);

  std::vector<int> gid(static_cast<std::size_t>(m), -1);
  for (int k = 0; k < static_cast<int>(groups.size()); ++k)
    for (int j : groups[static_cast<std::size_t>(k)]) gid[static_cast<std::size_t>(j)] = k;
  std::vector<double> group_left(groups.size(), 1.0);

  // free valued items first, better items first within each group
  for (const auto& g : groups) {
    std::vector<int> free_items;
    for (int j : g)
      if (prices(j) <= 0.0 && v_i(j) > 0.0) free_items.push_back(j);
    std::sort(free_items.begin(), free_items.end(), [&](int a, int b) {
      if (v_i(a) != v_i(b)) return v_i(a) > v_i(b);
      return a < b;
    });
    for (int j : free_items) {
      const int k = gid[static_cast<std::size_t>(j)];
      const double q = std::min(item_cap, group_left[static_cast<std::size_t>(k)]);
      if (q <= 0.0) break;
      r.bundle(j) = q;
      group_left[static_cast<std::size_t>(k)] -= q;
    }
  }

  std::vector<int> order;
  for (int j = 0; j < m; ++j)
    if (prices(j) > 0.0 && v_i(j) > 0.0) order.push_back(j);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ba = v_i(a) / prices(a), bb = v_i(b) / prices(b);
    if (ba != bb) return ba > bb;
    return a < b;
  });

  double left = B_i;
  double marginal_bang = -1.0;
  for (int j : order) {
    const int k = gid[static_cast<std::size_t>(j)];
    const double room = std::min(item_cap, group_left[static_cast<std::size_t>(k)]);
    if (room <= 0.0) continue;
    if (left <= 0.0) {
      if (marginal_bang < 0.0) marginal_bang = v_i(j) / prices(j);
      break;
    }
    const double q = std::min(room, left / prices(j));
    r.bundle(j) += q;
    group_left[static_cast<std::size_t>(k)] -= q;
    left -= q * prices(j);
    if (q < room - 1e-15) {  // budget ran out inside this item
      marginal_bang = v_i(j) / prices(j);
      break;
    }
    marginal_bang = v_i(j) / prices(j);
  }

  if (marginal_bang > 0.0) {
    int at_margin = 0;
    for (int j : order)
      if (std::abs(v_i(j) / prices(j) - marginal_bang) <=
          1e-9 * std::max(1.0, marginal_bang))
        ++at_margin;
    r.tie_flag = at_margin >= 2;
  }

  r.spend = B_i - left;
  r.utility = v_i.dot(r.bundle);
  return r;
}

inline std::vector<DemandResult> demand_all(const Eigen::VectorXd& prices,
                                            const Market& market) {
  std::vector<DemandResult> out;
  out.reserve(static_cast<std::size_t>(market.n_buyers()));
  for (int i = 0; i < market.n_buyers(); ++i)
    out.push_back(demand(prices, market.valuations.row(i), market.budgets(i),
                         market.groups));
  return out;
}

/// envy_i = max_{i'} v_i . (x_{i'} - x_i); zero for a single buyer.
inline Eigen::VectorXd envy(const Eigen::MatrixXd& x, const Eigen::MatrixXd& valuations) {
  const int n = static_cast<int>(x.rows());
  Eigen::VectorXd e(n);
  for (int i = 0; i < n; ++i) {
    double worst = 0.0;  // self comparison
    for (int i2 = 0; i2 < n; ++i2)
      worst = std::max(worst, valuations.row(i).dot(x.row(i2) - x.row(i)));
    e(i) = worst;
  }
  return e;
}

/// Budget-scaled envy for unequal budgets: v_i . (B_i/B_{i'} x_{i'} - x_i).
inline Eigen::VectorXd envy_budget_scaled(const Eigen::MatrixXd& x,
                                          const Eigen::MatrixXd& valuations,
                                          const Eigen::VectorXd& budgets) {
  const int n = static_cast<int>(x.rows());
  Eigen::VectorXd e(n);
  for (int i = 0; i < n; ++i) {
    double worst = 0.0;
    for (int i2 = 0; i2 < n; ++i2) {
      const double scale = budgets(i) / budgets(i2);
      worst = std::max(worst, valuations.row(i).dot((scale * x.row(i2) - x.row(i))));
    }
    e(i) = worst;
  }
  return e;
}

/// Normalized price regret (U_i(p) - v_i.x_i) / U_i(p) under the solution's
/// supply prices (lambda excluded), with demands respecting the group caps.
/// Tiny negatives clamp to zero; U_i = 0 is reported as NaN (undefined).
inline Eigen::VectorXd price_regret(const Solution& sol, const Market& market) {
  Eigen::VectorXd r(market.n_buyers());
  for (int i = 0; i < market.n_buyers(); ++i) {
    const DemandResult d =
        demand(sol.p, market.valuations.row(i), market.budgets(i), market.groups);
    const double realized = market.valuations.row(i).dot(sol.x.row(i));
    if (d.utility <= 0.0) {
      r(i) = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    r(i) = std::max(0.0, (d.utility - realized) / d.utility);
  }
  return r;
}

/// gap_i = max(0, v_i . prop - v_i . x_i) where prop takes min(s_j/N, 1) of
/// every item, scaled down within any group whose total would exceed 1.
inline Eigen::VectorXd proportional_share_gap(const Solution& sol, const Market& market) {
  const int n = market.n_buyers(), m = market.n_items();
  Eigen::VectorXd prop(m);
  for (int j = 0; j < m; ++j) prop(j) = std::min(market.supplies(j) / n, 1.0);
  for (const auto& g : market.groups) {
    double t = 0.0;
    for (int j : g) t += prop(j);
    if (t > 1.0)
      for (int j : g) prop(j) /= t;
  }
  Eigen::VectorXd gap(n);
  for (int i = 0; i < n; ++i) {
    const double realized = market.valuations.row(i).dot(sol.x.row(i));
    gap(i) = std::max(0.0, market.valuations.row(i).dot(prop) - realized);
  }
  return gap;
}

/// delta = max_i (U_i(p) - v_i.x_i), clamped at zero: the smallest delta for
/// which (x, p) is a delta-approximate CEEI.
inline double certify_delta_ceei(const Solution& sol, const Market& market) {
  double delta = 0.0;
  for (int i = 0; i < market.n_buyers(); ++i) {
    const DemandResult d =
        demand(sol.p, market.valuations.row(i), market.budgets(i), market.groups);
    const double realized = market.valuations.row(i).dot(sol.x.row(i));
    delta = std::max(delta, d.utility - realized);
  }
  return delta;
}

struct AmoViolations {
  int violator_count = 0;
  std::vector<std::pair<int, double>> violators;  // (buyer, max group total)
  double max_multiplicity = 0.0;
};

/// Buyers receiving more than one unit within some constraint group.
inline AmoViolations amo_violations(const Eigen::MatrixXd& x,
                                    const std::vector<std::vector<int>>& groups,
                                    double tol = 1e-6) {
  AmoViolations out;
  for (int i = 0; i < static_cast<int>(x.rows()); ++i) {
    double worst = 0.0;
    for (const auto& g : groups) {
      double t = 0.0;
      for (int j : g) t += x(i, j);
      worst = std::max(worst, t);
    }
    if (worst > 1.0 + tol) {
      out.violators.emplace_back(i, worst);
      out.max_multiplicity = std::max(out.max_multiplicity, worst);
    }
  }
  out.violator_count = static_cast<int>(out.violators.size());
  return out;
}

struct PurityStats {
  double fraction_fractional = 0.0;  // share of entries strictly in (0.01, 0.99)
  int considered = 0;                // entries above the reporting floor
  std::vector<int> histogram;        // 20 bins over [0, 1]
};

/// Lottery purity: among entries above 1e-4, how many are genuinely
/// fractional rather than near 0 or 1.
inline PurityStats purity_stats(const Eigen::MatrixXd& x, double floor = 1e-4) {
  PurityStats s;
  s.histogram.assign(20, 0);
  int fractional = 0;
  for (int i = 0; i < static_cast<int>(x.rows()); ++i)
    for (int j = 0; j < static_cast<int>(x.cols()); ++j) {
      const double val = x(i, j);
      if (val <= floor) continue;
      ++s.considered;
      if (val > 0.01 && val < 0.99) ++fractional;
      const int bin = std::min(19, static_cast<int>(std::clamp(val, 0.0, 1.0) * 20.0));
      ++s.histogram[static_cast<std::size_t>(bin)];
    }
  s.fraction_fractional = s.considered > 0 ? static_cast<double>(fractional) / s.considered : 0.0;
  return s;
}

/// sum_i B_i log(v_i . x_i); -inf when some buyer has zero utility.
inline double nash_welfare(const Eigen::MatrixXd& x, const Eigen::MatrixXd& valuations,
                           const Eigen::VectorXd& budgets) {
  double f = 0.0;
  for (int i = 0; i < static_cast<int>(x.rows()); ++i) {
    const double u = valuations.row(i).dot(x.row(i));
    if (u <= 0.0) return -std::numeric_limits<double>::infinity();
    f += budgets(i) * std::log(u);
  }
  return f;
}

inline std::vector<int> zero_utility_buyers(const Eigen::MatrixXd& x,
                                            const Eigen::MatrixXd& valuations) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(x.rows()); ++i)
    if (valuations.row(i).dot(x.row(i)) <= 0.0) out.push_back(i);
  return out;
}

struct EquilibriumReport {
  Eigen::VectorXd envy;
  Eigen::VectorXd envy_scaled;  // only meaningful with unequal budgets
  bool budgets_equal = true;
  double mean_envy = 0.0;
  Eigen::VectorXd regret;
  double mean_regret = 0.0;
  Eigen::VectorXd prop_share_gap;
  Eigen::VectorXd demand_utility;
  Eigen::VectorXd realized_utility;
  double delta_ceei = 0.0;
  double nash = 0.0;
  AmoViolations violations;
  PurityStats purity;
};

inline EquilibriumReport analyze(const Solution& sol, const Market& market) {
  EquilibriumReport rep;
  const int n = market.n_buyers();
  rep.envy = envy(sol.x, market.valuations);
  rep.budgets_equal = market.equal_budgets();
  rep.envy_scaled = rep.budgets_equal
                        ? rep.envy
                        : envy_budget_scaled(sol.x, market.valuations, market.budgets);
  rep.mean_envy = rep.envy.mean();
  rep.regret.resize(n);
  rep.demand_utility.resize(n);
  rep.realized_utility.resize(n);
  double delta = 0.0;
  double regret_sum = 0.0;
  int regret_count = 0;
  for (int i = 0; i < n; ++i) {
    const DemandResult d =
        demand(sol.p, market.valuations.row(i), market.budgets(i), market.groups);
    rep.demand_utility(i) = d.utility;
    rep.realized_utility(i) = market.valuations.row(i).dot(sol.x.row(i));
    delta = std::max(delta, d.utility - rep.realized_utility(i));
    if (d.utility > 0.0) {
      rep.regret(i) = std::max(0.0, (d.utility - rep.realized_utility(i)) / d.utility);
      regret_sum += rep.regret(i);
      ++regret_count;
    } else {
      rep.regret(i) = std::numeric_limits<double>::quiet_NaN();
    }
  }
  rep.mean_regret = regret_count > 0 ? regret_sum / regret_count : 0.0;
  rep.delta_ceei = std::max(0.0, delta);
  rep.prop_share_gap = proportional_share_gap(sol, market);
  rep.nash = nash_welfare(sol.x, market.valuations, market.budgets);
  rep.violations = amo_violations(sol.x, market.groups);
  rep.purity = purity_stats(sol.x);
  return rep;
}

}  // namespace amoeg
