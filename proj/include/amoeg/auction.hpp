#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "amoeg/market.hpp"
#include "amoeg/solver.hpp"

namespace amoeg {

/// Outcome of the paced auction at pacing multipliers beta: per-item prices
/// equal the marginal served bid (the s_j'th highest for integer supply),
/// winners get a unit each, the marginal tie class splits the residual
/// supply, and every winner pays their own bid beta_i v_ij per unit.
struct PacedOutcome {
  Eigen::MatrixXd x;       // N x M
  Eigen::VectorXd p;       // M
  Eigen::MatrixXd lambda;  // N x M, bid - price for winners, 0 otherwise
  Eigen::VectorXd spend;   // N, sum_j x_ij beta_i v_ij
};

/// Runs the per-item paced auctions. Within a constraint group a buyer bids
/// only on their highest-valued item (ties by index); for singleton groups
/// that is every positively valued item. Zero bids never win. Non-integer
/// supplies are handled by serving sorted bids one unit at a time until
/// supply runs out, the marginal bid setting the price.
inline PacedOutcome paced_allocation(const Eigen::VectorXd& beta, const Market& market) {
  const int n = market.n_buyers(), m = market.n_items();
  if (beta.size() != n || beta.minCoeff() <= 0.0)
    throw std::invalid_argument("beta must be positive with one entry per buyer");

  // per (buyer, group): the single item bid on
  Eigen::MatrixXd bids = Eigen::MatrixXd::Zero(n, m);
  for (int i = 0; i < n; ++i)
    for (const auto& g : market.groups) {
      int best = -1;
      double best_v = 0.0;
      for (int j : g)
        if (market.valuations(i, j) > best_v) {
          best_v = market.valuations(i, j);
          best = j;
        }
      if (best >= 0) bids(i, best) = beta(i) * best_v;
    }

  PacedOutcome out;
  out.x = Eigen::MatrixXd::Zero(n, m);
  out.p = Eigen::VectorXd::Zero(m);
  out.lambda = Eigen::MatrixXd::Zero(n, m);
  out.spend = Eigen::VectorXd::Zero(n);

  std::vector<int> order;
  for (int j = 0; j < m; ++j) {
    order.clear();
    for (int i = 0; i < n; ++i)
      if (bids(i, j) > 0.0) order.push_back(i);
    if (order.empty()) continue;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (bids(a, j) != bids(b, j)) return bids(a, j) > bids(b, j);
      return a < b;
    });

    double remaining = market.supplies(j);
    std::size_t pos = 0;
    while (pos < order.size() && remaining > 0.0) {
      // tie class: bids equal within relative tolerance
      const double lead = bids(order[pos], j);
      std::size_t end = pos;
      while (end < order.size() &&
             lead - bids(order[end], j) <= 1e-9 * std::max(1.0, lead))
        ++end;
      const double class_size = static_cast<double>(end - pos);
      if (remaining >= class_size) {
        for (std::size_t t = pos; t < end; ++t) out.x(order[t], j) = 1.0;
        remaining -= class_size;
        if (remaining <= 0.0) out.p(j) = bids(order[end - 1], j);
      } else {
        const double share = remaining / class_size;
        for (std::size_t t = pos; t < end; ++t) out.x(order[t], j) = share;
        out.p(j) = bids(order[end - 1], j);
        remaining = 0.0;
      }
      pos = end;
    }
    // fewer bids than supply: everyone served, price stays 0
    if (remaining > 0.0) out.p(j) = 0.0;

    for (int i : order)
      if (out.x(i, j) > 0.0) {
        out.lambda(i, j) = bids(i, j) - out.p(j);
        out.spend(i) += out.x(i, j) * bids(i, j);
      }
  }
  return out;
}

struct BfpmResult {
  bool feasible = true;
  Eigen::VectorXd spend;
};

/// beta is a budget-feasible pacing multiplier vector if no buyer's paced
/// spend exceeds their budget (1e-9 slack).
inline BfpmResult is_bfpm(const Eigen::VectorXd& beta, const Market& market) {
  const PacedOutcome out = paced_allocation(beta, market);
  BfpmResult r;
  r.spend = out.spend;
  r.feasible = ((out.spend - market.budgets).array() <= 1e-9).all();
  return r;
}

struct MonotonicityVerdict {
  bool preconditions_hold = false;  // both inputs BFPM
  bool max_is_bfpm = false;
  Eigen::VectorXd spend_a, spend_b, spend_max;
};

/// Checks the pointwise-max monotonicity of budget feasibility: if beta_a and
/// beta_b are both BFPM then max(beta_a, beta_b) must be too.
inline MonotonicityVerdict check_monotonicity(const Eigen::VectorXd& beta_a,
                                              const Eigen::VectorXd& beta_b,
                                              const Market& market) {
  MonotonicityVerdict v;
  const BfpmResult ra = is_bfpm(beta_a, market);
  const BfpmResult rb = is_bfpm(beta_b, market);
  v.spend_a = ra.spend;
  v.spend_b = rb.spend;
  v.preconditions_hold = ra.feasible && rb.feasible;
  if (!v.preconditions_hold) return v;
  const Eigen::VectorXd bmax = beta_a.cwiseMax(beta_b);
  const BfpmResult rm = is_bfpm(bmax, market);
  v.spend_max = rm.spend;
  v.max_is_bfpm = rm.feasible;
  return v;
}

struct MaximalityGapEntry {
  int buyer = -1;
  bool bfpm_after_inflation = false;  // must be false for maximality
  bool inconclusive = false;          // step below numerical resolution
  double spend = 0.0;
};

/// Tests maximality of the solution's utility prices: inflating any single
/// buyer's beta by (1 + step) must break budget feasibility. Steps below the
/// feasibility slack are reported inconclusive.
inline std::vector<MaximalityGapEntry> maximality_gap(const Solution& sol,
                                                      const Market& market,
                                                      double step) {
  std::vector<MaximalityGapEntry> out;
  const double resolution = 1e-9 / market.budgets.minCoeff();
  for (int i = 0; i < market.n_buyers(); ++i) {
    MaximalityGapEntry e;
    e.buyer = i;
    Eigen::VectorXd b = sol.beta;
    b(i) *= (1.0 + step);
    const BfpmResult r = is_bfpm(b, market);
    e.bfpm_after_inflation = r.feasible;
    e.spend = r.spend(i);
    e.inconclusive = std::abs(step) <= resolution;
    out.push_back(e);
  }
  return out;
}

}  // namespace amoeg
