#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "amoeg/analysis.hpp"
#include "amoeg/market.hpp"
#include "amoeg/solver.hpp"

namespace amoeg {

/// Pairwise twin structure at radius eps: who is within eps of whom in the
/// sup norm, and which twins are unconstrained (group total strictly below 1)
/// for each (buyer, group) pair.
struct TwinStructure {
  double eps = 0.0;
  Eigen::MatrixXd dist;                                    // N x N
  std::vector<std::vector<int>> twins;                     // per buyer, excl. self
  std::vector<std::vector<std::vector<int>>> unconstrained;  // [i][k] -> twin ids
};

inline TwinStructure twin_structure(const Market& market, const Eigen::MatrixXd& x,
                                    double eps) {
  if (eps < 0.0) throw std::invalid_argument("eps must be nonnegative");
  const int n = market.n_buyers();
  const int kk = market.n_groups();
  TwinStructure t;
  t.eps = eps;
  t.dist = twin_distances(market.valuations);
  t.twins.resize(static_cast<std::size_t>(n));
  t.unconstrained.assign(static_cast<std::size_t>(n),
                         std::vector<std::vector<int>>(static_cast<std::size_t>(kk)));
  Eigen::MatrixXd group_total(n, kk);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < kk; ++k) {
      double s = 0.0;
      for (int j : market.groups[static_cast<std::size_t>(k)]) s += x(i, j);
      group_total(i, k) = s;
    }
  for (int i = 0; i < n; ++i)
    for (int i2 = 0; i2 < n; ++i2) {
      if (i2 == i || t.dist(i, i2) > eps) continue;
      t.twins[static_cast<std::size_t>(i)].push_back(i2);
      for (int k = 0; k < kk; ++k)
        if (group_total(i2, k) < 1.0 - 1e-9)
          t.unconstrained[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]
              .push_back(i2);
    }
  return t;
}

/// Market-constant utility-price bounds:
///   sum_i B_i / ((v_up)^2 sum_j s_j) * v_down  <=  beta_i  <=  sum_i B_i / (K v_down).
/// Requires v_down = min_ij v_ij > 0.
inline std::pair<double, double> beta_bounds(const Market& market) {
  const double v_down = market.valuations.minCoeff();
  const double v_up = market.valuations.maxCoeff();
  if (!(v_down > 0.0))
    throw std::domain_error("beta bounds unavailable: min valuation is not positive");
  const double total_budget = market.budgets.sum();
  const double total_supply = market.supplies.sum();
  const double lo = total_budget / (v_up * v_up * total_supply) * v_down;
  const double hi = total_budget / (market.n_groups() * v_down);
  return {lo, hi};
}

/// Per-buyer utility bounds induced by the beta bounds: the budget divided by
/// the opposite beta bound, u_up_i = B_i / beta_lower and
/// u_down_i = B_i / beta_upper.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> utility_bounds(const Market& market) {
  const auto [lo, hi] = beta_bounds(market);
  Eigen::VectorXd u_down = market.budgets / hi;
  Eigen::VectorXd u_up = market.budgets / lo;
  return {u_down, u_up};
}

struct EpsilonFactors {
  double down = 1.0;  // min v/(v+eps)
  double up = 1.0;    // max v/(v-eps); +inf when eps >= min valuation
  bool up_finite = true;
};

/// Multiplicative twin factors over a buyer set's valuations.
inline EpsilonFactors epsilon_factors(double eps, const Eigen::MatrixXd& valuations) {
  EpsilonFactors f;
  if (eps == 0.0) return f;  // exact twins
  const double v_min = valuations.minCoeff();
  f.down = v_min / (v_min + eps);
  if (eps >= v_min) {
    f.up = std::numeric_limits<double>::infinity();
    f.up_finite = false;
  } else {
    f.up = v_min / (v_min - eps);
  }
  return f;
}

/// Additive utility-price difference bound for an eps-twin pair:
/// (eps_up - 1) * beta_upper.
inline double beta_difference_bound(double eps, const Market& market) {
  const EpsilonFactors f = epsilon_factors(eps, market.valuations);
  if (!f.up_finite) return std::numeric_limits<double>::infinity();
  return (f.up - 1.0) * beta_bounds(market).second;
}

struct LambdaBoundResult {
  bool applicable = false;
  std::string reason;
  int buyer = -1, group = -1, twin = -1, item = -1;
  double eps_beta = 0.0;  // realized |beta_i - beta_i'|
  double eps_v = 0.0;     // realized |v_{i j_k} - v_{i' j_k}|
  double bound = 0.0;     // eps_beta * v_{i j_k} + beta_{i'} * eps_v
  double lambda = 0.0;    // recovered multiplier being bounded
  bool holds = false;     // lambda <= bound + 1e-8
};

/// Bound on lambda_{ik} from an unconstrained twin: requires the twin's group
/// total to be below 1 and buyer i to hold some item j_k in the group. j_k is
/// the held item with the largest allocation.
inline LambdaBoundResult lambda_bound(int i, int k, int twin, const Solution& sol,
                                      const Market& market) {
  LambdaBoundResult r;
  r.buyer = i;
  r.group = k;
  r.twin = twin;
  double gsum = 0.0;
  for (int j : market.groups[static_cast<std::size_t>(k)]) gsum += sol.x(twin, j);
  if (gsum >= 1.0 - 1e-9) {
    r.reason = "twin is constrained in the group";
    return r;
  }
  int jk = -1;
  double best = sol.diagnostics.x_thresh;
  for (int j : market.groups[static_cast<std::size_t>(k)])
    if (sol.x(i, j) > best) {
      best = sol.x(i, j);
      jk = j;
    }
  if (jk < 0) {
    r.reason = "buyer holds no item in the group";
    return r;
  }
  r.applicable = true;
  r.item = jk;
  r.eps_beta = std::abs(sol.beta(i) - sol.beta(twin));
  r.eps_v = std::abs(market.valuations(i, jk) - market.valuations(twin, jk));
  r.bound = r.eps_beta * market.valuations(i, jk) + sol.beta(twin) * r.eps_v;
  r.lambda = sol.lambda(i, k);
  r.holds = r.lambda <= r.bound + 1e-8;
  return r;
}

struct RegretBoundResult {
  bool applicable = false;
  std::vector<int> missing_groups;  // held groups lacking an unconstrained twin
  double bound = 0.0;               // utility units (raw regret bound)
  double measured_regret = 0.0;
  double measured_envy = 0.0;
  double measured_prop_gap = 0.0;
  bool regret_ok = false;
  bool envy_applicable = false;  // equal budgets
  bool envy_ok = false;
  bool prop_applicable = false;  // s_j / N <= 1 for all j
  bool prop_ok = false;
};

namespace detail {

/// Best (smallest) lambda-bound term for (i, k) over the available
/// unconstrained twins; eps_beta may be tightened by an a-priori cap.
inline bool best_group_term(int i, int k, const std::vector<int>& twin_ids,
                            const Solution& sol, const Market& market,
                            double eps_beta_cap, double& term, LambdaBoundResult* best) {
  bool found = false;
  for (int twin : twin_ids) {
    LambdaBoundResult cand = lambda_bound(i, k, twin, sol, market);
    if (!cand.applicable) continue;
    const double eb = std::min(cand.eps_beta, eps_beta_cap);
    const double b = eb * market.valuations(i, cand.item) + sol.beta(twin) * cand.eps_v;
    if (!found || b < term) {
      term = b;
      if (best) {
        *best = cand;
        best->eps_beta = eb;
        best->bound = b;
        best->holds = best->lambda <= b + 1e-8;
      }
      found = true;
    }
  }
  return found;
}

}  // namespace detail

/// Raw regret bound for buyer i:
///   (u_up_i / v_down) * max_k beta_i^{-1} (eps_beta v_{i j_k} + beta_{i_k} eps_v^k)
/// over held groups; groups the buyer does not hold contribute zero. The same
/// value bounds envy (equal budgets) and the proportional-share gap (when
/// s_j/N <= 1 for all j); all three checks are recorded.
inline RegretBoundResult regret_bound(int i, const Solution& sol, const Market& market,
                                      double eps) {
  RegretBoundResult r;
  const TwinStructure tw = twin_structure(market, sol.x, eps);
  const auto [u_down, u_up] = utility_bounds(market);
  const double v_down = market.valuations.minCoeff();
  const double eps_beta_cap = beta_difference_bound(eps, market);

  double max_term = 0.0;
  for (int k = 0; k < market.n_groups(); ++k) {
    bool held = false;
    for (int j : market.groups[static_cast<std::size_t>(k)])
      if (sol.x(i, j) > sol.diagnostics.x_thresh) held = true;
    if (!held) continue;
    double term = 0.0;
    if (!detail::best_group_term(
            i, k, tw.unconstrained[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
            sol, market, eps_beta_cap, term, nullptr)) {
      r.missing_groups.push_back(k);
      continue;
    }
    max_term = std::max(max_term, term / sol.beta(i));
  }
  if (!r.missing_groups.empty()) return r;

  r.applicable = true;
  r.bound = u_up(i) / v_down * max_term;

  const DemandResult d =
      demand(sol.p, market.valuations.row(i), market.budgets(i), market.groups);
  const double realized = market.valuations.row(i).dot(sol.x.row(i));
  r.measured_regret = std::max(0.0, d.utility - realized);
  r.regret_ok = r.measured_regret <= r.bound + 1e-8;

  r.envy_applicable = market.equal_budgets();
  if (r.envy_applicable) {
    r.measured_envy = envy(sol.x, market.valuations)(i);
    r.envy_ok = r.measured_envy <= r.bound + 1e-8;
  }
  r.prop_applicable = (market.supplies.array() / market.n_buyers() <= 1.0 + 1e-12).all();
  if (r.prop_applicable) {
    r.measured_prop_gap = proportional_share_gap(sol, market)(i);
    r.prop_ok = r.measured_prop_gap <= r.bound + 1e-8;
  }
  return r;
}

struct BinOccupancyBound {
  Eigen::VectorXd per_bin;  // exp(-2 n gamma_i^2 ((c-1)/c)^2)
  double union_bound = 0.0;  // K * per-bin bound at the smallest gamma
};

/// Multinomial tail bound: probability that bin i receives fewer than
/// E[x_i]/c balls, plus the union bound over all bins.
inline BinOccupancyBound bin_occupancy_bound(std::int64_t n, const Eigen::VectorXd& gammas,
                                             double c) {
  if (!(c > 1.0)) throw std::invalid_argument("c must exceed 1");
  if (gammas.size() == 0 || gammas.minCoeff() <= 0.0 || gammas.maxCoeff() > 1.0 ||
      gammas.sum() > 1.0 + 1e-12)
    throw std::invalid_argument("gammas must lie in (0,1] and sum to at most 1");
  BinOccupancyBound b;
  const double ratio = (c - 1.0) / c;
  b.per_bin.resize(gammas.size());
  for (int i = 0; i < gammas.size(); ++i)
    b.per_bin(i) = std::exp(-2.0 * static_cast<double>(n) * gammas(i) * gammas(i) * ratio * ratio);
  const double gmin = gammas.minCoeff();
  b.union_bound = static_cast<double>(gammas.size()) *
                  std::exp(-2.0 * static_cast<double>(n) * gmin * gmin * ratio * ratio);
  return b;
}

struct BuyerCertificate {
  int buyer = -1;
  RegretBoundResult result;
};

struct LambdaBoundCheck {
  LambdaBoundResult result;
};

/// Full numeric delta-approximate-CEEI certificate for a converged solution.
struct BoundCertificate {
  double eps = 0.0;
  double v_down = 0.0, v_up = 0.0;
  bool bounds_available = false;  // v_down > 0
  double beta_lower = 0.0, beta_upper = 0.0;
  Eigen::VectorXd u_down, u_up;
  double eps_down = 1.0, eps_up = 1.0;
  bool eps_up_finite = true;
  double eps_beta_lemma = 0.0;  // additive beta-difference bound at eps
  double s_max = 0.0;
  std::vector<int> twin_counts;  // excluding self
  bool twin_count_condition = false;  // every buyer has >= s_max twins
  std::vector<LambdaBoundCheck> lambda_checks;
  std::vector<BuyerCertificate> buyers;
  int applicable_buyers = 0;
  double delta = 0.0;  // max applicable regret bound
  double measured_delta_all = 0.0;
  double measured_delta_applicable = 0.0;
  bool dominance_ok = true;  // delta dominates the measured delta (1e-8 slack)
};

inline BoundCertificate certify(const Solution& sol, const Market& market, double eps) {
  BoundCertificate cert;
  cert.eps = eps;
  cert.v_down = market.valuations.minCoeff();
  cert.v_up = market.valuations.maxCoeff();
  cert.bounds_available = cert.v_down > 0.0;
  const int n = market.n_buyers();
  cert.s_max = market.s_max();

  const TwinStructure tw = twin_structure(market, sol.x, eps);
  cert.twin_counts.resize(static_cast<std::size_t>(n));
  cert.twin_count_condition = true;
  for (int i = 0; i < n; ++i) {
    cert.twin_counts[static_cast<std::size_t>(i)] =
        static_cast<int>(tw.twins[static_cast<std::size_t>(i)].size());
    if (cert.twin_counts[static_cast<std::size_t>(i)] < cert.s_max)
      cert.twin_count_condition = false;
  }

  if (!cert.bounds_available) {
    // without v_down > 0 none of the closed-form constants exist
    for (int i = 0; i < n; ++i) {
      BuyerCertificate bc;
      bc.buyer = i;
      cert.buyers.push_back(bc);
    }
    cert.measured_delta_all = certify_delta_ceei(sol, market);
    return cert;
  }

  std::tie(cert.beta_lower, cert.beta_upper) = beta_bounds(market);
  std::tie(cert.u_down, cert.u_up) = utility_bounds(market);
  const EpsilonFactors f = epsilon_factors(eps, market.valuations);
  cert.eps_down = f.down;
  cert.eps_up = f.up;
  cert.eps_up_finite = f.up_finite;
  cert.eps_beta_lemma = beta_difference_bound(eps, market);

  const auto demands = demand_all(sol.p, market);
  Eigen::VectorXd envy_vec = envy(sol.x, market.valuations);
  Eigen::VectorXd prop_vec = proportional_share_gap(sol, market);
  const bool budgets_equal = market.equal_budgets();
  const bool prop_cond = (market.supplies.array() / n <= 1.0 + 1e-12).all();

  for (int i = 0; i < n; ++i) {
    BuyerCertificate bc;
    bc.buyer = i;
    RegretBoundResult& r = bc.result;

    double max_term = 0.0;
    bool ok = true;
    for (int k = 0; k < market.n_groups(); ++k) {
      bool held = false;
      for (int j : market.groups[static_cast<std::size_t>(k)])
        if (sol.x(i, j) > sol.diagnostics.x_thresh) held = true;
      if (!held) continue;
      double term = 0.0;
      LambdaBoundResult best;
      if (!detail::best_group_term(
              i, k,
              tw.unconstrained[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
              sol, market, cert.eps_beta_lemma, term, &best)) {
        r.missing_groups.push_back(k);
        ok = false;
        continue;
      }
      cert.lambda_checks.push_back(LambdaBoundCheck{best});
      max_term = std::max(max_term, term / sol.beta(i));
    }

    const double realized = market.valuations.row(i).dot(sol.x.row(i));
    r.measured_regret =
        std::max(0.0, demands[static_cast<std::size_t>(i)].utility - realized);
    cert.measured_delta_all = std::max(cert.measured_delta_all, r.measured_regret);

    if (ok) {
      r.applicable = true;
      r.bound = cert.u_up(i) / cert.v_down * max_term;
      r.regret_ok = r.measured_regret <= r.bound + 1e-8;
      r.envy_applicable = budgets_equal;
      if (budgets_equal) {
        r.measured_envy = envy_vec(i);
        r.envy_ok = r.measured_envy <= r.bound + 1e-8;
      }
      r.prop_applicable = prop_cond;
      if (prop_cond) {
        r.measured_prop_gap = prop_vec(i);
        r.prop_ok = r.measured_prop_gap <= r.bound + 1e-8;
      }
      ++cert.applicable_buyers;
      cert.delta = std::max(cert.delta, r.bound);
      cert.measured_delta_applicable =
          std::max(cert.measured_delta_applicable, r.measured_regret);
    }
    cert.buyers.push_back(std::move(bc));
  }
  cert.dominance_ok = cert.measured_delta_applicable <= cert.delta + 1e-8;
  return cert;
}

}  // namespace amoeg
