#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "amoeg/market.hpp"
#include "amoeg/projection.hpp"

namespace amoeg {

enum class SolveMode { Amo, Plain };

struct StepRule {
  enum class Kind { Fixed, Backtracking };
  Kind kind = Kind::Backtracking;
  double eta = 1e-2;                  // fixed-step size
  double alpha0 = 1.0;                // initial trial step
  double shrink = 0.5;                // backtracking shrink factor
  double sufficient_increase = 1e-4;  // Armijo-style constant
};

struct SolverConfig {
  int max_iters = 100000;
  StepRule step_rule;
  double tol_kkt = 1e-8;    // stationarity / complementarity target
  double tol_feas = 1e-10;  // primal feasibility target
  int dykstra_iters = 50;   // inner projection rounds for non-singleton groups
  double x_floor = 1e-12;   // utility floor factor, keeps v_i.x_i > 0
  double x_thresh = 1e-6;   // holding threshold for dual recovery
  int kkt_interval = 25;    // residual check cadence
};

struct KktReport {
  double stationarity = 0.0;      // max_ij (v_ij b_i - p_j - lam_ik)_+
  double tightness = 0.0;         // max over held ij of |v_ij b_i - p_j - lam_ik|
  double primal_feas = 0.0;       // max constraint violation
  double dual_feas = 0.0;         // negativity of p, lambda
  double complementarity = 0.0;   // max |multiplier * slack|
  double budget_residual = 0.0;   // max_i |sum_j x_ij (p_j + lam) - B_i|

  double max_residual() const {
    return std::max({stationarity, tightness, complementarity});
  }
};

struct Diagnostics {
  int iterations = 0;
  bool converged = false;
  KktReport residuals;
  double x_thresh = 1e-6;
  SolveMode mode = SolveMode::Amo;
  bool floor_active = false;       // some buyer ended below the utility floor
  bool dykstra_converged = true;
  double dykstra_displacement = 0.0;
  double final_step = 0.0;
};

/// Primal solution with recovered duals. beta_i = B_i / (v_i . x_i) holds by
/// construction; p are supply prices and lambda the per-(buyer,group)
/// at-most-one multipliers.
struct Solution {
  Eigen::MatrixXd x;       // N x M
  Eigen::VectorXd p;       // M
  Eigen::MatrixXd lambda;  // N x K
  Eigen::VectorXd beta;    // N
  double objective = 0.0;  // sum_i B_i log(v_i . x_i)
  Diagnostics diagnostics;
};

struct Duals {
  Eigen::VectorXd p;
  Eigen::MatrixXd lambda;
  Eigen::VectorXd beta;
};

/// Recovers supporting duals from an allocation: beta_i = B_i/(v_i.x_i);
/// p_j is the least bid beta_i v_ij among buyers holding item j (zero when
/// nobody holds it or the supply constraint is slack); lambda_ik is the
/// largest margin of i's held bids over price within group k, clamped at 0.
/// Ties break by index through the stable scan order.
inline Duals recover_duals(const Eigen::MatrixXd& x, const Market& market,
                           double x_thresh = 1e-6, double supply_slack_tol = 1e-6) {
  const int n = market.n_buyers(), m = market.n_items();
  const auto gid = market.group_index();
  Duals d;
  d.beta.resize(n);
  for (int i = 0; i < n; ++i) {
    const double u = market.valuations.row(i).dot(x.row(i));
    d.beta(i) = market.budgets(i) / u;
  }
  d.p = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < m; ++j) {
    const double colsum = x.col(j).sum();
    if (colsum < market.supplies(j) - supply_slack_tol) continue;  // slack: p_j = 0
    double least = std::numeric_limits<double>::infinity();
    bool any = false;
    for (int i = 0; i < n; ++i) {
      if (x(i, j) > x_thresh) {
        least = std::min(least, d.beta(i) * market.valuations(i, j));
        any = true;
      }
    }
    d.p(j) = any ? least : 0.0;
  }
  d.lambda = Eigen::MatrixXd::Zero(n, market.n_groups());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      if (x(i, j) <= x_thresh) continue;
      const double margin = d.beta(i) * market.valuations(i, j) - d.p(j);
      auto& cell = d.lambda(i, gid[static_cast<std::size_t>(j)]);
      cell = std::max(cell, std::max(margin, 0.0));
    }
  return d;
}

namespace detail {

inline KktReport kkt_from_parts(const Eigen::MatrixXd& x, const Eigen::VectorXd& p,
                                const Eigen::MatrixXd& lambda, const Eigen::VectorXd& beta,
                                const Market& market, SolveMode mode, double x_thresh) {
  const int n = market.n_buyers(), m = market.n_items();
  const auto gid = market.group_index();
  KktReport r;
  for (int i = 0; i < n; ++i) {
    double spend = 0.0;
    for (int j = 0; j < m; ++j) {
      const int k = gid[static_cast<std::size_t>(j)];
      const double lam = (mode == SolveMode::Amo) ? lambda(i, k) : 0.0;
      const double res = beta(i) * market.valuations(i, j) - p(j) - lam;
      r.stationarity = std::max(r.stationarity, res);
      if (x(i, j) > x_thresh) r.tightness = std::max(r.tightness, std::abs(res));
      r.primal_feas = std::max(r.primal_feas, -x(i, j));
      spend += x(i, j) * (p(j) + lam);
    }
    r.budget_residual = std::max(r.budget_residual, std::abs(spend - market.budgets(i)));
  }
  for (int j = 0; j < m; ++j) {
    const double slack = market.supplies(j) - x.col(j).sum();
    r.primal_feas = std::max(r.primal_feas, -slack);
    r.complementarity = std::max(r.complementarity, std::abs(p(j) * slack));
    r.dual_feas = std::max(r.dual_feas, -p(j));
  }
  if (mode == SolveMode::Amo) {
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < market.n_groups(); ++k) {
        double gsum = 0.0;
        for (int j : market.groups[static_cast<std::size_t>(k)]) gsum += x(i, j);
        const double slack = 1.0 - gsum;
        r.primal_feas = std::max(r.primal_feas, -slack);
        r.complementarity = std::max(r.complementarity, std::abs(lambda(i, k) * slack));
        r.dual_feas = std::max(r.dual_feas, -lambda(i, k));
      }
  }
  r.stationarity = std::max(r.stationarity, 0.0);
  return r;
}

}  // namespace detail

inline KktReport kkt_residuals(const Solution& sol, const Market& market) {
  return detail::kkt_from_parts(sol.x, sol.p, sol.lambda, sol.beta, market,
                                sol.diagnostics.mode, sol.diagnostics.x_thresh);
}

/// Solves the (AMO-)Eisenberg-Gale program
///   max sum_i B_i log(v_i . x_i)
///   s.t. sum_i x_ij <= s_j, sum_{j in k} x_ij <= 1 (Amo mode), x >= 0
/// by projected gradient ascent. Trial steps are Barzilai-Borwein seeded and
/// backtracked until a sufficient-increase test holds, so the objective is
/// non-decreasing. Terminates when the KKT residuals of the recovered duals
/// meet tol_kkt or max_iters is reached. warm_start, when given, must be
/// feasible-shaped (it is projected before use).
inline Solution solve(const Market& market, const SolverConfig& cfg = {},
                      SolveMode mode = SolveMode::Amo,
                      const Eigen::MatrixXd* warm_start = nullptr) {
  require_valid(market);
  const int n = market.n_buyers(), m = market.n_items();
  const Eigen::MatrixXd& v = market.valuations;
  const Eigen::VectorXd row_max = v.rowwise().maxCoeff();
  const Eigen::VectorXd floor_u = cfg.x_floor * row_max;
  const bool amo = mode == SolveMode::Amo;

  bool all_singletons = true;
  for (const auto& g : market.groups)
    if (g.size() != 1) all_singletons = false;

  DykstraReport dyk;
  auto project = [&](Eigen::MatrixXd& z) {
    if (!amo) {
      project_columns_inplace(z, market.supplies,
                              std::numeric_limits<double>::infinity());
    } else if (all_singletons) {
      project_columns_inplace(z, market.supplies, 1.0);
    } else {
      dyk = project_feasible_inplace(z, market, cfg.dykstra_iters, cfg.tol_feas);
    }
  };

  Eigen::MatrixXd x(n, m);
  if (warm_start && warm_start->rows() == n && warm_start->cols() == m) {
    x = *warm_start;
    // zero out entries the gradient can never raise; keeps junk holdings out
    x = (v.array() > 0.0).select(x, 0.0);
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        x(i, j) = v(i, j) > 0.0 ? std::min(amo ? 1.0 : market.supplies(j),
                                           market.supplies(j) / n)
                                : 0.0;
  }
  project(x);

  Eigen::VectorXd u(n);
  auto update_u = [&](const Eigen::MatrixXd& z, Eigen::VectorXd& out) {
    out.noalias() = (v.array() * z.array()).matrix().rowwise().sum();
  };
  auto objective_of = [&](const Eigen::VectorXd& uu) {
    double f = 0.0;
    for (int i = 0; i < n; ++i)
      f += market.budgets(i) * std::log(std::max(uu(i), floor_u(i)));
    return f;
  };
  auto gradient_of = [&](const Eigen::VectorXd& uu, Eigen::MatrixXd& g) {
    for (int i = 0; i < n; ++i) {
      const double scale = market.budgets(i) / std::max(uu(i), floor_u(i));
      g.row(i) = scale * v.row(i);
    }
  };

  update_u(x, u);
  double f = objective_of(u);
  Eigen::MatrixXd grad(n, m), prev_x(n, m), prev_grad(n, m), cand(n, m);
  Eigen::VectorXd cand_u(n);
  double eta = cfg.step_rule.kind == StepRule::Kind::Fixed ? cfg.step_rule.eta
                                                           : cfg.step_rule.alpha0;
  bool have_prev = false;

  Solution sol;
  sol.diagnostics.mode = mode;
  sol.diagnostics.x_thresh = cfg.x_thresh;

  auto finalize = [&](int iters, bool converged, const Duals& d, const KktReport& rep,
                      double step) {
    sol.x = x;
    sol.p = d.p;
    sol.lambda = amo ? d.lambda : Eigen::MatrixXd::Zero(n, market.n_groups());
    sol.beta = d.beta;
    sol.objective = objective_of(u);
    sol.diagnostics.iterations = iters;
    sol.diagnostics.converged = converged;
    sol.diagnostics.residuals = rep;
    sol.diagnostics.floor_active = (u.array() < floor_u.array()).any();
    sol.diagnostics.dykstra_converged = dyk.converged;
    sol.diagnostics.dykstra_displacement = dyk.displacement;
    sol.diagnostics.final_step = step;
  };

  auto check_kkt = [&](int iters, bool force) -> bool {
    Duals d = recover_duals(x, market, cfg.x_thresh);
    if (!amo) d.lambda.setZero();
    const KktReport rep =
        detail::kkt_from_parts(x, d.p, d.lambda, d.beta, market, mode, cfg.x_thresh);
    const double primal_ok = std::max(cfg.tol_feas, 10.0 * dyk.displacement);
    const bool floor_ok = !(u.array() < floor_u.array()).any();
    const bool conv = rep.stationarity <= cfg.tol_kkt &&
                      rep.complementarity <= cfg.tol_kkt &&
                      rep.primal_feas <= primal_ok && floor_ok;
    if (conv || force) {
      finalize(iters, conv, d, rep, eta);
      return true;
    }
    return false;
  };

  int it = 0;
  int stalls = 0;
  for (it = 1; it <= cfg.max_iters; ++it) {
    gradient_of(u, grad);

    if (cfg.step_rule.kind == StepRule::Kind::Backtracking && have_prev) {
      const Eigen::MatrixXd dx = x - prev_x;
      const double denom = -(dx.array() * (grad - prev_grad).array()).sum();
      const double num = (dx.array() * dx.array()).sum();
      if (denom > 1e-300 && num > 0.0)
        eta = std::clamp(num / denom, 1e-14, 1e10);
      else
        eta = std::min(eta * 2.0, 1e10);
    }

    double step_norm2 = 0.0;
    bool moved = false;
    if (cfg.step_rule.kind == StepRule::Kind::Fixed) {
      cand = x + cfg.step_rule.eta * grad;
      project(cand);
      update_u(cand, cand_u);
      f = objective_of(cand_u);
      eta = cfg.step_rule.eta;
      moved = true;
    } else {
      const double c = cfg.step_rule.sufficient_increase;
      for (int bt = 0; bt < 60; ++bt) {
        cand = x + eta * grad;
        project(cand);
        step_norm2 = (cand - x).squaredNorm();
        if (step_norm2 <= 1e-30) break;  // stationary under projection
        update_u(cand, cand_u);
        const double fc = objective_of(cand_u);
        if (fc >= f + c * step_norm2 / eta) {
          f = fc;
          moved = true;
          break;
        }
        eta *= cfg.step_rule.shrink;
        if (eta < 1e-16) break;
      }
    }

    if (moved) {
      prev_x.swap(x);
      prev_grad.swap(grad);
      x.swap(cand);
      u.swap(cand_u);
      have_prev = true;
      stalls = 0;
    } else {
      ++stalls;
      have_prev = false;
      eta = cfg.step_rule.alpha0;
    }

    if (it % cfg.kkt_interval == 0 || it == cfg.max_iters || stalls > 0) {
      if (check_kkt(it, it == cfg.max_iters)) return sol;
      if (stalls >= 3) {  // no gradient progress and residuals still high
        check_kkt(it, true);
        return sol;
      }
    }
  }
  check_kkt(cfg.max_iters, true);
  return sol;
}

inline Solution solve_amo_eg(const Market& market, const SolverConfig& cfg = {},
                             const Eigen::MatrixXd* warm_start = nullptr) {
  return solve(market, cfg, SolveMode::Amo, warm_start);
}

/// Plain Eisenberg-Gale: same program without the at-most-one caps.
/// lambda is identically zero.
inline Solution solve_eg_plain(const Market& market, const SolverConfig& cfg = {},
                               const Eigen::MatrixXd* warm_start = nullptr) {
  return solve(market, cfg, SolveMode::Plain, warm_start);
}

}  // namespace amoeg
