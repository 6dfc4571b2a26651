#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "amoeg/rng.hpp"

namespace amoeg {

/// A market instance: buyer valuations, item supplies, buyer budgets and the
/// partition of items into constraint groups (a buyer may hold at most one
/// unit in total from each group). Singleton groups give the plain
/// at-most-one setting. Immutable by convention once constructed.
struct Market {
  Eigen::MatrixXd valuations;            // N x M, v(i,j) >= 0
  Eigen::VectorXd supplies;              // M, s(j) > 0
  Eigen::VectorXd budgets;               // N, B(i) > 0
  std::vector<std::vector<int>> groups;  // partition of {0..M-1}

  int n_buyers() const { return static_cast<int>(valuations.rows()); }
  int n_items() const { return static_cast<int>(valuations.cols()); }
  int n_groups() const { return static_cast<int>(groups.size()); }

  bool equal_budgets(double tol = 1e-12) const {
    return budgets.size() == 0 || (budgets.maxCoeff() - budgets.minCoeff()) <= tol;
  }

  /// Per-item group id. Requires a valid partition.
  std::vector<int> group_index() const {
    std::vector<int> gid(static_cast<std::size_t>(n_items()), -1);
    for (int k = 0; k < n_groups(); ++k)
      for (int j : groups[static_cast<std::size_t>(k)]) {
        if (j < 0 || j >= n_items() || gid[static_cast<std::size_t>(j)] != -1)
          throw std::logic_error("groups not a partition");
        gid[static_cast<std::size_t>(j)] = k;
      }
    for (int g : gid)
      if (g == -1) throw std::logic_error("groups not a partition");
    return gid;
  }

  /// max_k sum_{j in k} s_j; reduces to max_j s_j for singleton groups.
  double s_max() const {
    double m = 0.0;
    for (const auto& g : groups) {
      double t = 0.0;
      for (int j : g) t += supplies(j);
      m = std::max(m, t);
    }
    return m;
  }
};

inline std::vector<std::vector<int>> singleton_groups(int n_items) {
  std::vector<std::vector<int>> g(static_cast<std::size_t>(n_items));
  for (int j = 0; j < n_items; ++j) g[static_cast<std::size_t>(j)] = {j};
  return g;
}

inline Market make_market(Eigen::MatrixXd valuations, Eigen::VectorXd supplies,
                          Eigen::VectorXd budgets = {},
                          std::vector<std::vector<int>> groups = {}) {
  Market m;
  m.valuations = std::move(valuations);
  m.supplies = std::move(supplies);
  if (budgets.size() == 0) budgets = Eigen::VectorXd::Ones(m.valuations.rows());
  m.budgets = std::move(budgets);
  if (groups.empty()) groups = singleton_groups(static_cast<int>(m.valuations.cols()));
  m.groups = std::move(groups);
  return m;
}

/// Reports every invariant violation with coordinates; empty means valid.
/// Deterministic order: shape, valuations (row-major), supplies, budgets,
/// groups.
inline std::vector<std::string> validate(const Market& m) {
  std::vector<std::string> out;
  const int n = m.n_buyers(), mm = m.n_items();
  if (m.supplies.size() != mm)
    out.push_back("supplies length " + std::to_string(m.supplies.size()) +
                  " does not match item count " + std::to_string(mm));
  if (m.budgets.size() != n)
    out.push_back("budgets length " + std::to_string(m.budgets.size()) +
                  " does not match buyer count " + std::to_string(n));
  for (int i = 0; i < n; ++i) {
    bool any_positive = false;
    for (int j = 0; j < mm; ++j) {
      const double v = m.valuations(i, j);
      if (v < 0.0)
        out.push_back("valuation (" + std::to_string(i) + "," + std::to_string(j) +
                      ") is negative");
      if (v > 0.0) any_positive = true;
    }
    if (!any_positive)
      out.push_back("buyer " + std::to_string(i) + " has all-zero valuations");
  }
  for (int j = 0; j < static_cast<int>(m.supplies.size()); ++j)
    if (!(m.supplies(j) > 0.0))
      out.push_back("supply of item " + std::to_string(j) + " is not positive");
  for (int i = 0; i < static_cast<int>(m.budgets.size()); ++i)
    if (!(m.budgets(i) > 0.0))
      out.push_back("budget of buyer " + std::to_string(i) + " is not positive");

  std::vector<int> seen(static_cast<std::size_t>(mm), 0);
  bool partition_ok = true;
  for (int k = 0; k < m.n_groups(); ++k)
    for (int j : m.groups[static_cast<std::size_t>(k)]) {
      if (j < 0 || j >= mm) {
        out.push_back("groups not a partition: item index " + std::to_string(j) +
                      " in group " + std::to_string(k) + " is out of range");
        partition_ok = false;
      } else {
        seen[static_cast<std::size_t>(j)] += 1;
      }
    }
  for (int j = 0; j < mm; ++j) {
    if (seen[static_cast<std::size_t>(j)] > 1) {
      out.push_back("groups not a partition: item " + std::to_string(j) + " appears in " +
                    std::to_string(seen[static_cast<std::size_t>(j)]) + " groups");
      partition_ok = false;
    } else if (seen[static_cast<std::size_t>(j)] == 0) {
      out.push_back("groups not a partition: item " + std::to_string(j) +
                    " not covered by any group");
      partition_ok = false;
    }
  }
  (void)partition_ok;
  return out;
}

inline void require_valid(const Market& m) {
  const auto v = validate(m);
  if (!v.empty()) throw std::invalid_argument("invalid market: " + v.front());
}

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

inline std::vector<Interval> uniform_box(int dim, double lo, double hi) {
  return std::vector<Interval>(static_cast<std::size_t>(dim), Interval{lo, hi});
}

/// Generating spec for low-rank markets: v_ij = theta_i . psi_j with latent
/// vectors drawn uniformly from compact boxes in the nonnegative orthant.
struct LowRankSpec {
  int n_buyers = 0;
  int n_items = 0;
  int dim = 1;
  std::vector<Interval> theta_bounds;  // size dim
  std::vector<Interval> psi_bounds;    // size dim
  double supply = 2.0;                 // per-item supply
  std::uint64_t rng_seed = 0;
};

inline std::vector<std::string> validate(const LowRankSpec& s) {
  std::vector<std::string> out;
  if (s.n_buyers < 1) out.push_back("n_buyers must be positive");
  if (s.n_items < 1) out.push_back("n_items must be positive");
  if (s.dim < 1) out.push_back("dim must be positive");
  if (static_cast<int>(s.theta_bounds.size()) != s.dim)
    out.push_back("theta_bounds size must equal dim");
  if (static_cast<int>(s.psi_bounds.size()) != s.dim)
    out.push_back("psi_bounds size must equal dim");
  for (const auto& iv : s.theta_bounds)
    if (iv.lo < 0.0 || iv.hi < iv.lo) out.push_back("theta interval invalid");
  for (const auto& iv : s.psi_bounds)
    if (iv.lo < 0.0 || iv.hi < iv.lo) out.push_back("psi interval invalid");
  if (!(s.supply > 0.0)) out.push_back("supply must be positive");
  return out;
}

/// A generated market together with the latent factors that produced it.
/// The latents parameterize the deviation search space.
struct LowRankMarket {
  Market market;
  Eigen::MatrixXd theta;  // N x d
  Eigen::MatrixXd psi;    // M x d
};

inline LowRankMarket gen_low_rank(const LowRankSpec& spec) {
  {
    const auto errs = validate(spec);
    if (!errs.empty()) throw std::invalid_argument("invalid LowRankSpec: " + errs.front());
  }
  Rng rng(spec.rng_seed);
  Eigen::MatrixXd theta(spec.n_buyers, spec.dim), psi(spec.n_items, spec.dim);
  for (int i = 0; i < spec.n_buyers; ++i)
    for (int c = 0; c < spec.dim; ++c) {
      const auto& iv = spec.theta_bounds[static_cast<std::size_t>(c)];
      theta(i, c) = rng.uniform(iv.lo, iv.hi);
    }
  for (int j = 0; j < spec.n_items; ++j)
    for (int c = 0; c < spec.dim; ++c) {
      const auto& iv = spec.psi_bounds[static_cast<std::size_t>(c)];
      psi(j, c) = rng.uniform(iv.lo, iv.hi);
    }
  LowRankMarket out;
  out.market = make_market(theta * psi.transpose(),
                           Eigen::VectorXd::Constant(spec.n_items, spec.supply));
  out.theta = std::move(theta);
  out.psi = std::move(psi);
  return out;
}

enum class ReplicateRule { Copy, BlockDiagonal };

/// Replicates a base market k times. Buyer (c,i) lives at row c*N+i, item
/// (c',j) at column c'*M+j. Under Copy every buyer values every replicate of
/// an item identically, so buyers come in sets of k exact twins. Constraint
/// groups stay local to each item replicate.
inline Market gen_replicator(const Market& base, int k,
                             ReplicateRule rule = ReplicateRule::Copy) {
  if (k < 1) throw std::invalid_argument("replication factor must be >= 1");
  require_valid(base);
  const int n = base.n_buyers(), m = base.n_items();
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(k * n, k * m);
  for (int c = 0; c < k; ++c)
    for (int cp = 0; cp < k; ++cp) {
      if (rule == ReplicateRule::BlockDiagonal && c != cp) continue;
      v.block(c * n, cp * m, n, m) = base.valuations;
    }
  Eigen::VectorXd s(k * m), b(k * n);
  for (int c = 0; c < k; ++c) {
    s.segment(c * m, m) = base.supplies;
    b.segment(c * n, n) = base.budgets;
  }
  std::vector<std::vector<int>> groups;
  groups.reserve(static_cast<std::size_t>(k) * base.groups.size());
  for (int c = 0; c < k; ++c)
    for (const auto& g : base.groups) {
      std::vector<int> shifted;
      shifted.reserve(g.size());
      for (int j : g) shifted.push_back(c * m + j);
      groups.push_back(std::move(shifted));
    }
  return make_market(std::move(v), std::move(s), std::move(b), std::move(groups));
}

/// Per-buyer ranked item lists, ranks within {1..r_max}, distinct per buyer.
struct RankProfile {
  std::vector<std::vector<std::pair<int, int>>> ranked;  // (item, rank)
};

/// Rank r maps to utility (r_max + 1 - r) / r_max; unranked items get 0.
inline Eigen::MatrixXd ranks_to_utilities(const RankProfile& profile, int n_items,
                                          int r_max = 30) {
  const int n = static_cast<int>(profile.ranked.size());
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n_items);
  for (int i = 0; i < n; ++i) {
    std::vector<int> used(static_cast<std::size_t>(r_max) + 1, 0);
    for (const auto& [item, rank] : profile.ranked[static_cast<std::size_t>(i)]) {
      if (item < 0 || item >= n_items)
        throw std::invalid_argument("buyer " + std::to_string(i) + ": item index " +
                                    std::to_string(item) + " out of range");
      if (rank < 1 || rank > r_max)
        throw std::invalid_argument("buyer " + std::to_string(i) + ": rank " +
                                    std::to_string(rank) + " outside [1," +
                                    std::to_string(r_max) + "]");
      if (used[static_cast<std::size_t>(rank)]++)
        throw std::invalid_argument("buyer " + std::to_string(i) + ": duplicate rank " +
                                    std::to_string(rank));
      v(i, item) = static_cast<double>(r_max + 1 - rank) / static_cast<double>(r_max);
    }
  }
  return v;
}

/// Random rank-based market: each buyer ranks `n_ranked` distinct items.
/// Supplies drawn uniformly from [supply_lo, supply_hi] (integers).
inline Market gen_rank_market(int n_buyers, int n_items, int n_ranked, int supply_lo,
                              int supply_hi, std::uint64_t seed, int r_max = 30) {
  if (n_ranked > n_items) throw std::invalid_argument("n_ranked exceeds n_items");
  if (n_ranked > r_max) throw std::invalid_argument("n_ranked exceeds r_max");
  Rng rng(seed);
  RankProfile profile;
  profile.ranked.resize(static_cast<std::size_t>(n_buyers));
  std::vector<int> items(static_cast<std::size_t>(n_items));
  for (int j = 0; j < n_items; ++j) items[static_cast<std::size_t>(j)] = j;
  for (int i = 0; i < n_buyers; ++i) {
    rng.shuffle(items);
    auto& row = profile.ranked[static_cast<std::size_t>(i)];
    row.reserve(static_cast<std::size_t>(n_ranked));
    for (int r = 1; r <= n_ranked; ++r)
      row.emplace_back(items[static_cast<std::size_t>(r - 1)], r);
  }
  Eigen::VectorXd s(n_items);
  for (int j = 0; j < n_items; ++j)
    s(j) = static_cast<double>(rng.uniform_int(supply_lo, supply_hi));
  return make_market(ranks_to_utilities(profile, n_items, r_max), std::move(s));
}

/// Prefix markets over a shared item pool: for each (item count m, total
/// supply S) pair the market keeps the first m items with uniform supply S/m.
/// Iterates item counts outer, supply totals inner.
inline std::vector<Market> nested_series(const Market& base_pool,
                                         const std::vector<int>& item_counts,
                                         const std::vector<double>& total_supplies) {
  require_valid(base_pool);
  std::vector<Market> out;
  for (int m : item_counts) {
    if (m < 1 || m > base_pool.n_items())
      throw std::invalid_argument("item count " + std::to_string(m) +
                                  " exceeds pool width " +
                                  std::to_string(base_pool.n_items()));
    for (double total : total_supplies) {
      Market mk = make_market(base_pool.valuations.leftCols(m),
                              Eigen::VectorXd::Constant(m, total / m), base_pool.budgets);
      out.push_back(std::move(mk));
    }
  }
  return out;
}

/// sup-norm distance matrix between buyer valuation rows.
inline Eigen::MatrixXd twin_distances(const Eigen::MatrixXd& valuations) {
  const int n = static_cast<int>(valuations.rows());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int i2 = i + 1; i2 < n; ++i2) {
      const double dist = (valuations.row(i) - valuations.row(i2)).cwiseAbs().maxCoeff();
      d(i, i2) = dist;
      d(i2, i) = dist;
    }
  return d;
}

}  // namespace amoeg
