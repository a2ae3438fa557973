#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kmle/core.hpp"
#include "kmle/errors.hpp"
#include "kmle/kvars.hpp"
#include "kmle/rng.hpp"

namespace kmle::bic {

struct BicConfig {
  int restarts = 5;
  std::uint64_t seed = 0;
  StopRule stop;
  kvars::InitMode init = kvars::InitMode::Rnd;
  bool ridge = false;
  int threads = 0;
  int max_sweeps = 20;  // cyclic-descent sweep cap
};

// Penalty term of the criterion: {K [(p+1/2) m^2 + 3m/2] + N} ln[N (T-p)].
inline double bic_penalty(int k, int p, int m, int n_series, int t) {
  if (k < 1 || p < 1 || m < 1 || n_series < 1 || p >= t)
    fail(errc::invalid_argument, "penalty arguments must be positive with p < t");
  const double per_cluster = (p + 0.5) * m * m + 1.5 * m;
  return (k * per_cluster + n_series) * std::log(static_cast<double>(n_series) * (t - p));
}

struct BicCell {
  int k = 0;
  int p = 0;
  double bic = std::numeric_limits<double>::infinity();
  double loglik = -std::numeric_limits<double>::infinity();
  std::string status;  // "ok" or a failure reason; empty = not evaluated
  int restarts = 0;

  bool evaluated() const { return !status.empty(); }
  bool ok() const { return status == "ok"; }
};

struct BicTable {
  std::vector<int> k_values;
  std::vector<int> p_values;
  std::vector<std::vector<BicCell>> cells;  // [k index][p index]
  int best_ki = -1;
  int best_pi = -1;
  // Incumbent (K, p) after each half-sweep of cyclic descent; empty for an
  // exhaustive search.
  std::vector<std::pair<int, int>> path;

  const BicCell* best() const {
    if (best_ki < 0 || best_pi < 0) return nullptr;
    return &cells[static_cast<std::size_t>(best_ki)][static_cast<std::size_t>(best_pi)];
  }

  const BicCell& at(int k, int p) const {
    for (std::size_t ki = 0; ki < k_values.size(); ++ki)
      for (std::size_t pi = 0; pi < p_values.size(); ++pi)
        if (k_values[ki] == k && p_values[pi] == p) return cells[ki][pi];
    fail(errc::invalid_argument, "cell not in grid");
  }
};

// Minimal finite score; ties broken toward smaller K, then smaller p.
inline void select_best(BicTable& table) {
  table.best_ki = table.best_pi = -1;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t ki = 0; ki < table.k_values.size(); ++ki)
    for (std::size_t pi = 0; pi < table.p_values.size(); ++pi) {
      const BicCell& c = table.cells[ki][pi];
      if (!c.evaluated() || !std::isfinite(c.bic)) continue;
      if (c.bic < best) {
        best = c.bic;
        table.best_ki = static_cast<int>(ki);
        table.best_pi = static_cast<int>(pi);
      }
    }
}

// One (K, p) cell: -2 * (best restart log-likelihood) + penalty. Solver
// failures are recorded as +inf with the reason, never thrown.
inline BicCell bic_score(const Dataset& ds, int k, int p, const BicConfig& cfg) {
  BicCell cell;
  cell.k = k;
  cell.p = p;
  cell.restarts = cfg.restarts;
  if (p < 1 || p > ds.t_len - 2) {
    cell.status = errc_name(errc::order_too_large);
    return cell;
  }
  if (k < 1 || k > ds.n()) {
    cell.status = errc_name(errc::too_few_series);
    return cell;
  }
  kvars::KvarsConfig run;
  run.k = k;
  run.p = p;
  run.init = cfg.init;
  run.stop = cfg.stop;
  run.restarts = cfg.restarts;
  run.ridge = cfg.ridge;
  run.threads = cfg.threads;
  run.seed = derive_seed(cfg.seed, 0xB1C,
                         static_cast<std::uint64_t>(k) * 1000003ull + static_cast<std::uint64_t>(p));
  try {
    const kvars::KvarsRun result = kvars::run_kvars(ds, run);
    cell.loglik = result.fit.final_loglik();
    cell.bic = -2.0 * cell.loglik + bic_penalty(k, p, ds.m, ds.n(), ds.t_len);
    cell.status = "ok";
  } catch (const Error& e) {
    cell.status = e.what();
  }
  return cell;
}

inline BicTable make_table(std::vector<int> k_grid, std::vector<int> p_grid) {
  if (k_grid.empty() || p_grid.empty()) fail(errc::empty_input, "grids must be nonempty");
  std::sort(k_grid.begin(), k_grid.end());
  k_grid.erase(std::unique(k_grid.begin(), k_grid.end()), k_grid.end());
  std::sort(p_grid.begin(), p_grid.end());
  p_grid.erase(std::unique(p_grid.begin(), p_grid.end()), p_grid.end());
  BicTable table;
  table.cells.assign(k_grid.size(), std::vector<BicCell>(p_grid.size()));
  for (std::size_t ki = 0; ki < k_grid.size(); ++ki)
    for (std::size_t pi = 0; pi < p_grid.size(); ++pi) {
      table.cells[ki][pi].k = k_grid[ki];
      table.cells[ki][pi].p = p_grid[pi];
    }
  table.k_values = std::move(k_grid);
  table.p_values = std::move(p_grid);
  return table;
}

// Exhaustive evaluation of the (K, p) grid.
inline BicTable grid_search(const Dataset& ds, const std::vector<int>& k_grid, const std::vector<int>& p_grid,
                            const BicConfig& cfg) {
  BicTable table = make_table(k_grid, p_grid);
  for (std::size_t ki = 0; ki < table.k_values.size(); ++ki)
    for (std::size_t pi = 0; pi < table.p_values.size(); ++pi)
      table.cells[ki][pi] = bic_score(ds, table.k_values[ki], table.p_values[pi], cfg);
  select_best(table);
  return table;
}

// Alternating one-dimensional minimisations over K and p from `start` until
// the incumbent cell repeats. Evaluated cells share bic_score's per-cell seed
// derivation, so scores agree with grid_search on the same data.
inline BicTable cyclic_descent(const Dataset& ds, const std::vector<int>& k_grid,
                               const std::vector<int>& p_grid, std::pair<int, int> start,
                               const BicConfig& cfg) {
  BicTable table = make_table(k_grid, p_grid);
  auto k_index = [&](int k) {
    const auto it = std::find(table.k_values.begin(), table.k_values.end(), k);
    if (it == table.k_values.end()) fail(errc::invalid_argument, "start K not in grid");
    return static_cast<std::size_t>(it - table.k_values.begin());
  };
  auto p_index = [&](int p) {
    const auto it = std::find(table.p_values.begin(), table.p_values.end(), p);
    if (it == table.p_values.end()) fail(errc::invalid_argument, "start p not in grid");
    return static_cast<std::size_t>(it - table.p_values.begin());
  };

  auto eval = [&](std::size_t ki, std::size_t pi) -> const BicCell& {
    BicCell& cell = table.cells[ki][pi];
    if (!cell.evaluated()) cell = bic_score(ds, table.k_values[ki], table.p_values[pi], cfg);
    return cell;
  };

  std::size_t ki = k_index(start.first);
  std::size_t pi = p_index(start.second);
  eval(ki, pi);
  table.path.emplace_back(table.k_values[ki], table.p_values[pi]);
  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    const std::size_t prev_ki = ki, prev_pi = pi;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < table.k_values.size(); ++i) {
      const BicCell& c = eval(i, pi);
      if (std::isfinite(c.bic) && c.bic < best) {
        best = c.bic;
        ki = i;
      }
    }
    table.path.emplace_back(table.k_values[ki], table.p_values[pi]);
    best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < table.p_values.size(); ++j) {
      const BicCell& c = eval(ki, j);
      if (std::isfinite(c.bic) && c.bic < best) {
        best = c.bic;
        pi = j;
      }
    }
    table.path.emplace_back(table.k_values[ki], table.p_values[pi]);
    if (ki == prev_ki && pi == prev_pi) break;
  }
  table.best_ki = static_cast<int>(ki);
  table.best_pi = static_cast<int>(pi);
  return table;
}

}  // namespace kmle::bic
