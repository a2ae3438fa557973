#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "kmle/errors.hpp"

namespace kmle::metrics {

// Cross-tabulation of two labelings; labels may use any integer coding.
struct ContingencyTable {
  std::vector<std::vector<long long>> counts;  // k_u x k_v
  std::vector<long long> row_sums;
  std::vector<long long> col_sums;
  long long total = 0;

  int k_u() const { return static_cast<int>(row_sums.size()); }
  int k_v() const { return static_cast<int>(col_sums.size()); }
};

inline ContingencyTable contingency(std::span<const int> u, std::span<const int> v) {
  if (u.size() != v.size()) fail(errc::length_mismatch, "label vectors differ in length");
  std::map<int, int> umap, vmap;
  for (int x : u) umap.emplace(x, 0);
  for (int x : v) vmap.emplace(x, 0);
  int idx = 0;
  for (auto& kv : umap) kv.second = idx++;
  idx = 0;
  for (auto& kv : vmap) kv.second = idx++;

  ContingencyTable t;
  t.counts.assign(umap.size(), std::vector<long long>(vmap.size(), 0));
  t.row_sums.assign(umap.size(), 0);
  t.col_sums.assign(vmap.size(), 0);
  t.total = static_cast<long long>(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const int r = umap[u[i]];
    const int c = vmap[v[i]];
    ++t.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    ++t.row_sums[static_cast<std::size_t>(r)];
    ++t.col_sums[static_cast<std::size_t>(c)];
  }
  return t;
}

// True iff the two labelings induce the same partition (the contingency
// matrix has exactly one nonzero per row and per column).
inline bool identical_partition(const ContingencyTable& t) {
  std::vector<int> col_hits(static_cast<std::size_t>(t.k_v()), 0);
  for (const auto& row : t.counts) {
    int hits = 0;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] > 0) {
        ++hits;
        ++col_hits[j];
      }
    if (hits != 1) return false;
  }
  return std::all_of(col_hits.begin(), col_hits.end(), [](int h) { return h == 1; });
}

struct PairCounts {
  long long n00 = 0;  // split in both
  long long n01 = 0;  // together in u, split in v
  long long n10 = 0;  // split in u, together in v
  long long n11 = 0;  // together in both

  long long total() const { return n00 + n01 + n10 + n11; }
};

inline long long choose2(long long n) { return n * (n - 1) / 2; }

inline PairCounts pair_counts(std::span<const int> u, std::span<const int> v) {
  const ContingencyTable t = contingency(u, v);
  PairCounts pc;
  long long same_uv = 0;
  for (const auto& row : t.counts)
    for (long long nij : row) same_uv += choose2(nij);
  long long same_u = 0, same_v = 0;
  for (long long a : t.row_sums) same_u += choose2(a);
  for (long long b : t.col_sums) same_v += choose2(b);
  pc.n11 = same_uv;
  pc.n01 = same_u - same_uv;
  pc.n10 = same_v - same_uv;
  pc.n00 = choose2(t.total) - pc.n11 - pc.n01 - pc.n10;
  return pc;
}

inline double rand_index(std::span<const int> u, std::span<const int> v) {
  const PairCounts pc = pair_counts(u, v);
  const long long total = pc.total();
  if (total == 0) return 1.0;  // no pairs: vacuous agreement
  return static_cast<double>(pc.n00 + pc.n11) / static_cast<double>(total);
}

// Adjusted Rand index in pair-count form:
//   2 (N00 N11 - N01 N10) / [(N00+N01)(N01+N11) + (N00+N10)(N10+N11)].
// A vanishing denominator is resolved to 1 for identical partitions, else 0.
inline double ari(std::span<const int> u, std::span<const int> v) {
  const PairCounts pc = pair_counts(u, v);
  const double n00 = static_cast<double>(pc.n00);
  const double n01 = static_cast<double>(pc.n01);
  const double n10 = static_cast<double>(pc.n10);
  const double n11 = static_cast<double>(pc.n11);
  const double den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
  if (den == 0.0) return identical_partition(contingency(u, v)) ? 1.0 : 0.0;
  return 2.0 * (n00 * n11 - n01 * n10) / den;
}

inline double entropy_of(const std::vector<long long>& sums, long long total) {
  double h = 0.0;
  for (long long a : sums) {
    if (a <= 0) continue;
    const double p = static_cast<double>(a) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

inline double entropy(std::span<const int> u) {
  const ContingencyTable t = contingency(u, u);
  return entropy_of(t.row_sums, t.total);
}

inline double mutual_information(std::span<const int> u, std::span<const int> v) {
  const ContingencyTable t = contingency(u, v);
  const double n = static_cast<double>(t.total);
  double mi = 0.0;
  for (std::size_t i = 0; i < t.counts.size(); ++i)
    for (std::size_t j = 0; j < t.counts[i].size(); ++j) {
      const long long nij = t.counts[i][j];
      if (nij <= 0) continue;
      const double pij = static_cast<double>(nij) / n;
      mi += pij * std::log(static_cast<double>(nij) * n /
                           (static_cast<double>(t.row_sums[i]) * static_cast<double>(t.col_sums[j])));
    }
  return std::max(mi, 0.0);
}

namespace detail {

inline double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

inline double normalized_mi(std::span<const int> u, std::span<const int> v, bool use_max) {
  const ContingencyTable t = contingency(u, v);
  const double hu = entropy_of(t.row_sums, t.total);
  const double hv = entropy_of(t.col_sums, t.total);
  const double den = use_max ? std::max(hu, hv) : std::sqrt(hu * hv);
  if (den == 0.0) return identical_partition(t) ? 1.0 : 0.0;
  return clamp01(mutual_information(u, v) / den);
}

}  // namespace detail

inline double nmi_max(std::span<const int> u, std::span<const int> v) {
  return detail::normalized_mi(u, v, true);
}

inline double nmi_sqrt(std::span<const int> u, std::span<const int> v) {
  return detail::normalized_mi(u, v, false);
}

inline double nid(std::span<const int> u, std::span<const int> v) { return 1.0 - nmi_max(u, v); }

}  // namespace kmle::metrics
