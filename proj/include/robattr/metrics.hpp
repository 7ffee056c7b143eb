#pragma once

// Rank-correlation metrics over feature-importance vectors. kendall_tau is
// the tie-adjusted tau-b computed by merge-sort inversion counting:
//   tau_b = (C - D) / sqrt((n0 - n1) (n0 - n2))
// with n0 all pairs, n1/n2 pairs tied in a/b, C/D concordant/discordant.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "robattr/error.hpp"

namespace robattr {

struct RankVector {
  std::vector<double> values;
};

namespace detail {

// strict inversions (earlier > later), counting merge sort
inline uint64_t count_inversions(std::vector<double>& v,
                                 std::vector<double>& scratch) {
  const size_t n = v.size();
  uint64_t inv = 0;
  for (size_t width = 1; width < n; width *= 2) {
    for (size_t lo = 0; lo + width < n; lo += 2 * width) {
      const size_t mid = lo + width;
      const size_t hi = std::min(lo + 2 * width, n);
      size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          inv += mid - i;
          scratch[k++] = v[j++];
        } else {
          scratch[k++] = v[i++];
        }
      }
      while (i < mid) scratch[k++] = v[i++];
      while (j < hi) scratch[k++] = v[j++];
      std::copy(scratch.begin() + static_cast<long>(lo),
                scratch.begin() + static_cast<long>(hi),
                v.begin() + static_cast<long>(lo));
    }
  }
  return inv;
}

template <class Key>
uint64_t tied_pairs(std::vector<Key> keys) {
  std::sort(keys.begin(), keys.end());
  uint64_t total = 0;
  size_t i = 0;
  while (i < keys.size()) {
    size_t j = i;
    while (j < keys.size() && keys[j] == keys[i]) ++j;
    const uint64_t t = j - i;
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

inline std::vector<int64_t> topk_indices(const double* v, int64_t n, int64_t k) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  // largest first; ties broken by lower feature index
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [v](int64_t a, int64_t b) {
                      if (v[a] != v[b]) return v[a] > v[b];
                      return a < b;
                    });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

}  // namespace detail

inline double kendall_tau(const RankVector& a, const RankVector& b) {
  const size_t n = a.values.size();
  ROBATTR_REQUIRE(b.values.size() == n, "kendall: lengths differ: ", n, " vs ",
                  b.values.size());
  ROBATTR_REQUIRE(n >= 2, "kendall: needs at least 2 entries");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
    if (a.values[i] != a.values[j]) return a.values[i] < a.values[j];
    if (b.values[i] != b.values[j]) return b.values[i] < b.values[j];
    return i < j;
  });

  const double n0 = static_cast<double>(n) * (static_cast<double>(n) - 1.0) / 2.0;
  const uint64_t n1 = detail::tied_pairs(a.values);
  const uint64_t n2 = detail::tied_pairs(b.values);
  ROBATTR_REQUIRE(static_cast<double>(n1) < n0,
                  "kendall: first vector is entirely tied");
  ROBATTR_REQUIRE(static_cast<double>(n2) < n0,
                  "kendall: second vector is entirely tied");
  std::vector<std::pair<double, double>> joint(n);
  for (size_t i = 0; i < n; ++i) joint[i] = {a.values[i], b.values[i]};
  const uint64_t n3 = detail::tied_pairs(std::move(joint));

  std::vector<double> bseq(n), scratch(n);
  for (size_t i = 0; i < n; ++i) bseq[i] = b.values[order[i]];
  const uint64_t discordant = detail::count_inversions(bseq, scratch);

  const double concordant_minus_discordant =
      n0 - static_cast<double>(n1) - static_cast<double>(n2) +
      static_cast<double>(n3) - 2.0 * static_cast<double>(discordant);
  return concordant_minus_discordant /
         std::sqrt((n0 - static_cast<double>(n1)) *
                   (n0 - static_cast<double>(n2)));
}

inline double topk_intersection(const RankVector& a, const RankVector& b,
                                int64_t k) {
  const int64_t n = static_cast<int64_t>(a.values.size());
  ROBATTR_REQUIRE(b.values.size() == a.values.size(),
                  "topk: lengths differ");
  ROBATTR_REQUIRE(k >= 1 && k <= n, "topk: k=", k, " out of [1,", n, "]");
  auto ia = detail::topk_indices(a.values.data(), n, k);
  auto ib = detail::topk_indices(b.values.data(), n, k);
  std::sort(ia.begin(), ia.end());
  std::sort(ib.begin(), ib.end());
  std::vector<int64_t> inter;
  std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(),
                        std::back_inserter(inter));
  return static_cast<double>(inter.size()) / static_cast<double>(k);
}

}  // namespace robattr
