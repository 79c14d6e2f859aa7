#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dpcalib/errors.hpp"

namespace dpcalib {

inline double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace stats_detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace stats_detail

// Spearman rank correlation with average ranks for ties.
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DataError("spearman_rho: size mismatch");
  if (x.size() < 3) throw DataError("spearman_rho: need at least 3 points");
  return stats_detail::pearson(stats_detail::average_ranks(x), stats_detail::average_ranks(y));
}

// One-sided p-value of the observed Spearman correlation against the null of
// no association. Exact permutation enumeration up to n = 8 (40320 orders);
// the t approximation beyond. direction > 0 tests for positive trend,
// direction < 0 for negative.
inline double spearman_trend_p(const std::vector<double>& x, const std::vector<double>& y,
                               int direction) {
  if (direction == 0) throw DataError("spearman_trend_p: direction must be +1 or -1");
  const double rho = spearman_rho(x, y);
  const double signed_rho = direction > 0 ? rho : -rho;
  const std::size_t n = x.size();
  if (n <= 8) {
    std::vector<double> perm = y;
    std::sort(perm.begin(), perm.end());
    long hits = 0, total = 0;
    do {
      const double r = spearman_rho(x, perm);
      const double sr = direction > 0 ? r : -r;
      if (sr >= signed_rho - 1e-12) ++hits;
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(hits) / static_cast<double>(total);
  }
  const double dn = static_cast<double>(n);
  if (std::abs(signed_rho) >= 1.0) return signed_rho > 0 ? 0.0 : 1.0;
  // Student-t statistic with a normal tail approximation; adequate at the
  // grid sizes (n > 8) where exact enumeration stops being practical.
  const double t = signed_rho * std::sqrt((dn - 2.0) / (1.0 - signed_rho * signed_rho));
  return 0.5 * std::erfc(t / std::sqrt(2.0));
}

}  // namespace dpcalib
