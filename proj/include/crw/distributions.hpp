#pragma once

// Small exact/closed-form distribution helpers shared by eval and stats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "crw/error.hpp"

namespace crw {

inline constexpr double kZ95 = 1.959963984540054;

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double log_choose(std::size_t n, std::size_t k) {
  return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
         std::lgamma(static_cast<double>(n - k) + 1);
}

inline double binomial_pmf(std::size_t k, std::size_t n, double p) {
  if (k > n) return 0.0;
  if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return k == n ? 1.0 : 0.0;
  return std::exp(log_choose(n, k) + static_cast<double>(k) * std::log(p) +
                  static_cast<double>(n - k) * std::log1p(-p));
}

/// P(X >= k).
inline double binomial_upper(std::size_t k, std::size_t n, double p = 0.5) {
  double s = 0.0;
  for (std::size_t i = k; i <= n; ++i) s += binomial_pmf(i, n, p);
  return std::min(1.0, s);
}

/// P(X <= k).
inline double binomial_lower(std::size_t k, std::size_t n, double p = 0.5) {
  double s = 0.0;
  for (std::size_t i = 0; i <= std::min(k, n); ++i) s += binomial_pmf(i, n, p);
  return std::min(1.0, s);
}

/// Two-sided exact test: sum of outcome probabilities no larger than the
/// observed one (relative tolerance 1e-7).
inline double binomial_two_sided(std::size_t k, std::size_t n, double p = 0.5) {
  if (n == 0) return 1.0;
  const double observed = binomial_pmf(k, n, p);
  double s = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double q = binomial_pmf(i, n, p);
    if (q <= observed * (1.0 + 1e-7)) s += q;
  }
  return std::min(1.0, s);
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Wilson score interval for k successes out of n.
inline Interval wilson_interval(std::size_t k, std::size_t n, double z = kZ95) {
  if (n == 0) fail(ErrorCode::EmptyInput, "wilson interval needs n > 0");
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (ph + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(ph * (1 - ph) / nn + z2 / (4 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Average (mid) ranks, 1-based.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

struct WilcoxonResult {
  double w_plus = 0.0;
  double w_minus = 0.0;
  std::size_t n_used = 0;   // nonzero differences
  std::size_t n_zero = 0;
  double p_value = 1.0;     // two-sided
  bool exact = false;
  bool degenerate = false;  // no nonzero differences
};

inline constexpr std::size_t kWilcoxonExactMax = 25;

/// Two-sided signed-rank test. Zero differences are dropped, tied magnitudes
/// get mid-ranks. Exact null enumeration for n <= 25, otherwise the normal
/// approximation with tie correction and continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> diffs) {
  WilcoxonResult r;
  std::vector<double> mags;
  std::vector<bool> positive;
  for (double d : diffs) {
    if (d == 0.0) {
      ++r.n_zero;
      continue;
    }
    mags.push_back(std::fabs(d));
    positive.push_back(d > 0);
  }
  r.n_used = mags.size();
  if (r.n_used == 0) {
    r.degenerate = true;
    return r;
  }
  const auto ranks = average_ranks(mags);
  for (std::size_t i = 0; i < ranks.size(); ++i) (positive[i] ? r.w_plus : r.w_minus) += ranks[i];
  const std::size_t n = r.n_used;

  if (n <= kWilcoxonExactMax) {
    // Mid-ranks are multiples of 1/2, so count subsets over doubled ranks.
    std::vector<int> twice(n);
    int total = 0;
    for (std::size_t i = 0; i < n; ++i) total += twice[i] = static_cast<int>(std::lround(2 * ranks[i]));
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    for (int t : twice) {
      for (int s = total; s >= t; --s) ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - t)];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    const int obs = static_cast<int>(std::lround(2 * r.w_plus));
    double le = 0.0, ge = 0.0;
    for (int s = 0; s <= total; ++s) {
      if (s <= obs) le += ways[static_cast<std::size_t>(s)];
      if (s >= obs) ge += ways[static_cast<std::size_t>(s)];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / all);
    r.exact = true;
    return r;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1) / 4.0;
  double var = nn * (nn + 1) * (2 * nn + 1) / 24.0;
  std::vector<double> sorted = mags;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    var -= (t * t * t - t) / 48.0;
    i = j + 1;
  }
  if (var <= 0) {
    r.p_value = 1.0;
    return r;
  }
  const double dev = std::max(0.0, std::fabs(r.w_plus - mean) - 0.5);
  r.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(dev / std::sqrt(var))));
  return r;
}

/// Nearest-rank percentile (q in (0, 100]) of a non-empty sample.
inline double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrorCode::EmptyInput, "percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::ceil(q / 100.0 * static_cast<double>(values.size()));
  const std::size_t idx = static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(values.size())));
  return values[idx - 1];
}

}  // namespace crw
