#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace afcomb {

// Smallest reportable p-value; keeps -log(p) finite downstream.
constexpr double kPFloor = 1e-300;

inline double floor_pvalue(double p) {
  if (!(p > kPFloor)) return kPFloor;
  return p > 1.0 ? 1.0 : p;
}

// two-sided p for a t statistic with df degrees of freedom
inline double t_pvalue_two_sided(double t, double df) {
  if (!std::isfinite(t)) return kPFloor;
  boost::math::students_t_distribution<double> dist(df);
  return floor_pvalue(2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
}

// two-sided p for a normal z statistic
inline double z_pvalue_two_sided(double z) {
  if (!std::isfinite(z)) return kPFloor;
  return floor_pvalue(std::erfc(std::fabs(z) / 1.4142135623730950488));
}

inline double log_binom(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Upper-tail hypergeometric P[X >= overlap] for a universe of size N with
// K marked items and a draw of size n.
inline double hypergeom_upper_tail(std::size_t overlap, std::size_t K,
                                   std::size_t n, std::size_t N) {
  const std::size_t hi = std::min(K, n);
  if (overlap > hi) return 0.0;
  const double denom = log_binom(static_cast<double>(N), static_cast<double>(n));
  double sum = 0.0;
  for (std::size_t x = overlap; x <= hi; ++x) {
    if (n - x > N - K) continue;  // impossible configuration
    const double lp = log_binom(static_cast<double>(K), static_cast<double>(x)) +
                      log_binom(static_cast<double>(N - K), static_cast<double>(n - x)) -
                      denom;
    sum += std::exp(lp);
  }
  return std::min(1.0, sum);
}

// Benjamini-Hochberg q-values for p sorted in any order; returns q in the
// same order as the input.
inline std::vector<double> bh_qvalues(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> q(m);
  double running = 1.0;
  for (std::size_t r = m; r > 0; --r) {
    const std::size_t i = order[r - 1];
    running = std::min(running, p[i] * static_cast<double>(m) / static_cast<double>(r));
    q[i] = running;
  }
  return q;
}

// Two-sample Kolmogorov-Smirnov distance (used by calibration checks).
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

// One-sample KS distance against Uniform(0,1).
inline double ks_uniform_distance(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    d = std::max({d, std::fabs(x[i] - lo), std::fabs(x[i] - hi)});
  }
  return d;
}

}  // namespace afcomb
