#ifndef MBPRE_TAIL_STATS_HPP
#define MBPRE_TAIL_STATS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbpre/errors.hpp"

namespace mbpre {

/// Uncensored observations plus the number of censored ones left out.
struct SampleSet {
  std::vector<double> values;
  std::size_t censored = 0;
  std::string source;
  std::uint64_t seed = 0;

  std::size_t size() const { return values.size(); }
  double censored_fraction() const {
    const std::size_t all = values.size() + censored;
    return all == 0 ? 0.0 : static_cast<double>(censored) / static_cast<double>(all);
  }
  /// Tail fits are flagged when more than this fraction was censored.
  static constexpr double kCensoredWarning = 0.01;
  bool heavily_censored() const { return censored_fraction() > kCensoredWarning; }
};

struct HillPoint {
  std::size_t k = 0;
  double index = 0.0;
};

struct TailFit {
  double hill_index = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t k_used = 0;
  std::size_t n = 0;
  std::vector<HillPoint> hill_plot;
  /// Relative spread (max − min)/estimate of the Hill plot over the decade of k around k_used.
  double plot_spread = 0.0;
  bool plot_flat = false;
  bool unreliable = false;  ///< censored fraction above 1%
  std::vector<std::pair<double, double>> ccdf_points;
};

namespace detail {

inline std::vector<double> sorted_descending(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  return s;
}

/// Hill index from the k largest of a descending-sorted sample.
inline double hill_from_sorted(std::span<const double> desc, std::size_t k) {
  const double threshold = desc[k];
  if (!(threshold > 0.0)) throw StatisticsError("nonpositive samples in tail window");
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += std::log(desc[i] / threshold);
  if (!(acc > 0.0)) throw StatisticsError("degenerate tail window");
  return static_cast<double>(k) / acc;
}

}  // namespace detail

inline constexpr double kFlatnessThreshold = 0.15;

/// Hill estimate α̂ = [ (1/k) Σ_{i≤k} log(X_(n−i+1)/X_(n−k)) ]^{-1} with
/// k = ⌈√n⌉ by default and CI α̂(1 ± 1.96/√k). The Hill plot covers a
/// log-spaced grid of k; flatness is judged over the decade [k/√10, k·√10].
inline TailFit hill_estimator(const SampleSet& samples, std::optional<std::size_t> k = std::nullopt) {
  const std::size_t n = samples.size();
  if (n < 100) throw StatisticsError("hill estimator needs at least 100 uncensored samples, got " + std::to_string(n));
  const std::size_t kk = k ? *k : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  if (kk < 1 || kk >= n) throw StatisticsError("hill estimator needs 1 <= k < n");
  const std::vector<double> desc = detail::sorted_descending(samples.values);

  TailFit fit;
  fit.n = n;
  fit.k_used = kk;
  fit.hill_index = detail::hill_from_sorted(desc, kk);
  const double half = 1.959963984540054 / std::sqrt(static_cast<double>(kk));
  fit.ci_lo = fit.hill_index * (1.0 - half);
  fit.ci_hi = fit.hill_index * (1.0 + half);
  fit.unreliable = samples.heavily_censored();

  const double lo = std::max(2.0, static_cast<double>(kk) / std::sqrt(10.0));
  const double hi = std::min(static_cast<double>(n - 1), static_cast<double>(kk) * std::sqrt(10.0));
  std::vector<std::size_t> grid;
  const double kmax = static_cast<double>(n - 1);
  for (double g = 2.0; g <= kmax; g *= 1.25) grid.push_back(static_cast<std::size_t>(g));
  for (int t = 0; t <= 10; ++t) grid.push_back(static_cast<std::size_t>(std::round(lo * std::pow(hi / lo, t / 10.0))));
  grid.push_back(kk);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  double mn = INFINITY, mx = -INFINITY;
  for (std::size_t g : grid) {
    if (g < 1 || g >= n) continue;
    double a;
    try {
      a = detail::hill_from_sorted(desc, g);
    } catch (const StatisticsError&) {
      continue;
    }
    fit.hill_plot.push_back({g, a});
    if (static_cast<double>(g) >= lo - 0.5 && static_cast<double>(g) <= hi + 0.5) {
      mn = std::min(mn, a);
      mx = std::max(mx, a);
    }
  }
  fit.plot_spread = std::isfinite(mn) ? (mx - mn) / fit.hill_index : INFINITY;
  fit.plot_flat = fit.plot_spread <= kFlatnessThreshold;
  return fit;
}

struct MomentProbe {
  double x = 0.0;
  double estimate = 0.0;                 ///< mean of X^x over the full sample
  std::vector<double> prefix_estimates;  ///< on the first n/4, n/2, n samples
  bool stable = false;                   ///< relative change < 10% across prefixes
};

/// Empirical E[X^x] on nested prefixes; a moment that keeps moving as the
/// sample grows suggests it is infinite.
inline std::vector<MomentProbe> moment_probe(const SampleSet& samples, std::span<const double> x_grid,
                                             double tolerance = 0.10) {
  const std::size_t n = samples.size();
  if (n == 0) throw StatisticsError("moment probe needs samples");
  std::vector<MomentProbe> out;
  for (double x : x_grid) {
    MomentProbe p;
    p.x = x;
    if (x == 0.0) {
      p.estimate = 1.0;
      p.prefix_estimates = {1.0, 1.0, 1.0};
      p.stable = true;
      out.push_back(p);
      continue;
    }
    const std::size_t cuts[3] = {std::max<std::size_t>(1, n / 4), std::max<std::size_t>(1, n / 2), n};
    double acc = 0.0;
    std::size_t done = 0;
    for (std::size_t c : cuts) {
      for (; done < c; ++done) acc += std::pow(samples.values[done], x);
      p.prefix_estimates.push_back(acc / static_cast<double>(c));
    }
    p.estimate = p.prefix_estimates.back();
    p.stable = true;
    for (std::size_t t = 1; t < 3; ++t) {
      const double a = p.prefix_estimates[t - 1], b = p.prefix_estimates[t];
      if (!(std::abs(b - a) < tolerance * std::max(std::abs(a), std::abs(b)))) p.stable = false;
    }
    if (!std::isfinite(p.estimate)) p.stable = false;
    out.push_back(std::move(p));
  }
  return out;
}

/// Points (y, P̂(X > y)) on the given grid.
inline std::vector<std::pair<double, double>> empirical_ccdf(const SampleSet& samples, std::span<const double> grid) {
  std::vector<double> s = samples.values;
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  std::vector<std::pair<double, double>> out;
  out.reserve(grid.size());
  for (double y : grid) {
    const auto above = s.end() - std::upper_bound(s.begin(), s.end(), y);
    out.emplace_back(y, s.empty() ? 0.0 : static_cast<double>(above) / n);
  }
  return out;
}

/// Log-spaced grid between the smallest positive sample and the maximum.
inline std::vector<double> log_grid(const SampleSet& samples, std::size_t points = 40) {
  double lo = INFINITY, hi = 0.0;
  for (double v : samples.values) {
    if (v > 0.0) lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> g;
  if (!std::isfinite(lo) || !(hi > 0.0)) return g;
  if (hi == lo || points < 2) return {lo};
  for (std::size_t t = 0; t < points; ++t)
    g.push_back(lo * std::pow(hi / lo, static_cast<double>(t) / static_cast<double>(points - 1)));
  return g;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw StatisticsError("linear fit needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw StatisticsError("linear fit needs distinct x values");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  f.points = x.size();
  return f;
}

/// Least-squares slope of log P̂(X > y) against log y for y between the
/// empirical q_lo and q_hi quantiles.
inline LinearFit loglog_slope(const SampleSet& samples, double q_lo, double q_hi, std::size_t points = 30) {
  std::vector<double> s = samples.values;
  if (s.size() < 2) throw StatisticsError("loglog slope needs samples");
  std::sort(s.begin(), s.end());
  auto quantile = [&](double q) { return s[std::min(s.size() - 1, static_cast<std::size_t>(q * s.size()))]; };
  const double lo = quantile(q_lo), hi = quantile(q_hi);
  if (!(lo > 0.0) || !(hi > lo)) throw StatisticsError("loglog slope needs a positive, non-degenerate range");
  std::vector<double> grid;
  for (std::size_t t = 0; t < points; ++t)
    grid.push_back(lo * std::pow(hi / lo, static_cast<double>(t) / static_cast<double>(points - 1)));
  std::vector<double> lx, ly;
  for (const auto& [y, p] : empirical_ccdf(samples, grid)) {
    if (p <= 0.0) continue;
    lx.push_back(std::log(y));
    ly.push_back(std::log(p));
  }
  return linear_fit(lx, ly);
}

/// Log-linear fit of P̂(T > t) over integer t in [t_lo, t_hi], for checking
/// exponential tails of integer-valued durations.
inline LinearFit loglinear_ccdf_fit(const SampleSet& samples, double t_lo, double t_hi) {
  std::vector<double> grid;
  for (double t = t_lo; t <= t_hi; t += 1.0) grid.push_back(t);
  std::vector<double> tx, ly;
  for (const auto& [t, p] : empirical_ccdf(samples, grid)) {
    if (p <= 0.0) continue;
    tx.push_back(t);
    ly.push_back(std::log(p));
  }
  return linear_fit(tx, ly);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Asymptotic Kolmogorov distribution tail Q(λ) = 2 Σ (−1)^{j−1} e^{−2j²λ²}.
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0, prev = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
    sum += term;
    if (std::abs(term) <= 1e-10 * std::abs(sum) || std::abs(term) <= 1e-12 * prev) break;
    prev = std::abs(term);
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Two-sample Kolmogorov–Smirnov statistic with the asymptotic p-value
/// Q((√n_e + 0.12 + 0.11/√n_e)·D), n_e = n_a·n_b/(n_a + n_b).
inline KsResult ks_two_sample(const SampleSet& a, const SampleSet& b) {
  if (a.size() < 100 || b.size() < 100) throw StatisticsError("two-sample KS needs at least 100 samples per side");
  std::vector<double> x = a.values, y = b.values;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double na = static_cast<double>(x.size()), nb = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)};
}

inline KsResult ks_distance(const SampleSet& a, const SampleSet& b) { return ks_two_sample(a, b); }

}  // namespace mbpre

#endif  // MBPRE_TAIL_STATS_HPP
