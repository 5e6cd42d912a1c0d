#ifndef MBPRE_MATRIX_ANALYSIS_HPP
#define MBPRE_MATRIX_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mbpre/environment.hpp"
#include "mbpre/errors.hpp"
#include "mbpre/linalg.hpp"
#include "mbpre/parallel.hpp"
#include "mbpre/random.hpp"

// Random-matrix functionals of the mean matrices A_n. All norms are the sum
// norm ‖A‖ = Σ|a_ij|; α and κ do not depend on the choice, reports say which.

namespace mbpre {

namespace detail {

inline constexpr double kZ975 = 1.959963984540054;

/// Two-sided 95% Student-t quantile.
inline double student_t975(std::size_t dof) {
  if (dof == 0) return INFINITY;
  static constexpr double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                     2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086};
  if (dof <= 20) return table[dof - 1];
  const double z = kZ975, d = static_cast<double>(dof);
  return z + (z * z * z + z) / (4.0 * d) + (5 * std::pow(z, 5) + 16 * z * z * z + 3 * z) / (96.0 * d * d);
}

struct MeanAndSd {
  double mean = 0.0;
  double sd = 0.0;
};

inline MeanAndSd mean_sd(std::span<const double> v) {
  MeanAndSd r;
  if (v.empty()) return r;
  // Welford
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  r.mean = mean;
  r.sd = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
  return r;
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = -INFINITY;
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Perron root Λ(A) of a nonnegative matrix by power iteration on A + I.
/// The shift makes Λ(A) + 1 the unique eigenvalue of largest modulus, so
/// periodic matrices such as permutations converge too.
inline double spectral_radius(const Matrix& a, double tolerance = 1e-10, std::size_t max_iterations = 10000) {
  if (!a.square()) throw std::invalid_argument("spectral_radius: matrix not square");
  if (!a.all_finite() || !a.nonnegative())
    throw std::invalid_argument("spectral_radius: needs finite nonnegative entries, got " + a.str());
  const std::size_t m = a.rows();
  if (m == 0) return 0.0;
  Matrix shifted = a + Matrix::identity(m);
  Vector x(m, 1.0 / static_cast<double>(m));
  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    Vector y = shifted * x;
    const double next = sum_norm(y);
    for (double& v : y) v /= next;
    const bool converged = it > 0 && std::abs(next - lambda) <= tolerance * std::max(1.0, next);
    lambda = next;
    x = std::move(y);
    if (converged) return lambda - 1.0;
  }
  throw NumericalError("spectral_radius: power iteration did not converge for " + a.str());
}

/// log ‖A_{n−1}···A_0‖ for factors[k] = A_k. With `renormalize`, the running
/// product is rescaled to unit norm after every factor and the logs summed.
inline double log_norm_of_product(std::span<const Matrix> factors, bool renormalize = true) {
  if (factors.empty()) throw std::invalid_argument("log_norm_of_product: no factors");
  Matrix p = Matrix::identity(factors.front().rows());
  double log_scale = 0.0;
  for (const Matrix& a : factors) {
    p = a * p;
    if (renormalize) {
      const double s = p.sum_norm();
      if (s == 0.0) return -INFINITY;
      log_scale += std::log(s);
      p /= s;
    }
  }
  return log_scale + std::log(p.sum_norm());
}

struct LyapunovEstimate {
  double alpha = 0.0;  ///< mean of (1/n) log ‖Π_{0,n}‖
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  /// Growth rate over the second half of the horizon; the constant factor
  /// hidden in ‖Π_{0,n}‖ cancels, so A = I gives exactly 0.
  double tail_alpha = 0.0;
  double tail_ci_lo = 0.0;
  double tail_ci_hi = 0.0;
  std::uint64_t zero_products = 0;  ///< replicates whose product hit the zero matrix
  std::size_t horizon = 0;
  std::size_t replicates = 0;
};

/// Top Lyapunov exponent α = lim (1/n) E log ‖Π_{0,n}‖ by Monte Carlo with
/// per-step renormalization. Replicate r uses `rng.substream(r)`.
inline LyapunovEstimate lyapunov_exponent(const EnvironmentDistribution& dist, std::size_t n, std::size_t replicates,
                                          const RandomStream& rng, std::size_t workers = 1) {
  if (n < 1) throw std::invalid_argument("lyapunov_exponent: n must be >= 1");
  if (replicates < 2) throw std::invalid_argument("lyapunov_exponent: need at least 2 replicates");
  const std::size_t m = dist.types();
  const std::size_t half = n / 2;
  struct Path {
    double log_half = 0.0;
    double log_full = 0.0;
  };
  const auto paths = run_replicates(replicates, workers, [&](std::size_t r) {
    RandomStream s = rng.substream(r);
    Matrix p = Matrix::identity(m);
    Path path;
    double log_scale = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      p = dist.sample(s).means().A * p;
      const double norm = p.sum_norm();
      if (!(norm > 0.0)) {
        path.log_full = -INFINITY;
        if (k < half) path.log_half = -INFINITY;
        return path;
      }
      log_scale += std::log(norm);
      p /= norm;
      if (k + 1 == half) path.log_half = log_scale;
    }
    path.log_full = log_scale;
    return path;
  });

  LyapunovEstimate est;
  est.horizon = n;
  est.replicates = replicates;
  std::vector<double> full, growth;
  full.reserve(replicates);
  growth.reserve(replicates);
  for (const Path& p : paths) {
    if (!std::isfinite(p.log_full)) {
      ++est.zero_products;
      continue;
    }
    full.push_back(p.log_full / static_cast<double>(n));
    growth.push_back((p.log_full - p.log_half) / static_cast<double>(n - half));
  }
  if (est.zero_products > 0) {
    est.alpha = est.ci_lo = est.ci_hi = -INFINITY;
    est.tail_alpha = est.tail_ci_lo = est.tail_ci_hi = -INFINITY;
    return est;
  }
  const auto f = detail::mean_sd(full);
  const double hw = detail::kZ975 * f.sd / std::sqrt(static_cast<double>(full.size()));
  est.alpha = f.mean;
  est.ci_lo = f.mean - hw;
  est.ci_hi = f.mean + hw;
  const auto g = detail::mean_sd(growth);
  const double ghw = detail::kZ975 * g.sd / std::sqrt(static_cast<double>(growth.size()));
  est.tail_alpha = g.mean;
  est.tail_ci_lo = g.mean - ghw;
  est.tail_ci_hi = g.mean + ghw;
  return est;
}

/// E log a for scalar environments with closed-form means.
inline double alpha_closed_form(const EnvironmentDistribution& dist) {
  if (!dist.closed_form_moments()) throw std::logic_error("alpha_closed_form needs a scalar analytic environment");
  double s = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k) {
    const double a = dist.atom(k).means().A(0, 0);
    if (a == 0.0) return -INFINITY;
    s += dist.weights()[k] * std::log(a);
  }
  return s;
}

enum class MomentMethod {
  automatic,    ///< closed form when available, otherwise resampled
  closed_form,  ///< exact E[a^x] for scalar environments
  plain,        ///< independent replicates, log-sum-exp of x·log‖Π_{0,n}‖
  resampled,    ///< weighted population with resampling (Feynman-Kac estimator)
};

inline const char* to_string(MomentMethod m) {
  switch (m) {
    case MomentMethod::automatic: return "automatic";
    case MomentMethod::closed_form: return "closed_form";
    case MomentMethod::plain: return "plain";
    case MomentMethod::resampled: return "resampled";
  }
  return "?";
}

struct MonteCarloParams {
  std::size_t horizon = 50;          ///< n; products are also carried to 2n
  std::size_t replicates = 100000;   ///< replicates (plain) or population size (resampled)
  MomentMethod method = MomentMethod::automatic;
  double max_relative_ci = 0.05;     ///< wider relative CIs mark a point unreliable
  std::size_t workers = 1;
};

/// One point of the moment function s(x) = lim (E‖Π_{0,n}‖^x)^{1/n}.
struct MomentPoint {
  double x = 0.0;
  double s_hat = 1.0;  ///< two-horizon extrapolation: log ŝ = 2 log ŝ_{2n} − log ŝ_n
  double ci_lo = 1.0;
  double ci_hi = 1.0;
  double s_n = 1.0;   ///< raw (E‖Π_{0,n}‖^x)^{1/n}
  double s_2n = 1.0;  ///< raw (E‖Π_{0,2n}‖^x)^{1/(2n)}
  bool unreliable = false;
  MomentMethod method = MomentMethod::closed_form;
};

namespace detail {

inline MomentPoint s_plain(const EnvironmentDistribution& dist, double x, const MonteCarloParams& mc,
                           const RandomStream& rng) {
  const std::size_t n = mc.horizon;
  const std::size_t m = dist.types();
  struct Logs {
    double at_n = 0.0;
    double at_2n = 0.0;
  };
  const auto logs = run_replicates(mc.replicates, mc.workers, [&](std::size_t r) {
    RandomStream s = rng.substream(r);
    Matrix p = Matrix::identity(m);
    double scale = 0.0;
    Logs out;
    for (std::size_t k = 0; k < 2 * n; ++k) {
      p = dist.sample(s).means().A * p;
      const double norm = p.sum_norm();
      if (!(norm > 0.0)) {
        if (k < n) out.at_n = -INFINITY;
        out.at_2n = -INFINITY;
        return out;
      }
      scale += std::log(norm);
      p /= norm;
      if (k + 1 == n) out.at_n = scale;
    }
    out.at_2n = scale;
    return out;
  });
  const double log_r = std::log(static_cast<double>(logs.size()));
  // log of the sample mean of exp(v) and its relative standard error.
  auto moment = [&](auto pick) {
    std::vector<double> v(logs.size());
    for (std::size_t k = 0; k < logs.size(); ++k) v[k] = x * pick(logs[k]);
    const double lse = log_sum_exp(v);
    if (!std::isfinite(lse)) return std::pair<double, double>{-INFINITY, INFINITY};
    double mx = -INFINITY;
    for (double t : v) mx = std::max(mx, t);
    std::vector<double> scaled(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) scaled[k] = std::exp(v[k] - mx);
    const auto ms = mean_sd(scaled);
    const double rse = ms.sd / (ms.mean * std::sqrt(static_cast<double>(v.size())));
    return std::pair{lse - log_r, rse};
  };
  const auto [log_e_n, rse_n] = moment([](const Logs& l) { return l.at_n; });
  const auto [log_e_2n, rse_2n] = moment([](const Logs& l) { return l.at_2n; });

  MomentPoint p;
  p.x = x;
  p.method = MomentMethod::plain;
  const double dn = static_cast<double>(n);
  p.s_n = std::exp(log_e_n / dn);
  p.s_2n = std::exp(log_e_2n / (2.0 * dn));
  const double log_s = (log_e_2n - log_e_n) / dn;
  if (!std::isfinite(log_e_2n)) {
    p.s_hat = p.ci_lo = p.ci_hi = 0.0;
    return p;
  }
  const double se = std::sqrt(rse_n * rse_n + rse_2n * rse_2n) / dn;
  p.s_hat = std::exp(log_s);
  p.ci_lo = std::exp(log_s - kZ975 * se);
  p.ci_hi = std::exp(log_s + kZ975 * se);
  p.unreliable = (p.ci_hi - p.ci_lo) / p.s_hat > mc.max_relative_ci || rse_2n > 1.0;
  return p;
}

/// Population estimator of E‖Π_{0,t} u‖^x, u = (1/m)1: each particle carries
/// a direction, is reweighted by ‖A u‖^x and the population is resampled
/// systematically. The product of mean weights is an unbiased estimate of
/// the normalizing constant, and for nonnegative matrices ‖Π 1‖ = ‖Π‖.
inline MomentPoint s_resampled(const EnvironmentDistribution& dist, double x, const MonteCarloParams& mc,
                               const RandomStream& rng) {
  const std::size_t n = mc.horizon;
  const std::size_t m = dist.types();
  const std::size_t pop = mc.replicates;
  std::vector<double> dir(pop * m, 1.0 / static_cast<double>(m));
  std::vector<double> next(pop * m);
  std::vector<double> weight(pop);
  std::vector<double> increments;
  increments.reserve(2 * n);

  // Scalar environments need no directions; cache a^x per atom.
  std::vector<double> atom_weight;
  if (m == 1) {
    for (std::size_t k = 0; k < dist.size(); ++k) {
      const double a = dist.atom(k).means().A(0, 0);
      atom_weight.push_back(a == 0.0 ? 0.0 : std::pow(a, x));
    }
  }

  MomentPoint p;
  p.x = x;
  p.method = MomentMethod::resampled;
  for (std::size_t t = 0; t < 2 * n; ++t) {
    const RandomStream step_rng = rng.substream(t);
    parallel_for_chunks(pop, mc.workers, 4096, [&](std::size_t begin, std::size_t end) {
      for (std::size_t q = begin; q < end; ++q) {
        RandomStream s = step_rng.substream(q);
        const EnvironmentSample env = dist.sample(s);
        if (m == 1) {
          weight[q] = atom_weight[env.index];
          continue;
        }
        const Vector v = env.means().A * std::span<const double>(dir.data() + q * m, m);
        const double norm = sum_norm(v);
        if (norm > 0.0) {
          weight[q] = std::exp(x * std::log(norm));
          for (std::size_t j = 0; j < m; ++j) next[q * m + j] = v[j] / norm;
        } else {
          weight[q] = 0.0;
          for (std::size_t j = 0; j < m; ++j) next[q * m + j] = dir[q * m + j];
        }
      }
    });
    const double total_w = std::accumulate(weight.begin(), weight.end(), 0.0);
    if (!(total_w > 0.0)) {
      p.s_hat = p.ci_lo = p.ci_hi = p.s_n = p.s_2n = 0.0;
      return p;
    }
    increments.push_back(std::log(total_w / static_cast<double>(pop)));
    if (m > 1) {
      // Systematic resampling with one uniform per step.
      RandomStream u_rng = step_rng.substream(~std::uint64_t{0});
      const double spacing = total_w / static_cast<double>(pop);
      double u = u_rng.uniform() * spacing;
      double acc = weight[0];
      std::size_t src = 0;
      for (std::size_t q = 0; q < pop; ++q) {
        while (u > acc && src + 1 < pop) acc += weight[++src];
        std::copy_n(next.begin() + static_cast<std::ptrdiff_t>(src * m), m,
                    dir.begin() + static_cast<std::ptrdiff_t>(q * m));
        u += spacing;
      }
    }
  }
  const double dn = static_cast<double>(n);
  const double sum_n = std::accumulate(increments.begin(), increments.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
  const double sum_2n = std::accumulate(increments.begin(), increments.end(), 0.0);
  p.s_n = std::exp(sum_n / dn);
  p.s_2n = std::exp(sum_2n / (2.0 * dn));
  const double log_s = (sum_2n - sum_n) / dn;
  p.s_hat = std::exp(log_s);

  // Batch means over the second half.
  const std::size_t batches = std::min<std::size_t>(10, n);
  std::vector<double> batch(batches, 0.0);
  std::vector<std::size_t> batch_len(batches, 0);
  for (std::size_t t = n; t < 2 * n; ++t) {
    const std::size_t b = (t - n) * batches / n;
    batch[b] += increments[t];
    ++batch_len[b];
  }
  for (std::size_t b = 0; b < batches; ++b) batch[b] /= static_cast<double>(batch_len[b]);
  const auto bs = mean_sd(batch);
  const double se = batches > 1 ? bs.sd / std::sqrt(static_cast<double>(batches)) : INFINITY;
  const double hw = student_t975(batches - 1) * se;
  p.ci_lo = std::exp(log_s - hw);
  p.ci_hi = std::exp(log_s + hw);
  p.unreliable = (p.ci_hi - p.ci_lo) / p.s_hat > mc.max_relative_ci;
  return p;
}

}  // namespace detail

/// Estimates s(x). x = 0 returns 1 exactly; scalar environments with
/// closed-form means return E[a^x] exactly unless a Monte Carlo method is
/// forced.
inline MomentPoint s_of_x(const EnvironmentDistribution& dist, double x, const MonteCarloParams& mc,
                          const RandomStream& rng) {
  if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("s_of_x: x must be finite and >= 0");
  MomentPoint p;
  p.x = x;
  MomentMethod method = mc.method;
  if (method == MomentMethod::automatic)
    method = dist.closed_form_moments() ? MomentMethod::closed_form : MomentMethod::resampled;
  p.method = method;
  if (x == 0.0) return p;
  if (method == MomentMethod::closed_form) {
    const double s = dist.closed_form_moment(x);
    p.s_hat = p.ci_lo = p.ci_hi = p.s_n = p.s_2n = s;
    return p;
  }
  if (mc.horizon < 1 || mc.replicates < 2) throw std::invalid_argument("s_of_x: need horizon >= 1 and replicates >= 2");
  return method == MomentMethod::plain ? detail::s_plain(dist, x, mc, rng) : detail::s_resampled(dist, x, mc, rng);
}

struct KappaEstimate {
  enum class Kind { finite, infinite, zero, indeterminate };
  Kind kind = Kind::indeterminate;
  double kappa = NAN;
  double ci_lo = NAN;
  double ci_hi = NAN;
  double alpha = NAN;  ///< Lyapunov exponent used for the precondition
  MomentMethod method = MomentMethod::closed_form;
  std::vector<MomentPoint> s_curve;  ///< every evaluated point, sorted by x
};

inline const char* to_string(KappaEstimate::Kind k) {
  switch (k) {
    case KappaEstimate::Kind::finite: return "finite";
    case KappaEstimate::Kind::infinite: return "infinite";
    case KappaEstimate::Kind::zero: return "zero";
    case KappaEstimate::Kind::indeterminate: return "indeterminate";
  }
  return "?";
}

enum class Criticality { subcritical, supercritical, indeterminate };

inline const char* to_string(Criticality c) {
  switch (c) {
    case Criticality::subcritical: return "subcritical";
    case Criticality::supercritical: return "supercritical";
    case Criticality::indeterminate: return "indeterminate";
  }
  return "?";
}

/// Sign classification from the second-half growth CI (free of the O(1/n)
/// bias of the raw estimate).
inline Criticality criticality(const LyapunovEstimate& a) {
  if (a.tail_ci_hi < 0.0) return Criticality::subcritical;
  if (a.tail_ci_lo > 0.0) return Criticality::supercritical;
  return Criticality::indeterminate;
}

/// κ = inf{x > 0 : s(x) > 1}: doubling to bracket the crossing of 1, then
/// bisection to |x_hi − x_lo| < tol. Every s evaluation reuses `rng`, so the
/// Monte Carlo curve is built from common random numbers and is smooth in x.
/// Without a supplied `alpha`, a closed-form or Monte Carlo value is computed.
inline KappaEstimate kappa(const EnvironmentDistribution& dist, double x_max, double tol, const MonteCarloParams& mc,
                           const RandomStream& rng, std::optional<LyapunovEstimate> alpha = std::nullopt) {
  if (!(x_max > 0.0) || !(tol > 0.0)) throw std::invalid_argument("kappa: x_max and tol must be positive");
  KappaEstimate est;
  est.method = mc.method == MomentMethod::automatic
                   ? (dist.closed_form_moments() ? MomentMethod::closed_form : MomentMethod::resampled)
                   : mc.method;

  Criticality crit;
  if (alpha) {
    est.alpha = alpha->tail_alpha;
    crit = criticality(*alpha);
  } else if (est.method == MomentMethod::closed_form) {
    est.alpha = alpha_closed_form(dist);
    crit = est.alpha < 0.0 ? Criticality::subcritical
                           : (est.alpha > 0.0 ? Criticality::supercritical : Criticality::indeterminate);
  } else {
    const auto a = lyapunov_exponent(dist, 2 * mc.horizon, std::min<std::size_t>(mc.replicates, 20000),
                                     rng.substream(0x1A7A), mc.workers);
    est.alpha = a.tail_alpha;
    crit = criticality(a);
  }
  if (crit == Criticality::supercritical) {
    est.kind = KappaEstimate::Kind::zero;
    est.kappa = est.ci_lo = est.ci_hi = 0.0;
    return est;
  }
  if (crit == Criticality::indeterminate) return est;

  MonteCarloParams run = mc;
  run.method = est.method;
  auto eval = [&](double x) {
    const MomentPoint p = s_of_x(dist, x, run, rng);
    est.s_curve.push_back(p);
    return p;
  };
  auto finish = [&] {
    std::sort(est.s_curve.begin(), est.s_curve.end(),
              [](const MomentPoint& a, const MomentPoint& b) { return a.x < b.x; });
  };

  double lo = 0.0, hi = NAN;
  for (double x = std::min(0.5, x_max);; x = std::min(2.0 * x, x_max)) {
    const MomentPoint p = eval(x);
    if (p.s_hat > 1.0) {
      hi = x;
      break;
    }
    lo = x;
    if (x >= x_max) {
      est.kind = p.ci_hi < 1.0 || p.method == MomentMethod::closed_form ? KappaEstimate::Kind::infinite
                                                                          : KappaEstimate::Kind::indeterminate;
      if (est.kind == KappaEstimate::Kind::infinite) est.kappa = est.ci_lo = est.ci_hi = INFINITY;
      finish();
      return est;
    }
  }
  // The closed-form path resolves κ to near machine precision whatever tol is.
  const double bisect_tol = est.method == MomentMethod::closed_form ? std::min(tol, 1e-12) : tol;
  while (hi - lo >= bisect_tol) {
    const double mid = 0.5 * (lo + hi);
    (eval(mid).s_hat > 1.0 ? hi : lo) = mid;
  }
  est.kind = KappaEstimate::Kind::finite;
  est.kappa = 0.5 * (lo + hi);
  if (est.method == MomentMethod::closed_form) {
    est.ci_lo = lo;
    est.ci_hi = hi;
  } else {
    // Delta method: se(κ) = se(log ŝ(κ)) / (d log s / dx at κ).
    const double h = std::max(5.0 * tol, 0.02 * est.kappa);
    const MomentPoint at = eval(est.kappa);
    const MomentPoint left = eval(std::max(est.kappa - h, 0.5 * est.kappa));
    const MomentPoint right = eval(est.kappa + h);
    const double slope = (std::log(right.s_hat) - std::log(left.s_hat)) / (right.x - left.x);
    const double half_width_log = 0.5 * (std::log(at.ci_hi) - std::log(at.ci_lo));
    if (slope > 0.0 && std::isfinite(half_width_log)) {
      const double hw = half_width_log / slope + 0.5 * tol;
      est.ci_lo = std::max(0.0, est.kappa - hw);
      est.ci_hi = est.kappa + hw;
    } else {
      est.kind = KappaEstimate::Kind::indeterminate;
    }
  }
  finish();
  return est;
}

/// One realization of Ξ = Σ_{k≥0} Π_{0,k} C_k, Π_{0,k} = A_0···A_{k−1}.
struct XiEstimate {
  Vector xi;
  std::size_t truncation = 0;  ///< number of terms summed
  double residual = 0.0;       ///< ‖Π_{0,K}‖ · max‖C‖ at the stopping index
  bool converged = true;
};

/// Sums terms until ‖Π_{0,K}‖ · sup‖C‖ < tol or k_max terms. sup‖C‖ is taken
/// over the support of the environment, which bounds the next term.
inline XiEstimate xi_series(const EnvironmentDistribution& dist, double tol, std::size_t k_max, RandomStream& rng) {
  if (!(tol > 0.0) || k_max < 1) throw std::invalid_argument("xi_series: tol and k_max must be positive");
  const std::size_t m = dist.types();
  double c_sup = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k) c_sup = std::max(c_sup, sum_norm(dist.atom(k).means().C));
  XiEstimate est;
  est.xi.assign(m, 0.0);
  Matrix p = Matrix::identity(m);
  for (std::size_t k = 0; k < k_max; ++k) {
    const EnvironmentSample env = dist.sample(rng);
    const Vector term = p * std::span<const double>(env.means().C);
    for (std::size_t j = 0; j < m; ++j) est.xi[j] += term[j];
    p = p * env.means().A;
    est.truncation = k + 1;
    est.residual = p.sum_norm() * c_sup;
    if (est.residual < tol) return est;
  }
  est.converged = false;
  return est;
}

struct ConditionEntry {
  enum class Status { pass, fail, unstable, heuristic };
  std::string name;
  Status status = Status::heuristic;
  std::string detail;
};

inline const char* to_string(ConditionEntry::Status s) {
  switch (s) {
    case ConditionEntry::Status::pass: return "pass";
    case ConditionEntry::Status::fail: return "fail";
    case ConditionEntry::Status::unstable: return "unstable";
    case ConditionEntry::Status::heuristic: return "heuristic";
  }
  return "?";
}

struct KestenReport {
  double kappa0 = 0.0;
  std::size_t samples = 0;
  std::vector<ConditionEntry> entries;

  const ConditionEntry* find(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {

/// Means over nested prefixes n/4, n/2, n and whether they agree within `rel`.
inline std::pair<bool, std::string> prefix_stability(std::span<const double> v, double rel = 0.10) {
  const std::size_t n = v.size();
  double sums[3] = {0, 0, 0};
  const std::size_t cut[3] = {std::max<std::size_t>(1, n / 4), std::max<std::size_t>(1, n / 2), n};
  double acc = 0.0;
  std::size_t c = 0;
  for (std::size_t k = 0; k < n; ++k) {
    acc += v[k];
    while (c < 3 && k + 1 == cut[c]) sums[c++] = acc;
  }
  double means[3];
  for (int i = 0; i < 3; ++i) means[i] = sums[i] / static_cast<double>(cut[i]);
  const double ref = std::max(std::abs(means[2]), 1e-300);
  const double change = std::max(std::abs(means[0] - means[2]), std::abs(means[1] - means[2])) / ref;
  const bool stable = std::isfinite(means[2]) && (means[2] == 0.0 ? means[0] == 0.0 && means[1] == 0.0 : change < rel);
  return {stable, "prefix means " + std::to_string(means[0]) + ", " + std::to_string(means[1]) + ", " +
                      std::to_string(means[2])};
}

}  // namespace detail

/// Empirical look at the sufficient conditions for a power-law tail of Ξ
/// (products of nonnegative iid matrices, Kesten / de Saporta type).
/// Nothing here throws; every finding becomes a report entry.
inline KestenReport kesten_check(const EnvironmentDistribution& dist, double kappa0, std::size_t n_samples,
                                 RandomStream& rng) {
  if (!(kappa0 > 0.0)) throw std::invalid_argument("kesten_check: kappa0 must be positive");
  if (n_samples < 4) throw std::invalid_argument("kesten_check: need at least 4 samples");
  const std::size_t m = dist.types();
  KestenReport report;
  report.kappa0 = kappa0;
  report.samples = n_samples;

  std::vector<double> moment(n_samples), moment_log(n_samples), min_row(n_samples), c_moment(n_samples);
  std::size_t zero_row_samples = 0, c_zero = 0;
  bool c_negative = false;
  std::set<long long> log_radius;  // rounded to 1e-9
  for (std::size_t k = 0; k < n_samples; ++k) {
    const EnvironmentSample env = dist.sample(rng);
    const Matrix& a = env.means().A;
    const double norm = a.sum_norm();
    moment[k] = std::pow(norm, kappa0);
    moment_log[k] = moment[k] * std::max(0.0, std::log(norm));
    double mr = INFINITY;
    bool zero_row = false;
    for (std::size_t i = 0; i < m; ++i) {
      const double rs = a.row_sum(i);
      mr = std::min(mr, rs);
      if (rs == 0.0) zero_row = true;
    }
    if (zero_row) ++zero_row_samples;
    min_row[k] = std::pow(mr, kappa0);
    const Vector& c = env.means().C;
    for (double v : c) c_negative = c_negative || v < 0.0;
    if (sum_norm(c) == 0.0) ++c_zero;
    c_moment[k] = std::pow(sum_norm(c), kappa0);
    if (norm > 0.0) {
      const double r = spectral_radius(a);
      if (r > 0.0) log_radius.insert(std::llround(std::log(r) * 1e9));
    }
  }

  using S = ConditionEntry::Status;
  {
    const auto [stable, detail] = detail::prefix_stability(moment);
    report.entries.push_back({"moment", stable ? S::pass : S::unstable,
                              "E||A||^" + std::to_string(kappa0) + " " + detail});
  }
  report.entries.push_back({"no_zero_rows", zero_row_samples == 0 ? S::pass : S::fail,
                            std::to_string(zero_row_samples) + " of " + std::to_string(n_samples) +
                                " sampled matrices have a zero row"});
  report.entries.push_back({"group_density", S::heuristic,
                            "not machine-checkable; " + std::to_string(log_radius.size()) +
                                " distinct log spectral radius values observed"});
  {
    const double lhs = std::accumulate(min_row.begin(), min_row.end(), 0.0) / static_cast<double>(n_samples);
    const double rhs = std::pow(static_cast<double>(m), kappa0 / 2.0);
    report.entries.push_back({"min_row_sum_moment", lhs >= rhs ? S::pass : S::fail,
                              "E[min_i row_i^k0] = " + std::to_string(lhs) + " vs m^(k0/2) = " + std::to_string(rhs)});
  }
  {
    const auto [stable, detail] = detail::prefix_stability(moment_log);
    report.entries.push_back({"moment_log", stable ? S::pass : S::unstable, "E||A||^k0 log+||A|| " + detail});
  }
  {
    const bool ok = !c_negative && c_zero < n_samples;
    report.entries.push_back({"final_product_vector", ok ? S::pass : S::fail,
                              std::string(c_negative ? "negative C entries; " : "") + std::to_string(c_zero) + " of " +
                                  std::to_string(n_samples) + " sampled C vectors are zero"});
    const auto [stable, detail] = detail::prefix_stability(c_moment);
    report.entries.push_back({"final_product_moment", stable ? S::pass : S::unstable, "E||C||^k0 " + detail});
  }
  return report;
}

struct AnalysisParams {
  MonteCarloParams mc;
  std::size_t lyapunov_horizon = 200;
  std::size_t lyapunov_replicates = 20000;
  double x_max = 10.0;
  double tol = 1e-3;
  std::vector<double> s_grid = {0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0};
};

struct AnalysisReport {
  LyapunovEstimate alpha;
  std::vector<MomentPoint> s_curve;  ///< values on the requested grid
  KappaEstimate kappa;
  Criticality classification = Criticality::indeterminate;
  std::string norm = "sum";
  std::uint64_t seed = 0;
};

/// α, an s-curve on a grid, κ and the sub/supercritical label.
inline AnalysisReport classify(const EnvironmentDistribution& dist, const AnalysisParams& params,
                               const RandomStream& rng) {
  AnalysisReport report;
  report.seed = rng.seed();
  report.alpha = lyapunov_exponent(dist, params.lyapunov_horizon, params.lyapunov_replicates, rng.substream(1),
                                   params.mc.workers);
  report.classification = criticality(report.alpha);
  if (dist.closed_form_moments() && params.mc.method != MomentMethod::plain &&
      params.mc.method != MomentMethod::resampled) {
    const double a = alpha_closed_form(dist);
    report.classification =
        a < 0.0 ? Criticality::subcritical : (a > 0.0 ? Criticality::supercritical : Criticality::indeterminate);
  }
  for (double x : params.s_grid) report.s_curve.push_back(s_of_x(dist, x, params.mc, rng.substream(2)));
  LyapunovEstimate alpha_for_kappa = report.alpha;
  if (report.classification == Criticality::subcritical) {
    alpha_for_kappa.tail_ci_hi = std::min(alpha_for_kappa.tail_ci_hi, -1e-300);
  } else if (report.classification == Criticality::supercritical) {
    alpha_for_kappa.tail_ci_lo = std::max(alpha_for_kappa.tail_ci_lo, 1e-300);
  } else {
    alpha_for_kappa.tail_ci_lo = std::min(alpha_for_kappa.tail_ci_lo, 0.0);
    alpha_for_kappa.tail_ci_hi = std::max(alpha_for_kappa.tail_ci_hi, 0.0);
  }
  report.kappa = kappa(dist, params.x_max, params.tol, params.mc, rng.substream(2), alpha_for_kappa);
  return report;
}

}  // namespace mbpre

#endif  // MBPRE_MATRIX_ANALYSIS_HPP
