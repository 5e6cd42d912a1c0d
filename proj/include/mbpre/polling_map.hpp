#ifndef MBPRE_POLLING_MAP_HPP
#define MBPRE_POLLING_MAP_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mbpre/environment.hpp"
#include "mbpre/errors.hpp"
#include "mbpre/laws.hpp"
#include "mbpre/linalg.hpp"
#include "mbpre/random.hpp"

namespace mbpre {

enum class Discipline { gated, exhaustive };

/// What counts as final product in a polling cycle.
enum class FinalProductMode {
  service_time,             ///< total service time (busy-period work)
  service_plus_switchover,  ///< service plus switch-over time (elapsed time)
  unit,                     ///< one unit per service (customer count)
};

inline const char* to_string(Discipline d) { return d == Discipline::gated ? "gated" : "exhaustive"; }

inline const char* to_string(FinalProductMode m) {
  switch (m) {
    case FinalProductMode::service_time: return "service_time";
    case FinalProductMode::service_plus_switchover: return "service_plus_switchover";
    case FinalProductMode::unit: return "unit";
  }
  return "?";
}

/// Parameters of one polling cycle. Stations are 0-based here; config files
/// and messages use 1-based station numbers.
struct PollingCycleParams {
  Matrix epsilon;             ///< m×m arrival rates while station i serves
  Matrix epsilon_switchover;  ///< m×m arrival rates during the switch-over leaving station i
  Matrix routing;             ///< m×(m+1); column 0 = leave, column j+1 = join station j
  std::vector<AmountLaw> service;
  std::vector<AmountLaw> switchover;

  std::size_t stations() const { return service.size(); }

  double gamma(std::size_t i, std::size_t j) const { return routing(i, j + 1); }
  double leave(std::size_t i) const { return routing(i, 0); }

  void validate(const std::string& path = "polling") const {
    const std::size_t m = stations();
    if (m == 0) throw ConfigError("at least one station is required", path);
    if (switchover.size() != m) throw ConfigError("needs one switch-over law per station", path + ".switchover");
    auto check_rates = [&](const Matrix& r, const std::string& name) {
      if (r.rows() != m || r.cols() != m)
        throw ConfigError("must be " + std::to_string(m) + "x" + std::to_string(m), path + "." + name);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
          if (!(r(i, j) >= 0.0) || !std::isfinite(r(i, j)))
            throw ConfigError("rate must be finite and >= 0",
                              path + "." + name + "[" + std::to_string(i) + "][" + std::to_string(j) + "]");
    };
    check_rates(epsilon, "epsilon");
    check_rates(epsilon_switchover, "epsilon_switchover");
    if (routing.rows() != m || routing.cols() != m + 1)
      throw ConfigError("must be " + std::to_string(m) + "x" + std::to_string(m + 1), path + ".routing");
    double max_leave = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j <= m; ++j) {
        const double g = routing(i, j);
        if (!(g >= 0.0) || !(g <= 1.0))
          throw ConfigError("routing probability must lie in [0, 1]",
                            path + ".routing[" + std::to_string(i) + "][" + std::to_string(j) + "]");
        s += g;
      }
      if (std::abs(s - 1.0) > 1e-9)
        throw ConfigError("routing row sums to " + std::to_string(s) + ", expected 1",
                          path + ".routing[" + std::to_string(i) + "]");
      max_leave = std::max(max_leave, routing(i, 0));
    }
    if (!(max_leave > 0.0)) throw ConfigError("no station lets customers leave", path + ".routing");
  }

  /// Relabels stations so that `start` becomes station 0, keeping the cyclic order.
  PollingCycleParams rotated(std::size_t start) const {
    const std::size_t m = stations();
    if (start == 0) return *this;
    auto at = [&](std::size_t i) { return (i + start) % m; };
    PollingCycleParams r{Matrix(m, m), Matrix(m, m), Matrix(m, m + 1), {}, {}};
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        r.epsilon(i, j) = epsilon(at(i), at(j));
        r.epsilon_switchover(i, j) = epsilon_switchover(at(i), at(j));
        r.routing(i, j + 1) = routing(at(i), at(j) + 1);
      }
      r.routing(i, 0) = routing(at(i), 0);
      r.service.push_back(service[at(i)]);
      r.switchover.push_back(switchover[at(i)]);
    }
    return r;
  }
};

/// Per-station mean law of one cycle.
struct StationMeanLaw {
  Matrix H;  ///< h_ij: mean customers left at station j by one station-i stage
  Vector c;  ///< mean final product of one station-i stage
  Matrix L;  ///< l_ij: mean arrivals at station j during the switch-over leaving i
  Vector p;  ///< mean final product of that switch-over
};

inline double unit_product_mean(const AmountLaw& service, FinalProductMode mode) {
  return mode == FinalProductMode::unit ? 1.0 : service.mean();
}

/// Mean law for the given per-station disciplines.
///
/// A gated stage is one service: h_ij = γ_ij + ε_ij·Eτ_i. An exhaustive stage
/// is the sub-busy period clearing station i started by one customer; each of
/// its services returns ρ_i = γ_ii + ε_ii·Eτ_i customers to station i on
/// average, so it has 1/(1 − ρ_i) services on average. This equals
/// h_ij = (γ_ij/(1−γ_ii) + W_i·ε_ij)/(1 − W_i·ε_ii), W_i = Eτ_i/(1−γ_ii).
inline StationMeanLaw station_mean_law(const PollingCycleParams& params, std::span<const Discipline> disciplines,
                                       FinalProductMode mode = FinalProductMode::service_plus_switchover) {
  params.validate();
  const std::size_t m = params.stations();
  if (disciplines.size() != m) throw ConfigError("need one discipline per station", "polling.disciplines");
  StationMeanLaw law{Matrix(m, m), Vector(m), Matrix(m, m), Vector(m)};
  for (std::size_t i = 0; i < m; ++i) {
    const double tau = params.service[i].mean();
    const double sigma = params.switchover[i].mean();
    for (std::size_t j = 0; j < m; ++j) {
      law.H(i, j) = params.gamma(i, j) + params.epsilon(i, j) * tau;
      law.L(i, j) = params.epsilon_switchover(i, j) * sigma;
    }
    law.c[i] = unit_product_mean(params.service[i], mode);
    law.p[i] = mode == FinalProductMode::service_plus_switchover ? sigma : 0.0;
    if (disciplines[i] == Discipline::exhaustive) {
      const double rho = law.H(i, i);
      if (!(rho < 1.0))
        throw GuardViolation("station " + std::to_string(i + 1) + " exhaustive sub-busy period unstable",
                             "polling.stations[" + std::to_string(i) + "]");
      const double stages = 1.0 / (1.0 - rho);
      for (std::size_t j = 0; j < m; ++j) law.H(i, j) = j == i ? 0.0 : law.H(i, j) * stages;
      law.c[i] *= stages;
    }
  }
  return law;
}

inline StationMeanLaw gated_law(const PollingCycleParams& params,
                                FinalProductMode mode = FinalProductMode::service_plus_switchover) {
  const std::vector<Discipline> d(params.stations(), Discipline::gated);
  return station_mean_law(params, d, mode);
}

inline StationMeanLaw exhaustive_law(const PollingCycleParams& params,
                                     FinalProductMode mode = FinalProductMode::service_plus_switchover) {
  const std::vector<Discipline> d(params.stations(), Discipline::exhaustive);
  return station_mean_law(params, d, mode);
}

/// a_ij = h_ij·I{j ≤ i} + Σ_{k>i} h_ik·a_kj, computed from the last station backwards.
inline Matrix compose_cycle_recursive(const Matrix& H) {
  const std::size_t m = H.rows();
  Matrix A(m, m);
  for (std::size_t i = m; i-- > 0;) {
    for (std::size_t j = 0; j <= i; ++j) A(i, j) = H(i, j);
    for (std::size_t k = i + 1; k < m; ++k) {
      const double h = H(i, k);
      if (h == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) A(i, j) += h * A(k, j);
    }
  }
  return A;
}

/// A = H^(1)·H^(2)···H^(m), where H^(i) is the identity with row i taken from H.
inline Matrix compose_cycle_product(const Matrix& H) {
  const std::size_t m = H.rows();
  Matrix A = Matrix::identity(m);
  for (std::size_t i = 0; i < m; ++i) {
    Matrix Hi = Matrix::identity(m);
    for (std::size_t j = 0; j < m; ++j) Hi(i, j) = H(i, j);
    A = A * Hi;
  }
  return A;
}

inline double agreement_scale(std::span<const double> v) {
  double s = 1.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

/// Cycle mean matrix. Both constructions are evaluated and must agree.
inline Matrix compose_cycle(const Matrix& H, double tolerance = 1e-12) {
  if (!H.square()) throw std::invalid_argument("compose_cycle: H must be square");
  if (!H.all_finite()) throw std::invalid_argument("compose_cycle: H must be finite");
  Matrix A = compose_cycle_recursive(H);
  const Matrix P = compose_cycle_product(H);
  const double diff = max_abs_diff(A, P);
  if (diff > tolerance * agreement_scale(A.data()))
    throw NumericalError("compose_cycle: recursion and product disagree by " + std::to_string(diff));
  return A;
}

/// C_m = c_m, C_i = c_i + Σ_{k>i} h_ik·C_k.
inline Vector final_product_mean_backsub(const Matrix& H, std::span<const double> c) {
  const std::size_t m = H.rows();
  Vector C(m);
  for (std::size_t i = m; i-- > 0;) {
    C[i] = c[i];
    for (std::size_t k = i + 1; k < m; ++k) C[i] += H(i, k) * C[k];
  }
  return C;
}

/// (E − H^Δ)^{-1}·c with H^Δ the strictly upper-triangular part of H.
inline Vector final_product_mean_inverse(const Matrix& H, std::span<const double> c) {
  const std::size_t m = H.rows();
  Matrix M = Matrix::identity(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = i + 1; k < m; ++k) M(i, k) = -H(i, k);
  return inverse(M) * c;
}

inline Vector final_product_mean(const Matrix& H, std::span<const double> c, double tolerance = 1e-12) {
  if (c.size() != H.rows()) throw std::invalid_argument("final_product_mean: size mismatch");
  Vector C = final_product_mean_backsub(H, c);
  const Vector check = final_product_mean_inverse(H, c);
  const double diff = max_abs_diff(C, check);
  if (diff > tolerance * agreement_scale(C))
    throw NumericalError("final_product_mean: back-substitution and inverse disagree by " + std::to_string(diff));
  return C;
}

/// Mean immigrant counts and final product of one cycle:
/// B_j = Σ_i [ l_ij·I{j ≤ i} + Σ_{k>i} l_ik·a_kj ],  D = Σ_i [ p_i + Σ_{k>i} l_ik·C_k ].
/// Arrivals during the switch-over leaving station i wait for the next cycle
/// at stations j ≤ i and are served within the cycle at stations k > i.
inline std::pair<Vector, double> immigration_mean(const Matrix& L, std::span<const double> p, const Matrix& A,
                                                  std::span<const double> C) {
  const std::size_t m = L.rows();
  Vector B(m, 0.0);
  double D = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) B[j] += L(i, j);
    D += p[i];
    for (std::size_t k = i + 1; k < m; ++k) {
      const double l = L(i, k);
      if (l == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) B[j] += l * A(k, j);
      D += l * C[k];
    }
  }
  return {B, D};
}

inline MeanStatistics cycle_means(const StationMeanLaw& law) {
  MeanStatistics s;
  s.A = compose_cycle(law.H);
  s.C = final_product_mean(law.H, law.c);
  auto [B, D] = immigration_mean(law.L, law.p, s.A, s.C);
  s.B = std::move(B);
  s.D = D;
  return s;
}

/// Draws of the within-cycle stages. Every function adds the customers it
/// produces into `out` (indexed by station, own station included) and
/// returns the final product it generated.
class CycleSampler {
 public:
  static constexpr Count kDefaultServiceCap = 1000000;

  CycleSampler(PollingCycleParams params, std::vector<Discipline> disciplines, FinalProductMode mode,
               Count service_cap = kDefaultServiceCap)
      : params_(std::move(params)), disciplines_(std::move(disciplines)), mode_(mode), service_cap_(service_cap) {
    station_mean_law(params_, disciplines_, mode_);
  }

  std::size_t stations() const { return params_.stations(); }
  const PollingCycleParams& params() const { return params_; }
  std::span<const Discipline> disciplines() const { return disciplines_; }
  FinalProductMode mode() const { return mode_; }

  /// Serves `n` customers at station k once each; returns their total service time.
  double serve_batch(std::size_t k, Count n, RandomStream& rng, std::span<Count> out) const {
    if (n == 0) return 0.0;
    const std::size_t m = stations();
    const double s = params_.service[k].sample_sum(n, rng);
    for (std::size_t j = 0; j < m; ++j) add_checked(out[j], sample_poisson(params_.epsilon(k, j) * s, rng));
    add_multinomial(n, params_.routing.row(k).subspan(1), rng, out);
    return s;
  }

  /// One switch-over leaving station i; returns its duration.
  double switch_over(std::size_t i, RandomStream& rng, std::span<Count> out) const {
    const double sigma = params_.switchover[i].sample(rng);
    for (std::size_t j = 0; j < stations(); ++j)
      add_checked(out[j], sample_poisson(params_.epsilon_switchover(i, j) * sigma, rng));
    return sigma;
  }

  /// Stage draw χ^(k) for `n` customers at station k. Gated: one service each.
  /// Exhaustive: the sub-busy periods that clear station k, so out[k] is left
  /// untouched. `services` is incremented by the number of services.
  double stage(std::size_t k, Count n, RandomStream& rng, std::span<Count> out, Count& services) const {
    double product = 0.0;
    if (disciplines_[k] == Discipline::gated) {
      bump(services, n);
      product += stage_product(serve_batch(k, n, rng, out), n);
      return product;
    }
    const Count kept = out[k];
    out[k] = 0;
    while (n > 0) {
      bump(services, n);
      product += stage_product(serve_batch(k, n, rng, out), n);
      n = out[k];
      out[k] = 0;
    }
    out[k] = kept;
    return product;
  }

  /// Sum of `parents` iid offspring draws F^(i): stage draws at station i,
  /// with every customer produced at a later station served within the same
  /// cycle. Customers left at stations up to their producer are offspring.
  double offspring(std::size_t i, Count parents, RandomStream& rng, std::span<Count> counts) const {
    const std::size_t m = stations();
    CountVector queue(m, 0);
    Count services = 0;
    double product = produce(i, parents, rng, counts, queue, services);
    for (std::size_t k = i + 1; k < m; ++k)
      if (queue[k] > 0) product += produce(k, std::exchange(queue[k], 0), rng, counts, queue, services);
    return product;
  }

  /// One immigration draw G: the switch-overs of a cycle in station order,
  /// with arrivals at later stations served within the cycle.
  double immigration(RandomStream& rng, std::span<Count> counts) const {
    const std::size_t m = stations();
    CountVector queue(m, 0);
    CountVector arrivals(m, 0);
    Count services = 0;
    double product = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (queue[i] > 0) product += produce(i, std::exchange(queue[i], 0), rng, counts, queue, services);
      std::fill(arrivals.begin(), arrivals.end(), 0);
      const double sigma = switch_over(i, rng, arrivals);
      if (mode_ == FinalProductMode::service_plus_switchover) product += sigma;
      for (std::size_t j = 0; j < m; ++j) add_checked(j <= i ? counts[j] : queue[j], arrivals[j]);
    }
    return product;
  }

 private:
  double stage_product(double service_time, Count n) const {
    return mode_ == FinalProductMode::unit ? static_cast<double>(n) : service_time;
  }

  void bump(Count& services, Count n) const {
    add_checked(services, n);
    if (services > service_cap_)
      throw CensoredDraw("polling cycle exceeded " + std::to_string(service_cap_) + " services");
  }

  double produce(std::size_t k, Count n, RandomStream& rng, std::span<Count> counts, std::span<Count> queue,
                 Count& services) const {
    CountVector out(stations(), 0);
    const double product = stage(k, n, rng, out, services);
    for (std::size_t j = 0; j < out.size(); ++j) add_checked(j <= k ? counts[j] : queue[j], out[j]);
    return product;
  }

  PollingCycleParams params_;
  std::vector<Discipline> disciplines_;
  FinalProductMode mode_;
  Count service_cap_;
};

/// One offspring draw (ξ, φ) of a station-i customer.
inline Draw sample_branching_offspring(const CycleSampler& sampler, std::size_t station, RandomStream& rng) {
  if (station >= sampler.stations()) throw std::out_of_range("station out of range");
  Draw d{CountVector(sampler.stations(), 0), 0.0};
  d.product = sampler.offspring(station, 1, rng, d.counts);
  return d;
}

/// One immigration draw (η, ψ).
inline Draw sample_branching_immigration(const CycleSampler& sampler, RandomStream& rng) {
  Draw d{CountVector(sampler.stations(), 0), 0.0};
  d.product = sampler.immigration(rng, d.counts);
  return d;
}

/// Environment of the branching process associated with one cycle.
class PollingEnvironment final : public EnvironmentLaw {
 public:
  explicit PollingEnvironment(CycleSampler sampler)
      : sampler_(std::move(sampler)),
        means_(cycle_means(station_mean_law(sampler_.params(), sampler_.disciplines(), sampler_.mode()))) {}

  std::size_t types() const override { return sampler_.stations(); }

  void add_offspring(std::size_t parent, Count parents, RandomStream& rng, std::span<Count> counts,
                     double& product) const override {
    if (parents > 0) product += sampler_.offspring(parent, parents, rng, counts);
  }

  void add_immigration(RandomStream& rng, std::span<Count> counts, double& product) const override {
    product += sampler_.immigration(rng, counts);
  }

  std::optional<MeanStatistics> analytic_means() const override { return means_; }

  bool immigration_possible() const override { return sum_norm(means_.B) > 0.0; }

  std::string describe() const override {
    std::ostringstream os;
    os << "polling cycle, " << types() << " stations, product " << to_string(sampler_.mode());
    return os.str();
  }

  const CycleSampler& sampler() const { return sampler_; }

 private:
  CycleSampler sampler_;
  MeanStatistics means_;
};

/// Finite law of the per-cycle parameters.
struct PollingCycleDistribution {
  std::vector<double> weights;
  std::vector<PollingCycleParams> atoms;

  std::size_t stations() const { return atoms.empty() ? 0 : atoms.front().stations(); }

  void validate(const std::string& path = "polling.cycles") const {
    if (atoms.empty()) throw ConfigError("needs at least one cycle parameter set", path);
    if (weights.size() != atoms.size()) throw ConfigError("one weight per cycle parameter set", path);
    double s = 0.0;
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      const std::string p = path + "[" + std::to_string(k) + "]";
      if (!(weights[k] > 0.0) || !std::isfinite(weights[k])) throw ConfigError("weight must be > 0", p + ".weight");
      s += weights[k];
      atoms[k].validate(p);
      if (atoms[k].stations() != stations()) throw ConfigError("all cycles need the same number of stations", p);
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("weights sum to " + std::to_string(s) + ", expected 1", path);
  }

  const PollingCycleParams& sample(RandomStream& rng) const {
    if (atoms.size() == 1) return atoms.front();
    return atoms[sample_index(weights, 1.0, rng)];
  }
};

/// Environment distribution of the branching process associated with a
/// polling system started at station `start` (stations relabelled so that
/// `start` is type 0).
inline EnvironmentDistribution associated_environment(const PollingCycleDistribution& cycles,
                                                      std::span<const Discipline> disciplines,
                                                      FinalProductMode mode, std::size_t start = 0,
                                                      Count service_cap = CycleSampler::kDefaultServiceCap) {
  cycles.validate();
  const std::size_t m = cycles.stations();
  if (disciplines.size() != m) throw ConfigError("need one discipline per station", "polling.disciplines");
  if (start >= m) throw ConfigError("start station out of range", "polling.start_station");
  std::vector<Discipline> rotated(m);
  for (std::size_t i = 0; i < m; ++i) rotated[i] = disciplines[(i + start) % m];
  std::vector<std::pair<double, std::shared_ptr<const EnvironmentLaw>>> atoms;
  for (std::size_t k = 0; k < cycles.atoms.size(); ++k) {
    station_mean_law(cycles.atoms[k], disciplines, mode);
    atoms.emplace_back(cycles.weights[k], std::make_shared<PollingEnvironment>(CycleSampler(
                                              cycles.atoms[k].rotated(start), rotated, mode, service_cap)));
  }
  return EnvironmentDistribution(std::move(atoms));
}

}  // namespace mbpre

#endif  // MBPRE_POLLING_MAP_HPP
