#ifndef MBPRE_TESTS_TOYS_HPP
#define MBPRE_TESTS_TOYS_HPP

#include <cmath>
#include <memory>
#include <vector>

#include "mbpre/environment.hpp"
#include "mbpre/polling_map.hpp"
#include "mbpre/polling_sim.hpp"

namespace toys {

using namespace mbpre;

inline std::shared_ptr<const EnvironmentLaw> scalar_law(CountLaw children, double product = 1.0,
                                                        CountLaw arrivals = CountLaw::zero(1),
                                                        double immigrant_product = 0.0) {
  return std::make_shared<ParametricEnvironment>(
      std::vector<ParentLaw>{{std::move(children), AmountLaw::deterministic(product)}},
      ImmigrationLaw{std::move(arrivals), AmountLaw::deterministic(immigrant_product)});
}

/// a ∈ {1/2, 2} with probabilities (0.6, 0.4): Bernoulli(1/2) or exactly two
/// children, one unit of final product per particle, Bernoulli(p) immigration.
inline EnvironmentDistribution scalar_toy(double immigration_p = 0.5) {
  const CountLaw imm = immigration_p > 0 ? CountLaw::categorical({immigration_p}) : CountLaw::zero(1);
  return EnvironmentDistribution({{0.6, scalar_law(CountLaw::categorical({0.5}), 1.0, imm)},
                                  {0.4, scalar_law(CountLaw::degenerate({2}), 1.0, imm)}});
}

inline constexpr double kScalarKappa = 0.58496250072115619;  // log2(1.5)
inline constexpr double kScalarAlpha = -0.13862943611198906; // -0.2 ln 2

/// Deterministic c·I offspring in m types (Poisson counts with means c on the diagonal).
inline EnvironmentDistribution diagonal(double c, std::size_t m) {
  std::vector<ParentLaw> parents;
  for (std::size_t i = 0; i < m; ++i) {
    Vector means(m, 0.0);
    means[i] = c;
    parents.push_back({CountLaw::poisson(means), AmountLaw::deterministic(1.0)});
  }
  return EnvironmentDistribution::fixed(
      std::make_shared<ParametricEnvironment>(parents, ImmigrationLaw{CountLaw::zero(m), AmountLaw::deterministic(0)}));
}

inline PollingCycleParams two_station(double e21, double e22, double eI = 0.1) {
  return {Matrix{{0, 0.5}, {e21, e22}},
          Matrix{{eI, eI}, {eI, eI}},
          Matrix{{0.5, 0, 0.5}, {1, 0, 0}},
          {AmountLaw::exponential(1), AmountLaw::exponential(1)},
          {AmountLaw::exponential(1), AmountLaw::exponential(1)}};
}

/// Two gated stations with exponential service and switch-over. Station 1 has
/// h_11 = 0 and h_12 = 1, so every cycle mean matrix is (1, 1)ᵀ(h_21, h_22)
/// and s(x) = E[r^x] with r = h_21 + h_22 ∈ {0.5, 1.6}, weights (0.6, 0.4).
inline PollingCycleDistribution gated_toy_cycles() {
  return {{0.6, 0.4}, {two_station(0.25, 0.25), two_station(0.8, 0.8)}};
}

inline double gated_toy_kappa() {
  double lo = 0.1, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double x = 0.5 * (lo + hi);
    (0.6 * std::pow(0.5, x) + 0.4 * std::pow(1.6, x) < 1.0 ? lo : hi) = x;
  }
  return 0.5 * (lo + hi);
}

inline PollingConfig gated_toy(FinalProductMode mode = FinalProductMode::service_plus_switchover) {
  PollingConfig c{gated_toy_cycles(), {Discipline::gated, Discipline::gated}, 0, mode, 1000000, 1000000};
  c.validate();
  return c;
}

/// Exhaustive example station: γ_11 = 0.5, γ_12 = 0.25, γ_10 = 0.25,
/// ε_1• = (0.2, 0.3), Eτ_1 = 1; station 2 is a plain gated-style station.
inline PollingCycleParams exhaustive_example() {
  return {Matrix{{0.2, 0.3}, {0.1, 0.2}},
          Matrix{{0.05, 0.1}, {0.2, 0.05}},
          Matrix{{0.25, 0.5, 0.25}, {0.6, 0.1, 0.3}},
          {AmountLaw::exponential(1), AmountLaw::gamma(2, 0.5)},
          {AmountLaw::exponential(2), AmountLaw::exponential(3)}};
}

}  // namespace toys

#endif  // MBPRE_TESTS_TOYS_HPP
