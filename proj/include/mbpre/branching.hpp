#ifndef MBPRE_BRANCHING_HPP
#define MBPRE_BRANCHING_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <variant>
#include <vector>

#include "mbpre/environment.hpp"
#include "mbpre/errors.hpp"
#include "mbpre/laws.hpp"
#include "mbpre/random.hpp"

namespace mbpre {

/// Which reductions of the full process are simulated.
enum class ProcessMode {
  with_immigration,  ///< immigration and final product (the full process)
  final_product,     ///< final product, no immigration
  plain,             ///< neither immigration nor final product
};

/// Markov state (V(n); Θ(n)).
struct PopulationState {
  CountVector counts;
  double theta = 0.0;
  std::uint64_t generation = 0;

  Count size() const { return total(counts); }
  bool extinct() const { return all_zero(counts); }
};

/// Life periods start from an idle process at the first nonzero immigration.
struct FromFirstImmigration {
  double theta = 0.0;
};

/// Life periods (and totals) start from a given state at generation 0.
struct InitialState {
  CountVector counts;
  double theta = 0.0;
};

struct ProcessConfig {
  EnvironmentDistribution environment;
  ProcessMode mode = ProcessMode::with_immigration;
  std::variant<FromFirstImmigration, InitialState> initial = FromFirstImmigration{};
  std::uint64_t generation_cap = 100000;
  /// Total population at which a run is stopped and marked censored.
  Count population_cap = kCountLimit;
  bool keep_trace = false;

  void validate() const {
    if (environment.size() == 0) throw ConfigError("process has no environment", "environment");
    if (generation_cap < 1) throw ConfigError("generation_cap must be >= 1", "process.generation_cap");
    if (population_cap < 1) throw ConfigError("population_cap must be >= 1", "process.population_cap");
    if (const auto* s = std::get_if<InitialState>(&initial)) {
      if (s->counts.size() != environment.types())
        throw ConfigError("initial counts have the wrong number of types", "process.initial.counts");
      if (!(s->theta >= 0.0)) throw ConfigError("initial theta must be >= 0", "process.initial.theta");
    }
    if (mode == ProcessMode::plain) {
      for (std::size_t k = 0; k < environment.size(); ++k) {
        const auto& means = environment.atom(k).means();
        if (sum_norm(means.B) > 0.0 || means.D > 0.0)
          throw ConfigError("plain mode forbids immigration and immigrant final product", "environment");
      }
    }
  }
};

/// One generation: V(n+1) = Σ_i Σ_{k≤V_i(n)} ξ_i(n;k) + η(n+1) and
/// Θ(n+1) = Θ(n) + ψ(n+1) + Σ_i Σ_k φ_i(n;k), with the terms the mode
/// excludes left out. Offspring are drawn before immigration, so a zero
/// immigration law leaves the stream exactly where `final_product` mode does.
inline PopulationState step(const PopulationState& state, const EnvironmentSample& env, RandomStream& rng,
                            ProcessMode mode = ProcessMode::with_immigration) {
  const std::size_t m = env.types();
  if (state.counts.size() != m) throw std::invalid_argument("step: state has the wrong number of types");
  PopulationState next{CountVector(m, 0), state.theta, state.generation + 1};
  double product = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (state.counts[i] > 0) env.law().add_offspring(i, state.counts[i], rng, next.counts, product);
  if (mode == ProcessMode::with_immigration) env.law().add_immigration(rng, next.counts, product);
  if (mode != ProcessMode::plain) next.theta += product;
  if (!(next.theta >= state.theta)) throw NumericalError("final product decreased within a step");
  return next;
}

struct GenerationSummary {
  Count population = 0;
  double product = 0.0;  ///< final product added by the step into this generation
};

/// Outcome of one life period.
struct LifePeriodRecord {
  std::uint64_t upsilon = 0;  ///< generations until the population first returns to zero
  double theta_total = 0.0;   ///< final product accumulated up to that moment
  bool censored = false;      ///< cap hit before extinction
  Count max_population = 0;
  std::vector<GenerationSummary> trace;
};

namespace detail {

inline LifePeriodRecord run_until_extinct(const ProcessConfig& config, PopulationState state, std::uint64_t start,
                                          RandomStream& rng) {
  LifePeriodRecord rec;
  rec.max_population = state.size();
  if (config.keep_trace) rec.trace.push_back({rec.max_population, state.theta});
  while (!state.extinct()) {
    if (state.generation - start >= config.generation_cap || state.size() >= config.population_cap) {
      rec.censored = true;
      break;
    }
    const EnvironmentSample env = config.environment.sample(rng);
    const double before = state.theta;
    try {
      state = step(state, env, rng, config.mode);
    } catch (const PopulationOverflow&) {
      rec.censored = true;
      break;
    } catch (const CensoredDraw&) {
      rec.censored = true;
      break;
    }
    const Count size = state.size();
    rec.max_population = std::max(rec.max_population, size);
    if (config.keep_trace) rec.trace.push_back({size, state.theta - before});
  }
  rec.upsilon = state.generation - start;
  rec.theta_total = state.theta;
  return rec;
}

}  // namespace detail

/// Simulates one life period.
///
/// From an idle state, immigration draws with ‖η‖ = 0 are discarded until the
/// first nonzero one at generation N; that draw's immigrant final product
/// counts towards Θ. The run continues until V(k) = 0 and reports
/// Υ = k − N. With an `InitialState`, N = 0 and V(0) is given.
inline LifePeriodRecord simulate_life_period(const ProcessConfig& config, RandomStream& rng) {
  const std::size_t m = config.environment.types();
  if (const auto* s = std::get_if<InitialState>(&config.initial)) {
    if (all_zero(s->counts)) throw ConfigError("life period needs nonzero initial counts", "process.initial.counts");
    return detail::run_until_extinct(config, PopulationState{s->counts, s->theta, 0}, 0, rng);
  }
  if (config.mode != ProcessMode::with_immigration)
    throw ConfigError("a life period from an idle state needs immigration", "process.mode");
  if (!config.environment.immigration_possible())
    throw ConfigError("immigration counts are zero almost surely; no life period can start", "environment");

  const double theta0 = std::get<FromFirstImmigration>(config.initial).theta;
  PopulationState state{CountVector(m, 0), theta0, 0};
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (attempt >= config.generation_cap) {
      LifePeriodRecord rec;
      rec.censored = true;
      rec.theta_total = theta0;
      return rec;
    }
    const EnvironmentSample env = config.environment.sample(rng);
    Draw imm{CountVector(m, 0), 0.0};
    env.law().add_immigration(rng, imm.counts, imm.product);
    if (all_zero(imm.counts)) continue;
    state.counts = std::move(imm.counts);
    state.theta = theta0 + imm.product;
    state.generation = 1;
    break;
  }
  return detail::run_until_extinct(config, std::move(state), 1, rng);
}

struct FinalProductTotal {
  double phi_total = 0.0;
  bool censored = false;
  std::uint64_t generations = 0;
};

/// Total final product Φ of the immigration-free process started from z.
inline FinalProductTotal simulate_mbpfpre_total(const ProcessConfig& config, const CountVector& z,
                                                RandomStream& rng) {
  if (z.size() != config.environment.types()) throw ConfigError("initial vector has the wrong number of types");
  if (all_zero(z)) throw ConfigError("initial vector must be nonzero");
  ProcessConfig run = config;
  run.mode = ProcessMode::final_product;
  run.keep_trace = false;
  const LifePeriodRecord rec = detail::run_until_extinct(run, PopulationState{z, 0.0, 0}, 0, rng);
  return {rec.theta_total, rec.censored, rec.upsilon};
}

/// Empirical law of V(n) along one long run, sampled every `spacing`
/// generations after `burn_in`.
struct StationaryProbe {
  std::vector<CountVector> samples;
  std::map<CountVector, std::uint64_t> histogram;
  double p_zero = 0.0;
};

inline StationaryProbe stationary_distribution_probe(const ProcessConfig& config, std::uint64_t burn_in,
                                                     std::uint64_t n_samples, RandomStream& rng,
                                                     std::uint64_t spacing = 1) {
  if (config.mode != ProcessMode::with_immigration)
    throw ConfigError("stationary probe needs the immigration process", "process.mode");
  if (spacing == 0 || n_samples == 0) throw std::invalid_argument("stationary probe: spacing and n_samples must be > 0");
  const std::size_t m = config.environment.types();
  PopulationState state{CountVector(m, 0), 0.0, 0};
  if (const auto* s = std::get_if<InitialState>(&config.initial)) state = {s->counts, s->theta, 0};
  auto advance = [&](std::uint64_t steps) {
    for (std::uint64_t k = 0; k < steps; ++k) {
      state = step(state, config.environment.sample(rng), rng, config.mode);
      if (state.size() >= config.population_cap)
        throw CensoredDraw("stationary probe: population cap reached at generation " +
                           std::to_string(state.generation));
    }
  };
  advance(burn_in);
  StationaryProbe probe;
  probe.samples.reserve(n_samples);
  std::uint64_t zeros = 0;
  for (std::uint64_t k = 0; k < n_samples; ++k) {
    advance(spacing);
    probe.samples.push_back(state.counts);
    ++probe.histogram[state.counts];
    if (state.extinct()) ++zeros;
  }
  probe.p_zero = static_cast<double>(zeros) / static_cast<double>(n_samples);
  return probe;
}

/// Total-variation distance between the empirical laws of two samples.
inline double total_variation(std::span<const CountVector> a, std::span<const CountVector> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("total_variation: empty sample");
  std::map<CountVector, std::pair<double, double>> mass;
  for (const auto& v : a) mass[v].first += 1.0 / static_cast<double>(a.size());
  for (const auto& v : b) mass[v].second += 1.0 / static_cast<double>(b.size());
  double d = 0.0;
  for (const auto& [v, pq] : mass) d += std::abs(pq.first - pq.second);
  return 0.5 * d;
}

}  // namespace mbpre

#endif  // MBPRE_BRANCHING_HPP
