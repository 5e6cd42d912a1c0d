#ifndef MBPRE_POLLING_SIM_HPP
#define MBPRE_POLLING_SIM_HPP

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mbpre/errors.hpp"
#include "mbpre/laws.hpp"
#include "mbpre/polling_map.hpp"
#include "mbpre/random.hpp"

namespace mbpre {

struct PollingConfig {
  PollingCycleDistribution cycles;
  std::vector<Discipline> disciplines;
  std::size_t start_station = 0;  ///< J, 0-based
  FinalProductMode mode = FinalProductMode::service_time;
  std::uint64_t max_cycles = 1000000;
  Count max_services = 100000;

  std::size_t stations() const { return cycles.stations(); }

  void validate() const {
    cycles.validate();
    if (disciplines.size() != stations())
      throw ConfigError("need one discipline per station (" + std::to_string(stations()) + ")",
                        "polling.disciplines");
    if (start_station >= stations()) throw ConfigError("start station out of range", "polling.start_station");
    if (max_cycles == 0) throw ConfigError("must be >= 1", "polling.max_cycles");
    if (max_services == 0) throw ConfigError("must be >= 1", "polling.max_services");
    for (const auto& atom : cycles.atoms) station_mean_law(atom, disciplines, mode);
  }
};

struct PollingRecord {
  double duration_services = 0.0;
  double duration_switchover = 0.0;
  double theta_P = 0.0;
  std::uint64_t n_cycles = 0;
  Count n_services = 0;
  bool censored = false;
};

namespace detail {

/// Event loop shared by both period types, so runs with the same stream are
/// coupled: the busy period is a prefix of the generalized one.
///
/// One customer waits at station J at time 0 and the server is there. Each
/// cycle draws fresh parameters and visits J, J+1, ..., J−1, each visit
/// followed by the switch-over to the next station. Arrivals during a service
/// batch or a switch-over are added at its end. The busy period ends at the
/// first service completion that leaves the system empty; the generalized
/// period ends when the system is empty right after the switch-over into J.
inline void run_polling(const PollingConfig& config, RandomStream& rng, PollingRecord* busy,
                        PollingRecord* generalized) {
  const std::size_t m = config.stations();
  const std::size_t J = config.start_station;
  CountVector queue(m, 0);
  queue[J] = 1;
  Count in_system = 1;
  PollingRecord rec;
  bool busy_done = busy == nullptr;
  auto product_of = [&](double service, Count n) {
    return config.mode == FinalProductMode::unit ? static_cast<double>(n) : service;
  };
  CountVector out(m, 0);
  std::vector<CycleSampler> samplers;
  samplers.reserve(config.cycles.atoms.size());
  for (const auto& atom : config.cycles.atoms)
    samplers.emplace_back(atom, config.disciplines, config.mode, std::numeric_limits<Count>::max());
  for (;;) {
    if (rec.n_cycles >= config.max_cycles) break;
    const CycleSampler& sampler =
        samplers.size() == 1 ? samplers.front() : samplers[sample_index(config.cycles.weights, 1.0, rng)];
    ++rec.n_cycles;
    for (std::size_t step = 0; step < m; ++step) {
      const std::size_t k = (J + step) % m;
      Count n = queue[k];
      while (n > 0) {
        if (rec.n_services + n > config.max_services) {
          rec.censored = true;
          if (!busy_done) *busy = rec;
          if (generalized) *generalized = rec;
          return;
        }
        queue[k] -= n;
        in_system -= n;
        std::fill(out.begin(), out.end(), 0);
        const double s = sampler.serve_batch(k, n, rng, out);
        rec.duration_services += s;
        rec.theta_P += product_of(s, n);
        rec.n_services += n;
        for (std::size_t j = 0; j < m; ++j) {
          add_checked(queue[j], out[j]);
          add_checked(in_system, out[j]);
        }
        if (in_system == 0 && !busy_done) {
          *busy = rec;
          busy_done = true;
          if (!generalized) return;
        }
        // Gated serves only the snapshot; exhaustive serves until the station is empty.
        n = config.disciplines[k] == Discipline::exhaustive ? queue[k] : 0;
      }
      std::fill(out.begin(), out.end(), 0);
      const double sigma = sampler.switch_over(k, rng, out);
      rec.duration_switchover += sigma;
      if (config.mode == FinalProductMode::service_plus_switchover) rec.theta_P += sigma;
      for (std::size_t j = 0; j < m; ++j) {
        add_checked(queue[j], out[j]);
        add_checked(in_system, out[j]);
      }
    }
    if (in_system == 0) {
      if (generalized) *generalized = rec;
      return;
    }
  }
  rec.censored = true;
  if (!busy_done) *busy = rec;
  if (generalized) *generalized = rec;
}

}  // namespace detail

inline PollingRecord run_busy_period(const PollingConfig& config, RandomStream& rng) {
  PollingRecord busy;
  detail::run_polling(config, rng, &busy, nullptr);
  return busy;
}

inline PollingRecord run_generalized_busy_period(const PollingConfig& config, RandomStream& rng) {
  PollingRecord generalized;
  detail::run_polling(config, rng, nullptr, &generalized);
  return generalized;
}

/// Both periods from one coupled run.
inline std::pair<PollingRecord, PollingRecord> run_coupled_periods(const PollingConfig& config, RandomStream& rng) {
  PollingRecord busy, generalized;
  detail::run_polling(config, rng, &busy, &generalized);
  return {busy, generalized};
}

}  // namespace mbpre

#endif  // MBPRE_POLLING_SIM_HPP
