#ifndef MBPRE_LAWS_HPP
#define MBPRE_LAWS_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mbpre/errors.hpp"
#include "mbpre/linalg.hpp"
#include "mbpre/random.hpp"

namespace mbpre {

using Count = std::uint64_t;
using CountVector = std::vector<Count>;

/// Counts above this are treated as overflow; leaves headroom for sums of a
/// few such values and for exact conversion through double-valued samplers.
inline constexpr Count kCountLimit = Count{1} << 62;

inline void add_checked(Count& target, Count amount) {
  if (amount > kCountLimit || target > kCountLimit - amount)
    throw PopulationOverflow("population overflow: count exceeds 2^62");
  target += amount;
}

inline Count total(std::span<const Count> v) {
  Count s = 0;
  for (Count c : v) add_checked(s, c);
  return s;
}

inline bool all_zero(std::span<const Count> v) {
  for (Count c : v)
    if (c != 0) return false;
  return true;
}

// Thin wrappers so zero parameters and the overflow guard are handled once.

inline Count sample_poisson(double mean, RandomStream& rng) {
  if (mean <= 0.0) return 0;
  if (!(mean < 1e18)) throw PopulationOverflow("population overflow: Poisson mean " + std::to_string(mean));
  return std::poisson_distribution<Count>(mean)(rng);
}

inline Count sample_binomial(Count trials, double p, RandomStream& rng) {
  if (trials == 0 || p <= 0.0) return 0;
  if (p >= 1.0) return trials;
  return std::binomial_distribution<Count>(trials, p)(rng);
}

/// Adds a Multinomial(trials, probs) draw into `out`; mass 1 - sum(probs)
/// falls into an implicit "none" cell.
inline void add_multinomial(Count trials, std::span<const double> probs, RandomStream& rng,
                            std::span<Count> out) {
  double remaining_mass = 1.0;
  Count remaining = trials;
  for (std::size_t j = 0; j < probs.size() && remaining > 0; ++j) {
    if (probs[j] <= 0.0) continue;
    const double p = remaining_mass > 0.0 ? std::min(1.0, probs[j] / remaining_mass) : 1.0;
    const Count k = sample_binomial(remaining, p, rng);
    add_checked(out[j], k);
    remaining -= k;
    remaining_mass -= probs[j];
  }
}

/// Index drawn from a finite distribution given by nonnegative weights
/// (normalization not required). One uniform per call.
inline std::size_t sample_index(std::span<const double> weights, double weight_total, RandomStream& rng) {
  const double u = rng.uniform() * weight_total;
  double acc = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (u < acc) return k;
  }
  for (std::size_t k = weights.size(); k-- > 0;)
    if (weights[k] > 0.0) return k;
  return 0;
}

namespace detail {
template <class... Fs>
struct Overload : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overload(Fs...) -> Overload<Fs...>;
}  // namespace detail

/// Law of a nonnegative real amount (final product, service or switch-over time).
class AmountLaw {
 public:
  struct Deterministic {
    double value = 0.0;
  };
  struct Exponential {
    double mean = 1.0;
  };
  struct Gamma {
    double shape = 1.0;
    double mean = 1.0;
  };
  struct LogNormal {
    double mu = 0.0;
    double sigma = 1.0;
  };
  using Variant = std::variant<Deterministic, Exponential, Gamma, LogNormal>;

  AmountLaw() = default;

  static AmountLaw deterministic(double value) {
    if (!(value >= 0.0) || !std::isfinite(value)) throw ConfigError("deterministic amount must be finite and >= 0");
    return AmountLaw(Deterministic{value});
  }
  static AmountLaw exponential(double mean) {
    if (!(mean > 0.0) || !std::isfinite(mean)) throw ConfigError("exponential mean must be finite and > 0");
    return AmountLaw(Exponential{mean});
  }
  static AmountLaw gamma(double shape, double mean) {
    if (!(shape > 0.0) || !(mean > 0.0) || !std::isfinite(shape) || !std::isfinite(mean))
      throw ConfigError("gamma shape and mean must be finite and > 0");
    return AmountLaw(Gamma{shape, mean});
  }
  static AmountLaw lognormal(double mu, double sigma) {
    if (!std::isfinite(mu) || !(sigma >= 0.0) || !std::isfinite(sigma))
      throw ConfigError("lognormal needs finite mu and sigma >= 0");
    return AmountLaw(LogNormal{mu, sigma});
  }

  double mean() const {
    return std::visit(detail::Overload{[](const Deterministic& d) { return d.value; },
                               [](const Exponential& e) { return e.mean; },
                               [](const Gamma& g) { return g.mean; },
                               [](const LogNormal& l) { return std::exp(l.mu + 0.5 * l.sigma * l.sigma); }},
                      law_);
  }

  double variance() const {
    return std::visit(detail::Overload{[](const Deterministic&) { return 0.0; },
                               [](const Exponential& e) { return e.mean * e.mean; },
                               [](const Gamma& g) { return g.mean * g.mean / g.shape; },
                               [](const LogNormal& l) {
                                 const double s2 = l.sigma * l.sigma;
                                 return (std::exp(s2) - 1.0) * std::exp(2.0 * l.mu + s2);
                               }},
                      law_);
  }

  bool is_zero() const {
    const auto* d = std::get_if<Deterministic>(&law_);
    return d != nullptr && d->value == 0.0;
  }

  double sample(RandomStream& rng) const {
    if (const auto* d = std::get_if<Deterministic>(&law_)) return d->value;
    if (const auto* e = std::get_if<Exponential>(&law_))
      return std::exponential_distribution<double>(1.0 / e->mean)(rng);
    if (const auto* g = std::get_if<Gamma>(&law_))
      return std::gamma_distribution<double>(g->shape, g->mean / g->shape)(rng);
    const auto& l = std::get<LogNormal>(law_);
    return std::lognormal_distribution<double>(l.mu, l.sigma)(rng);
  }

  /// Sum of `n` iid draws. Closed-form convolutions where they exist, a loop otherwise.
  double sample_sum(Count n, RandomStream& rng) const {
    if (n == 0) return 0.0;
    if (n == 1) return sample(rng);
    if (const auto* d = std::get_if<Deterministic>(&law_)) return static_cast<double>(n) * d->value;
    if (const auto* e = std::get_if<Exponential>(&law_))
      return std::gamma_distribution<double>(static_cast<double>(n), e->mean)(rng);
    if (const auto* g = std::get_if<Gamma>(&law_))
      return std::gamma_distribution<double>(g->shape * static_cast<double>(n), g->mean / g->shape)(rng);
    double s = 0.0;
    for (Count k = 0; k < n; ++k) s += sample(rng);
    return s;
  }

  std::string describe() const {
    std::ostringstream os;
    std::visit(detail::Overload{[&](const Deterministic& d) { os << "deterministic(" << d.value << ")"; },
                        [&](const Exponential& e) { os << "exponential(mean=" << e.mean << ")"; },
                        [&](const Gamma& g) { os << "gamma(shape=" << g.shape << ", mean=" << g.mean << ")"; },
                        [&](const LogNormal& l) { os << "lognormal(mu=" << l.mu << ", sigma=" << l.sigma << ")"; }},
               law_);
    return os.str();
  }

  const Variant& variant() const { return law_; }

 private:
  explicit AmountLaw(Variant v) : law_(std::move(v)) {}

  Variant law_{Deterministic{0.0}};
};

/// Law of a vector of nonnegative integer counts over the m particle types.
class CountLaw {
 public:
  /// Always the same vector.
  struct Degenerate {
    CountVector counts;
  };
  /// Independent Poisson counts per type.
  struct Poisson {
    Vector means;
  };
  /// Independent geometric counts on {0, 1, ...} per type, given by their means.
  struct Geometric {
    Vector means;
  };
  /// `trials` independent placements; each lands on type j with probability
  /// probs[j] and nowhere with probability 1 - sum(probs).
  struct Categorical {
    Vector probs;
    Count trials = 1;
  };
  using Variant = std::variant<Degenerate, Poisson, Geometric, Categorical>;

  CountLaw() = default;

  static CountLaw zero(std::size_t types) { return CountLaw(Degenerate{CountVector(types, 0)}); }
  static CountLaw degenerate(CountVector counts) {
    if (counts.empty()) throw ConfigError("count law needs at least one type");
    return CountLaw(Degenerate{std::move(counts)});
  }
  static CountLaw poisson(Vector means) {
    check_rates(means, "poisson mean");
    return CountLaw(Poisson{std::move(means)});
  }
  static CountLaw geometric(Vector means) {
    check_rates(means, "geometric mean");
    return CountLaw(Geometric{std::move(means)});
  }
  static CountLaw categorical(Vector probs, Count trials = 1) {
    check_rates(probs, "categorical probability");
    double s = 0.0;
    for (double p : probs) s += p;
    if (s > 1.0 + 1e-12) throw ConfigError("categorical probabilities sum to more than 1");
    return CountLaw(Categorical{std::move(probs), trials});
  }

  std::size_t types() const {
    return std::visit([](const auto& l) { return size_of(l); }, law_);
  }

  Vector mean() const {
    if (const auto* d = std::get_if<Degenerate>(&law_)) return Vector(d->counts.begin(), d->counts.end());
    if (const auto* p = std::get_if<Poisson>(&law_)) return p->means;
    if (const auto* g = std::get_if<Geometric>(&law_)) return g->means;
    const auto& c = std::get<Categorical>(law_);
    Vector m = c.probs;
    for (double& v : m) v *= static_cast<double>(c.trials);
    return m;
  }

  /// True when some draw can be nonzero.
  bool can_be_nonzero() const {
    if (const auto* d = std::get_if<Degenerate>(&law_)) return !all_zero(d->counts);
    if (const auto* c = std::get_if<Categorical>(&law_)) {
      if (c->trials == 0) return false;
    }
    for (double v : mean())
      if (v > 0.0) return true;
    return false;
  }

  /// Adds the sum of `n` iid draws into `out`. Each family has an exact
  /// convolution, so the cost does not grow with `n`.
  void add_sum(Count n, RandomStream& rng, std::span<Count> out) const {
    if (n == 0) return;
    if (const auto* d = std::get_if<Degenerate>(&law_)) {
      for (std::size_t j = 0; j < d->counts.size(); ++j) {
        if (d->counts[j] == 0) continue;
        if (d->counts[j] > kCountLimit / n) throw PopulationOverflow("population overflow: degenerate offspring");
        add_checked(out[j], n * d->counts[j]);
      }
    } else if (const auto* p = std::get_if<Poisson>(&law_)) {
      for (std::size_t j = 0; j < p->means.size(); ++j)
        add_checked(out[j], sample_poisson(p->means[j] * static_cast<double>(n), rng));
    } else if (const auto* g = std::get_if<Geometric>(&law_)) {
      for (std::size_t j = 0; j < g->means.size(); ++j) {
        if (g->means[j] <= 0.0) continue;
        // Sum of n geometrics with success probability q is NegativeBinomial(n, q).
        const double q = 1.0 / (1.0 + g->means[j]);
        add_checked(out[j], std::negative_binomial_distribution<Count>(n, q)(rng));
      }
    } else {
      const auto& c = std::get<Categorical>(law_);
      if (c.trials != 0 && n > kCountLimit / c.trials) throw PopulationOverflow("population overflow: categorical");
      add_multinomial(n * c.trials, c.probs, rng, out);
    }
  }

  std::string describe() const {
    std::ostringstream os;
    auto list = [&os](const auto& v) {
      os << '(';
      for (std::size_t k = 0; k < v.size(); ++k) os << (k ? ", " : "") << v[k];
      os << ')';
    };
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Degenerate>) {
            os << "degenerate";
            list(l.counts);
          } else if constexpr (std::is_same_v<T, Poisson>) {
            os << "poisson";
            list(l.means);
          } else if constexpr (std::is_same_v<T, Geometric>) {
            os << "geometric";
            list(l.means);
          } else {
            os << "categorical[" << l.trials << "]";
            list(l.probs);
          }
        },
        law_);
    return os.str();
  }

  const Variant& variant() const { return law_; }

 private:
  explicit CountLaw(Variant v) : law_(std::move(v)) {}

  static std::size_t size_of(const Degenerate& d) { return d.counts.size(); }
  static std::size_t size_of(const Poisson& p) { return p.means.size(); }
  static std::size_t size_of(const Geometric& g) { return g.means.size(); }
  static std::size_t size_of(const Categorical& c) { return c.probs.size(); }

  static void check_rates(const Vector& v, const char* what) {
    if (v.empty()) throw ConfigError("count law needs at least one type");
    for (double x : v)
      if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError(std::string(what) + " must be finite and >= 0");
  }

  Variant law_{Degenerate{CountVector{0}}};
};

/// Reproduction law of one parent type: independent children counts and final product.
struct ParentLaw {
  CountLaw children;
  AmountLaw product;
};

/// Immigration law: independent immigrant counts and immigrant final product.
/// The product may be positive while the counts are zero.
struct ImmigrationLaw {
  CountLaw arrivals;
  AmountLaw product;
};

}  // namespace mbpre

#endif  // MBPRE_LAWS_HPP
