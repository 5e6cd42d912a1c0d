#ifndef MBPRE_ENVIRONMENT_HPP
#define MBPRE_ENVIRONMENT_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mbpre/errors.hpp"
#include "mbpre/laws.hpp"
#include "mbpre/linalg.hpp"
#include "mbpre/random.hpp"

namespace mbpre {

/// Conditional means of one environment draw:
/// A (offspring mean matrix, row = parent type), B (mean immigrant counts),
/// C (mean final product per parent type), D (mean immigrant final product).
struct MeanStatistics {
  Matrix A;
  Vector B;
  Vector C;
  double D = 0.0;
  bool estimated = false;  ///< true when obtained by Monte Carlo rather than closed form
};

/// One realization of (count vector, final-product amount).
struct Draw {
  CountVector counts;
  double product = 0.0;
};

/// A fixed environment H = (F; G): the offspring laws of all types together
/// with the immigration law of the next generation.
///
/// Implementations are immutable and may be shared between threads; all
/// randomness comes from the stream argument.
class EnvironmentLaw {
 public:
  virtual ~EnvironmentLaw() = default;

  virtual std::size_t types() const = 0;

  /// Adds the combined offspring counts and final product of `parents`
  /// independent type-`parent` particles.
  virtual void add_offspring(std::size_t parent, Count parents, RandomStream& rng, std::span<Count> counts,
                             double& product) const = 0;

  /// Adds one immigration draw (counts and final product).
  virtual void add_immigration(RandomStream& rng, std::span<Count> counts, double& product) const = 0;

  /// Closed-form means, when the law has them.
  virtual std::optional<MeanStatistics> analytic_means() const { return std::nullopt; }

  /// False when the immigration counts are zero almost surely.
  virtual bool immigration_possible() const = 0;

  virtual std::string describe() const = 0;
};

/// Environment built from independent parametric families.
class ParametricEnvironment final : public EnvironmentLaw {
 public:
  ParametricEnvironment(std::vector<ParentLaw> offspring, ImmigrationLaw immigration)
      : offspring_(std::move(offspring)), immigration_(std::move(immigration)) {
    if (offspring_.empty()) throw ConfigError("environment needs at least one type");
    const std::size_t m = offspring_.size();
    for (std::size_t i = 0; i < m; ++i)
      if (offspring_[i].children.types() != m)
        throw ConfigError("offspring law of type " + std::to_string(i + 1) + " has " +
                          std::to_string(offspring_[i].children.types()) + " count components, expected " +
                          std::to_string(m));
    if (immigration_.arrivals.types() != m)
      throw ConfigError("immigration law has " + std::to_string(immigration_.arrivals.types()) +
                        " count components, expected " + std::to_string(m));
  }

  std::size_t types() const override { return offspring_.size(); }

  void add_offspring(std::size_t parent, Count parents, RandomStream& rng, std::span<Count> counts,
                     double& product) const override {
    const ParentLaw& law = offspring_.at(parent);
    law.children.add_sum(parents, rng, counts);
    product += law.product.sample_sum(parents, rng);
  }

  void add_immigration(RandomStream& rng, std::span<Count> counts, double& product) const override {
    immigration_.arrivals.add_sum(1, rng, counts);
    product += immigration_.product.sample(rng);
  }

  std::optional<MeanStatistics> analytic_means() const override {
    const std::size_t m = types();
    MeanStatistics s{Matrix(m, m), immigration_.arrivals.mean(), Vector(m), immigration_.product.mean(), false};
    for (std::size_t i = 0; i < m; ++i) {
      const Vector row = offspring_[i].children.mean();
      for (std::size_t j = 0; j < m; ++j) s.A(i, j) = row[j];
      s.C[i] = offspring_[i].product.mean();
    }
    return s;
  }

  bool immigration_possible() const override { return immigration_.arrivals.can_be_nonzero(); }

  std::string describe() const override {
    std::string out;
    for (std::size_t i = 0; i < offspring_.size(); ++i)
      out += "type " + std::to_string(i + 1) + ": " + offspring_[i].children.describe() + " product " +
             offspring_[i].product.describe() + "; ";
    out += "immigration: " + immigration_.arrivals.describe() + " product " + immigration_.product.describe();
    return out;
  }

  const std::vector<ParentLaw>& offspring() const { return offspring_; }
  const ImmigrationLaw& immigration() const { return immigration_; }

 private:
  std::vector<ParentLaw> offspring_;
  ImmigrationLaw immigration_;
};

/// Monte Carlo estimate of (A, B, C, D) from `draws` draws per parent type
/// and `draws` immigration draws. Marked `estimated`.
inline MeanStatistics estimate_means(const EnvironmentLaw& law, std::size_t draws, RandomStream rng) {
  if (draws == 0) throw std::invalid_argument("estimate_means: draws must be positive");
  const std::size_t m = law.types();
  MeanStatistics s{Matrix(m, m), Vector(m, 0.0), Vector(m, 0.0), 0.0, true};
  const double inv = 1.0 / static_cast<double>(draws);
  CountVector counts(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < draws; ++k) {
      std::fill(counts.begin(), counts.end(), 0);
      double product = 0.0;
      law.add_offspring(i, 1, rng, counts, product);
      for (std::size_t j = 0; j < m; ++j) s.A(i, j) += static_cast<double>(counts[j]) * inv;
      s.C[i] += product * inv;
    }
  }
  for (std::size_t k = 0; k < draws; ++k) {
    std::fill(counts.begin(), counts.end(), 0);
    double product = 0.0;
    law.add_immigration(rng, counts, product);
    for (std::size_t j = 0; j < m; ++j) s.B[j] += static_cast<double>(counts[j]) * inv;
    s.D += product * inv;
  }
  return s;
}

/// Support point of the environment distribution: a law plus its means.
struct EnvironmentAtom {
  double weight = 1.0;
  std::shared_ptr<const EnvironmentLaw> law;
  MeanStatistics means;
};

/// One environment draw H_n = (F_n; G_{n+1}) with its means (A_n, B_{n+1}, C_n, D_{n+1}).
struct EnvironmentSample {
  std::shared_ptr<const EnvironmentAtom> atom;
  std::size_t index = 0;  ///< which support point was drawn

  const EnvironmentLaw& law() const { return *atom->law; }
  const MeanStatistics& means() const { return atom->means; }
  std::size_t types() const { return atom->law->types(); }
};

struct EnvironmentOptions {
  std::size_t estimation_draws = 10000;  ///< used only for laws without closed-form means
  std::uint64_t estimation_seed = 0x5EEDull;
};

/// Finitely supported measure over environments. Draws are iid by
/// construction: sampling depends only on the stream passed in.
class EnvironmentDistribution {
 public:
  using Options = EnvironmentOptions;

  EnvironmentDistribution() = default;

  EnvironmentDistribution(std::vector<std::pair<double, std::shared_ptr<const EnvironmentLaw>>> atoms,
                          Options options = {}) {
    if (atoms.empty()) throw ConfigError("environment distribution needs at least one atom");
    double total_weight = 0.0;
    for (const auto& [w, law] : atoms) {
      if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("atom weights must be positive");
      if (!law) throw ConfigError("atom without a law");
      total_weight += w;
    }
    if (std::abs(total_weight - 1.0) > 1e-9)
      throw ConfigError("atom weights sum to " + std::to_string(total_weight) + ", expected 1");
    const std::size_t m = atoms.front().second->types();
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      auto& [w, law] = atoms[k];
      if (law->types() != m) throw ConfigError("all atoms must have the same number of types");
      auto means = law->analytic_means();
      if (!means)
        means = estimate_means(*law, options.estimation_draws, RandomStream(options.estimation_seed, k));
      if (!means->A.nonnegative() || !means->A.all_finite())
        throw ConfigError("atom " + std::to_string(k) + " has a mean matrix with negative or non-finite entries");
      auto atom = std::make_shared<EnvironmentAtom>(EnvironmentAtom{w / total_weight, std::move(law), *means});
      weights_.push_back(atom->weight);
      atoms_.push_back(std::move(atom));
    }
    types_ = m;
  }

  /// Convenience for a single fixed environment.
  static EnvironmentDistribution fixed(std::shared_ptr<const EnvironmentLaw> law, Options options = {}) {
    return EnvironmentDistribution({{1.0, std::move(law)}}, options);
  }

  EnvironmentSample sample(RandomStream& rng) const {
    if (atoms_.size() == 1) return {atoms_.front(), 0};
    const std::size_t k = sample_index(weights_, 1.0, rng);
    return {atoms_[k], k};
  }

  std::size_t types() const { return types_; }
  std::size_t size() const { return atoms_.size(); }
  EnvironmentSample atom(std::size_t k) const { return {atoms_.at(k), k}; }
  std::span<const double> weights() const { return weights_; }

  /// Scalar (single-type) environments have E‖A‖^x = sum_k w_k a_k^x in closed form.
  bool closed_form_moments() const {
    if (types_ != 1) return false;
    for (const auto& a : atoms_)
      if (a->means.estimated) return false;
    return true;
  }

  /// E[a^x] for scalar environments; a = 0 contributes 0 for x > 0 and 1 for x = 0.
  double closed_form_moment(double x) const {
    if (!closed_form_moments()) throw std::logic_error("closed-form moments need a scalar analytic environment");
    double s = 0.0;
    for (const auto& a : atoms_) {
      const double v = a->means.A(0, 0);
      s += a->weight * (x == 0.0 ? 1.0 : (v == 0.0 ? 0.0 : std::pow(v, x)));
    }
    return s;
  }

  /// Expected mean matrix E[A].
  Matrix mean_matrix() const {
    Matrix s(types_, types_);
    for (const auto& a : atoms_) s += a->weight * a->means.A;
    return s;
  }

  bool immigration_possible() const {
    for (const auto& a : atoms_)
      if (a->law->immigration_possible()) return true;
    return false;
  }

 private:
  std::vector<std::shared_ptr<const EnvironmentAtom>> atoms_;
  std::vector<double> weights_;
  std::size_t types_ = 0;
};

inline EnvironmentSample sample_environment(const EnvironmentDistribution& dist, RandomStream& rng) {
  return dist.sample(rng);
}

/// One offspring draw (ξ_i, φ_i) of a type-`parent_type` particle (0-based).
inline Draw sample_offspring(const EnvironmentSample& env, std::size_t parent_type, RandomStream& rng) {
  if (parent_type >= env.types())
    throw std::out_of_range("parent type " + std::to_string(parent_type) + " out of range for " +
                            std::to_string(env.types()) + " types");
  Draw d{CountVector(env.types(), 0), 0.0};
  env.law().add_offspring(parent_type, 1, rng, d.counts, d.product);
  return d;
}

/// One immigration draw (η, ψ).
inline Draw sample_immigration(const EnvironmentSample& env, RandomStream& rng) {
  Draw d{CountVector(env.types(), 0), 0.0};
  env.law().add_immigration(rng, d.counts, d.product);
  return d;
}

}  // namespace mbpre

#endif  // MBPRE_ENVIRONMENT_HPP
