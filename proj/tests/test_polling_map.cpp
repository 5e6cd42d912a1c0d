#include <gtest/gtest.h>

#include <cmath>

#include "mbpre/polling_map.hpp"
#include "toys.hpp"

using namespace mbpre;

namespace {

/// Running mean and standard error of each component.
struct Moments {
  std::vector<double> sum, sq;
  std::size_t n = 0;

  explicit Moments(std::size_t k) : sum(k, 0.0), sq(k, 0.0) {}

  void add(const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      sum[i] += v[i];
      sq[i] += v[i] * v[i];
    }
    ++n;
  }
  double mean(std::size_t i) const { return sum[i] / static_cast<double>(n); }
  double se(std::size_t i) const {
    const double m = mean(i);
    const double var = (sq[i] / static_cast<double>(n) - m * m) * static_cast<double>(n) / static_cast<double>(n - 1);
    return std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
};

void expect_within_5se(const Moments& mo, std::size_t i, double expected, const std::string& what) {
  EXPECT_LE(std::abs(mo.mean(i) - expected), 5.0 * mo.se(i) + 1e-12)
      << what << ": mean " << mo.mean(i) << " expected " << expected << " se " << mo.se(i);
}

std::vector<double> as_row(const Draw& d) {
  std::vector<double> v(d.counts.begin(), d.counts.end());
  v.push_back(d.product);
  return v;
}

/// Checks offspring rows against A and C, and immigration against B and D.
void check_sampler(const CycleSampler& sampler, const MeanStatistics& ms, std::size_t draws, std::uint64_t seed) {
  const std::size_t m = sampler.stations();
  RandomStream root(seed);
  for (std::size_t i = 0; i < m; ++i) {
    RandomStream rng = root.substream(i);
    Moments mo(m + 1);
    for (std::size_t k = 0; k < draws; ++k) mo.add(as_row(sample_branching_offspring(sampler, i, rng)));
    for (std::size_t j = 0; j < m; ++j)
      expect_within_5se(mo, j, ms.A(i, j), "A(" + std::to_string(i) + "," + std::to_string(j) + ")");
    expect_within_5se(mo, m, ms.C[i], "C[" + std::to_string(i) + "]");
  }
  RandomStream rng = root.substream(m);
  Moments mo(m + 1);
  for (std::size_t k = 0; k < draws; ++k) mo.add(as_row(sample_branching_immigration(sampler, rng)));
  for (std::size_t j = 0; j < m; ++j) expect_within_5se(mo, j, ms.B[j], "B[" + std::to_string(j) + "]");
  expect_within_5se(mo, m, ms.D, "D");
}

/// Gated example: every served customer leaves, ε = [[0.2,0.3],[0.1,0.2]], Eτ = 1.
PollingCycleParams gated_example() {
  return {Matrix{{0.2, 0.3}, {0.1, 0.2}},
          Matrix{{0.1, 0.2}, {0.3, 0.1}},
          Matrix{{1, 0, 0}, {1, 0, 0}},
          {AmountLaw::exponential(1), AmountLaw::exponential(1)},
          {AmountLaw::exponential(0.5), AmountLaw::deterministic(1.0)}};
}

Matrix random_matrix(std::size_t m, RandomStream& rng, double scale) {
  Matrix h(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) h(i, j) = scale * rng.uniform();
  return h;
}

const std::vector<Discipline> kGated2{Discipline::gated, Discipline::gated};
const std::vector<Discipline> kExhaustive2{Discipline::exhaustive, Discipline::exhaustive};

}  // namespace

TEST(PollingCycleParams, ValidationNamesTheField) {
  auto p = gated_example();
  p.epsilon(1, 0) = -0.1;
  try {
    p.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("polling.epsilon[1][0]"), std::string::npos) << e.what();
  }
  p = gated_example();
  p.routing(0, 0) = 0.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = gated_example();
  p.routing = Matrix{{0, 1, 0}, {0, 0, 1}};
  EXPECT_THROW(p.validate(), ConfigError);
  p = gated_example();
  p.switchover.pop_back();
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(PollingCycleParams, RotationRelabelsStations) {
  const auto p = toys::exhaustive_example();
  const auto r = p.rotated(1);
  EXPECT_EQ(r.epsilon(0, 0), p.epsilon(1, 1));
  EXPECT_EQ(r.epsilon(0, 1), p.epsilon(1, 0));
  EXPECT_EQ(r.leave(0), p.leave(1));
  EXPECT_EQ(r.gamma(0, 1), p.gamma(1, 0));
  EXPECT_EQ(r.service[0].mean(), p.service[1].mean());
  const auto back = r.rotated(1);
  EXPECT_EQ(max_abs_diff(back.routing, p.routing), 0.0);
}

TEST(GatedLaw, NoFeedbackGivesEpsilonTimesMeanService) {
  const auto law = gated_law(gated_example());
  EXPECT_LT(max_abs_diff(law.H, Matrix{{0.2, 0.3}, {0.1, 0.2}}), 1e-15);
  EXPECT_EQ(law.c, (Vector{1.0, 1.0}));
}

TEST(GatedLaw, RoutingOnly) {
  PollingCycleParams p{Matrix(2, 2), Matrix(2, 2), Matrix{{0, 1, 0}, {0.5, 0.5, 0}},
                       {AmountLaw::exponential(1), AmountLaw::exponential(1)},
                       {AmountLaw::exponential(1), AmountLaw::exponential(1)}};
  const auto law = gated_law(p);
  EXPECT_EQ(law.H(0, 0), 1.0);
  EXPECT_EQ(law.H(0, 1), 0.0);
  EXPECT_EQ(law.H(1, 0), 0.5);
}

TEST(GatedLaw, SwitchoverMeans) {
  PollingCycleParams p{Matrix(2, 2), Matrix{{0, 1}, {1, 0}}, Matrix{{1, 0, 0}, {1, 0, 0}},
                       {AmountLaw::exponential(1), AmountLaw::exponential(1)},
                       {AmountLaw::exponential(2), AmountLaw::deterministic(3)}};
  const auto law = gated_law(p);
  EXPECT_LT(max_abs_diff(law.L, Matrix{{0, 2}, {3, 0}}), 1e-15);
  EXPECT_EQ(law.p, (Vector{2.0, 3.0}));
  EXPECT_EQ(gated_law(p, FinalProductMode::service_time).p, (Vector{0.0, 0.0}));
  EXPECT_EQ(gated_law(p, FinalProductMode::unit).c, (Vector{1.0, 1.0}));
}

TEST(GatedLaw, StageMeansMatchSimulation) {
  const auto p = toys::exhaustive_example();
  const auto law = gated_law(p, FinalProductMode::service_time);
  const CycleSampler sampler(p, kGated2, FinalProductMode::service_time);
  RandomStream rng(1);
  for (std::size_t i = 0; i < 2; ++i) {
    Moments mo(3);
    for (int k = 0; k < 1000000; ++k) {
      CountVector out(2, 0);
      Count services = 0;
      const double product = sampler.stage(i, 1, rng, out, services);
      ASSERT_EQ(services, 1u);
      mo.add({static_cast<double>(out[0]), static_cast<double>(out[1]), product});
    }
    expect_within_5se(mo, 0, law.H(i, 0), "h_i1");
    expect_within_5se(mo, 1, law.H(i, 1), "h_i2");
    expect_within_5se(mo, 2, law.c[i], "c_i");
  }
}

TEST(ExhaustiveLaw, WithoutSelfRegenerationReducesToGated) {
  PollingCycleParams p = gated_example();
  p.epsilon(0, 0) = 0.0;
  p.epsilon(1, 1) = 0.0;
  const auto ex = exhaustive_law(p);
  const auto ga = gated_law(p);
  EXPECT_EQ(ex.H(0, 1), ga.H(0, 1));
  EXPECT_EQ(ex.H(1, 0), ga.H(1, 0));
  EXPECT_EQ(ex.c, ga.c);
}

TEST(ExhaustiveLaw, WorkedExample) {
  const auto law = exhaustive_law(toys::exhaustive_example(), FinalProductMode::service_time);
  EXPECT_EQ(law.H(0, 0), 0.0);
  EXPECT_NEAR(law.H(0, 1), 1.1 / 0.6, 1e-12);
  EXPECT_NEAR(law.c[0], 2.0 / 0.6, 1e-12);
}

TEST(ExhaustiveLaw, MatchesSubBusyPeriodSimulation) {
  const auto p = toys::exhaustive_example();
  const auto law = exhaustive_law(p, FinalProductMode::service_time);
  const CycleSampler sampler(p, kExhaustive2, FinalProductMode::service_time);
  RandomStream rng(2);
  for (std::size_t i = 0; i < 2; ++i) {
    Moments mo(2);
    for (int k = 0; k < 1000000; ++k) {
      CountVector out(2, 0);
      Count services = 0;
      const double product = sampler.stage(i, 1, rng, out, services);
      ASSERT_EQ(out[i], 0u);
      mo.add({static_cast<double>(out[1 - i]), product});
    }
    expect_within_5se(mo, 0, law.H(i, 1 - i), "h_ij");
    expect_within_5se(mo, 1, law.c[i], "c_i");
  }
}

TEST(ExhaustiveLaw, UnstableStationIsAGuardViolation) {
  PollingCycleParams p = toys::exhaustive_example();
  p.epsilon(0, 0) = 0.6;  // W_1·ε_11 = 2·0.6 = 1.2
  try {
    exhaustive_law(p);
    FAIL();
  } catch (const GuardViolation& e) {
    EXPECT_NE(std::string(e.what()).find("station 1 exhaustive sub-busy period unstable"), std::string::npos);
  }
  EXPECT_NO_THROW(gated_law(p));
  EXPECT_THROW(CycleSampler(p, kExhaustive2, FinalProductMode::unit), GuardViolation);
}

TEST(ComposeCycle, TwoStationsSymbolic) {
  const Matrix h{{0.3, 0.7}, {1.1, 0.4}};
  const Matrix a = compose_cycle(h);
  EXPECT_NEAR(a(0, 0), 0.3 + 0.7 * 1.1, 1e-15);
  EXPECT_NEAR(a(0, 1), 0.7 * 0.4, 1e-15);
  EXPECT_EQ(a(1, 0), 1.1);
  EXPECT_EQ(a(1, 1), 0.4);
}

TEST(ComposeCycle, ZeroAndTriangular) {
  EXPECT_EQ(compose_cycle(Matrix(3, 3)).sum_norm(), 0.0);
  // Customers sent only to later stations are all served within the cycle.
  const Matrix upper{{0, 0.5, 0.2}, {0, 0, 0.7}, {0, 0, 0}};
  EXPECT_EQ(compose_cycle(upper).sum_norm(), 0.0);
  // Customers sent only to earlier (or the same) stations wait for the next cycle.
  const Matrix lower{{0.3, 0, 0}, {0.4, 0.1, 0}, {0.2, 0.6, 0.5}};
  EXPECT_EQ(max_abs_diff(compose_cycle(lower), lower), 0.0);
  // A station-1 customer reaches station 1 again only via 1 → 2 → 3 → 1.
  const Matrix mixed{{0, 0.5, 0}, {0, 0, 0.7}, {0.9, 0, 0}};
  const Matrix a = compose_cycle(mixed);
  EXPECT_NEAR(a(0, 0), 0.5 * 0.7 * 0.9, 1e-15);
  EXPECT_NEAR(a(1, 0), 0.7 * 0.9, 1e-15);
  EXPECT_EQ(a(0, 2), 0.0);
}

TEST(ComposeCycle, RecursionEqualsProductOnRandomInstances) {
  RandomStream rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + trial % 5;
    const Matrix h = random_matrix(m, rng, 2.0);
    const Matrix r = compose_cycle_recursive(h);
    const Matrix p = compose_cycle_product(h);
    ASSERT_LE(max_abs_diff(r, p), 1e-12 * std::max(1.0, r.sum_norm())) << h.str();
    ASSERT_NO_THROW(compose_cycle(h));
  }
}

TEST(FinalProductMean, Examples) {
  const Matrix h{{0.9, 0.5}, {0.8, 0.3}};
  EXPECT_EQ(final_product_mean(h, Vector{1, 2}), (Vector{2, 2}));
  EXPECT_EQ(final_product_mean(h, Vector{0, 0}), (Vector{0, 0}));
  const Matrix lower{{0.4, 0}, {0.6, 0.2}};
  EXPECT_EQ(final_product_mean(lower, Vector{3, 5}), (Vector{3, 5}));
}

TEST(FinalProductMean, BackSubstitutionEqualsInverse) {
  RandomStream rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 1 + trial % 5;
    const Matrix h = random_matrix(m, rng, 1.5);
    Vector c(m);
    for (double& v : c) v = 3.0 * rng.uniform();
    const Vector a = final_product_mean_backsub(h, c);
    const Vector b = final_product_mean_inverse(h, c);
    ASSERT_LE(max_abs_diff(a, b), 1e-12 * std::max(1.0, sum_norm(a)));
  }
}

TEST(ImmigrationMean, NoSwitchoverArrivals) {
  const auto [B, D] = immigration_mean(Matrix(2, 2), Vector{1.5, 2.5}, Matrix{{1, 1}, {1, 1}}, Vector{4, 4});
  EXPECT_EQ(B, (Vector{0, 0}));
  EXPECT_EQ(D, 4.0);
}

TEST(ImmigrationMean, TwoStationExample) {
  // Arrivals at station 2 during the first switch-over are served in the same
  // cycle, so they contribute their offspring row a_2• and final product C_2.
  const auto [B, D] = immigration_mean(Matrix{{0, 1}, {0, 0}}, Vector{0, 0}, Matrix{{0.5, 0.5}, {0.1, 0.2}},
                                       Vector{7, 2});
  EXPECT_NEAR(B[0], 0.1, 1e-15);
  EXPECT_NEAR(B[1], 0.2, 1e-15);
  EXPECT_EQ(D, 2.0);
}

TEST(ImmigrationMean, SingleStation) {
  const auto [B, D] = immigration_mean(Matrix{{0.3}}, Vector{1.25}, Matrix{{0.5}}, Vector{2});
  EXPECT_EQ(B, Vector{0.3});
  EXPECT_EQ(D, 1.25);
}

TEST(Sampler, NoCustomersProducedGivesOneService) {
  PollingCycleParams p{Matrix(2, 2), Matrix(2, 2), Matrix{{1, 0, 0}, {1, 0, 0}},
                       {AmountLaw::deterministic(0.75), AmountLaw::exponential(1)},
                       {AmountLaw::exponential(1), AmountLaw::exponential(1)}};
  const CycleSampler sampler(p, kGated2, FinalProductMode::service_time);
  RandomStream rng(5);
  const Draw d = sample_branching_offspring(sampler, 0, rng);
  EXPECT_EQ(d.counts, (CountVector{0, 0}));
  EXPECT_EQ(d.product, 0.75);
}

TEST(Sampler, LastStationIsOneStage) {
  const auto p = toys::exhaustive_example();
  const CycleSampler sampler(p, kGated2, FinalProductMode::service_time);
  RandomStream a(6), b(6);
  for (int k = 0; k < 1000; ++k) {
    const Draw d = sample_branching_offspring(sampler, 1, a);
    CountVector out(2, 0);
    Count services = 0;
    const double product = sampler.stage(1, 1, b, out, services);
    ASSERT_EQ(d.counts, out);
    ASSERT_EQ(d.product, product);
  }
}

TEST(Sampler, GatedExampleFirstRow) {
  const CycleSampler sampler(gated_example(), kGated2, FinalProductMode::service_time);
  RandomStream rng(7);
  Moments mo(2);
  for (int k = 0; k < 1000000; ++k) {
    const Draw d = sample_branching_offspring(sampler, 0, rng);
    mo.add({static_cast<double>(d.counts[0]), static_cast<double>(d.counts[1])});
  }
  expect_within_5se(mo, 0, 0.23, "a_11");
  expect_within_5se(mo, 1, 0.06, "a_12");
}

TEST(Sampler, ZeroSwitchoverRatesGiveSwitchoverTimesOnly) {
  PollingCycleParams p = gated_example();
  p.epsilon_switchover = Matrix(2, 2);
  p.switchover = {AmountLaw::deterministic(0.5), AmountLaw::deterministic(1.5)};
  const CycleSampler sampler(p, kGated2, FinalProductMode::service_plus_switchover);
  RandomStream rng(8);
  for (int k = 0; k < 100; ++k) {
    const Draw d = sample_branching_immigration(sampler, rng);
    ASSERT_EQ(d.counts, (CountVector{0, 0}));
    ASSERT_EQ(d.product, 2.0);
  }
}

TEST(Sampler, SingleStationImmigrationHasNoRecursion) {
  PollingCycleParams p{Matrix{{0.5}}, Matrix{{2.0}}, Matrix{{0.5, 0.5}}, {AmountLaw::exponential(1)},
                       {AmountLaw::exponential(1)}};
  const CycleSampler sampler(p, {Discipline::gated}, FinalProductMode::service_plus_switchover);
  RandomStream rng(9);
  Moments mo(2);
  for (int k = 0; k < 1000000; ++k) mo.add(as_row(sample_branching_immigration(sampler, rng)));
  expect_within_5se(mo, 0, 2.0, "B");
  expect_within_5se(mo, 1, 1.0, "D");
}

TEST(Sampler, GatedToyMatchesMeans) {
  const auto p = toys::gated_toy_cycles().atoms[1];
  for (auto mode : {FinalProductMode::service_time, FinalProductMode::service_plus_switchover}) {
    const auto ms = cycle_means(station_mean_law(p, kGated2, mode));
    check_sampler(CycleSampler(p, kGated2, mode), ms, 1000000, 10);
  }
}

TEST(Sampler, ExhaustiveMatchesMeans) {
  const auto p = toys::exhaustive_example();
  const auto ms = cycle_means(station_mean_law(p, kExhaustive2, FinalProductMode::service_plus_switchover));
  check_sampler(CycleSampler(p, kExhaustive2, FinalProductMode::service_plus_switchover), ms, 1000000, 11);
}

TEST(Sampler, MixedDisciplinesThreeStations) {
  PollingCycleParams p{Matrix{{0.2, 0.3, 0.1}, {0.1, 0.3, 0.2}, {0.3, 0.1, 0.2}},
                       Matrix{{0.1, 0.2, 0.3}, {0.2, 0.1, 0.1}, {0.1, 0.1, 0.2}},
                       Matrix{{0.5, 0.1, 0.2, 0.2}, {0.4, 0.2, 0.2, 0.2}, {0.6, 0.2, 0.1, 0.1}},
                       {AmountLaw::exponential(1), AmountLaw::gamma(2, 0.8), AmountLaw::deterministic(0.5)},
                       {AmountLaw::exponential(0.5), AmountLaw::exponential(1), AmountLaw::deterministic(0.3)}};
  const std::vector<Discipline> d{Discipline::gated, Discipline::exhaustive, Discipline::gated};
  const auto ms = cycle_means(station_mean_law(p, d, FinalProductMode::unit));
  check_sampler(CycleSampler(p, d, FinalProductMode::unit), ms, 300000, 12);
}

TEST(Sampler, ServiceCapRaisesCensoredDraw) {
  const CycleSampler sampler(toys::exhaustive_example(), kExhaustive2, FinalProductMode::unit, 2);
  RandomStream rng(13);
  CountVector counts(2, 0);
  EXPECT_THROW(sampler.offspring(0, 100, rng, counts), CensoredDraw);
}

TEST(AssociatedEnvironment, RotationMatchesRotatedParams) {
  const PollingCycleDistribution cycles{{1.0}, {toys::exhaustive_example()}};
  const std::vector<Discipline> d{Discipline::exhaustive, Discipline::gated};
  const auto env = associated_environment(cycles, d, FinalProductMode::service_time, 1);
  const std::vector<Discipline> rd{Discipline::gated, Discipline::exhaustive};
  const auto expected = cycle_means(station_mean_law(toys::exhaustive_example().rotated(1), rd,
                                                     FinalProductMode::service_time));
  EXPECT_EQ(max_abs_diff(env.atom(0).means().A, expected.A), 0.0);
  EXPECT_EQ(env.atom(0).means().D, expected.D);
}

TEST(AssociatedEnvironment, GatedToyMeanRowsAreRankOne) {
  const auto env = associated_environment(toys::gated_toy_cycles(), kGated2, FinalProductMode::service_time);
  for (std::size_t k = 0; k < 2; ++k) {
    const Matrix& a = env.atom(k).means().A;
    EXPECT_NEAR(a(0, 0), a(1, 0), 1e-15);
    EXPECT_NEAR(a(0, 1), a(1, 1), 1e-15);
  }
  EXPECT_NEAR(env.atom(0).means().A.row_sum(1), 0.5, 1e-15);
  EXPECT_NEAR(env.atom(1).means().A.row_sum(1), 1.6, 1e-15);
}
