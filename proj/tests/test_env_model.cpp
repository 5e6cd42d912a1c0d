#include <gtest/gtest.h>

#include <cmath>

#include "mbpre/environment.hpp"
#include "toys.hpp"

using namespace mbpre;

namespace {

/// |mean − expected| within 5 standard errors.
void expect_mean(const std::vector<double>& v, double expected, const char* what) {
  double m = 0.0, q = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) q += (x - m) * (x - m);
  const double se = std::sqrt(q / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  EXPECT_LE(std::abs(m - expected), 5.0 * se + 1e-12) << what << ": mean " << m << " expected " << expected;
}

}  // namespace

TEST(EnvironmentDistribution, SingleAtomReturnedEveryTime) {
  const auto law = toys::scalar_law(CountLaw::degenerate({1}));
  const auto dist = EnvironmentDistribution::fixed(law);
  RandomStream rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(&sample_environment(dist, rng).law(), law.get());
  EXPECT_EQ(rng.blocks_consumed(), 0u);
}

TEST(EnvironmentDistribution, AtomFrequencyMatchesWeights) {
  const auto dist = toys::scalar_toy();
  RandomStream rng(2);
  const int n = 1000000;
  int first = 0;
  for (int i = 0; i < n; ++i) first += sample_environment(dist, rng).index == 0;
  EXPECT_NEAR(static_cast<double>(first) / n, 0.6, 0.002);
}

TEST(EnvironmentDistribution, SameStreamSameDraws) {
  const auto dist = toys::scalar_toy();
  RandomStream a(3, 0), b(3, 0);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(dist.sample(a).index, dist.sample(b).index);
}

TEST(EnvironmentDistribution, DrawsHaveNoLagOneCorrelation) {
  const auto dist = toys::scalar_toy();
  RandomStream rng(4);
  const int n = 100000;
  std::vector<double> x(n);
  for (auto& v : x) v = static_cast<double>(dist.sample(rng).index);
  double m = 0.0;
  for (double v : x) m += v / n;
  double c0 = 0.0, c1 = 0.0;
  for (int i = 0; i < n; ++i) c0 += (x[i] - m) * (x[i] - m);
  for (int i = 1; i < n; ++i) c1 += (x[i] - m) * (x[i - 1] - m);
  EXPECT_LT(std::abs(c1 / c0), 5.0 / std::sqrt(static_cast<double>(n)));
}

TEST(EnvironmentDistribution, RejectsBadWeights) {
  const auto law = toys::scalar_law(CountLaw::degenerate({1}));
  EXPECT_THROW(EnvironmentDistribution({{0.5, law}, {0.6, law}}), ConfigError);
  EXPECT_THROW(EnvironmentDistribution({{-0.5, law}, {1.5, law}}), ConfigError);
}

TEST(EnvironmentDistribution, RejectsMixedTypeCounts) {
  const auto one = toys::scalar_law(CountLaw::degenerate({1}));
  const auto two = toys::diagonal(1.0, 2).atom(0).atom->law;
  EXPECT_THROW(EnvironmentDistribution({{0.5, one}, {0.5, two}}), ConfigError);
}

TEST(EnvironmentDistribution, ClosedFormMomentsForScalarAtoms) {
  const auto dist = toys::scalar_toy();
  ASSERT_TRUE(dist.closed_form_moments());
  EXPECT_DOUBLE_EQ(dist.closed_form_moment(1.0), 1.1);
  EXPECT_DOUBLE_EQ(dist.closed_form_moment(0.0), 1.0);
  EXPECT_FALSE(toys::diagonal(0.5, 2).closed_form_moments());
}

TEST(SampleOffspring, DegenerateLaw) {
  const auto law = std::make_shared<ParametricEnvironment>(
      std::vector<ParentLaw>{{CountLaw::degenerate({1, 0}), AmountLaw::deterministic(1.0)},
                             {CountLaw::zero(2), AmountLaw::deterministic(0.0)}},
      ImmigrationLaw{CountLaw::zero(2), AmountLaw::deterministic(0.0)});
  const auto dist = EnvironmentDistribution::fixed(law);
  RandomStream rng(5);
  const Draw d = sample_offspring(dist.sample(rng), 0, rng);
  EXPECT_EQ(d.counts, (CountVector{1, 0}));
  EXPECT_EQ(d.product, 1.0);
}

TEST(SampleOffspring, InvalidTypeThrows) {
  const auto dist = toys::scalar_toy();
  RandomStream rng(6);
  EXPECT_THROW(sample_offspring(dist.atom(0), 1, rng), std::out_of_range);
}

TEST(SampleOffspring, PoissonMeansMatch) {
  const auto law = std::make_shared<ParametricEnvironment>(
      std::vector<ParentLaw>{{CountLaw::poisson({0.2, 0.3}), AmountLaw::exponential(1.0)},
                             {CountLaw::zero(2), AmountLaw::deterministic(0.0)}},
      ImmigrationLaw{CountLaw::zero(2), AmountLaw::deterministic(0.0)});
  const auto env = EnvironmentDistribution::fixed(law).atom(0);
  RandomStream rng(7);
  const int n = 1000000;
  std::vector<double> c0(n), c1(n), phi(n);
  for (int i = 0; i < n; ++i) {
    const Draw d = sample_offspring(env, 0, rng);
    c0[i] = static_cast<double>(d.counts[0]);
    c1[i] = static_cast<double>(d.counts[1]);
    phi[i] = d.product;
  }
  expect_mean(c0, 0.2, "type 1 children");
  expect_mean(c1, 0.3, "type 2 children");
  expect_mean(phi, 1.0, "exponential product");
  double m = 0.0;
  for (double v : phi) m += v / n;
  EXPECT_NEAR(m, 1.0, 0.005);
}

TEST(SampleImmigration, ZeroLaw) {
  const auto dist = toys::scalar_toy(0.0);
  RandomStream rng(8);
  const Draw d = sample_immigration(dist.atom(0), rng);
  EXPECT_EQ(d.counts, CountVector{0});
  EXPECT_EQ(d.product, 0.0);
}

TEST(SampleImmigration, ProductWithoutImmigrants) {
  const auto law = std::make_shared<ParametricEnvironment>(
      std::vector<ParentLaw>{{CountLaw::zero(1), AmountLaw::deterministic(0.0)}},
      ImmigrationLaw{CountLaw::zero(1), AmountLaw::exponential(0.5)});
  const auto env = EnvironmentDistribution::fixed(law).atom(0);
  RandomStream rng(9);
  const int n = 1000000;
  std::vector<double> psi(n);
  for (int i = 0; i < n; ++i) {
    const Draw d = sample_immigration(env, rng);
    ASSERT_EQ(d.counts[0], 0u);
    psi[i] = d.product;
  }
  expect_mean(psi, 0.5, "immigrant product");
  EXPECT_FALSE(law->immigration_possible());
}

TEST(SampleImmigration, PoissonMeansMatch) {
  const auto law = std::make_shared<ParametricEnvironment>(
      std::vector<ParentLaw>{{CountLaw::zero(2), AmountLaw::deterministic(0.0)},
                             {CountLaw::zero(2), AmountLaw::deterministic(0.0)}},
      ImmigrationLaw{CountLaw::poisson({1.0, 2.0}), AmountLaw::deterministic(0.0)});
  const auto env = EnvironmentDistribution::fixed(law).atom(0);
  RandomStream rng(10);
  const int n = 1000000;
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    const Draw d = sample_immigration(env, rng);
    a[i] = static_cast<double>(d.counts[0]);
    b[i] = static_cast<double>(d.counts[1]);
  }
  expect_mean(a, 1.0, "immigrants type 1");
  expect_mean(b, 2.0, "immigrants type 2");
}

TEST(CountLaw, AggregatedSumsMatchMeans) {
  RandomStream rng(11);
  const CountLaw laws[] = {CountLaw::poisson({0.7, 1.3}), CountLaw::geometric({0.5, 2.0}),
                           CountLaw::categorical({0.2, 0.5}, 3), CountLaw::degenerate({2, 1})};
  for (const auto& law : laws) {
    const Vector mean = law.mean();
    const int n = 200000;
    const Count parents = 5;
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      CountVector out(2, 0);
      law.add_sum(parents, rng, out);
      a[i] = static_cast<double>(out[0]);
      b[i] = static_cast<double>(out[1]);
    }
    expect_mean(a, parents * mean[0], law.describe().c_str());
    expect_mean(b, parents * mean[1], law.describe().c_str());
  }
}

TEST(AmountLaw, SumsMatchMeans) {
  RandomStream rng(12);
  const AmountLaw laws[] = {AmountLaw::exponential(2.0), AmountLaw::gamma(0.5, 1.5), AmountLaw::lognormal(0.1, 0.4),
                            AmountLaw::deterministic(0.25)};
  for (const auto& law : laws) {
    const int n = 200000;
    std::vector<double> s(n);
    for (auto& v : s) v = law.sample_sum(4, rng);
    expect_mean(s, 4.0 * law.mean(), law.describe().c_str());
  }
}

TEST(Laws, RejectInvalidParameters) {
  EXPECT_THROW(AmountLaw::exponential(0.0), ConfigError);
  EXPECT_THROW(AmountLaw::deterministic(-1.0), ConfigError);
  EXPECT_THROW(CountLaw::poisson({-0.1}), ConfigError);
  EXPECT_THROW(CountLaw::categorical({0.7, 0.6}), ConfigError);
}

TEST(EstimateMeans, MarksEstimatesAndMatchesAnalytic) {
  const auto law = std::make_shared<ParametricEnvironment>(
      std::vector<ParentLaw>{{CountLaw::poisson({0.2, 0.3}), AmountLaw::exponential(1.0)},
                             {CountLaw::geometric({0.4, 0.1}), AmountLaw::deterministic(2.0)}},
      ImmigrationLaw{CountLaw::poisson({1.0, 0.5}), AmountLaw::exponential(0.5)});
  const MeanStatistics est = estimate_means(*law, 100000, RandomStream(13));
  const MeanStatistics exact = *law->analytic_means();
  EXPECT_TRUE(est.estimated);
  EXPECT_FALSE(exact.estimated);
  EXPECT_LT(max_abs_diff(est.A, exact.A), 0.02);
  EXPECT_LT(max_abs_diff(est.B, exact.B), 0.02);
  EXPECT_LT(max_abs_diff(est.C, exact.C), 0.02);
  EXPECT_NEAR(est.D, exact.D, 0.02);
}
