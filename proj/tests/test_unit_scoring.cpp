#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "advise/unit_scoring.hpp"
#include "support.hpp"

using namespace advise;
using advise::test::Draws;
using advise::test::quantile_cluster;

namespace {

constexpr std::size_t kSide = 13;

using test::three_unit_bundle;

/// Bundle of K units, each either unimodal or bimodal with random placement.
TensorBundle random_bundle(std::uint64_t seed, std::size_t K) {
  Draws d(seed);
  std::vector<std::vector<double>> units;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> u;
    const double a = d.uniform(-1, 1), gap = d.uniform(0.5, 2);
    if (d.index(2) == 0)
      u = quantile_cluster(kSide * kSide, a, d.uniform(0.1, 1));
    else
      u = test::concat(quantile_cluster(100, a, 0.05), quantile_cluster(69, a + gap, 0.08));
    for (double& v : u) v += 1e-3 * d.normal();
    units.push_back(std::move(u));
  }
  return test::bundle_from_units(kSide, kSide, units);
}

ScoringConfig single_thread() {
  ScoringConfig c;
  c.threads = 1;
  return c;
}

}  // namespace

TEST(NormalizeUnit, MinMaxArithmetic) {
  const std::vector<double> s{-2, 0, 2};
  const auto u = normalize_unit(s);
  ASSERT_FALSE(u.degenerate());
  const auto v = u.samples->values();
  EXPECT_EQ(std::vector<double>(v.begin(), v.end()), (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(u.min, -2.0);
  EXPECT_EQ(u.max, 2.0);
}

TEST(NormalizeUnit, ConstantSliceIsDegenerate) {
  const std::vector<double> s(20, 3.5);
  EXPECT_TRUE(normalize_unit(s).degenerate());
}

TEST(NormalizeUnit, SampleCountIsGridSize) {
  Draws d(1);
  std::vector<double> s(169);
  for (double& v : s) v = d.normal();
  EXPECT_EQ(normalize_unit(s).samples->size(), 169u);
}

TEST(NormalizeUnit, RejectsNonFinite) {
  const std::vector<double> s{1, NAN, 2};
  EXPECT_THROW(normalize_unit(s), ValidationError);
}

TEST(FindPeaks, MonotoneHasNoInteriorPeak) {
  std::vector<double> up(50);
  for (std::size_t i = 0; i < up.size(); ++i) up[i] = static_cast<double>(i);
  EXPECT_EQ(find_peaks(up), 0);
  std::vector<double> down(up.rbegin(), up.rend());
  EXPECT_EQ(find_peaks(down), 0);
}

TEST(FindPeaks, ProminenceAndSeparation) {
  // Two clear bumps plus a ripple below 5% of the maximum.
  std::vector<double> d(100, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = static_cast<double>(i);
    d[i] = std::exp(-0.5 * std::pow((x - 25) / 4, 2)) + 0.6 * std::exp(-0.5 * std::pow((x - 75) / 4, 2));
  }
  EXPECT_EQ(find_peaks(d), 2);
  d[50] += 0.01;
  EXPECT_EQ(find_peaks(d), 2);
  d[50] += 0.2;
  EXPECT_EQ(find_peaks(d), 3);
  EXPECT_EQ(find_peaks(d, 0.7), 1);
}

TEST(FindPeaks, AdjacentMaximaCountOnce) {
  // Strict maxima at 3 and 5 are separated by 2 cells; at distance 1 only
  // one could be a strict maximum anyway.
  const std::vector<double> d{0, 1, 2, 5, 4, 4.5, 1, 0};
  EXPECT_EQ(find_peaks(d, 0.05), 2);
  EXPECT_EQ(find_peaks(d, 0.2), 1);
}

TEST(FindPeaks, FlatOrTinyInput) {
  EXPECT_EQ(find_peaks(std::vector<double>{1, 2}), 0);
  EXPECT_EQ(find_peaks(std::vector<double>(10, 0.0)), 0);
}

TEST(ScoreUnits, ThreeUnitFixture) {
  const auto s = score_units(three_unit_bundle(), single_thread());
  EXPECT_EQ(s.scores, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(s.peak_range(), std::make_pair(0, 2));
  EXPECT_EQ(s.normalization[0], std::make_pair(0.25, 0.25));
}

TEST(ScoreUnits, ActivationSourceScoresActivations) {
  // Activations carry the three-unit patterns in reverse; gradients are flat.
  const auto ref = three_unit_bundle();
  const std::size_t K = ref.gradient.units;
  const auto b = test::make_bundle(
      13, 13, K, [&](std::size_t u, std::size_t v, std::size_t k) { return ref.gradient.at(u, v, K - 1 - k); },
      [](std::size_t, std::size_t, std::size_t) { return 0.5; });
  ScoringConfig c = single_thread();
  c.source = ScoreSource::activation;
  EXPECT_EQ(score_units(b, c).scores, (std::vector<int>{2, 1, 0}));
  EXPECT_EQ(score_units(b, single_thread()).scores, (std::vector<int>{0, 0, 0}));
}

TEST(ScoreUnits, PositiveAffineInvariance) {
  const auto base = random_bundle(11, 6);
  const auto ref = score_units(base, single_thread()).scores;
  for (double alpha : {0.5, 3.0, 100.0})
    for (double beta : {-1.0, 0.0, 7.0}) {
      auto b = base;
      for (float& g : b.gradient.data) g = static_cast<float>(alpha * g + beta);
      EXPECT_EQ(score_units(b, single_thread()).scores, ref) << "alpha " << alpha << " beta " << beta;
    }
}

TEST(ScoreUnits, PerUnitIndependence) {
  const auto base = random_bundle(12, 5);
  const auto ref = score_units(base, single_thread()).scores;
  auto b = base;
  Draws d(99);
  for (std::size_t u = 0; u < kSide; ++u)
    for (std::size_t v = 0; v < kSide; ++v) b.gradient.at(u, v, 2) = static_cast<float>(d.uniform(-3, 3));
  const auto got = score_units(b, single_thread()).scores;
  for (std::size_t k = 0; k < ref.size(); ++k)
    if (k != 2) {
      EXPECT_EQ(got[k], ref[k]) << "unit " << k;
    }
}

TEST(ScoreUnits, SignMirrorKeepsPeakCount) {
  const auto base = three_unit_bundle();
  auto b = base;
  for (float& g : b.gradient.data) g = -g;
  EXPECT_EQ(score_units(b, single_thread()).scores, score_units(base, single_thread()).scores);
}

TEST(ScoreUnits, ThreadCountDoesNotMatter) {
  const auto b = random_bundle(13, 8);
  ScoringConfig c;
  c.threads = 1;
  const auto one = score_units(b, c).scores;
  for (unsigned t : {2u, 3u, 8u}) {
    c.threads = t;
    EXPECT_EQ(score_units(b, c).scores, one) << t << " threads";
  }
}

TEST(ScoreUnits, KeepDensities) {
  ScoringConfig c = single_thread();
  c.keep_densities = true;
  const auto s = score_units(three_unit_bundle(), c);
  EXPECT_FALSE(s.densities[0].has_value());
  ASSERT_TRUE(s.densities[2].has_value());
  EXPECT_EQ(find_peaks(*s.densities[2]), 2);
}

TEST(ScoresJson, LayoutAndRoundTrip) {
  const auto s = score_units(three_unit_bundle(), single_thread());
  const auto j = scores_to_json("b", single_thread(), s);
  EXPECT_EQ(j["bundle"], "b");
  EXPECT_EQ(j["score_source"], "gradient");
  EXPECT_EQ(j["peak_range"], nlohmann::json::array({0, 2}));
  EXPECT_EQ(j["histogram"]["1"], 1);
  EXPECT_TRUE(j["kde_config"].contains("prominence"));
  EXPECT_EQ(scores_from_json(nlohmann::json::parse(j.dump())), s.scores);
  EXPECT_THROW(scores_from_json(nlohmann::json::parse(R"({"scores":[1,-1]})")), ValidationError);
}

TEST(ScoringConfig, Validation) {
  ScoringConfig c;
  c.prominence = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(parse_score_source("weights"), ValidationError);
  EXPECT_EQ(parse_score_source("activation"), ScoreSource::activation);
}
