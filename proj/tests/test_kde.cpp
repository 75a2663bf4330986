#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "advise/kde.hpp"
#include "advise/unit_scoring.hpp"
#include "support.hpp"

using namespace advise;
using namespace advise::kde;
using advise::test::Draws;
using advise::test::quantile_cluster;

namespace {

double oracle_gauss(double s, double w) {
  return std::exp(-(s * s) / (2.0 * w * w)) / (std::sqrt(2.0 * std::numbers::pi) * w);
}

/// (1/W) * integral over the window of H(u-ai) H(u-aj), trapezoid rule.
double psi_trapezoid(double ai, double aj, double w, double W, double a, int steps) {
  const double lo = a - 0.5 * W, h = W / steps;
  double acc = 0.0;
  for (int k = 0; k <= steps; ++k) {
    const double u = lo + h * k;
    const double f = oracle_gauss(u - ai, w) * oracle_gauss(u - aj, w);
    acc += (k == 0 || k == steps) ? 0.5 * f : f;
  }
  return acc * h / W;
}

}  // namespace

TEST(GaussKernel, PeakValue) { EXPECT_NEAR(gauss_kernel(0.0, 0.1), 3.989423, 5e-7); }

TEST(GaussKernel, EvenSymmetry) {
  Draws d(1);
  for (int i = 0; i < 100; ++i) {
    const double s = d.uniform(-1, 1), w = d.log_uniform(1e-3, 1);
    EXPECT_EQ(gauss_kernel(s, w), gauss_kernel(-s, w));
  }
}

TEST(GaussKernel, IntegratesToOne) {
  for (double w : {0.01, 0.1, 0.7}) {
    const double lo = -12 * w, hi = 12 * w;
    const int n = 20000;
    const double h = (hi - lo) / n;
    double acc = 0.0;
    for (int k = 0; k <= n; ++k) acc += (k == 0 || k == n ? 0.5 : 1.0) * gauss_kernel(lo + h * k, w);
    EXPECT_NEAR(acc * h, 1.0, 1e-6) << "w=" << w;
  }
}

TEST(GaussKernel, RejectsNonPositiveBandwidth) {
  EXPECT_THROW(gauss_kernel(0.0, 0.0), ValidationError);
  EXPECT_THROW(gauss_kernel(0.0, -1.0), ValidationError);
}

TEST(FixedDensity, SingleKernel) {
  const std::vector<double> s{0.5};
  EXPECT_NEAR(fixed_density(s, 0.1, 0.5), 3.989423, 5e-7);
}

TEST(FixedDensity, TwoTermSum) {
  const std::vector<double> s{0.2, 0.8};
  const double expect = 0.5 * (oracle_gauss(0.3, 0.05) + oracle_gauss(-0.3, 0.05));
  EXPECT_NEAR(fixed_density(s, 0.05, 0.5), expect, 1e-15);
}

TEST(FixedDensity, GridMatchesDoubleLoop) {
  Draws d(2);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> s(1 + d.index(500));
    for (auto& x : s) x = d.uniform();
    SampleSet set(s);
    const double w = d.log_uniform(1.0 / 511, 0.5);
    const auto grid = uniform_grid(128);
    const auto fast = fixed_density_grid(set.sorted(), w, grid);
    for (std::size_t j = 0; j < grid.size(); ++j) {
      double acc = 0.0;
      for (double a : s) acc += oracle_gauss(grid[j] - a, w);
      acc /= static_cast<double>(s.size());
      EXPECT_LE(std::abs(fast[j] - acc), 1e-9 * std::max(acc, 1e-300) + 1e-300);
      EXPECT_GE(fast[j], 0.0);
    }
  }
}

TEST(Psi, MatchesQuadratureForCoincidentSamples) {
  // a_i = a_j = center with a window covering all the mass.
  const double w = 0.05;
  EXPECT_NEAR(psi(0.5, 0.5, w, 1.0, 0.5), psi_trapezoid(0.5, 0.5, w, 1.0, 0.5, 200000), 1e-6);
}

TEST(Psi, MatchesQuadratureOnRandomTriples) {
  Draws d(3);
  for (int rep = 0; rep < 25; ++rep) {
    const double w = d.log_uniform(2e-3, 0.5), W = d.uniform(0.01, 1.0), a = d.uniform();
    const double ai = std::clamp(a + d.uniform(-W, W), 0.0, 1.0), aj = std::clamp(a + d.uniform(-W, W), 0.0, 1.0);
    EXPECT_NEAR(psi(ai, aj, w, W, a), psi_trapezoid(ai, aj, w, W, a, 400000), 1e-6)
        << "w=" << w << " W=" << W << " a=" << a;
  }
}

TEST(LocalCost, SpreadSamplesPreferModerateBandwidth) {
  Draws d(4);
  std::vector<double> s(200);
  for (auto& x : s) x = d.uniform(0.1, 0.9);
  const double tiny = local_cost(s, 1e-4, 1.0, 0.5);
  const double moderate = local_cost(s, 0.05, 1.0, 0.5);
  EXPECT_LT(moderate, tiny);
}

TEST(LocalCost, NeedsTwoSamples) {
  const std::vector<double> s{0.5};
  EXPECT_THROW(local_cost(s, 0.1, 1.0, 0.5), DegenerateSamples);
}

TEST(LocalCostTable, AgreesWithExactCost) {
  Draws d(5);
  auto s = quantile_cluster(200, 0.5, 0.01);
  for (int i = 0; i < 200; ++i) s.push_back(d.uniform());
  const SampleSet set(s);
  const LocalCostTable table(set, {1.0 / 511, 0.5}, 48);
  double scale = 0.0, worst = 0.0;
  for (double W : {0.05, 0.2, 1.0})
    for (double c : {0.3, 0.5, 0.7})
      for (double w : {0.003, 0.01, 0.03, 0.1, 0.3}) {
        const double exact = local_cost(set.sorted(), w, W, c);
        scale = std::max(scale, std::abs(exact));
        worst = std::max(worst, std::abs(exact - table.cost(w, W, c)));
      }
  EXPECT_LT(worst, 5e-3 * scale);
}

TEST(Golden, ParabolaMinimum) {
  auto f = [](double x) { return (x - 0.3141) * (x - 0.3141) + 2.0; };
  const auto r = golden_section_minimize(f, 0.0, 1.0, 1e-6);
  EXPECT_NEAR(r.x, 0.3141, 1e-4);
}

TEST(OptimizeFixedBandwidth, NotWorseThanBracketEnds) {
  Draws d(6);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> s(150);
    for (auto& x : s) x = d.uniform();
    const SampleSet set(s);
    const Bracket br{1.0 / 511, 0.5};
    const auto opt = optimize_fixed_bandwidth(set, 1.0, 0.5, br);
    EXPECT_LE(opt.cost, local_cost(set.sorted(), br.lo, 1.0, 0.5));
    EXPECT_LE(opt.cost, local_cost(set.sorted(), br.hi, 1.0, 0.5));
    EXPECT_GE(opt.bandwidth, br.lo);
    EXPECT_LE(opt.bandwidth, br.hi);
  }
}

TEST(OptimizeFixedBandwidth, AgreesWithDenseGridArgmin) {
  const auto tight = quantile_cluster(200, 0.5, 0.01);
  Draws d(9);
  auto background = tight;
  for (int i = 0; i < 200; ++i) background.push_back(d.uniform());
  const Bracket br{1.0 / 511, 0.5};
  const int G = 400;
  const double step = (std::log(br.hi) - std::log(br.lo)) / (G - 1);
  double widths[2];
  int idx = 0;
  const std::vector<double>* sets[] = {&tight, &background};
  for (const auto* s : sets) {
    const SampleSet set(*s);
    int best = 0;
    double best_cost = 1e300;
    for (int m = 0; m < G; ++m) {
      const double c = local_cost(set.sorted(), std::exp(std::log(br.lo) + step * m), 1.0, 0.5);
      if (c < best_cost) best_cost = c, best = m;
    }
    const auto opt = optimize_fixed_bandwidth(set, 1.0, 0.5, br);
    EXPECT_LE(std::abs(std::log(opt.bandwidth) - (std::log(br.lo) + step * best)), 2 * step + 1e-12);
    widths[idx++] = opt.bandwidth;
  }
  EXPECT_LT(widths[0], widths[1]) << "background should widen the optimal bandwidth";
}

TEST(SmoothBandwidths, ConstantFieldUnchanged) {
  BandwidthField f{uniform_grid(64), std::vector<double>(64, 0.03)};
  for (double w : smooth_bandwidths(f, 0.3)) EXPECT_DOUBLE_EQ(w, 0.03);
}

TEST(SmoothBandwidths, SinglePointIsIdentity) {
  BandwidthField f{{0.4}, {0.07}};
  const auto out = smooth_bandwidths(f, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0], 0.07);
}

TEST(SmoothBandwidths, StepStaysMonotoneAndBounded) {
  const auto grid = uniform_grid(128);
  BandwidthField f{grid, std::vector<double>(128)};
  for (std::size_t j = 0; j < grid.size(); ++j) f.bandwidths[j] = grid[j] < 0.5 ? 0.01 : 0.04;
  const auto out = smooth_bandwidths(f, 0.5);
  for (std::size_t j = 0; j < out.size(); ++j) {
    EXPECT_GE(out[j], 0.01);
    EXPECT_LE(out[j], 0.04);
    if (j) {
      EXPECT_GE(out[j], out[j - 1]);
    }
  }
}

TEST(VariableCost, TwoSamplesMatchHandExpansion) {
  // lambda(a) = (H(a-0.3) + H(a-0.7)) / 2 with w = 0.1.
  const double w = 0.1, x = 0.3, y = 0.7;
  auto pair_integral = [&](double p, double q) {
    // integral over [0,1] of H_w(a-p) H_w(a-q) da
    const double s = w / std::sqrt(2.0), mid = 0.5 * (p + q);
    const double mass = 0.5 * (std::erf((1.0 - mid) / (s * std::sqrt(2.0))) - std::erf((0.0 - mid) / (s * std::sqrt(2.0))));
    return oracle_gauss(p - q, std::sqrt(2.0) * w) * mass;
  };
  const double squared = 0.25 * (pair_integral(x, x) + pair_integral(y, y) + 2.0 * pair_integral(x, y));
  const double cross = (2.0 / 4.0) * 2.0 * oracle_gauss(x - y, w);
  const SampleSet s({x, y});
  BandwidthField f{uniform_grid(20001), std::vector<double>(20001, w)};
  EXPECT_NEAR(variable_cost(s, f), squared - cross, 1e-6);
}

TEST(VariableCost, GridRefinementIsStable) {
  const auto s = quantile_cluster(300, 0.5, 0.1);
  const SampleSet set(s);
  auto integral = [&](int G) {
    BandwidthField f{uniform_grid(G), std::vector<double>(static_cast<std::size_t>(G), 0.05)};
    const auto dens = variable_density(set.sorted(), f);
    std::vector<double> sq(dens.size());
    for (std::size_t j = 0; j < sq.size(); ++j) sq[j] = dens[j] * dens[j];
    return trapezoid(f.points, sq);
  };
  EXPECT_LT(std::abs(integral(512) - integral(1024)), 1e-4);
}

TEST(VariableCost, FiniteForPositiveFields) {
  Draws d(7);
  std::vector<double> s(100);
  for (auto& x : s) x = d.uniform();
  const SampleSet set(s);
  BandwidthField f{uniform_grid(64), std::vector<double>(64)};
  for (auto& w : f.bandwidths) w = d.log_uniform(1e-3, 0.5);
  EXPECT_TRUE(std::isfinite(variable_cost(set, f)));
}

TEST(LocalBandwidths, FixedPointsSatisfyTheWindowRule) {
  const auto s = test::concat(quantile_cluster(300, 0.3, 0.03), quantile_cluster(300, 0.7, 0.05));
  const SampleSet set(s);
  const double gamma = 0.3;
  const auto lb = local_bandwidths(set, gamma, 128);
  const KdeConfig cfg;
  ASSERT_EQ(lb.field.bandwidths.size(), 128u);
  std::size_t interior = 0;
  for (std::size_t j = 0; j < lb.windows.size(); ++j) {
    EXPECT_GT(lb.field.bandwidths[j], 0.0);
    if (lb.interior[j]) {
      ++interior;
      EXPECT_NEAR(lb.field.bandwidths[j], gamma * lb.windows[j], 1e-12);
    }
  }
  EXPECT_GT(interior, 64u);
}

TEST(EstimateDensity, TwoSeparatedClustersGiveTwoPeaks) {
  const auto s = test::concat(quantile_cluster(500, 0.2, 0.01), quantile_cluster(500, 0.8, 0.01));
  const auto est = estimate_density(SampleSet(s));
  EXPECT_EQ(find_peaks(est), 2);
}

TEST(EstimateDensity, SingleClusterPeaksNearMean) {
  const auto s = quantile_cluster(500, 0.5, 0.05);
  const auto est = estimate_density(SampleSet(s));
  EXPECT_EQ(find_peaks(est), 1);
  const auto j = std::max_element(est.density.begin(), est.density.end()) - est.density.begin();
  EXPECT_NEAR(est.grid[static_cast<std::size_t>(j)], 0.5, 0.02);
}

TEST(EstimateDensity, InvariantsHold) {
  Draws d(8);
  std::vector<double> s(400);
  for (auto& x : s) x = std::clamp(0.5 + 0.12 * d.normal(), 0.1, 0.9);
  const auto est = estimate_density(SampleSet(s));
  ASSERT_EQ(est.grid.size(), 512u);
  for (std::size_t j = 0; j < est.grid.size(); ++j) {
    EXPECT_GE(est.density[j], 0.0);
    EXPECT_GT(est.bandwidths[j], 0.0);
    if (j) {
      EXPECT_NEAR(est.grid[j] - est.grid[j - 1], 1.0 / 511, 1e-12);
    }
  }
  EXPECT_GE(trapezoid(est.grid, est.density), 0.6);
  EXPECT_GE(est.gamma, 0.05);
  EXPECT_LE(est.gamma, 1.0);
}

TEST(EstimateDensity, FixedGammaIsHonoured) {
  KdeConfig cfg;
  cfg.set_gamma_mode("fixed:0.5");
  const auto est = estimate_density(SampleSet(quantile_cluster(200, 0.5, 0.1)), cfg);
  EXPECT_EQ(est.gamma, 0.5);
  EXPECT_EQ(est.gamma_evaluations, 1);
}

TEST(EstimateDensity, Deterministic) {
  const auto s = quantile_cluster(300, 0.4, 0.1);
  EXPECT_EQ(estimate_density(SampleSet(s)), estimate_density(SampleSet(s)));
}

TEST(EstimateDensity, DegenerateSamplesSignal) {
  EXPECT_THROW(estimate_density(SampleSet({0.5, 0.5, 0.5})), DegenerateSamples);
  EXPECT_THROW(estimate_density(SampleSet({0.5})), DegenerateSamples);
}

TEST(KdeConfig, GammaModeParsing) {
  KdeConfig c;
  c.set_gamma_mode("fixed:0.25");
  EXPECT_FALSE(c.gamma_search);
  EXPECT_EQ(c.gamma_mode(), "fixed:0.25");
  c.set_gamma_mode("search");
  EXPECT_TRUE(c.gamma_search);
  EXPECT_THROW(c.set_gamma_mode("fixed:"), ValidationError);
  EXPECT_THROW(c.set_gamma_mode("fixed:-1"), ValidationError);
  EXPECT_THROW(c.set_gamma_mode("golden"), ValidationError);
  EXPECT_EQ(c.to_json()["grid_size"], 512);
}
