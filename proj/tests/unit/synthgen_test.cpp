#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "hce/synthgen.hpp"

namespace hce {
namespace {

double median_of(const Dataset& d, double (*get)(const HceRecord&), int broken) {
  std::vector<double> v;
  for (const auto& r : d.records()) {
    if (r.broken == broken) v.push_back(get(r));
  }
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double glass(const HceRecord& r) { return r.t_glass; }
double efficiency(const HceRecord& r) { return r.eff; }

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

std::vector<double> column(const Dataset& d, int plant, double (*get)(const HceRecord&)) {
  std::vector<double> v;
  for (const auto& r : d.records()) {
    if (r.plant == plant) v.push_back(get(r));
  }
  return v;
}

TEST(Generate, BrokenCountForTwoPercent) {
  GenConfig g;
  g.n_records = 10000;
  g.broken_fraction = 0.02;
  g.seed = 1;
  const auto d = generate(g);
  EXPECT_EQ(d.size(), 10000u);
  EXPECT_GE(d.class_count(1), 190u);
  EXPECT_LE(d.class_count(1), 210u);
}

TEST(Generate, DefaultFractionFromReportedCounts) {
  GenConfig g;
  EXPECT_DOUBLE_EQ(g.broken_fraction, 3676.0 / (151833.0 + 3676.0));
  g.n_records = 20000;
  const auto d = generate(g);
  EXPECT_NEAR(100.0 * d.broken_fraction(), 100.0 * g.broken_fraction, 0.2);
}

TEST(Generate, EveryRecordPassesValidation) {
  for (double strength : {0.0, 1.0, 3.0}) {
    GenConfig g;
    g.n_records = 5000;
    g.broken_fraction = 0.3;
    g.plant_signature_strength = strength;
    g.hard_negative_fraction = 0.2;
    const auto d = generate(g);
    for (const auto& r : d.records()) {
      ASSERT_FALSE(validate(r).has_errors()) << validate(r).summary();
      ASSERT_TRUE(validate(r).ok());
    }
  }
}

TEST(Generate, BalancedMediansOrdered) {
  GenConfig g;
  g.broken_fraction = 0.5;
  g.seed = 3;
  const auto d = generate(g);
  EXPECT_EQ(d.class_count(0), d.class_count(1));
  EXPECT_GT(median_of(d, glass, 1), median_of(d, glass, 0));
  EXPECT_LT(median_of(d, efficiency, 1), median_of(d, efficiency, 0));
}

TEST(Generate, HardNegativesAreConfigurable) {
  GenConfig g;
  g.n_records = 20000;
  auto count_hot = [](const Dataset& d) {
    return std::count_if(d.records().begin(), d.records().end(),
                         [](const HceRecord& r) { return r.broken == 0 && r.t_glass > 120; });
  };
  const auto d = generate(g);
  const double share = static_cast<double>(count_hot(d)) / static_cast<double>(d.class_count(0));
  EXPECT_GT(share, 0.005);
  EXPECT_LT(share, 0.015);
  g.hard_negative_fraction = 0;
  EXPECT_EQ(count_hot(generate(g)), 0);
}

TEST(Generate, PlantsNearlyEqual) {
  GenConfig g;
  g.n_records = 7001;
  const auto d = generate(g);
  ASSERT_EQ(d.plant_counts().size(), 7u);
  for (const auto& [p, n] : d.plant_counts()) {
    EXPECT_GE(n, 999u);
    EXPECT_LE(n, 1002u);
  }
}

TEST(Generate, DeterministicPureFunction) {
  GenConfig g;
  g.n_records = 3000;
  g.seed = 77;
  EXPECT_EQ(generate(g).records(), generate(g).records());
  auto h = g;
  h.seed = 78;
  EXPECT_NE(generate(g).records(), generate(h).records());
}

TEST(Generate, InfeasibleConfigs) {
  GenConfig g;
  g.n_records = 10;
  g.broken_fraction = 0.01;
  EXPECT_THROW(generate(g), ConfigError);
  g.broken_fraction = 0;
  EXPECT_THROW(generate(g), ConfigError);
  g.broken_fraction = 0.5;
  g.n_plants = 0;
  EXPECT_THROW(generate(g), ConfigError);
  g.n_plants = 8;
  EXPECT_THROW(generate(g), ConfigError);
}

TEST(Generate, ClassSeparationWidensGlassGap) {
  GenConfig g;
  g.broken_fraction = 0.5;
  g.n_records = 8000;
  double previous = -1e9;
  for (double sep : {0.0, 1.0, 2.0}) {
    g.class_separation = sep;
    const auto d = generate(g);
    const double gap = median_of(d, glass, 1) - median_of(d, glass, 0);
    EXPECT_GT(gap, previous) << sep;
    previous = gap;
    for (const auto& r : d.records()) ASSERT_TRUE(validate(r).ok());
  }
  g.class_separation = -0.1;
  EXPECT_THROW(generate(g), ConfigError);
  g.class_separation = 4.5;
  EXPECT_THROW(generate(g), ConfigError);
}

TEST(Generate, ZeroStrengthPlantsIndistinguishable) {
  GenConfig g;
  g.n_records = 10000;
  g.plant_signature_strength = 0;
  g.seed = 4;
  const auto d = generate(g);
  std::vector<double (*)(const HceRecord&)> getters;
  for (const auto& [name, get] : numeric_variables()) getters.push_back(get);
  for (auto get : getters) {
    const auto a = column(d, 0, get);
    const auto b = column(d, 6, get);
    const double n = a.size(), m = b.size();
    const double critical = 1.628 * std::sqrt((n + m) / (n * m));  // alpha = 0.01
    EXPECT_LT(ks_statistic(a, b), critical);
  }
}

TEST(Generate, StrongSignatureShiftsPlants) {
  GenConfig g;
  g.n_records = 10000;
  g.plant_signature_strength = 1;
  const auto d = generate(g);
  auto col = [](const HceRecord& r) { return static_cast<double>(r.hce_column); };
  const auto a = column(d, 0, col);
  const auto b = column(d, 6, col);
  EXPECT_GT(ks_statistic(a, b), 0.5);
}

TEST(Generate, FlaggedPairsNearlyLinear) {
  GenConfig g;
  g.n_records = 20000;
  const auto d = generate(g);
  auto corr = [&](double (*x)(const HceRecord&), double (*y)(const HceRecord&)) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    const double n = d.size();
    for (const auto& r : d.records()) {
      const double a = x(r), b = y(r);
      sx += a, sy += b, sxx += a * a, syy += b * b, sxy += a * b;
    }
    return (sxy - sx * sy / n) / std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
  };
  EXPECT_LT(corr([](const HceRecord& r) { return r.loss; }, efficiency), -0.95);
  EXPECT_LT(corr([](const HceRecord& r) { return r.eff_ref; }, [](const HceRecord& r) { return r.t_htf; }),
            -0.98);
  EXPECT_GT(corr([](const HceRecord& r) { return double(r.t_glass_inf); },
                 [](const HceRecord& r) { return double(r.t_glass_sup); }),
            0.999);
}

TEST(Describe, SingleRecordQuartilesCollapse) {
  HceRecord r;
  r.t_glass = 77;
  r.loss = 300;
  r.eff = 0.9;
  r.eff_ref = 0.95;
  r.ph2 = 1;
  r.t_glass_inf = 50;
  r.t_glass_sup = 70;
  r.t_htf = 340;
  r.hce_loc = 5;
  r.hce_column = 9;
  const auto s = describe(Dataset({r}));
  const auto& q = s.at("t_glass").overall;
  EXPECT_EQ(q.count, 1u);
  for (double v : {q.min, q.q1, q.median, q.q3, q.max}) EXPECT_EQ(v, 77);
  EXPECT_EQ(s.at("hce_column").by_plant.at(0).median, 9);
}

TEST(Describe, GeneratedRangesAndSentinel) {
  GenConfig g;
  g.broken_fraction = 0.5;
  const auto d = generate(g);
  const auto s = describe(d);
  const double m = s.at("t_glass").by_class.at(1).median;
  EXPECT_GE(m, 60);
  EXPECT_LE(m, 120);
  EXPECT_NEAR(s.at("t_htf").overall.median, 340, 5);
  EXPECT_EQ(s.at("ph2").overall.max, 1000);
  for (const auto& r : d.records()) {
    if (r.ph2 > 100) {
      ASSERT_EQ(r.ph2, 1000);
    }
  }
}

TEST(Describe, LinearInterpolatedQuartiles) {
  const auto q = summarize({4, 1, 3, 2});
  EXPECT_DOUBLE_EQ(q.q1, 1.75);
  EXPECT_DOUBLE_EQ(q.median, 2.5);
  EXPECT_DOUBLE_EQ(q.q3, 3.25);
  EXPECT_THROW(describe(Dataset{}), DataError);
}

}  // namespace
}  // namespace hce
