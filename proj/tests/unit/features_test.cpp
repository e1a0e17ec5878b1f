#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hce/features.hpp"
#include "hce/synthgen.hpp"
#include "test_util.hpp"

namespace hce {
namespace {

TEST(Pos36, StageWrap) {
  EXPECT_EQ(pos36(37), 1);
  EXPECT_EQ(pos36(72), 36);
  EXPECT_EQ(pos36(36), 36);
  EXPECT_EQ(pos36(1), 1);
  EXPECT_EQ(pos36(144), 36);
  EXPECT_THROW(pos36(0), DataError);
  EXPECT_THROW(pos36(145), DataError);
}

TEST(Pos36, MatchesModuloOracle) {
  for (int loc = 1; loc <= 144; ++loc) {
    const int expected = loc - 36 * ((loc - 1) / 36);
    EXPECT_EQ(pos36(loc), expected);
  }
}

TEST(NormalizedTGlass, SignConvention) {
  EXPECT_DOUBLE_EQ(normalized_tglass(80, 70), 10);
  EXPECT_DOUBLE_EQ(normalized_tglass(80, 70, TGlassOrder::MeasuredMinusSup), -10);
}

TEST(CategoryEncoder, CodesAndUnseen) {
  CategoryEncoder e;
  EXPECT_EQ(e.encode('A'), 0);
  EXPECT_EQ(e.encode('H'), 7);
  EXPECT_EQ(e.decode(e.encode('D')), 'D');
  EXPECT_THROW(e.encode('I'), DataError);
  EXPECT_THROW(e.decode(8), DataError);
  EXPECT_EQ(e.to_json().size(), 8u);
}

TEST(StructureIn, DefaultLayoutAndMissingLayout) {
  auto r = test::valid_record();
  PlantLayouts layouts;
  for (int loc : {1, 12, 24, 36, 37, 48, 144}) {
    r.hce_loc = loc;
    EXPECT_EQ(structure_in(r, layouts), 1) << loc;
  }
  for (int loc : {2, 13, 35, 71}) {
    r.hce_loc = loc;
    EXPECT_EQ(structure_in(r, layouts), 0) << loc;
  }
  EXPECT_THROW(structure_in(r, PlantLayouts::none()), ConfigError);
  auto custom = PlantLayouts::none();
  custom.set(r.plant, PlantLayout{{35}});
  EXPECT_EQ(structure_in(r, custom), 1);  // 71 -> 35
}

TEST(Engineer, TwelveNamedColumnsInOrder) {
  const std::vector<std::string> expected = {
      "T_HTF[C]", "T_glass[C]", "hce_LocInLoop", "PH2[mBar]", "Loss[W/m]", "Eff_ref",
      "T_glass Sup_Limit", "pos_36", "normalized_tglass", "hce_column", "hce_number_code", "structure_in"};
  EXPECT_EQ(engineered_feature_names(), expected);
  auto r = test::valid_record();
  r.hce_loc = 73;
  r.hce_subfield = 'E';
  const auto t = engineer(Dataset({r}));
  ASSERT_EQ(t.cols(), 12);
  ASSERT_EQ(t.rows(), 1);
  EXPECT_EQ(t.names, expected);
  const std::vector<double> row = {340, 80, 73, 0.5, 300, 0.93, 80, 1, 0, 40, 4, 1};
  for (int c = 0; c < 12; ++c) EXPECT_DOUBLE_EQ(t.X(0, c), row[static_cast<std::size_t>(c)]) << t.names[c];
  EXPECT_EQ(t.broken, std::vector<int>{1});
  EXPECT_EQ(t.plant, std::vector<int>{2});
}

TEST(Engineer, SelectRowsKeepsLabelsAligned) {
  GenConfig g;
  g.n_records = 200;
  g.broken_fraction = 0.3;
  const auto data = generate(g);
  const auto t = engineer(data);
  const auto s = t.select_rows({5, 1, 7});
  ASSERT_EQ(s.rows(), 3);
  EXPECT_EQ(s.broken[0], data[5].broken);
  EXPECT_EQ(s.ids[1], data[1].id);
  EXPECT_DOUBLE_EQ(s.X(2, 1), data[7].t_glass);
}

TEST(CorrelationFilter, DropsLaterOfLinearPair) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd X(500, 3);
  for (int i = 0; i < 500; ++i) {
    X(i, 0) = n(rng);
    X(i, 1) = n(rng);
    X(i, 2) = 2 * X(i, 0) + 1;
  }
  const auto r = correlation_filter(X, {"a", "b", "c"});
  EXPECT_EQ(r.kept, (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(r.dropped_pairs.size(), 1u);
  EXPECT_EQ(r.dropped_pairs[0].kept, "a");
  EXPECT_EQ(r.dropped_pairs[0].dropped, "c");
  EXPECT_NEAR(r.dropped_pairs[0].correlation, 1.0, 1e-12);
}

TEST(CorrelationFilter, PearsonMatchesTwoPassOracle) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-5, 5);
  Eigen::VectorXd a(300), b(300);
  for (int i = 0; i < 300; ++i) {
    a(i) = u(rng);
    b(i) = 0.3 * a(i) + u(rng);
  }
  double ma = 0, mb = 0;
  for (int i = 0; i < 300; ++i) ma += a(i), mb += b(i);
  ma /= 300, mb /= 300;
  double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < 300; ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  EXPECT_NEAR(pearson(a, b), sab / std::sqrt(saa * sbb), 1e-12);
}

TEST(CorrelationFilter, ConstantColumnReported) {
  Eigen::MatrixXd X(4, 3);
  X << 1, 5, 2, 2, 5, 1, 3, 5, 7, 4, 5, 3;
  const auto r = correlation_filter(X, {"a", "k", "b"});
  EXPECT_EQ(r.constant_features, std::vector<std::string>{"k"});
  EXPECT_TRUE(std::isnan(r.correlation(1, 0)));
  EXPECT_THROW(correlation_filter(X.leftCols(1), {"a"}), DataError);
  EXPECT_THROW(correlation_filter(X.topRows(2), {"a", "k", "b"}), DataError);
}

TEST(CorrelationFilter, GeneratedCandidatesFlagInfAndEff) {
  GenConfig g;
  g.n_records = 20000;
  const auto r = correlation_filter(candidate_table(generate(g)));
  auto dropped = [&](const std::string& name) {
    return std::any_of(r.dropped_pairs.begin(), r.dropped_pairs.end(),
                       [&](const CorrelatedPair& p) { return p.dropped == name; });
  };
  EXPECT_TRUE(dropped("T_glass Inf_Limit"));
  EXPECT_TRUE(dropped("Eff"));
}

TEST(Normalizer, ZScoreMomentsAndInverse) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(10, 3);
  Eigen::MatrixXd X(1000, 2);
  for (int i = 0; i < 1000; ++i) X(i, 0) = n(rng), X(i, 1) = 2 * n(rng) - 50;
  const auto z = Normalizer::fit(X, {"a", "b"});
  const auto Z = z.apply(X);
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(Z.col(c).mean(), 0, 1e-9);
    EXPECT_NEAR(std::sqrt(Z.col(c).array().square().mean()), 1, 1e-9);
  }
  EXPECT_LT((z.invert(Z) - X).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Normalizer, MinMaxRangeAndConstantWarning) {
  Eigen::MatrixXd X(3, 2);
  X << 1, 4, 3, 4, 5, 4;
  const auto m = Normalizer::fit(X, {"x", "c"}, NormalizerKind::MinMax);
  const auto Z = m.apply(X);
  EXPECT_DOUBLE_EQ(Z(0, 0), 0);
  EXPECT_DOUBLE_EQ(Z(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(Z(2, 0), 1);
  EXPECT_DOUBLE_EQ(m.scale()(1), 1);
  ASSERT_EQ(m.warnings().size(), 1u);
  EXPECT_NE(m.warnings()[0].find("'c'"), std::string::npos);
}

TEST(Normalizer, UsesOnlyTrainStatistics) {
  Eigen::MatrixXd train(2, 1), test(2, 1);
  train << 0, 2;
  test << 100, 200;
  const auto z = Normalizer::fit(train, {"a"});
  EXPECT_DOUBLE_EQ(z.center()(0), 1);
  EXPECT_DOUBLE_EQ(z.apply(test)(0, 0), 99);
  EXPECT_THROW(z.apply(Eigen::MatrixXd(1, 2)), DataError);
  EXPECT_THROW(Normalizer::fit(Eigen::MatrixXd(0, 1), {"a"}), DataError);
}

TEST(FeatureManifest, JsonRoundTrip) {
  FeatureManifest m;
  m.options.tglass_order = TGlassOrder::MeasuredMinusSup;
  m.options.layouts.set(3, PlantLayout{{5, 9}});
  Eigen::MatrixXd X(3, 12);
  X.setRandom();
  m.normalizer = Normalizer::fit(X, m.names);
  const auto back = FeatureManifest::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_EQ(back.normalizer->apply(X), m.normalizer->apply(X));
  auto bad = m.to_json();
  bad["names"][0] = "x";
  EXPECT_THROW(FeatureManifest::from_json(bad), DataError);
}

}  // namespace
}  // namespace hce
