#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tabshap/error.hpp"
#include "tabshap/verbalizer.hpp"

namespace ts = tabshap;

namespace {

ts::TopKDistribution from_probs(std::vector<std::pair<std::string, double>> entries) {
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });
  ts::TopKDistribution d;
  d.k = static_cast<int>(entries.size());
  for (const auto& [tok, p] : entries) d.entries.push_back({tok, std::log(p)});
  return d;
}

const ts::VerbalizerMap kYesNo({{"yes", {"yes"}}, {"no", {"no"}}});

}  // namespace

TEST(Canonicalize, StripAndLowercase) {
  EXPECT_EQ(ts::canonicalize_token(" Yes"), "yes");
  EXPECT_EQ(ts::canonicalize_token("no"), "no");
  EXPECT_EQ(ts::canonicalize_token("  NO "), "no");
  EXPECT_EQ(ts::canonicalize_token("\tYES\n"), "yes");
}

TEST(AggregateRaw, SumsMatchingSurfaceForms) {
  const auto d = from_probs({{" yes", 0.6}, {"Yes", 0.2}, {" no", 0.1}, {"maybe", 0.05}});
  const auto raw = ts::aggregate_raw(d, kYesNo);
  EXPECT_NEAR(raw[0], 0.8, 1e-15);
  EXPECT_NEAR(raw[1], 0.1, 1e-15);
  EXPECT_LE(raw.sum(), d.total_mass() + 1e-15);

  const auto none = ts::aggregate_raw(from_probs({{"maybe", 0.3}, {"x", 0.2}}), kYesNo);
  EXPECT_EQ(none[0], 0.0);
  EXPECT_EQ(none[1], 0.0);

  const auto single = ts::aggregate_raw(from_probs({{" no", 0.3}}), kYesNo);
  EXPECT_EQ(single[0], 0.0);
  EXPECT_NEAR(single[1], 0.3, 1e-15);
}

TEST(NormalizeClasses, Cases) {
  const auto a = ts::normalize_classes(Eigen::Vector2d(0.8, 0.1));
  EXPECT_NEAR(a.probs[0], 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(a.probs[1], 1.0 / 9.0, 1e-12);
  EXPECT_FALSE(a.degenerate);

  const auto b = ts::normalize_classes(Eigen::Vector2d(0.5, 0.5));
  EXPECT_EQ(b.probs[0], 0.5);

  const auto c = ts::normalize_classes(Eigen::Vector2d(0.0, 0.0));
  EXPECT_EQ(c.probs[0], 0.5);
  EXPECT_EQ(c.probs[1], 0.5);
  EXPECT_TRUE(c.degenerate);

  EXPECT_THROW(ts::normalize_classes(Eigen::Vector2d(-0.1, 0.5)), ts::ContractError);
  EXPECT_THROW(ts::normalize_classes(Eigen::Vector2d(NAN, 0.5)), ts::ContractError);
}

TEST(NormalizeClasses, ScaleInvariant) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 1.0), lambda(1e-3, 1e3);
  for (int i = 0; i < 500; ++i) {
    Eigen::Vector3d raw(u(gen), u(gen), u(gen));
    const double l = lambda(gen);
    const auto a = ts::normalize_classes(raw);
    const auto b = ts::normalize_classes(raw * l);
    EXPECT_TRUE(a.probs.isApprox(b.probs, 1e-14));
    EXPECT_NEAR(a.probs.sum(), 1.0, 1e-14);
  }
}

TEST(ClassDistribution, WorkedExample) {
  const auto d = from_probs({{" yes", 0.6}, {"Yes", 0.2}, {" no", 0.1}, {"maybe", 0.05}});
  const auto n = ts::class_distribution(d, kYesNo);
  EXPECT_NEAR(n.probs[0], 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(n.probs[1], 1.0 / 9.0, 1e-12);
}

TEST(VerbalizerMap, JsonAndValidation) {
  const auto v = ts::VerbalizerMap::from_json_text(R"({">50K": [">50k", "yes"], "<=50K": ["<=50k", " No "]})");
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v.classes()[0], ">50K");
  EXPECT_EQ(v.class_of("no"), std::optional<std::size_t>(1));
  EXPECT_EQ(v.class_of("maybe"), std::nullopt);
  EXPECT_EQ(ts::VerbalizerMap::from_json_text(v.to_json_text()).to_json_text(), v.to_json_text());

  EXPECT_THROW(ts::VerbalizerMap::from_json_text(R"({"a": ["x"]})"), ts::ConfigError);
  EXPECT_THROW(ts::VerbalizerMap::from_json_text(R"({"a": ["x"], "b": [" X"]})"), ts::ConfigError);
  EXPECT_THROW(ts::VerbalizerMap::from_json_text(R"({"a": [], "b": ["y"]})"), ts::ConfigError);
  EXPECT_THROW(ts::VerbalizerMap::from_json_text(R"({"a": "x", "b": ["y"]})"), ts::ConfigError);
  EXPECT_THROW(ts::VerbalizerMap::from_json_text("{"), ts::ParseError);
}
