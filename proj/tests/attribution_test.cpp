#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <random>
#include <set>

#include "tabshap/attribution.hpp"
#include "tabshap/error.hpp"
#include "test_support.hpp"

namespace ts = tabshap;
using namespace tabshap::testing;

namespace {

const ts::VerbalizerMap kYesNo({{"yes", {"yes"}}, {"no", {"no"}}});
const ts::PromptTemplate kTemplate = ts::PromptTemplate::deepseek_default();

ts::SamplingConfig exhaustive(std::size_t m, ts::Metric metric = ts::Metric::jsd) {
  ts::SamplingConfig c;
  c.ratio = 1.0;
  c.max_coalitions = std::size_t{1} << m;
  c.metric = metric;
  return c;
}

std::vector<std::string> feature_names(std::size_t m) {
  std::vector<std::string> keys;
  for (std::size_t j = 0; j < m; ++j) keys.push_back("f" + std::to_string(j));
  return keys;
}

}  // namespace

TEST(Coalition, MaskRoundTrip) {
  const ts::Coalition c{{0, 2, 3}};
  EXPECT_TRUE(c.contains(2));
  EXPECT_FALSE(c.contains(1));
  const auto mask = c.mask(5);
  EXPECT_EQ(mask, (std::vector<bool>{true, false, true, true, false}));
  EXPECT_EQ(ts::Coalition::from_mask(mask), c);
}

TEST(EssentialCoalitions, LeaveOneOut) {
  const auto three = ts::essential_coalitions(3);
  ASSERT_EQ(three.size(), 3u);
  EXPECT_EQ(three[0].members, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(three[1].members, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(three[2].members, (std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(ts::essential_coalitions(1), ts::ContractError);
  const auto fourteen = ts::essential_coalitions(14);
  ASSERT_EQ(fourteen.size(), 14u);
  for (const auto& c : fourteen) EXPECT_EQ(c.members.size(), 13u);
}

TEST(ExtraCoalitionCount, BudgetArithmetic) {
  EXPECT_EQ(ts::extra_coalition_count(14, 0.4, 800), 786u);
  EXPECT_EQ(ts::extra_coalition_count(13, 0.4, 800), 787u);
  EXPECT_EQ(ts::extra_coalition_count(3, 1.0, 800), 4u);
  EXPECT_EQ(ts::extra_coalition_count(5, 0.1, 800), 2u);  // floor(26 * 0.1)
  EXPECT_EQ(ts::extra_coalition_count(10, 0.4, 10), 0u);
  EXPECT_EQ(ts::extra_coalition_count(60, 0.4, 800), 740u);
}

TEST(BuildCoalitions, ExhaustiveForSmallM) {
  const auto all = ts::build_coalitions(3, exhaustive(3), 5);
  ASSERT_EQ(all.size(), 7u);
  std::set<ts::Coalition> unique(all.begin(), all.end());
  EXPECT_EQ(unique.size(), 7u);
}

TEST(SampleExtra, DistinctNonEssentialNonEmpty) {
  struct Case {
    std::size_t m;
    double r;
    std::size_t cmax;
  };
  // Both the enumerate-and-shuffle and the rejection regimes.
  for (const auto& c : {Case{6, 0.5, 800}, Case{14, 0.4, 800}, Case{20, 0.4, 60}, Case{40, 0.4, 100}}) {
    for (std::uint64_t seed : {1ull, 2ull, 77ull}) {
      const auto extra = ts::sample_extra(c.m, c.r, c.cmax, seed);
      EXPECT_EQ(extra.size(), ts::extra_coalition_count(c.m, c.r, c.cmax));
      std::set<ts::Coalition> unique(extra.begin(), extra.end());
      EXPECT_EQ(unique.size(), extra.size());
      for (const auto& co : extra) {
        EXPECT_FALSE(co.members.empty());
        EXPECT_NE(co.members.size(), c.m - 1);
        EXPECT_TRUE(std::is_sorted(co.members.begin(), co.members.end()));
        EXPECT_LT(co.members.back(), c.m);
      }
      EXPECT_EQ(extra, ts::sample_extra(c.m, c.r, c.cmax, seed));
    }
  }
  EXPECT_NE(ts::sample_extra(14, 0.4, 800, 1), ts::sample_extra(14, 0.4, 800, 2));
}

TEST(SampleExtra, RoughlyUniformOverEligibleSets) {
  // M=4: 15 non-empty sets, 4 essential, 11 eligible; draw 3 per seed.
  std::map<ts::Coalition, int> hits;
  const int trials = 22000;
  for (int s = 0; s < trials; ++s) {
    for (const auto& c : ts::sample_extra(4, 0.3, 800, static_cast<std::uint64_t>(s))) ++hits[c];
  }
  ASSERT_EQ(hits.size(), 11u);
  const double expected = trials * 3.0 / 11.0;
  for (const auto& [c, n] : hits) EXPECT_NEAR(n, expected, 0.06 * expected);
}

TEST(WithWithout, MatchesDirectAverages) {
  const std::vector<ts::Coalition> cs = {{{1}}, {{0}}, {{0, 1}}};
  const Eigen::Vector3d sims(0.2, 0.9, 1.0);
  const auto raw = ts::with_without_difference(cs, sims, 2);
  EXPECT_NEAR(raw[0], (0.9 + 1.0) / 2 - 0.2, 1e-15);
  EXPECT_NEAR(raw[1], (0.2 + 1.0) / 2 - 0.9, 1e-15);
  EXPECT_THROW(ts::with_without_difference({{{0, 1}}}, Eigen::VectorXd::Ones(1), 2),
               ts::ContractError);
}

TEST(NormalizePhi, Examples) {
  auto a = ts::normalize_phi(Eigen::Vector2d(0.2, -0.1));
  EXPECT_NEAR(a.phi[0], 1.0, 1e-15);
  EXPECT_NEAR(a.phi[1], 0.0, 1e-15);
  EXPECT_FALSE(a.uniform_fallback);

  auto b = ts::normalize_phi(Eigen::Vector3d(0.3, 0.1, 0.0));
  EXPECT_NEAR(b.phi[0], 0.75, 1e-15);
  EXPECT_NEAR(b.phi[1], 0.25, 1e-15);
  EXPECT_NEAR(b.phi[2], 0.0, 1e-15);

  auto c = ts::normalize_phi(Eigen::Vector3d::Constant(0.42));
  EXPECT_TRUE(c.uniform_fallback);
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(c.phi[j], 1.0 / 3.0);
  EXPECT_THROW(ts::normalize_phi(Eigen::VectorXd::Ones(1)), ts::ContractError);
}

TEST(ComputeAttributions, WorkedTwoFeatureExample) {
  // P(yes) = 0.9 when f0 is present, 0.5 otherwise.
  ts::SyntheticBackend backend(make_spec({{"f0", std::log(9.0)}, {"f1", 0.0}}, 0.0));
  const ts::AttributionContext ctx{backend, kTemplate, kYesNo};
  const auto inst = make_instance({"f0", "f1"});
  auto cfg = exhaustive(2);
  cfg.max_coalitions = 800;
  const auto r = ts::compute_attributions(inst, ctx, cfg);
  EXPECT_EQ(r.coalition_count, 3u);
  EXPECT_NEAR(r.raw_phi[0], 0.146792, 1e-5);
  EXPECT_NEAR(r.raw_phi[1], -0.073396, 1e-5);
  EXPECT_NEAR(r.raw_phi[0], 0.1467931024360520, 1e-12);
  EXPECT_NEAR(r.raw_phi[1], -0.0733965512180260, 1e-12);
  EXPECT_NEAR(r.phi[0], 1.0, 1e-9);
  EXPECT_NEAR(r.phi[1], 0.0, 1e-9);
  EXPECT_EQ(r.ranked_keys(), (std::vector<std::string>{"f0", "f1"}));
}

TEST(ComputeAttributions, MatchesExhaustiveEnumeration) {
  std::mt19937_64 gen(31);
  std::normal_distribution<double> w(0.0, 1.5);
  for (std::size_t m = 2; m <= 7; ++m) {
    for (int trial = 0; trial < 4; ++trial) {
      const auto keys = feature_names(m);
      std::map<std::string, double> weights;
      for (const auto& k : keys) weights[k] = w(gen);
      const double bias = w(gen);
      ts::SyntheticBackend backend(make_spec(weights, bias));
      const ts::AttributionContext ctx{backend, kTemplate, kYesNo};
      const auto r = ts::compute_attributions(make_instance(keys), ctx, exhaustive(m));
      ASSERT_EQ(r.coalition_count, (std::size_t{1} << m) - 1);

      const auto full = ref_oracle_dist(weights, bias, keys);
      const auto want = ref_with_without(m, [&](std::uint64_t mask) {
        std::vector<std::string> present;
        for (std::size_t j = 0; j < m; ++j) {
          if (mask >> j & 1u) present.push_back(keys[j]);
        }
        return ref_jsd_similarity(full, ref_oracle_dist(weights, bias, present));
      });
      for (std::size_t j = 0; j < m; ++j) EXPECT_NEAR(r.raw_phi[static_cast<Eigen::Index>(j)], want[j], 1e-12);
    }
  }
}

TEST(ComputeAttributions, ConstantOracleFallsBackToUniform) {
  for (auto metric : {ts::Metric::jsd, ts::Metric::kl, ts::Metric::l1}) {
    ts::SyntheticBackend backend(make_spec({{"a", 0.0}, {"b", 0.0}, {"c", 0.0}}, 0.7));
    const ts::AttributionContext ctx{backend, kTemplate, kYesNo};
    ts::SamplingConfig cfg;
    cfg.metric = metric;
    const auto r = ts::compute_attributions(make_instance({"a", "b", "c"}), ctx, cfg);
    EXPECT_TRUE(r.uniform_fallback);
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(r.phi[j], 1.0 / 3.0);
  }
}

TEST(ComputeAttributions, DegenerateVerbalizerIsFlagged) {
  ts::SyntheticBackend backend(make_spec({{"a", 1.0}, {"b", 0.0}}, 0.0));
  const ts::VerbalizerMap other({{"pos", {"positive"}}, {"neg", {"negative"}}});
  const ts::AttributionContext ctx{backend, kTemplate, other};
  const auto r = ts::compute_attributions(make_instance({"a", "b"}), ctx, ts::SamplingConfig{});
  EXPECT_TRUE(r.full_degenerate);
  EXPECT_EQ(r.degenerate_coalitions, r.coalition_count);
  EXPECT_TRUE(r.uniform_fallback);
}

TEST(ComputeAttributions, PlantedFeatureWinsForEveryMetric) {
  const auto keys = feature_names(8);
  std::map<std::string, double> weights;
  for (const auto& k : keys) weights[k] = 0.0;
  weights["f5"] = 2.5;
  ts::SyntheticBackend backend(make_spec(weights, -1.0));
  const ts::AttributionContext ctx{backend, kTemplate, kYesNo};
  for (auto metric : {ts::Metric::jsd, ts::Metric::kl, ts::Metric::l1}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      ts::SamplingConfig cfg;
      cfg.metric = metric;
      cfg.seed = seed;
      const auto r = ts::compute_attributions(make_instance(keys), ctx, cfg);
      Eigen::Index best;
      r.phi.maxCoeff(&best);
      EXPECT_EQ(best, 5);
    }
  }
}

TEST(ComputeAttributions, PermutingFieldsPermutesPhi) {
  const auto keys = feature_names(6);
  std::map<std::string, double> weights = {{"f0", 0.4}, {"f1", -1.1}, {"f2", 0.9},
                                           {"f3", 0.05}, {"f4", 1.7}, {"f5", -0.3}};
  ts::SyntheticBackend backend(make_spec(weights, 0.2));
  const ts::AttributionContext ctx{backend, kTemplate, kYesNo};
  const auto inst = make_instance(keys);
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};  // new position i holds old perm[i]
  ts::TabularInstance permuted = inst;
  for (std::size_t i = 0; i < perm.size(); ++i) permuted.fields[i] = inst.fields[perm[i]];

  ts::SamplingConfig cfg;
  cfg.ratio = 0.5;
  const auto coalitions = ts::build_coalitions(6, cfg, 9);
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
  std::vector<ts::Coalition> remapped;
  for (const auto& c : coalitions) {
    ts::Coalition r;
    for (auto j : c.members) r.members.push_back(inverse[j]);
    std::sort(r.members.begin(), r.members.end());
    remapped.push_back(r);
  }
  const auto a = ts::compute_attributions(inst, ctx, cfg, coalitions);
  const auto b = ts::compute_attributions(permuted, ctx, cfg, remapped);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    EXPECT_NEAR(b.phi[static_cast<Eigen::Index>(i)], a.phi[static_cast<Eigen::Index>(perm[i])], 1e-12);
  }
}

TEST(ComputeAttributions, SeedDeterministicAndWorkerIndependent) {
  const auto keys = feature_names(9);
  std::map<std::string, double> weights;
  for (std::size_t j = 0; j < keys.size(); ++j) weights[keys[j]] = 0.3 * static_cast<double>(j) - 1.0;
  ts::SyntheticBackend backend(make_spec(weights, 0.1));
  const auto inst = make_instance(keys, 17);
  ts::SamplingConfig cfg;
  cfg.seed = 42;
  const auto a = ts::compute_attributions(inst, {backend, kTemplate, kYesNo, 1}, cfg);
  const auto b = ts::compute_attributions(inst, {backend, kTemplate, kYesNo, 4}, cfg);
  EXPECT_EQ(ts::to_json(a).dump(), ts::to_json(b).dump());
  EXPECT_EQ(a.raw_phi, b.raw_phi);
  cfg.seed = 43;
  const auto c = ts::compute_attributions(inst, {backend, kTemplate, kYesNo, 1}, cfg);
  EXPECT_NE(a.raw_phi, c.raw_phi);
}

TEST(ComputeAttributions, BackendFailurePropagates) {
  auto inner = std::make_shared<ts::SyntheticBackend>(make_spec({{"a", 1.0}}, 0.0));
  FailingBackend failing(inner, "b:");
  const ts::AttributionContext ctx{failing, kTemplate, kYesNo, 2};
  EXPECT_THROW(ts::compute_attributions(make_instance({"a", "b", "c"}), ctx, ts::SamplingConfig{}),
               ts::BackendUnavailableError);
}

TEST(ComputeAttributions, PreconditionsAndConfig) {
  ts::SyntheticBackend backend(make_spec({{"a", 1.0}}, 0.0));
  const ts::AttributionContext ctx{backend, kTemplate, kYesNo};
  EXPECT_THROW(ts::compute_attributions(make_instance({"a"}), ctx, ts::SamplingConfig{}),
               ts::ContractError);
  ts::SamplingConfig bad;
  bad.ratio = 0.0;
  EXPECT_THROW(bad.validate(), ts::ConfigError);
  bad.ratio = 1.5;
  EXPECT_THROW(bad.validate(), ts::ConfigError);
  ts::SamplingConfig small;
  small.max_coalitions = 2;
  EXPECT_THROW(ts::compute_attributions(make_instance({"a", "b", "c"}), ctx, small), ts::ConfigError);

  const ts::SamplingConfig defaults;
  EXPECT_DOUBLE_EQ(defaults.ratio, 0.4);
  EXPECT_EQ(defaults.max_coalitions, 800u);
  EXPECT_EQ(defaults.top_k, 10);
}

TEST(AttributionResult, JsonRoundTrip) {
  ts::SyntheticBackend backend(make_spec({{"a", 1.0}, {"b", -0.5}, {"c", 0.2}}, 0.0));
  const ts::AttributionContext ctx{backend, kTemplate, kYesNo};
  ts::SamplingConfig cfg;
  cfg.metric = ts::Metric::l1;
  cfg.seed = 5;
  const auto r = ts::compute_attributions(make_instance({"a", "b", "c"}, 12), ctx, cfg);
  const auto j = ts::to_json(r);
  EXPECT_EQ(j.at("instance_index"), 12);
  EXPECT_EQ(j.at("metric"), "l1");
  EXPECT_TRUE(j.at("phi").contains("a"));
  EXPECT_TRUE(j.contains("degeneracy_flags"));
  EXPECT_EQ(j.at("coalition_count"), r.coalition_count);
  const auto back = ts::attribution_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.raw_phi, r.raw_phi);
  EXPECT_EQ(back.phi, r.phi);
  EXPECT_EQ(back.feature_keys, r.feature_keys);
  EXPECT_EQ(ts::to_json(back).dump(), j.dump());
}
