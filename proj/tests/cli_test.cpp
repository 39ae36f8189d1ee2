#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "tabshap/cli.hpp"
#include "tabshap/error.hpp"
#include "test_support.hpp"

namespace ts = tabshap;
namespace cli = tabshap::cli;
using namespace tabshap::testing;

namespace {

const std::filesystem::path kData = TABSHAP_DATA_DIR;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "tabshap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

// Common flags pointing at the artifacts a synth-demo run leaves in `out`.
std::vector<std::string> demo_inputs(const std::filesystem::path& out) {
  const auto demo = out / "demo";
  return {"--dataset", (demo / "dataset.csv").string(), "--schema", (demo / "schema.json").string(),
          "--template", (demo / "template.txt").string(), "--verbalizer", (demo / "verbalizer.json").string(),
          "--backend", "synthetic:" + (demo / "oracle_spec.json").string()};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"attribute", "--instances", "0", "--dataset", "x.csv", "--schema", "s.json"}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"attribute", "--dataset", "missing.csv", "--schema", "missing.json"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"synth-demo"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"attribute", "--help"}).code, cli::kExitOk);
}

TEST(Cli, SynthDemoDominantFeature) {
  TempDir dir;
  const auto r = run({"synth-demo", "--spec", (kData / "synthetic_dominant.json").string(), "--out",
                      dir.path().string(), "--instances", "6", "--seed", "3"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  for (const auto* metric : {"jsd", "kl", "l1"}) {
    for (std::size_t i = 0; i < 6; ++i) {
      const auto j = read_json(dir / "attributions" / metric / (std::to_string(i) + ".json"));
      double best = -1;
      std::string best_key;
      for (const auto& [k, v] : j.at("phi").items()) {
        if (v.get<double>() > best) {
          best = v.get<double>();
          best_key = k;
        }
      }
      EXPECT_EQ(best_key, "f0") << metric << " instance " << i;
    }
    EXPECT_TRUE(std::filesystem::exists(dir / ("compare_" + std::string(metric) + ".json")));
  }
  const auto csv = slurp(dir / "deletion_curves.csv");
  for (const auto* src : {"\njsd,", "\nkl,", "\nl1,", "\nrandom,", "\nexternal,"}) {
    EXPECT_NE(csv.find(src), std::string::npos) << src;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "tokenshap_validation_cache.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "selected_test_indices.json"));
  EXPECT_TRUE(read_json(dir / "run_manifest.json").at("runs").contains("attribute_kl"));
}

TEST(Cli, SynthDemoIsBitIdenticalOnRerun) {
  TempDir a, b;
  const auto spec = (kData / "synthetic_planted.json").string();
  // Same relative output path for both runs, so manifests match byte for byte.
  const auto cwd = std::filesystem::current_path();
  std::filesystem::current_path(a.path());
  ASSERT_EQ(run({"synth-demo", "--spec", spec, "--out", "out", "--instances", "5"}).code, 0);
  const auto first = snapshot(a / "out");
  ASSERT_EQ(run({"synth-demo", "--spec", spec, "--out", "out", "--instances", "5"}).code, 0);
  EXPECT_EQ(snapshot(a / "out"), first);
  std::filesystem::current_path(b.path());
  ASSERT_EQ(run({"synth-demo", "--spec", spec, "--out", "out", "--instances", "5"}).code, 0);
  std::filesystem::current_path(cwd);
  EXPECT_EQ(snapshot(b / "out"), first);
}

TEST(Cli, SynthDemoPlantedOrderGivesRhoOne) {
  TempDir dir;
  ASSERT_EQ(run({"synth-demo", "--spec", (kData / "synthetic_planted.json").string(), "--out",
                 dir.path().string(), "--instances", "10"})
                .code,
            0);
  EXPECT_DOUBLE_EQ(read_json(dir / "compare_jsd.json").at("spearman_rho").get<double>(), 1.0);
}

TEST(Cli, SynthDemoConstantOracleIsUniformAndFlagged) {
  TempDir dir;
  const auto r = run({"synth-demo", "--spec", (kData / "synthetic_constant.json").string(), "--out",
                      dir.path().string(), "--instances", "4"});
  EXPECT_EQ(r.code, 0) << r.err;
  for (const auto* metric : {"jsd", "kl", "l1"}) {
    for (std::size_t i = 0; i < 4; ++i) {
      const auto j = read_json(dir / "attributions" / metric / (std::to_string(i) + ".json"));
      EXPECT_TRUE(j.at("degeneracy_flags").at("uniform_phi").get<bool>());
      for (const auto& [k, v] : j.at("phi").items()) EXPECT_DOUBLE_EQ(v.get<double>(), 0.25);
    }
  }
}

TEST(Cli, SameIndicesAndMissingCache) {
  TempDir seed_dir, dir;
  ASSERT_EQ(run({"synth-demo", "--spec", (kData / "synthetic_planted.json").string(), "--out",
                 seed_dir.path().string(), "--instances", "30"})
                .code,
            0);
  const auto inputs = demo_inputs(seed_dir.path());
  const auto out = dir.path().string();

  // Deletion curves from a metric cache that does not exist yet.
  auto missing = run(concat({"deletion-curve", "--out", out, "--sources", "kl,random"}, inputs));
  EXPECT_EQ(missing.code, cli::kExitUsage);
  EXPECT_NE(missing.err.find("tabshap attribute"), std::string::npos) << missing.err;

  ASSERT_EQ(run(concat({"attribute", "--out", out, "--instances", "5", "--seed", "9"}, inputs)).code, 0);
  const auto chosen = read_json(dir / "selected_test_indices.json").at("selected_test_indices");
  EXPECT_EQ(chosen.size(), 5u);

  // A later L1 run with a different --instances still uses the recorded set.
  ASSERT_EQ(run(concat({"attribute", "--out", out, "--metric", "l1", "--instances", "7", "--seed", "9"}, inputs)).code, 0);
  EXPECT_EQ(read_json(dir / "tokenshap_validation_cache_l1.json").at("selected_test_indices"), chosen);

  // Explicitly requesting other indices fails loudly.
  const auto other = run(concat({"attribute", "--out", out, "--metric", "kl", "--indices", "0", "1", "--seed", "9"}, inputs));
  EXPECT_NE(other.code, 0);
  EXPECT_FALSE(std::filesystem::exists(dir / "tokenshap_validation_cache_kl.json"));

  // Changing sampling settings on a warm cache is a stale-cache error.
  EXPECT_NE(run(concat({"attribute", "--out", out, "--ratio", "0.3", "--seed", "9"}, inputs)).code, 0);

  const auto curves = run(concat({"deletion-curve", "--out", out, "--sources", "jsd,l1,random",
                                  "--max-removals", "3", "--seed", "9"}, inputs));
  ASSERT_EQ(curves.code, 0) << curves.err;
  const auto cj = read_json(dir / "deletion_curves.json");
  ASSERT_EQ(cj.at("curves").size(), 3u);
  for (const auto& c : cj.at("curves")) {
    EXPECT_LE(c.at("mean_prob").size(), 4u);
    EXPECT_EQ(c.at("mean_prob")[0], cj.at("curves")[0].at("mean_prob")[0]);
  }
}

TEST(Cli, CompareAgainstOwnRanking) {
  TempDir dir;
  ASSERT_EQ(run({"synth-demo", "--spec", (kData / "synthetic_dominant.json").string(), "--out",
                 dir.path().string(), "--instances", "4"})
                .code,
            0);
  const auto global = read_json(dir / "global_ranking_jsd.json");
  std::vector<std::string> keys;
  for (const auto& e : global.at("ranking")) keys.push_back(e.at("key"));
  spit(dir / "same.json", nlohmann::json{{"global", keys}}.dump());
  std::reverse(keys.begin(), keys.end());
  spit(dir / "reversed.json", nlohmann::json{{"global", keys}}.dump());
  const auto inputs = demo_inputs(dir.path());
  ASSERT_EQ(global.at("tie"), false);

  ASSERT_EQ(run(concat({"compare", "--out", dir.path().string(), "--external", (dir / "same.json").string()}, inputs)).code, 0);
  EXPECT_EQ(read_json(dir / "compare_jsd.json").at("spearman_rho").get<double>(), 1.0);
  ASSERT_EQ(run(concat({"compare", "--out", dir.path().string(), "--external", (dir / "reversed.json").string()}, inputs)).code, 0);
  EXPECT_EQ(read_json(dir / "compare_jsd.json").at("spearman_rho").get<double>(), -1.0);
  spit(dir / "partial.json", R"({"global": ["f0", "f1"]})");
  EXPECT_NE(run(concat({"compare", "--out", dir.path().string(), "--external", (dir / "partial.json").string()}, inputs)).code, 0);
}

TEST(Cli, SerializePrintsPrompt) {
  TempDir dir;
  spit(dir / "d.csv", "Age,Work Class,y\n39,State-gov,no\n50,Private,yes\n");
  spit(dir / "s.json", R"({"Age": "numeric", "Work Class": "categorical", "y": "label"})");
  const auto r = run({"serialize", "--dataset", (dir / "d.csv").string(), "--schema", (dir / "s.json").string(),
                      "--index", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("### Input:\nage:50 work_class:private\n\n### Response:\n"), std::string::npos);
  const auto dropped = run({"serialize", "--dataset", (dir / "d.csv").string(), "--schema",
                            (dir / "s.json").string(), "--drop", "Age"});
  EXPECT_NE(dropped.out.find("### Input:\nwork_class:state-gov\n"), std::string::npos);
  EXPECT_EQ(run({"serialize", "--dataset", (dir / "d.csv").string(), "--schema", (dir / "s.json").string(),
                 "--index", "7"})
                .code,
            cli::kExitUsage);
}

TEST(Cli, ConfigFilePrecedence) {
  TempDir dir;
  cli::RunConfig c;
  c.apply_json(nlohmann::json::parse(R"({"ratio": 0.5, "top_k": 4, "metric": "kl", "instances": 12})"));
  EXPECT_DOUBLE_EQ(c.sampling.ratio, 0.5);
  EXPECT_EQ(c.sampling.top_k, 4);
  EXPECT_EQ(c.sampling.metric, ts::Metric::kl);
  EXPECT_THROW(c.apply_json(nlohmann::json::parse(R"({"bogus": 1})")), ts::ConfigError);
  EXPECT_THROW(c.apply_json(nlohmann::json::parse(R"({"ratio": "high"})")), ts::ConfigError);

  ASSERT_EQ(run({"synth-demo", "--spec", (kData / "synthetic_planted.json").string(), "--out",
                 (dir / "seed").string(), "--instances", "3"})
                .code,
            0);
  auto inputs = demo_inputs(dir / "seed");
  spit(dir / "config.json", R"({"ratio": 0.5, "top_k": 4, "instances": 2})");
  const auto out = (dir / "run").string();
  ASSERT_EQ(run(concat({"attribute", "--config", (dir / "config.json").string(), "--out", out, "--ratio", "0.25"}, inputs)).code, 0);
  const auto cfg = read_json(dir / "run" / "run_manifest.json").at("runs").at("attribute_jsd").at("config");
  EXPECT_DOUBLE_EQ(cfg.at("ratio").get<double>(), 0.25);
  EXPECT_EQ(cfg.at("top_k"), 4);
  EXPECT_EQ(cfg.at("instances"), 2);
  EXPECT_EQ(cfg.at("max_coalitions"), 800);
}

TEST(Cli, InstanceFailureGivesNonzeroExit) {
  TempDir dir;
  ASSERT_EQ(run({"synth-demo", "--spec", (kData / "synthetic_planted.json").string(), "--out",
                 (dir / "seed").string(), "--instances", "3"})
                .code,
            0);
  cli::RunConfig c;
  const auto demo = dir / "seed" / "demo";
  c.dataset = demo / "dataset.csv";
  c.schema = demo / "schema.json";
  c.out = dir / "run";
  c.indices = {0, 1, 2};
  auto spec = ts::SyntheticOracleSpec::from_file(demo / "oracle_spec.json");
  auto inner = std::make_shared<ts::SyntheticBackend>(spec);
  const auto target = ts::load_dataset(c.dataset, ts::Schema::from_json_file(c.schema)).at(1);
  c.backend_override = std::make_shared<FailingBackend>(inner, ts::serialize_features(target.fields));
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_attribute(c, out, err), cli::kExitFailure);
  EXPECT_NE(err.str().find("instance 1"), std::string::npos);

  c.backend_override = inner;
  std::ostringstream out2, err2;
  EXPECT_EQ(cli::cmd_attribute(c, out2, err2), cli::kExitOk) << err2.str();
}

TEST(Cli, EndpointEnvironmentOverride) {
  cli::RunConfig c;
  ::unsetenv(cli::kEndpointEnv);
  EXPECT_THROW(cli::resolve_backend(c), ts::ConfigError);
  c.backend = "http://config-host:1/v1";
  EXPECT_EQ(cli::resolve_backend(c).location, "http://config-host:1/v1");
  ::setenv(cli::kEndpointEnv, "http://env-host:2/v1", 1);
  EXPECT_EQ(cli::resolve_backend(c).location, "http://env-host:2/v1");
  c.backend.clear();
  EXPECT_EQ(cli::resolve_backend(c).kind, ts::BackendKind::http);
  c.backend = "synthetic:spec.json";
  EXPECT_EQ(cli::resolve_backend(c).location, "spec.json");
  ::unsetenv(cli::kEndpointEnv);
}

TEST(Cli, SelectionIsSeededAndSorted) {
  TempDir dir;
  cli::RunConfig c;
  c.out = dir.path();
  c.instances = 50;
  const auto a = cli::select_indices(c, 1000);
  EXPECT_EQ(a.size(), 50u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(a, cli::select_indices(c, 1000));
  c.sampling.seed = 1;
  EXPECT_NE(a, cli::select_indices(c, 1000));
  EXPECT_EQ(cli::select_indices(c, 10).size(), 10u);
  c.indices = {5, 5};
  EXPECT_THROW(cli::select_indices(c, 10), ts::ConfigError);
}
