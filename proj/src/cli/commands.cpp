#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "atomic_file.hpp"
#include "tabshap/cli.hpp"
#include "tabshap/error.hpp"
#include "tabshap/faithfulness.hpp"
#include "tabshap/rank_compare.hpp"
#include "tabshap/rng.hpp"

namespace tabshap::cli {
namespace {

constexpr std::uint64_t kRandomOrderStream = 0x7a2d0000;
constexpr std::uint64_t kDemoStream = 0xde70;
constexpr std::size_t kSummaryTopFeatures = 3;

std::string fixed(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  detail::write_file_atomically(path, j.dump(2) + "\n");
}

// run_manifest.json keeps one entry per command tag so that reruns of the
// same command overwrite in place.
void record_run(const RunConfig& config, const std::string& tag, nlohmann::ordered_json extra) {
  const auto path = config.out / "run_manifest.json";
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  if (std::filesystem::exists(path)) {
    try {
      manifest = nlohmann::ordered_json::parse(detail::read_text_file(path));
    } catch (const nlohmann::json::exception&) {
      manifest = nlohmann::ordered_json::object();
    }
  }
  nlohmann::ordered_json entry;
  entry["config"] = config.to_json();
  for (auto& [k, v] : extra.items()) entry[k] = v;
  manifest["runs"][tag] = std::move(entry);
  write_json(path, manifest);
}

std::string flag_text(const AttributionResult& r) {
  std::vector<std::string> flags;
  if (r.full_degenerate) flags.push_back("full-degenerate");
  if (r.uniform_fallback) flags.push_back("uniform");
  if (r.degenerate_coalitions > 0) {
    flags.push_back("degenerate=" + std::to_string(r.degenerate_coalitions));
  }
  if (flags.empty()) return "-";
  std::string s;
  for (const auto& f : flags) s += (s.empty() ? "" : ",") + f;
  return s;
}

std::string summary_table(const std::vector<AttributionResult>& results, const VerbalizerMap& vmap) {
  std::ostringstream os;
  os << pad("instance", 10) << pad("M", 4) << pad("pred", 8) << pad("p_pred", 8)
     << pad("coalitions", 12) << pad("flags", 24) << "top features\n";
  for (const auto& r : results) {
    const auto pred = predicted_class(r.full_dist);
    const auto ranked = r.ranked_keys();
    std::string top;
    for (std::size_t i = 0; i < std::min(kSummaryTopFeatures, ranked.size()); ++i) {
      const auto pos = std::find(r.feature_keys.begin(), r.feature_keys.end(), ranked[i]) -
                       r.feature_keys.begin();
      if (i) top += "  ";
      top += ranked[i] + "=" + fixed(r.phi[pos], 3);
    }
    os << pad(std::to_string(r.instance_index), 10) << pad(std::to_string(r.feature_keys.size()), 4)
       << pad(vmap.classes()[pred.index], 8) << pad(fixed(r.full_dist[static_cast<Eigen::Index>(pred.index)]), 8)
       << pad(std::to_string(r.coalition_count), 12) << pad(flag_text(r), 24) << top << "\n";
  }
  return os.str();
}

AttributionCache require_cache(const RunConfig& config, const Workspace& ws, Metric metric) {
  const auto path = config.cache_paths().for_metric(metric);
  const auto name = std::string(to_string(metric));
  if (!std::filesystem::exists(path)) {
    throw ConfigError("no " + name + " attribution cache at " + path.string() +
                      "; run `tabshap attribute --metric " + name + "` first");
  }
  auto cache = read_cache(path);
  if (cache.fingerprint != config_fingerprint(config.sampling, ws.tmpl, ws.vmap)) {
    throw StaleCacheError(path.string() +
                          " was computed under different sampling, template or verbalizer "
                          "settings; rerun with the original settings or recompute");
  }
  return cache;
}

std::vector<std::string> split_sources(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) out.push_back(part);
    }
  }
  return out;
}

}  // namespace

int cmd_attribute(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (config.indices.empty() && config.instances == 0) {
    throw ConfigError("--instances must be at least 1");
  }
  config.sampling.validate();
  const auto ws = load_workspace(config, true);
  const auto indices = select_indices(config, ws.instances.size());
  const auto fingerprint = config_fingerprint(config.sampling, ws.tmpl, ws.vmap);
  const AttributionContext ctx{*ws.backend, ws.tmpl, ws.vmap, std::max(1u, config.workers)};

  const auto outcome = load_or_compute(
      config.cache_paths(), indices, config.sampling.metric, fingerprint, config.sampling.seed,
      [&](std::size_t index) { return compute_attributions(ws.instance(index), ctx, config.sampling); });

  const auto metric = std::string(to_string(config.sampling.metric));
  for (const auto& r : outcome.results) {
    write_json(config.out / "attributions" / metric / (std::to_string(r.instance_index) + ".json"),
               to_json(r));
  }
  const auto table = summary_table(outcome.results, ws.vmap);
  detail::write_file_atomically(config.out / ("summary_" + metric + ".txt"), table);
  if (!outcome.results.empty()) {
    write_json(config.out / ("global_ranking_" + metric + ".json"),
               to_json(global_ranking(outcome.results)));
  }
  for (const auto& [index, message] : outcome.failures) {
    err << "instance " << index << ": " << message << "\n";
  }
  record_run(config, "attribute_" + metric,
             {{"selected_test_indices", indices},
              {"fingerprint", fingerprint},
              {"failed_instances", outcome.failures.size()}});

  out << table;
  out << metric << ": " << outcome.results.size() << " instances (" << outcome.computed
      << " computed, " << outcome.reused << " cached), " << outcome.failures.size()
      << " failed\n";
  return outcome.failures.empty() ? kExitOk : kExitFailure;
}

int cmd_deletion_curve(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto sources = split_sources(config.sources);
  if (sources.empty()) throw ConfigError("--sources is empty");
  std::vector<RankingSource> kinds;
  for (const auto& s : sources) kinds.push_back(parse_ranking_source(s));
  {
    std::set<RankingSource> seen(kinds.begin(), kinds.end());
    if (seen.size() != kinds.size()) throw ConfigError("--sources lists a source twice");
  }
  if (config.random_seeds == 0) throw ConfigError("--random-seeds must be at least 1");

  const auto ws = load_workspace(config, true);
  const bool uses_cache = std::any_of(kinds.begin(), kinds.end(), [](RankingSource k) {
    return k == RankingSource::jsd || k == RankingSource::kl || k == RankingSource::l1;
  });
  if (uses_cache && config.indices.empty() && !read_manifest(config.cache_paths().manifest())) {
    throw ConfigError("no selected_test_indices manifest in " +
                      config.effective_cache_dir().string() + "; run `tabshap attribute` first");
  }
  const auto indices = select_indices(config, ws.instances.size());

  std::map<RankingSource, AttributionCache> caches;
  for (auto k : kinds) {
    if (k == RankingSource::jsd) caches.emplace(k, require_cache(config, ws, Metric::jsd));
    if (k == RankingSource::kl) caches.emplace(k, require_cache(config, ws, Metric::kl));
    if (k == RankingSource::l1) caches.emplace(k, require_cache(config, ws, Metric::l1));
  }
  std::optional<ExternalRanking> external;
  if (std::find(kinds.begin(), kinds.end(), RankingSource::external) != kinds.end()) {
    if (!config.external) throw ConfigError("source 'external' needs --external <ranking.json>");
    external = load_external_ranking(*config.external, ws.feature_keys());
  }

  std::vector<std::size_t> usable;
  for (auto index : indices) {
    bool ok = true;
    for (const auto& [k, cache] : caches) {
      if (!cache.entries.contains(index)) {
        err << "instance " << index << ": no " << to_string(k)
            << " attribution cached; skipped\n";
        ok = false;
      }
    }
    if (ok) usable.push_back(index);
  }
  if (usable.empty()) throw ConfigError("no instance has attributions for every requested source");

  std::vector<TabularInstance> instances;
  for (auto index : usable) instances.push_back(ws.instance(index));

  std::vector<RankingSet> rankings;
  for (std::size_t s = 0; s < kinds.size(); ++s) {
    const auto kind = kinds[s];
    if (kind == RankingSource::random) {
      for (std::size_t r = 0; r < config.random_seeds; ++r) {
        RankingSet set{config.random_seeds == 1 ? "random" : "random_" + std::to_string(r),
                       kind, {}};
        const auto base = mix_seed(config.sampling.seed, kRandomOrderStream + r);
        for (const auto& inst : instances) {
          set.orders.push_back(random_order(inst, mix_seed(base, inst.index)));
        }
        rankings.push_back(std::move(set));
      }
      continue;
    }
    RankingSet set{std::string(to_string(kind)), kind, {}};
    for (const auto& inst : instances) {
      if (kind == RankingSource::external) {
        set.orders.push_back(external->for_instance(inst.index));
      } else {
        set.orders.push_back(ranking_from_attribution(caches.at(kind).entries.at(inst.index)));
      }
    }
    rankings.push_back(std::move(set));
  }

  const DeletionOptions options{config.max_removals, config.sampling.top_k,
                                std::max(1u, config.workers)};
  const auto run = run_deletion(instances, rankings, *ws.backend, ws.tmpl, ws.vmap, options);

  detail::write_file_atomically(config.out / "deletion_curves.csv", curves_to_csv(run));
  write_json(config.out / "deletion_curves.json", curves_to_json(run));
  for (auto index : run.dropped_instances) {
    err << "instance " << index << ": backend failure during deletion; dropped from all curves\n";
  }
  nlohmann::ordered_json aucs = nlohmann::ordered_json::object();
  out << pad("source", 12) << pad("auc", 10) << "instances\n";
  for (const auto& c : run.curves) {
    const bool has_auc = c.fraction_removed.size() >= 2;
    if (has_auc) aucs[c.label] = curve_auc(c);
    out << pad(c.label, 12) << pad(has_auc ? fixed(curve_auc(c)) : "n/a", 10) << c.instance_count
        << "\n";
  }
  record_run(config, "deletion_curve",
             {{"instances", usable},
              {"dropped_instances", run.dropped_instances},
              {"predicted_class_ties", run.predicted_class_ties},
              {"auc", aucs}});
  return run.dropped_instances.empty() ? kExitOk : kExitFailure;
}

int cmd_compare(const RunConfig& config, std::ostream& out, std::ostream&) {
  if (!config.external) throw ConfigError("compare needs --external <ranking.json>");
  const auto ws = load_workspace(config, false);
  const auto cache = require_cache(config, ws, config.sampling.metric);
  std::vector<AttributionResult> results;
  for (const auto& [index, r] : cache.entries) results.push_back(r);
  if (results.empty()) throw ConfigError("attribution cache has no entries");
  const auto global = global_ranking(results);

  const auto external = load_external_ranking(*config.external, ws.feature_keys());
  if (!external.global) {
    throw ConfigError("compare needs a global external ranking ({\"global\": [...]})");
  }
  std::vector<ScoredKey> external_scored;
  const auto n = external.global->size();
  for (std::size_t i = 0; i < n; ++i) {
    external_scored.push_back({(*external.global)[i], static_cast<double>(n - i)});
  }
  const double rho = spearman_rho(global.entries, external_scored);

  const auto metric = std::string(to_string(config.sampling.metric));
  nlohmann::ordered_json report;
  report["metric"] = metric;
  report["spearman_rho"] = rho;
  report["instance_count"] = global.instance_count;
  report["tie"] = global.tie;
  report["global_ranking"] = to_json(global);
  report["external"] = *external.global;
  write_json(config.out / ("compare_" + metric + ".json"), report);
  record_run(config, "compare_" + metric, {{"spearman_rho", rho}});

  out << "spearman rho (" << metric << " vs external, " << global.instance_count
      << " instances): " << fixed(rho, 6) << (global.tie ? "  [ties in global ranking]" : "")
      << "\n";
  return kExitOk;
}

int cmd_serialize(const RunConfig& config, std::size_t index,
                  const std::vector<std::string>& drop_keys, std::ostream& out) {
  const auto ws = load_workspace(config, false);
  const auto& inst = ws.instance(index);
  std::set<std::string> drop;
  for (const auto& k : drop_keys) {
    const auto key = normalize_key(k);
    if (!inst.find(key)) throw ConfigError("--drop: unknown feature '" + k + "'");
    drop.insert(key);
  }
  std::vector<std::size_t> members;
  for (std::size_t j = 0; j < inst.fields.size(); ++j) {
    if (!drop.contains(inst.fields[j].key)) members.push_back(j);
  }
  out << build_prompt(ws.tmpl, inst, members);
  return kExitOk;
}

int cmd_synth_demo(RunConfig config, const std::filesystem::path& spec_path, std::ostream& out,
                   std::ostream& err) {
  if (config.indices.empty() && config.instances == 0) {
    throw ConfigError("--instances must be at least 1");
  }
  const auto spec = SyntheticOracleSpec::from_file(spec_path);
  const PromptTemplate tmpl = PromptTemplate::deepseek_default();
  if (spec.input_marker != tmpl.input_marker || spec.response_marker != tmpl.response_marker) {
    throw ConfigError("synth-demo uses the default template; the oracle spec must use its markers");
  }
  const auto keys = spec.feature_keys();
  if (keys.size() < 2) throw ConfigError("oracle spec needs at least two features");
  for (const auto& k : keys) {
    if (normalize_key(k) != k) {
      throw ConfigError("oracle feature '" + k + "' is not a normalized key");
    }
  }

  const auto demo = config.out / "demo";
  const std::size_t n =
      config.indices.empty() ? config.instances : *std::max_element(config.indices.begin(),
                                                                     config.indices.end()) + 1;
  Rng rng(mix_seed(config.sampling.seed, kDemoStream));
  std::string csv;
  for (std::size_t j = 0; j < keys.size(); ++j) csv += (j ? "," : "") + keys[j];
  csv += "\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < keys.size(); ++j) {
      csv += (j ? "," : "") + std::to_string(rng.uniform_index(100));
    }
    csv += "\n";
  }
  nlohmann::ordered_json schema = nlohmann::ordered_json::object();
  for (const auto& k : keys) schema[k] = "numeric";
  nlohmann::ordered_json verbalizer = nlohmann::ordered_json::object();
  for (const auto& c : spec.classes) verbalizer[c] = {c};

  // Planted importance order: |weight| descending, key ascending on ties.
  auto planted = keys;
  auto weight = [&](const std::string& k) {
    const auto it = spec.weights.find(k);
    return it == spec.weights.end() ? 0.0 : std::abs(it->second);
  };
  std::stable_sort(planted.begin(), planted.end(),
                   [&](const auto& a, const auto& b) { return weight(a) > weight(b); });

  detail::write_file_atomically(demo / "dataset.csv", csv);
  write_json(demo / "schema.json", schema);
  write_json(demo / "verbalizer.json", verbalizer);
  detail::write_file_atomically(demo / "template.txt", tmpl.to_text());
  write_json(demo / "oracle_spec.json", spec.to_json());
  write_json(demo / "planted_ranking.json", {{"global", planted}});

  config.dataset = demo / "dataset.csv";
  config.schema = demo / "schema.json";
  config.template_path = demo / "template.txt";
  config.verbalizer = demo / "verbalizer.json";
  if (!config.backend_override) config.backend = "synthetic:" + (demo / "oracle_spec.json").string();
  config.record.reset();
  if (config.indices.empty()) {
    config.indices.resize(n);
    for (std::size_t i = 0; i < n; ++i) config.indices[i] = i;
  }
  config.external = demo / "planted_ranking.json";
  config.sources = {"jsd", "kl", "l1", "random", "external"};

  int rc = kExitOk;
  for (auto metric : {Metric::jsd, Metric::kl, Metric::l1}) {
    config.sampling.metric = metric;
    out << "== attribute --metric " << to_string(metric) << "\n";
    rc = std::max(rc, cmd_attribute(config, out, err));
  }
  out << "== deletion-curve\n";
  rc = std::max(rc, cmd_deletion_curve(config, out, err));
  for (auto metric : {Metric::jsd, Metric::kl, Metric::l1}) {
    config.sampling.metric = metric;
    out << "== compare --metric " << to_string(metric) << "\n";
    try {
      rc = std::max(rc, cmd_compare(config, out, err));
    } catch (const ContractError& e) {
      // All-tied rankings (e.g. a constant oracle) have no defined rho.
      err << "compare " << to_string(metric) << ": " << e.what() << "\n";
    }
  }
  return rc;
}

namespace {

// Collects flag bindings and applies only the flags the user actually passed,
// so config-file values survive unless overridden.
class FlagSet {
 public:
  template <typename T, typename Apply>
  void add(CLI::App* app, const std::string& name, const std::string& desc, Apply apply) {
    auto value = std::make_shared<T>();
    auto* opt = app->add_option(name, *value, desc);
    setters_.push_back([opt, value, apply](RunConfig& c) {
      if (opt->count() > 0) apply(c, *value);
    });
  }

  void apply(RunConfig& c) const {
    for (const auto& s : setters_) s(c);
  }

 private:
  std::vector<std::function<void(RunConfig&)>> setters_;
};

void add_common(CLI::App* app, FlagSet& flags, std::string& config_file) {
  using Path = std::string;
  app->add_option("--config", config_file, "JSON config file (flags take precedence)");
  flags.add<Path>(app, "--dataset", "CSV dataset", [](RunConfig& c, const Path& v) { c.dataset = v; });
  flags.add<Path>(app, "--schema", "JSON column schema", [](RunConfig& c, const Path& v) { c.schema = v; });
  flags.add<Path>(app, "--template", "prompt template file",
                  [](RunConfig& c, const Path& v) { c.template_path = v; });
  flags.add<Path>(app, "--verbalizer", "verbalizer JSON",
                  [](RunConfig& c, const Path& v) { c.verbalizer = v; });
  flags.add<std::string>(app, "--backend", "synthetic:<spec>, replay:<cache> or http(s)://url",
                         [](RunConfig& c, const std::string& v) { c.backend = v; });
  flags.add<Path>(app, "--record", "record live HTTP responses to this replay file",
                  [](RunConfig& c, const Path& v) { c.record = v; });
  flags.add<std::string>(app, "--metric", "jsd, kl or l1",
                         [](RunConfig& c, const std::string& v) { c.sampling.metric = parse_metric(v); });
  flags.add<double>(app, "--ratio", "coalition sampling ratio",
                    [](RunConfig& c, double v) { c.sampling.ratio = v; });
  flags.add<std::size_t>(app, "--max-coalitions", "coalition budget",
                         [](RunConfig& c, std::size_t v) { c.sampling.max_coalitions = v; });
  flags.add<int>(app, "--top-k", "next-token logprobs requested",
                 [](RunConfig& c, int v) { c.sampling.top_k = v; });
  flags.add<std::uint64_t>(app, "--seed", "master seed",
                           [](RunConfig& c, std::uint64_t v) { c.sampling.seed = v; });
  flags.add<std::size_t>(app, "--instances", "number of instances to sample",
                         [](RunConfig& c, std::size_t v) { c.instances = v; });
  flags.add<std::vector<std::size_t>>(app, "--indices", "explicit instance indices",
                                      [](RunConfig& c, const std::vector<std::size_t>& v) { c.indices = v; });
  flags.add<Path>(app, "--out", "output directory", [](RunConfig& c, const Path& v) { c.out = v; });
  flags.add<Path>(app, "--cache-dir", "cache directory (default: --out)",
                  [](RunConfig& c, const Path& v) { c.cache_dir = v; });
  flags.add<unsigned>(app, "--workers", "concurrent backend requests",
                      [](RunConfig& c, unsigned v) { c.workers = v; });
  flags.add<std::size_t>(app, "--max-removals", "deletion steps",
                         [](RunConfig& c, std::size_t v) { c.max_removals = v; });
  flags.add<std::vector<std::string>>(app, "--sources", "jsd,kl,l1,external,random",
                                      [](RunConfig& c, const std::vector<std::string>& v) { c.sources = v; });
  flags.add<Path>(app, "--external", "external ranking JSON",
                  [](RunConfig& c, const Path& v) { c.external = v; });
  flags.add<std::size_t>(app, "--random-seeds", "random-order baselines",
                         [](RunConfig& c, std::size_t v) { c.random_seeds = v; });
}

struct Subcommand {
  CLI::App* app = nullptr;
  FlagSet flags;
  std::string config_file;

  RunConfig resolve() const {
    RunConfig c;
    if (!config_file.empty()) c.apply_file(config_file);
    flags.apply(c);
    return c;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coalition-based feature attribution for LLM tabular classifiers", "tabshap"};
  app.require_subcommand(1);

  Subcommand attribute, deletion, compare, serialize, demo;
  attribute.app = app.add_subcommand("attribute", "compute and cache per-instance attributions");
  deletion.app = app.add_subcommand("deletion-curve", "deletion curves for ranking sources");
  compare.app = app.add_subcommand("compare", "Spearman rho of the global ranking vs an external one");
  serialize.app = app.add_subcommand("serialize", "print the prompt for one instance");
  demo.app = app.add_subcommand("synth-demo", "end-to-end run on a synthetic oracle");
  for (auto* s : {&attribute, &deletion, &compare, &serialize, &demo}) {
    add_common(s->app, s->flags, s->config_file);
  }
  std::size_t serialize_index = 0;
  std::vector<std::string> drop_keys;
  serialize.app->add_option("--index", serialize_index, "instance index");
  serialize.app->add_option("--drop", drop_keys, "feature keys to leave out");
  std::string spec_path;
  demo.app->add_option("--spec", spec_path, "synthetic oracle spec JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*attribute.app) return cmd_attribute(attribute.resolve(), out, err);
    if (*deletion.app) return cmd_deletion_curve(deletion.resolve(), out, err);
    if (*compare.app) return cmd_compare(compare.resolve(), out, err);
    if (*serialize.app) return cmd_serialize(serialize.resolve(), serialize_index, drop_keys, out);
    if (*demo.app) return cmd_synth_demo(demo.resolve(), spec_path, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace tabshap::cli
