#include "tabshap/cache_store.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "atomic_file.hpp"
#include "tabshap/digest.hpp"
#include "tabshap/error.hpp"

namespace tabshap {
namespace {

nlohmann::ordered_json parse_json_file(const std::filesystem::path& path) {
  const auto text = detail::read_text_file(path);
  try {
    return nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

std::string describe(const std::vector<std::size_t>& v) {
  std::string s = "{";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s + "}";
}

}  // namespace

std::filesystem::path CachePaths::for_metric(Metric m) const {
  switch (m) {
    case Metric::jsd:
      return dir / jsd_name;
    case Metric::kl:
      return dir / kl_name;
    case Metric::l1:
      return dir / l1_name;
  }
  throw ContractError("unknown metric");
}

std::filesystem::path CachePaths::manifest() const { return dir / manifest_name; }

std::optional<IndexManifest> read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto j = parse_json_file(path);
  IndexManifest m;
  try {
    m.selected_test_indices = j.at("selected_test_indices").get<std::vector<std::size_t>>();
    if (j.contains("selection_seed") && !j["selection_seed"].is_null()) {
      m.selection_seed = j["selection_seed"].get<std::uint64_t>();
    }
    m.fingerprint = j.at("fingerprint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": malformed index manifest: " + e.what());
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const IndexManifest& manifest) {
  nlohmann::ordered_json j;
  j["selected_test_indices"] = manifest.selected_test_indices;
  j["selection_seed"] = manifest.selection_seed ? nlohmann::ordered_json(*manifest.selection_seed)
                                                : nlohmann::ordered_json(nullptr);
  j["fingerprint"] = manifest.fingerprint;
  detail::write_file_atomically(path, j.dump(2) + "\n");
}

std::string config_fingerprint(const SamplingConfig& config, const PromptTemplate& tmpl,
                               const VerbalizerMap& vmap) {
  nlohmann::ordered_json j;
  j["ratio"] = config.ratio;
  j["max_coalitions"] = config.max_coalitions;
  j["seed"] = config.seed;
  j["top_k"] = config.top_k;
  j["template"] = {{"instruction", tmpl.instruction},
                   {"input_marker", tmpl.input_marker},
                   {"input_separator", tmpl.input_separator},
                   {"response_separator", tmpl.response_separator},
                   {"response_marker", tmpl.response_marker},
                   {"trailer", tmpl.trailer}};
  j["verbalizer"] = vmap.to_json_text();
  return sha256_hex(j.dump());
}

AttributionCache read_cache(const std::filesystem::path& path) {
  const auto j = parse_json_file(path);
  AttributionCache cache;
  try {
    cache.metric = parse_metric(j.at("metric").get<std::string>());
    cache.fingerprint = j.at("fingerprint").get<std::string>();
    cache.selected_test_indices = j.at("selected_test_indices").get<std::vector<std::size_t>>();
    for (const auto& [key, value] : j.at("entries").items()) {
      auto result = attribution_from_json(value);
      if (std::to_string(result.instance_index) != key) {
        throw LoadError(path.string() + ": entry '" + key + "' holds instance " +
                        std::to_string(result.instance_index));
      }
      cache.entries.emplace(result.instance_index, std::move(result));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": malformed attribution cache: " + e.what());
  } catch (const ContractError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  const auto allowed = as_set(cache.selected_test_indices);
  for (const auto& [index, r] : cache.entries) {
    if (!allowed.contains(index)) {
      throw LoadError(path.string() + ": entry for instance " + std::to_string(index) +
                      " is not in selected_test_indices");
    }
  }
  return cache;
}

void write_cache(const std::filesystem::path& path, const AttributionCache& cache) {
  nlohmann::ordered_json j;
  j["metric"] = std::string(to_string(cache.metric));
  j["fingerprint"] = cache.fingerprint;
  j["selected_test_indices"] = cache.selected_test_indices;
  nlohmann::ordered_json entries = nlohmann::ordered_json::object();
  for (const auto& [index, r] : cache.entries) entries[std::to_string(index)] = to_json(r);
  j["entries"] = std::move(entries);
  detail::write_file_atomically(path, j.dump(1) + "\n");
}

CacheOutcome load_or_compute(const CachePaths& paths, const std::vector<std::size_t>& indices,
                             Metric metric, const std::string& fingerprint,
                             std::optional<std::uint64_t> selection_seed,
                             const ComputeFn& compute) {
  if (indices.empty()) throw ContractError("no instance indices requested");
  if (as_set(indices).size() != indices.size()) {
    throw ContractError("requested instance indices contain duplicates");
  }

  if (auto manifest = read_manifest(paths.manifest())) {
    if (manifest->fingerprint != fingerprint) {
      throw StaleCacheError("index manifest " + paths.manifest().string() +
                            " was written under a different configuration; remove the "
                            "cache directory or restore the original settings");
    }
    if (as_set(manifest->selected_test_indices) != as_set(indices)) {
      throw IndexSetError("requested indices " + describe(indices) +
                          " differ from the recorded selected_test_indices " +
                          describe(manifest->selected_test_indices));
    }
  } else {
    write_manifest(paths.manifest(), {indices, selection_seed, fingerprint});
  }

  const auto cache_path = paths.for_metric(metric);
  AttributionCache cache;
  if (std::filesystem::exists(cache_path)) {
    cache = read_cache(cache_path);
    if (cache.metric != metric) {
      throw StaleCacheError(cache_path.string() + " holds " +
                            std::string(to_string(cache.metric)) + " results, expected " +
                            std::string(to_string(metric)));
    }
    if (cache.fingerprint != fingerprint) {
      throw StaleCacheError(cache_path.string() +
                            " was written under a different configuration fingerprint");
    }
    if (as_set(cache.selected_test_indices) != as_set(indices)) {
      throw IndexSetError(cache_path.string() + " covers " +
                          describe(cache.selected_test_indices) + ", requested " +
                          describe(indices));
    }
  } else {
    cache.metric = metric;
    cache.fingerprint = fingerprint;
    cache.selected_test_indices = indices;
  }

  CacheOutcome outcome;
  for (auto index : indices) {
    if (auto it = cache.entries.find(index); it != cache.entries.end()) {
      outcome.results.push_back(it->second);
      ++outcome.reused;
      continue;
    }
    try {
      auto result = compute(index);
      result.records.clear();
      cache.entries.emplace(index, result);
      write_cache(cache_path, cache);
      outcome.results.push_back(std::move(result));
      ++outcome.computed;
    } catch (const Error& e) {
      outcome.failures.emplace_back(index, e.what());
    }
  }
  return outcome;
}

}  // namespace tabshap
