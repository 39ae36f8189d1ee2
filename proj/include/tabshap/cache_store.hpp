#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tabshap/attribution.hpp"

namespace tabshap {

// File layout of the per-metric attribution caches and the shared index
// manifest. Names default to the ones used by the original validation run.
struct CachePaths {
  std::filesystem::path dir = ".";
  std::string jsd_name = "tokenshap_validation_cache.json";
  std::string kl_name = "tokenshap_validation_cache_kl.json";
  std::string l1_name = "tokenshap_validation_cache_l1.json";
  std::string manifest_name = "selected_test_indices.json";

  std::filesystem::path for_metric(Metric m) const;
  std::filesystem::path manifest() const;
};

struct IndexManifest {
  std::vector<std::size_t> selected_test_indices;
  std::optional<std::uint64_t> selection_seed;
  std::string fingerprint;
};

std::optional<IndexManifest> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const IndexManifest& manifest);

// SHA-256 over everything that changes prompts or scores except the metric:
// ratio, max_coalitions, seed, top_k, the template bytes and the verbalizer.
std::string config_fingerprint(const SamplingConfig& config, const PromptTemplate& tmpl,
                               const VerbalizerMap& vmap);

struct AttributionCache {
  Metric metric = Metric::jsd;
  std::string fingerprint;
  std::vector<std::size_t> selected_test_indices;
  std::map<std::size_t, AttributionResult> entries;
};

// Throws ParseError (with byte offset) on malformed JSON and LoadError when
// an entry's index is not in selected_test_indices.
AttributionCache read_cache(const std::filesystem::path& path);
// Atomic: temp file + rename.
void write_cache(const std::filesystem::path& path, const AttributionCache& cache);

struct CacheOutcome {
  // Successful results in request order.
  std::vector<AttributionResult> results;
  // (instance index, error message) for instances whose computation failed.
  std::vector<std::pair<std::size_t, std::string>> failures;
  std::size_t computed = 0;
  std::size_t reused = 0;
};

using ComputeFn = std::function<AttributionResult(std::size_t instance_index)>;

// Returns cached entries verbatim and computes the rest, persisting after
// each new entry. The first run records `indices` in the manifest; every
// later run (any metric) must request exactly that index set.
//
// Throws StaleCacheError when the manifest or cache was written under a
// different fingerprint (or the cache holds another metric) and
// IndexSetError when the requested indices differ from the manifest.
CacheOutcome load_or_compute(const CachePaths& paths, const std::vector<std::size_t>& indices,
                             Metric metric, const std::string& fingerprint,
                             std::optional<std::uint64_t> selection_seed,
                             const ComputeFn& compute);

}  // namespace tabshap
