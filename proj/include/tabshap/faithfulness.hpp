#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tabshap/attribution.hpp"
#include "tabshap/backend.hpp"
#include "tabshap/tabular.hpp"
#include "tabshap/verbalizer.hpp"

namespace tabshap {

enum class RankingSource { jsd, kl, l1, external, random };

std::string_view to_string(RankingSource s);
RankingSource parse_ranking_source(std::string_view name);
RankingSource ranking_source_for(Metric m);

// Feature keys of one instance, most important first.
struct RankingOrder {
  std::size_t instance_index = 0;
  RankingSource source = RankingSource::random;
  std::vector<std::string> keys;
  std::optional<std::uint64_t> seed;  // random source only
};

struct PredictedClass {
  std::size_t index = 0;
  bool tie = false;  // several classes share the max; lowest index wins
};

PredictedClass predicted_class(const ClassDistribution& dist);

// Uniform permutation of the instance's keys.
RankingOrder random_order(const TabularInstance& instance, std::uint64_t seed);

RankingOrder ranking_from_attribution(const AttributionResult& result);

// External orderings, {"global": [keys]} or {"per_instance": {"idx": [keys]}}.
struct ExternalRanking {
  std::optional<std::vector<std::string>> global;
  std::map<std::size_t, std::vector<std::string>> per_instance;

  // Global orders are broadcast; per-instance lookups throw LoadError when
  // the instance is absent.
  RankingOrder for_instance(std::size_t instance_index) const;
};

// Keys are passed through normalize_key. When `known_keys` is non-empty,
// every key must be one of them (LoadError naming the first unknown key).
ExternalRanking parse_external_ranking(std::string_view text,
                                       const std::vector<std::string>& known_keys = {});
ExternalRanking load_external_ranking(const std::filesystem::path& path,
                                      const std::vector<std::string>& known_keys = {});

// One ordering per instance, aligned with the instance list.
struct RankingSet {
  std::string label;
  RankingSource source = RankingSource::random;
  std::vector<RankingOrder> orders;
};

struct InstanceTrace {
  std::size_t instance_index = 0;
  std::size_t num_features = 0;
  std::size_t predicted_class = 0;
  // probs[t]: mass on the original predicted class after removing the top t.
  std::vector<double> probs;
  std::vector<std::string> removed;
};

struct DeletionCurve {
  std::string label;
  RankingSource source = RankingSource::random;
  std::vector<double> fraction_removed;
  std::vector<double> mean_prob;
  std::vector<std::size_t> n_instances;
  std::vector<InstanceTrace> traces;
  std::size_t instance_count = 0;
};

struct DeletionOptions {
  std::size_t max_removals = 10;
  int top_k = 10;
  unsigned workers = 1;
};

struct DeletionRun {
  std::vector<DeletionCurve> curves;
  // Instances whose backend calls failed; excluded from every curve.
  std::vector<std::size_t> dropped_instances;
  std::size_t predicted_class_ties = 0;
  double mean_features = 0.0;
};

// Removes the top-t ranked fields for t = 1..min(max_removals, M - 1) and
// tracks the probability of the originally predicted class. The full-prompt
// distribution is queried once per instance and shared by every curve.
DeletionRun run_deletion(std::span<const TabularInstance> instances,
                         const std::vector<RankingSet>& rankings, const Backend& backend,
                         const PromptTemplate& tmpl, const VerbalizerMap& vmap,
                         const DeletionOptions& options = {});

// Trapezoidal area under y(x). Requires at least two points.
double trapezoid_auc(std::span<const double> x, std::span<const double> y);
// Area under mean probability vs. fraction removed; lower is more faithful.
double curve_auc(const DeletionCurve& curve);

// Columns: source, step, fraction_removed, mean_prob, n_instances.
std::string curves_to_csv(const DeletionRun& run);
nlohmann::ordered_json curves_to_json(const DeletionRun& run);

}  // namespace tabshap
