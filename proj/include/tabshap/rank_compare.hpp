#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabshap/attribution.hpp"

namespace tabshap {

struct ScoredKey {
  std::string key;
  double score = 0.0;
};

struct GlobalRanking {
  // Mean normalized phi per key, descending; equal means ordered by key.
  std::vector<ScoredKey> entries;
  std::size_t instance_count = 0;
  Metric metric = Metric::jsd;
  bool tie = false;

  std::vector<std::string> keys() const;
};

// Mean of per-instance phi per feature key. All results must share one
// metric and one key set (ContractError otherwise).
GlobalRanking global_ranking(std::span<const AttributionResult> results);

nlohmann::ordered_json to_json(const GlobalRanking& ranking);

// 1-based ranks of `scores` in descending order; tied scores share the mean
// of the ranks they span.
std::vector<double> average_ranks(std::span<const double> scores);

// Spearman correlation between two orderings of the same key set (most
// important first). Matching is by key, so enumeration order is irrelevant.
double spearman_rho(const std::vector<std::string>& r1, const std::vector<std::string>& r2);

// Spearman correlation between two scorings of the same key set, higher
// score = more important, average ranks for ties.
double spearman_rho(std::span<const ScoredKey> r1, std::span<const ScoredKey> r2);

}  // namespace tabshap
