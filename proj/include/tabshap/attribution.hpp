#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "tabshap/backend.hpp"
#include "tabshap/divergence.hpp"
#include "tabshap/tabular.hpp"
#include "tabshap/verbalizer.hpp"

namespace tabshap {

// Non-empty set of feature indices, kept sorted ascending.
struct Coalition {
  std::vector<std::size_t> members;

  bool contains(std::size_t j) const;
  std::vector<bool> mask(std::size_t num_features) const;
  static Coalition from_mask(const std::vector<bool>& mask);

  bool operator==(const Coalition&) const = default;
  auto operator<=>(const Coalition&) const = default;
};

struct SamplingConfig {
  double ratio = 0.4;
  std::size_t max_coalitions = 800;
  std::uint64_t seed = 0;
  Metric metric = Metric::jsd;
  int top_k = 10;

  // Throws ConfigError for ratio outside (0, 1], max_coalitions or top_k < 1.
  void validate() const;
  // Also requires max_coalitions >= num_features.
  void validate_for(std::size_t num_features) const;

  nlohmann::ordered_json to_json() const;
  static SamplingConfig from_json(const nlohmann::json& j);
};

struct CoalitionRecord {
  Coalition coalition;
  ClassDistribution class_dist;
  double similarity = 0.0;
  bool degenerate = false;
};

struct AttributionResult {
  std::size_t instance_index = 0;
  Metric metric = Metric::jsd;
  std::vector<std::string> feature_keys;
  Eigen::VectorXd phi;
  // with_j - without_j before the shift-and-normalize step.
  Eigen::VectorXd raw_phi;
  std::vector<CoalitionRecord> records;
  ClassDistribution full_dist;
  bool full_degenerate = false;
  std::size_t degenerate_coalitions = 0;
  // raw_phi was constant, phi is the uniform fallback.
  bool uniform_fallback = false;
  std::uint64_t seed = 0;
  SamplingConfig config;
  std::size_t coalition_count = 0;

  // Keys ordered by phi descending; ties keep instance field order.
  std::vector<std::string> ranked_keys() const;
};

// Records are not serialized.
nlohmann::ordered_json to_json(const AttributionResult& result);
AttributionResult attribution_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Coalition construction.

// The j-th coalition omits only feature j. Requires m >= 2.
std::vector<Coalition> essential_coalitions(std::size_t m);

// floor(((2^m - 1) - m) * ratio), capped at max(0, max_coalitions - m).
std::size_t extra_coalition_count(std::size_t m, double ratio, std::size_t max_coalitions);

// Distinct non-empty coalitions drawn uniformly from the powerset minus the
// essential (size m-1) sets. Small powersets (2^m - 1 <= 4 * max_coalitions)
// are enumerated and shuffled; larger ones use per-feature fair coins with
// rejection.
std::vector<Coalition> sample_extra(std::size_t m, double ratio, std::size_t max_coalitions,
                                    std::uint64_t seed);

// Essential coalitions followed by the sampled extras.
std::vector<Coalition> build_coalitions(std::size_t m, const SamplingConfig& config,
                                        std::uint64_t sampler_seed);

// Seed of the coalition sampler for one instance.
std::uint64_t instance_sampler_seed(std::uint64_t seed, std::size_t instance_index);

// ---------------------------------------------------------------------------
// Scoring.

// with_j - without_j: mean similarity over coalitions containing j minus the
// mean over coalitions lacking j. Every feature must be both covered and
// uncovered by at least one coalition.
Eigen::VectorXd with_without_difference(const std::vector<Coalition>& coalitions,
                                        const Eigen::Ref<const Eigen::VectorXd>& similarities,
                                        std::size_t m);

struct NormalizedPhi {
  Eigen::VectorXd phi;
  bool uniform_fallback = false;
};

// Spread of raw phi at or below which the entries count as equal.
inline constexpr double kPhiSpreadTolerance = 1e-12;

// (raw - min raw) / sum(raw - min raw); uniform (flagged) when all raw
// entries are equal within kPhiSpreadTolerance.
NormalizedPhi normalize_phi(const Eigen::Ref<const Eigen::VectorXd>& raw);

struct AttributionContext {
  const Backend& backend;
  const PromptTemplate& tmpl;
  const VerbalizerMap& vmap;
  // Concurrent coalition evaluations within one instance.
  unsigned workers = 1;
};

// Full procedure: P_full, essential + sampled coalitions, similarity,
// with/without statistic, normalization. Backend failures propagate and no
// partial result is produced. Requires at least two features.
AttributionResult compute_attributions(const TabularInstance& instance,
                                       const AttributionContext& ctx,
                                       const SamplingConfig& config);

// Same, over a caller-supplied coalition set.
AttributionResult compute_attributions(const TabularInstance& instance,
                                       const AttributionContext& ctx,
                                       const SamplingConfig& config,
                                       const std::vector<Coalition>& coalitions);

}  // namespace tabshap
