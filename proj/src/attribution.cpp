#include "tabshap/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "parallel.hpp"
#include "tabshap/error.hpp"
#include "tabshap/rng.hpp"

namespace tabshap {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::jsd:
      return "jsd";
    case Metric::kl:
      return "kl";
    case Metric::l1:
      return "l1";
  }
  throw ContractError("unknown metric");
}

Metric parse_metric(std::string_view name) {
  std::string lower(name);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "jsd") return Metric::jsd;
  if (lower == "kl") return Metric::kl;
  if (lower == "l1") return Metric::l1;
  throw ContractError("unknown metric '" + std::string(name) + "'");
}

// --- Coalition ---------------------------------------------------------------

bool Coalition::contains(std::size_t j) const {
  return std::binary_search(members.begin(), members.end(), j);
}

std::vector<bool> Coalition::mask(std::size_t num_features) const {
  std::vector<bool> m(num_features, false);
  for (auto j : members) m.at(j) = true;
  return m;
}

Coalition Coalition::from_mask(const std::vector<bool>& mask) {
  Coalition c;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) c.members.push_back(j);
  }
  return c;
}

// --- SamplingConfig ----------------------------------------------------------

void SamplingConfig::validate() const {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("sampling ratio must be in (0, 1]");
  if (max_coalitions < 1) throw ConfigError("max_coalitions must be positive");
  if (top_k < 1) throw ConfigError("top_k must be positive");
}

void SamplingConfig::validate_for(std::size_t num_features) const {
  validate();
  if (max_coalitions < num_features) {
    throw ConfigError("max_coalitions (" + std::to_string(max_coalitions) +
                      ") is smaller than the feature count (" +
                      std::to_string(num_features) + ")");
  }
}

nlohmann::ordered_json SamplingConfig::to_json() const {
  nlohmann::ordered_json j;
  j["ratio"] = ratio;
  j["max_coalitions"] = max_coalitions;
  j["seed"] = seed;
  j["metric"] = std::string(to_string(metric));
  j["top_k"] = top_k;
  return j;
}

SamplingConfig SamplingConfig::from_json(const nlohmann::json& j) {
  SamplingConfig c;
  c.ratio = j.value("ratio", c.ratio);
  c.max_coalitions = j.value("max_coalitions", c.max_coalitions);
  c.seed = j.value("seed", c.seed);
  if (j.contains("metric")) c.metric = parse_metric(j.at("metric").get<std::string>());
  c.top_k = j.value("top_k", c.top_k);
  return c;
}

// --- coalition construction --------------------------------------------------

std::vector<Coalition> essential_coalitions(std::size_t m) {
  if (m < 2) {
    throw ContractError("leave-one-out needs at least two features (M=1 would give an "
                        "empty coalition)");
  }
  std::vector<Coalition> out(m);
  for (std::size_t j = 0; j < m; ++j) {
    out[j].members.reserve(m - 1);
    for (std::size_t i = 0; i < m; ++i) {
      if (i != j) out[j].members.push_back(i);
    }
  }
  return out;
}

std::size_t extra_coalition_count(std::size_t m, double ratio, std::size_t max_coalitions) {
  const long double nonessential =
      std::ldexp(1.0L, static_cast<int>(std::min<std::size_t>(m, 16000))) - 1.0L -
      static_cast<long double>(m);
  const long double wanted = std::floor(nonessential * static_cast<long double>(ratio));
  const std::size_t cap = max_coalitions > m ? max_coalitions - m : 0;
  if (wanted >= static_cast<long double>(cap)) return cap;
  return wanted > 0 ? static_cast<std::size_t>(wanted) : 0;
}

std::vector<Coalition> sample_extra(std::size_t m, double ratio, std::size_t max_coalitions,
                                    std::uint64_t seed) {
  if (m < 2) throw ContractError("coalition sampling needs at least two features");
  const std::size_t n_extra = extra_coalition_count(m, ratio, max_coalitions);
  std::vector<Coalition> out;
  if (n_extra == 0) return out;
  out.reserve(n_extra);
  Rng rng(seed);

  const bool enumerate =
      m < 63 && ((std::uint64_t{1} << m) - 1) <= 4 * static_cast<std::uint64_t>(max_coalitions);
  if (enumerate) {
    std::vector<std::uint64_t> candidates;
    const std::uint64_t full = (std::uint64_t{1} << m) - 1;
    for (std::uint64_t mask = 1; mask <= full; ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != m - 1) candidates.push_back(mask);
    }
    rng.partial_shuffle(candidates.begin(), candidates.end(), n_extra);
    for (std::size_t i = 0; i < n_extra; ++i) {
      Coalition c;
      for (std::size_t j = 0; j < m; ++j) {
        if ((candidates[i] >> j) & 1u) c.members.push_back(j);
      }
      out.push_back(std::move(c));
    }
    return out;
  }

  std::set<std::vector<bool>> seen;
  std::vector<bool> mask(m);
  while (out.size() < n_extra) {
    std::size_t size = 0;
    for (std::size_t j = 0; j < m; ++j) {
      mask[j] = rng.coin();
      size += mask[j];
    }
    if (size == 0 || size == m - 1) continue;
    if (!seen.insert(mask).second) continue;
    out.push_back(Coalition::from_mask(mask));
  }
  return out;
}

std::vector<Coalition> build_coalitions(std::size_t m, const SamplingConfig& config,
                                        std::uint64_t sampler_seed) {
  auto coalitions = essential_coalitions(m);
  auto extra = sample_extra(m, config.ratio, config.max_coalitions, sampler_seed);
  coalitions.insert(coalitions.end(), std::make_move_iterator(extra.begin()),
                    std::make_move_iterator(extra.end()));
  return coalitions;
}

std::uint64_t instance_sampler_seed(std::uint64_t seed, std::size_t instance_index) {
  return mix_seed(seed, instance_index);
}

// --- scoring -----------------------------------------------------------------

Eigen::VectorXd with_without_difference(const std::vector<Coalition>& coalitions,
                                        const Eigen::Ref<const Eigen::VectorXd>& similarities,
                                        std::size_t m) {
  const auto n = static_cast<Eigen::Index>(coalitions.size());
  if (similarities.size() != n) {
    throw ContractError("one similarity per coalition is required");
  }
  // membership(c, j) = 1 iff feature j is in coalition c.
  Eigen::MatrixXd membership = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(m));
  for (Eigen::Index c = 0; c < n; ++c) {
    for (auto j : coalitions[static_cast<std::size_t>(c)].members) {
      if (j >= m) throw ContractError("coalition member out of range");
      membership(c, static_cast<Eigen::Index>(j)) = 1.0;
    }
  }
  const Eigen::MatrixXd absence = Eigen::MatrixXd::Ones(n, membership.cols()) - membership;

  const Eigen::VectorXd with_count = membership.colwise().sum().transpose();
  const Eigen::VectorXd without_count = absence.colwise().sum().transpose();
  if ((with_count.array() == 0.0).any() || (without_count.array() == 0.0).any()) {
    throw ContractError("every feature must appear in and be absent from some coalition");
  }
  const Eigen::VectorXd with_mean =
      (membership.transpose() * similarities).cwiseQuotient(with_count);
  const Eigen::VectorXd without_mean =
      (absence.transpose() * similarities).cwiseQuotient(without_count);
  return with_mean - without_mean;
}

NormalizedPhi normalize_phi(const Eigen::Ref<const Eigen::VectorXd>& raw) {
  if (raw.size() < 2) throw ContractError("phi needs at least two entries");
  if (!raw.allFinite()) throw ContractError("phi entries must be finite");
  const Eigen::VectorXd shifted = raw.array() - raw.minCoeff();
  const double total = shifted.sum();
  if (shifted.maxCoeff() > kPhiSpreadTolerance) return {shifted / total, false};
  return {Eigen::VectorXd::Constant(raw.size(), 1.0 / static_cast<double>(raw.size())), true};
}

std::vector<std::string> AttributionResult::ranked_keys() const {
  std::vector<std::size_t> order(feature_keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return phi[static_cast<Eigen::Index>(a)] > phi[static_cast<Eigen::Index>(b)];
  });
  std::vector<std::string> keys;
  keys.reserve(order.size());
  for (auto j : order) keys.push_back(feature_keys[j]);
  return keys;
}

AttributionResult compute_attributions(const TabularInstance& instance,
                                       const AttributionContext& ctx,
                                       const SamplingConfig& config) {
  const std::size_t m = instance.num_features();
  if (m < 2) throw ContractError("attribution needs at least two features");
  config.validate_for(m);
  return compute_attributions(
      instance, ctx, config,
      build_coalitions(m, config, instance_sampler_seed(config.seed, instance.index)));
}

AttributionResult compute_attributions(const TabularInstance& instance,
                                       const AttributionContext& ctx,
                                       const SamplingConfig& config,
                                       const std::vector<Coalition>& coalitions) {
  const std::size_t m = instance.num_features();
  if (m < 2) throw ContractError("attribution needs at least two features");
  config.validate();

  AttributionResult result;
  result.instance_index = instance.index;
  result.metric = config.metric;
  result.feature_keys = instance.keys();
  result.seed = config.seed;
  result.config = config;
  result.coalition_count = coalitions.size();

  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), 0);
  const auto full = class_distribution(
      ctx.backend.query(build_prompt(ctx.tmpl, instance, all), config.top_k), ctx.vmap);
  result.full_dist = full.probs;
  result.full_degenerate = full.degenerate;

  result.records.resize(coalitions.size());
  detail::parallel_for(coalitions.size(), ctx.workers, [&](std::size_t i) {
    const auto& coalition = coalitions[i];
    if (coalition.members.empty()) throw ContractError("empty coalition");
    CoalitionRecord rec;
    rec.coalition = coalition;
    if (coalition.members.size() == m) {
      // The full coalition is P_full itself.
      rec.class_dist = full.probs;
      rec.degenerate = full.degenerate;
    } else {
      const auto dist = class_distribution(
          ctx.backend.query(build_prompt(ctx.tmpl, instance, coalition.members),
                            config.top_k),
          ctx.vmap);
      rec.class_dist = dist.probs;
      rec.degenerate = dist.degenerate;
    }
    rec.similarity = similarity(config.metric, full.probs, rec.class_dist);
    result.records[i] = std::move(rec);
  });

  Eigen::VectorXd sims(static_cast<Eigen::Index>(coalitions.size()));
  for (std::size_t i = 0; i < coalitions.size(); ++i) {
    sims[static_cast<Eigen::Index>(i)] = result.records[i].similarity;
    result.degenerate_coalitions += result.records[i].degenerate;
  }
  result.raw_phi = with_without_difference(coalitions, sims, m);
  auto normalized = normalize_phi(result.raw_phi);
  result.phi = std::move(normalized.phi);
  result.uniform_fallback = normalized.uniform_fallback;
  return result;
}

}  // namespace tabshap
