#include "tabshap/faithfulness.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <numeric>
#include <set>

#include "atomic_file.hpp"
#include "parallel.hpp"
#include "tabshap/error.hpp"
#include "tabshap/rng.hpp"

namespace tabshap {
namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> keys_from_json(const nlohmann::json& arr,
                                        const std::vector<std::string>& known,
                                        const std::string& where) {
  if (!arr.is_array() || arr.empty()) {
    throw LoadError("external ranking " + where + " must be a non-empty array of keys");
  }
  std::vector<std::string> keys;
  std::set<std::string> seen;
  for (const auto& k : arr) {
    if (!k.is_string()) throw LoadError("external ranking " + where + " has a non-string key");
    auto key = normalize_key(k.get<std::string>());
    if (!known.empty() && std::find(known.begin(), known.end(), key) == known.end()) {
      throw LoadError("external ranking " + where + ": unknown feature key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw LoadError("external ranking " + where + ": duplicate key '" + key + "'");
    }
    keys.push_back(std::move(key));
  }
  return keys;
}

// Validates an ordering against its instance: same index, known keys, no
// duplicates.
void check_ranking(const RankingOrder& order, const TabularInstance& instance) {
  if (order.instance_index != instance.index) {
    throw ContractError("ranking for instance " + std::to_string(order.instance_index) +
                        " paired with instance " + std::to_string(instance.index));
  }
  std::set<std::string> seen;
  for (const auto& key : order.keys) {
    if (!instance.find(key)) {
      throw ContractError("ranking key '" + key + "' is not a feature of instance " +
                          std::to_string(instance.index));
    }
    if (!seen.insert(key).second) {
      throw ContractError("ranking repeats key '" + key + "'");
    }
  }
}

double class_mass(const Backend& backend, const PromptTemplate& tmpl,
                  const VerbalizerMap& vmap, std::span<const FeatureField> fields, int top_k,
                  std::size_t cls) {
  const auto dist = class_distribution(backend.query(build_prompt(tmpl, fields), top_k), vmap);
  return dist.probs[static_cast<Eigen::Index>(cls)];
}

}  // namespace

std::string_view to_string(RankingSource s) {
  switch (s) {
    case RankingSource::jsd:
      return "jsd";
    case RankingSource::kl:
      return "kl";
    case RankingSource::l1:
      return "l1";
    case RankingSource::external:
      return "external";
    case RankingSource::random:
      return "random";
  }
  throw ContractError("unknown ranking source");
}

RankingSource parse_ranking_source(std::string_view name) {
  std::string lower(name);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (auto s : {RankingSource::jsd, RankingSource::kl, RankingSource::l1,
                 RankingSource::external, RankingSource::random}) {
    if (lower == to_string(s)) return s;
  }
  throw ConfigError("unknown ranking source '" + std::string(name) + "'");
}

RankingSource ranking_source_for(Metric m) {
  switch (m) {
    case Metric::jsd:
      return RankingSource::jsd;
    case Metric::kl:
      return RankingSource::kl;
    case Metric::l1:
      return RankingSource::l1;
  }
  throw ContractError("unknown metric");
}

PredictedClass predicted_class(const ClassDistribution& dist) {
  if (dist.size() == 0) throw ContractError("empty class distribution");
  Eigen::Index best = 0;
  const double top = dist.maxCoeff(&best);
  const auto ties = (dist.array() == top).count();
  // maxCoeff returns the first maximal index, i.e. the lowest.
  return {static_cast<std::size_t>(best), ties > 1};
}

RankingOrder random_order(const TabularInstance& instance, std::uint64_t seed) {
  RankingOrder order;
  order.instance_index = instance.index;
  order.source = RankingSource::random;
  order.seed = seed;
  order.keys = instance.keys();
  Rng rng(seed);
  rng.shuffle(order.keys.begin(), order.keys.end());
  return order;
}

RankingOrder ranking_from_attribution(const AttributionResult& result) {
  return {result.instance_index, ranking_source_for(result.metric), result.ranked_keys(),
          std::nullopt};
}

RankingOrder ExternalRanking::for_instance(std::size_t instance_index) const {
  RankingOrder order;
  order.instance_index = instance_index;
  order.source = RankingSource::external;
  if (global) {
    order.keys = *global;
    return order;
  }
  const auto it = per_instance.find(instance_index);
  if (it == per_instance.end()) {
    throw LoadError("external ranking has no entry for instance " +
                    std::to_string(instance_index));
  }
  order.keys = it->second;
  return order;
}

ExternalRanking parse_external_ranking(std::string_view text,
                                       const std::vector<std::string>& known_keys) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw LoadError("external ranking file is empty");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("external ranking: ") + e.what(), e.byte);
  }
  ExternalRanking out;
  if (j.is_object() && j.contains("global")) {
    out.global = keys_from_json(j["global"], known_keys, "'global'");
  } else if (j.is_object() && j.contains("per_instance")) {
    const auto& per = j["per_instance"];
    if (!per.is_object() || per.empty()) {
      throw LoadError("external ranking 'per_instance' must be a non-empty object");
    }
    for (const auto& [idx, keys] : per.items()) {
      std::size_t index = 0;
      const auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), index);
      if (ec != std::errc{} || ptr != idx.data() + idx.size()) {
        throw LoadError("external ranking: bad instance index '" + idx + "'");
      }
      out.per_instance.emplace(index, keys_from_json(keys, known_keys, "instance " + idx));
    }
  } else {
    throw LoadError("external ranking must contain 'global' or 'per_instance'");
  }
  return out;
}

ExternalRanking load_external_ranking(const std::filesystem::path& path,
                                      const std::vector<std::string>& known_keys) {
  return parse_external_ranking(detail::read_text_file(path), known_keys);
}

DeletionRun run_deletion(std::span<const TabularInstance> instances,
                         const std::vector<RankingSet>& rankings, const Backend& backend,
                         const PromptTemplate& tmpl, const VerbalizerMap& vmap,
                         const DeletionOptions& options) {
  if (options.max_removals < 1) throw ContractError("max_removals must be at least 1");
  for (const auto& set : rankings) {
    if (set.orders.size() != instances.size()) {
      throw ContractError("ranking set '" + set.label + "' does not cover every instance");
    }
    for (std::size_t i = 0; i < instances.size(); ++i) {
      check_ranking(set.orders[i], instances[i]);
    }
  }

  // per_source[s] follows `rankings`; ok == false means the instance is dropped.
  struct InstanceOutcome {
    bool ok = false;
    bool tie = false;
    std::vector<InstanceTrace> per_source;
  };
  std::vector<InstanceOutcome> outcomes(instances.size());

  detail::parallel_for(instances.size(), options.workers, [&](std::size_t i) {
    const auto& inst = instances[i];
    InstanceOutcome outcome;
    try {
      const auto full_dist =
          class_distribution(backend.query(build_prompt(tmpl, inst.fields), options.top_k), vmap);
      const auto pred = predicted_class(full_dist.probs);
      outcome.tie = pred.tie;
      const double p0 = full_dist.probs[static_cast<Eigen::Index>(pred.index)];
      const std::size_t m = inst.num_features();
      for (const auto& set : rankings) {
        const auto& order = set.orders[i];
        InstanceTrace trace;
        trace.instance_index = inst.index;
        trace.num_features = m;
        trace.predicted_class = pred.index;
        trace.probs.push_back(p0);
        const std::size_t steps =
            std::min({options.max_removals, m - 1, order.keys.size()});
        std::set<std::string> removed;
        for (std::size_t t = 1; t <= steps; ++t) {
          removed.insert(order.keys[t - 1]);
          trace.removed.push_back(order.keys[t - 1]);
          std::vector<FeatureField> kept;
          for (const auto& f : inst.fields) {
            if (!removed.contains(f.key)) kept.push_back(f);
          }
          trace.probs.push_back(
              class_mass(backend, tmpl, vmap, kept, options.top_k, pred.index));
        }
        outcome.per_source.push_back(std::move(trace));
      }
      outcome.ok = true;
    } catch (const BackendError&) {
      outcome = InstanceOutcome{};
    }
    outcomes[i] = std::move(outcome);
  });

  DeletionRun run;
  double feature_sum = 0.0;
  std::size_t evaluated = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (!outcomes[i].ok) {
      run.dropped_instances.push_back(instances[i].index);
      continue;
    }
    ++evaluated;
    feature_sum += static_cast<double>(instances[i].num_features());
    run.predicted_class_ties += outcomes[i].tie;
  }
  run.mean_features = evaluated ? feature_sum / static_cast<double>(evaluated) : 0.0;

  for (std::size_t s = 0; s < rankings.size(); ++s) {
    DeletionCurve curve;
    curve.label = rankings[s].label;
    curve.source = rankings[s].source;
    curve.instance_count = evaluated;
    std::vector<double> sums;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (!outcomes[i].ok) continue;
      auto& trace = outcomes[i].per_source[s];
      if (trace.probs.size() > sums.size()) {
        sums.resize(trace.probs.size(), 0.0);
        curve.n_instances.resize(trace.probs.size(), 0);
      }
      for (std::size_t t = 0; t < trace.probs.size(); ++t) {
        sums[t] += trace.probs[t];
        ++curve.n_instances[t];
      }
      curve.traces.push_back(std::move(trace));
    }
    for (std::size_t t = 0; t < sums.size(); ++t) {
      curve.fraction_removed.push_back(static_cast<double>(t) / run.mean_features);
      curve.mean_prob.push_back(sums[t] / static_cast<double>(curve.n_instances[t]));
    }
    run.curves.push_back(std::move(curve));
  }
  return run;
}

double trapezoid_auc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ContractError("area under a curve needs at least two aligned points");
  }
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  }
  return area;
}

double curve_auc(const DeletionCurve& curve) {
  return trapezoid_auc(curve.fraction_removed, curve.mean_prob);
}

std::string curves_to_csv(const DeletionRun& run) {
  std::string out = "source,step,fraction_removed,mean_prob,n_instances\n";
  for (const auto& c : run.curves) {
    for (std::size_t t = 0; t < c.mean_prob.size(); ++t) {
      out += c.label + ',' + std::to_string(t) + ',' + format_double(c.fraction_removed[t]) +
             ',' + format_double(c.mean_prob[t]) + ',' + std::to_string(c.n_instances[t]) +
             '\n';
    }
  }
  return out;
}

nlohmann::ordered_json curves_to_json(const DeletionRun& run) {
  nlohmann::ordered_json j;
  j["mean_features"] = run.mean_features;
  j["dropped_instances"] = run.dropped_instances;
  j["predicted_class_ties"] = run.predicted_class_ties;
  nlohmann::ordered_json curves = nlohmann::ordered_json::array();
  for (const auto& c : run.curves) {
    nlohmann::ordered_json cj;
    cj["source"] = c.label;
    cj["kind"] = std::string(to_string(c.source));
    cj["instance_count"] = c.instance_count;
    cj["fraction_removed"] = c.fraction_removed;
    cj["mean_prob"] = c.mean_prob;
    cj["n_instances"] = c.n_instances;
    cj["auc"] = c.mean_prob.size() >= 2 ? nlohmann::ordered_json(curve_auc(c))
                                         : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json traces = nlohmann::ordered_json::array();
    for (const auto& t : c.traces) {
      traces.push_back({{"instance_index", t.instance_index},
                        {"num_features", t.num_features},
                        {"predicted_class", t.predicted_class},
                        {"removed", t.removed},
                        {"probs", t.probs}});
    }
    cj["traces"] = std::move(traces);
    curves.push_back(std::move(cj));
  }
  j["curves"] = std::move(curves);
  return j;
}

}  // namespace tabshap
