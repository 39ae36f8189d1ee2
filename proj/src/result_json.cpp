#include "tabshap/attribution.hpp"
#include "tabshap/error.hpp"

namespace tabshap {
namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

Eigen::VectorXd from_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::ordered_json to_json(const AttributionResult& r) {
  nlohmann::ordered_json j;
  j["instance_index"] = r.instance_index;
  j["metric"] = std::string(to_string(r.metric));
  nlohmann::ordered_json phi = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.feature_keys.size(); ++i) {
    phi[r.feature_keys[i]] = r.phi[static_cast<Eigen::Index>(i)];
  }
  j["phi"] = std::move(phi);
  j["raw_phi"] = to_vector(r.raw_phi);
  j["seed"] = r.seed;
  j["degeneracy_flags"] = {{"full_distribution", r.full_degenerate},
                           {"degenerate_coalitions", r.degenerate_coalitions},
                           {"uniform_phi", r.uniform_fallback}};
  j["coalition_count"] = r.coalition_count;
  j["full_dist"] = to_vector(r.full_dist);
  j["config"] = r.config.to_json();
  return j;
}

AttributionResult attribution_from_json(const nlohmann::json& j) {
  AttributionResult r;
  try {
    r.instance_index = j.at("instance_index").get<std::size_t>();
    r.metric = parse_metric(j.at("metric").get<std::string>());
    std::vector<double> phi;
    for (const auto& [key, value] : j.at("phi").items()) {
      r.feature_keys.push_back(key);
      phi.push_back(value.get<double>());
    }
    r.phi = from_vector(phi);
    r.raw_phi = from_vector(j.at("raw_phi").get<std::vector<double>>());
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& flags = j.at("degeneracy_flags");
    r.full_degenerate = flags.at("full_distribution").get<bool>();
    r.degenerate_coalitions = flags.at("degenerate_coalitions").get<std::size_t>();
    r.uniform_fallback = flags.at("uniform_phi").get<bool>();
    r.coalition_count = j.at("coalition_count").get<std::size_t>();
    if (j.contains("full_dist")) {
      r.full_dist = from_vector(j.at("full_dist").get<std::vector<double>>());
    }
    if (j.contains("config")) r.config = SamplingConfig::from_json(j.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed attribution result: ") + e.what());
  }
  if (r.raw_phi.size() != r.phi.size()) {
    throw LoadError("attribution result has mismatched phi/raw_phi lengths");
  }
  return r;
}

}  // namespace tabshap
