#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <set>

#include "atomic_file.hpp"
#include "tabshap/cli.hpp"
#include "tabshap/error.hpp"
#include "tabshap/rng.hpp"

namespace tabshap::cli {
namespace {

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<T>();
}

nlohmann::ordered_json optional_path(const std::optional<std::filesystem::path>& p) {
  return p ? nlohmann::ordered_json(p->string()) : nlohmann::ordered_json(nullptr);
}

constexpr std::uint64_t kSelectionStream = 0x5e1ec7;

}  // namespace

CachePaths RunConfig::cache_paths() const {
  CachePaths paths;
  paths.dir = effective_cache_dir();
  return paths;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["dataset"] = dataset.string();
  j["schema"] = schema.string();
  j["template"] = optional_path(template_path);
  j["verbalizer"] = optional_path(verbalizer);
  j["backend"] = backend;
  j["record"] = optional_path(record);
  j["metric"] = std::string(to_string(sampling.metric));
  j["ratio"] = sampling.ratio;
  j["max_coalitions"] = sampling.max_coalitions;
  j["top_k"] = sampling.top_k;
  j["seed"] = sampling.seed;
  j["instances"] = instances;
  j["indices"] = indices;
  j["out"] = out.string();
  j["cache_dir"] = optional_path(cache_dir);
  j["workers"] = workers;
  j["max_removals"] = max_removals;
  j["sources"] = sources;
  j["external"] = optional_path(external);
  j["random_seeds"] = random_seeds;
  return j;
}

void RunConfig::apply_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "dataset") {
        dataset = v.get<std::string>();
      } else if (key == "schema") {
        schema = v.get<std::string>();
      } else if (key == "template") {
        template_path = optional_from<std::string>(v);
      } else if (key == "verbalizer") {
        verbalizer = optional_from<std::string>(v);
      } else if (key == "backend") {
        backend = v.get<std::string>();
      } else if (key == "record") {
        record = optional_from<std::string>(v);
      } else if (key == "metric") {
        sampling.metric = parse_metric(v.get<std::string>());
      } else if (key == "ratio") {
        sampling.ratio = v.get<double>();
      } else if (key == "max_coalitions") {
        sampling.max_coalitions = v.get<std::size_t>();
      } else if (key == "top_k") {
        sampling.top_k = v.get<int>();
      } else if (key == "seed") {
        sampling.seed = v.get<std::uint64_t>();
      } else if (key == "instances") {
        instances = v.get<std::size_t>();
      } else if (key == "indices") {
        indices = v.get<std::vector<std::size_t>>();
      } else if (key == "out") {
        out = v.get<std::string>();
      } else if (key == "cache_dir") {
        cache_dir = optional_from<std::string>(v);
      } else if (key == "workers") {
        workers = v.get<unsigned>();
      } else if (key == "max_removals") {
        max_removals = v.get<std::size_t>();
      } else if (key == "sources") {
        sources = v.get<std::vector<std::string>>();
      } else if (key == "external") {
        external = optional_from<std::string>(v);
      } else if (key == "random_seeds") {
        random_seeds = v.get<std::size_t>();
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  const auto text = detail::read_text_file(path);
  try {
    apply_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

std::vector<std::string> Workspace::feature_keys() const {
  std::vector<std::string> keys;
  for (const auto& [name, kind] : schema.columns) {
    if (kind != ColumnKind::label) keys.push_back(normalize_key(name));
  }
  return keys;
}

const TabularInstance& Workspace::instance(std::size_t index) const {
  if (index >= instances.size()) {
    throw ConfigError("instance index " + std::to_string(index) + " is out of range (dataset has " +
                      std::to_string(instances.size()) + " rows)");
  }
  return instances[index];
}

BackendDescriptor resolve_backend(const RunConfig& config) {
  const char* endpoint = std::getenv(kEndpointEnv);
  const bool has_endpoint = endpoint && *endpoint;
  if (config.backend.empty()) {
    if (!has_endpoint) {
      throw ConfigError(std::string("no backend configured; pass --backend or set ") +
                        kEndpointEnv);
    }
    auto d = BackendDescriptor::parse(endpoint);
    d.record_path = config.record;
    d.max_in_flight = static_cast<int>(std::max(1u, config.workers));
    return d;
  }
  auto d = BackendDescriptor::parse(config.backend);
  if (d.kind == BackendKind::http && has_endpoint) d.location = endpoint;
  if (config.record) {
    if (d.kind != BackendKind::http) throw ConfigError("--record only applies to HTTP backends");
    d.record_path = config.record;
  }
  d.max_in_flight = static_cast<int>(std::max(1u, config.workers));
  return d;
}

Workspace load_workspace(const RunConfig& config, bool need_backend) {
  for (const auto& p : {config.dataset, config.schema}) {
    if (p.empty()) throw ConfigError("--dataset and --schema are required");
    if (!std::filesystem::exists(p)) throw ConfigError("file not found: " + p.string());
  }
  Workspace ws{.schema = Schema::from_json_file(config.schema),
               .instances = {},
               .tmpl = config.template_path ? PromptTemplate::from_file(*config.template_path)
                                            : PromptTemplate::deepseek_default(),
               .vmap = config.verbalizer ? VerbalizerMap::from_file(*config.verbalizer)
                                         : VerbalizerMap({{"yes", {"yes"}}, {"no", {"no"}}}),
               .backend = nullptr};
  ws.instances = load_dataset(config.dataset, ws.schema);
  if (need_backend) {
    ws.backend = config.backend_override ? config.backend_override
                                         : make_backend(resolve_backend(config));
  }
  return ws;
}

std::vector<std::size_t> select_indices(const RunConfig& config, std::size_t dataset_size) {
  std::vector<std::size_t> chosen;
  if (!config.indices.empty()) {
    chosen = config.indices;
    std::sort(chosen.begin(), chosen.end());
    if (std::adjacent_find(chosen.begin(), chosen.end()) != chosen.end()) {
      throw ConfigError("--indices contains duplicates");
    }
    if (chosen.back() >= dataset_size) {
      throw ConfigError("index " + std::to_string(chosen.back()) + " is out of range (dataset has " +
                        std::to_string(dataset_size) + " rows)");
    }
    return chosen;
  }
  if (auto manifest = read_manifest(config.cache_paths().manifest())) {
    chosen = manifest->selected_test_indices;
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }
  if (config.instances == 0) throw ConfigError("--instances must be at least 1");
  if (dataset_size == 0) throw ConfigError("dataset has no rows");
  std::vector<std::size_t> all(dataset_size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto n = std::min(config.instances, dataset_size);
  Rng rng(mix_seed(config.sampling.seed, kSelectionStream));
  rng.partial_shuffle(all.begin(), all.end(), n);
  chosen.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace tabshap::cli
