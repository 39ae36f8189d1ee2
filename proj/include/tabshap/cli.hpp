#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabshap/attribution.hpp"
#include "tabshap/backend.hpp"
#include "tabshap/cache_store.hpp"
#include "tabshap/tabular.hpp"
#include "tabshap/verbalizer.hpp"

namespace tabshap::cli {

inline constexpr const char* kEndpointEnv = "TABSHAP_ENDPOINT";

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path schema;
  std::optional<std::filesystem::path> template_path;
  std::optional<std::filesystem::path> verbalizer;
  std::string backend;  // descriptor, see BackendDescriptor::parse
  std::optional<std::filesystem::path> record;
  SamplingConfig sampling;

  std::size_t instances = 50;
  std::vector<std::size_t> indices;  // explicit selection, overrides `instances`

  std::filesystem::path out = "tabshap_out";
  std::optional<std::filesystem::path> cache_dir;  // defaults to `out`

  unsigned workers = 1;
  std::size_t max_removals = 10;
  std::vector<std::string> sources = {"jsd", "random"};
  std::optional<std::filesystem::path> external;
  std::size_t random_seeds = 1;

  // Test hook: used instead of `backend` when set. Not serialized.
  std::shared_ptr<const Backend> backend_override;

  std::filesystem::path effective_cache_dir() const { return cache_dir ? *cache_dir : out; }
  CachePaths cache_paths() const;

  nlohmann::ordered_json to_json() const;
  // Overlays the keys present in `j`; unknown keys throw ConfigError.
  void apply_json(const nlohmann::json& j);
  void apply_file(const std::filesystem::path& path);
};

// Loaded inputs shared by the commands.
struct Workspace {
  Schema schema;
  std::vector<TabularInstance> instances;
  PromptTemplate tmpl;
  VerbalizerMap vmap;
  std::shared_ptr<const Backend> backend;  // null when not needed

  std::vector<std::string> feature_keys() const;
  const TabularInstance& instance(std::size_t index) const;
};

Workspace load_workspace(const RunConfig& config, bool need_backend);

// Explicit indices if given, else the indices recorded in the cache's index
// manifest, else a uniform sample of `instances` rows drawn from the seed.
// Returned ascending.
std::vector<std::size_t> select_indices(const RunConfig& config, std::size_t dataset_size);

// Backend descriptor after applying the endpoint environment override.
BackendDescriptor resolve_backend(const RunConfig& config);

int cmd_attribute(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_deletion_curve(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_compare(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_serialize(const RunConfig& config, std::size_t index,
                  const std::vector<std::string>& drop_keys, std::ostream& out);
int cmd_synth_demo(RunConfig config, const std::filesystem::path& spec_path, std::ostream& out,
                   std::ostream& err);

// Entry point; never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tabshap::cli
