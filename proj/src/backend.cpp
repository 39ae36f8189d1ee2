#include "tabshap/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "atomic_file.hpp"
#include "tabshap/digest.hpp"
#include "tabshap/error.hpp"

namespace tabshap {
namespace {

// log(1 / (1 + exp(-z))) without overflow.
double log_logistic(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)); }

}  // namespace

void TopKDistribution::validate() const {
  if (k < 1) throw ProtocolError("top-k distribution with k < 1");
  if (entries.size() > static_cast<std::size_t>(k)) {
    throw ProtocolError("backend returned " + std::to_string(entries.size()) +
                        " entries for k=" + std::to_string(k));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const double lp = entries[i].logprob;
    if (std::isnan(lp) || lp > 0.0) {
      throw ProtocolError("invalid logprob for token '" + entries[i].token + "'");
    }
    if (i > 0 && lp > entries[i - 1].logprob) {
      throw ProtocolError("top-k entries are not sorted by logprob");
    }
  }
  if (total_mass() > 1.0 + kMassTolerance) {
    throw ProtocolError("top-k probability mass exceeds 1");
  }
}

double TopKDistribution::total_mass() const {
  double s = 0.0;
  for (const auto& e : entries) s += std::exp(e.logprob);
  return s;
}

nlohmann::json to_json(const TopKDistribution& dist) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& e : dist.entries) {
    tokens.push_back({{"token", e.token}, {"logprob", e.logprob}});
  }
  return {{"k", dist.k}, {"tokens", std::move(tokens)}};
}

TopKDistribution topk_from_json(const nlohmann::json& j, int k) {
  if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array()) {
    throw ProtocolError("response is missing the 'tokens' array");
  }
  TopKDistribution dist;
  dist.k = k;
  for (const auto& t : j["tokens"]) {
    if (!t.is_object() || !t.contains("token") || !t.contains("logprob") ||
        !t["token"].is_string() || !t["logprob"].is_number()) {
      throw ProtocolError("malformed token entry: " + t.dump());
    }
    dist.entries.push_back({t["token"].get<std::string>(), t["logprob"].get<double>()});
  }
  dist.validate();
  return dist;
}

TopKDistribution Backend::query(std::string_view prompt, int k) const {
  if (prompt.empty()) throw ContractError("query with empty prompt");
  if (k < 1) throw ContractError("query with k < 1");
  return do_query(prompt, k);
}

// --- synthetic ---------------------------------------------------------------

std::vector<std::string> SyntheticOracleSpec::feature_keys() const {
  std::vector<std::string> keys;
  for (const auto& [key, w] : weights) keys.push_back(key);
  for (const auto& key : extra_features) {
    if (!weights.contains(key)) keys.push_back(key);
  }
  return keys;
}

double SyntheticOracleSpec::positive_probability(
    const std::vector<std::string>& present_keys) const {
  double z = bias;
  for (const auto& key : present_keys) {
    if (auto it = weights.find(key); it != weights.end()) z += it->second;
  }
  return 1.0 / (1.0 + std::exp(-z));
}

SyntheticOracleSpec SyntheticOracleSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  SyntheticOracleSpec spec;
  try {
    if (j.contains("classes")) spec.classes = j.at("classes").get<std::vector<std::string>>();
    if (j.contains("weights")) spec.weights = j.at("weights").get<std::map<std::string, double>>();
    spec.bias = j.value("bias", 0.0);
    if (j.contains("features")) {
      spec.extra_features = j.at("features").get<std::vector<std::string>>();
    }
    spec.surface_prefix = j.value("surface_prefix", spec.surface_prefix);
    spec.input_marker = j.value("input_marker", spec.input_marker);
    spec.response_marker = j.value("response_marker", spec.response_marker);
    const auto link = j.value("link", std::string("logistic"));
    if (link != "logistic") throw ConfigError("unsupported link '" + link + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed synthetic spec: ") + e.what());
  }
  if (spec.classes.size() != 2 || spec.classes[0] == spec.classes[1]) {
    throw ConfigError("synthetic spec needs exactly two distinct classes");
  }
  for (const auto& [key, w] : spec.weights) {
    if (key.empty() || key.find(':') != std::string::npos ||
        std::any_of(key.begin(), key.end(), is_space) || !std::isfinite(w)) {
      throw ConfigError("invalid synthetic weight entry '" + key + "'");
    }
  }
  if (!std::isfinite(spec.bias)) throw ConfigError("synthetic bias must be finite");
  return spec;
}

SyntheticOracleSpec SyntheticOracleSpec::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synthetic spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  return from_json(j);
}

nlohmann::json SyntheticOracleSpec::to_json() const {
  return {{"classes", classes},     {"weights", weights},
          {"bias", bias},           {"features", extra_features},
          {"link", "logistic"},     {"surface_prefix", surface_prefix},
          {"input_marker", input_marker}, {"response_marker", response_marker}};
}

SyntheticBackend::SyntheticBackend(SyntheticOracleSpec spec) : spec_(std::move(spec)) {}

std::vector<std::string> SyntheticBackend::present_keys(std::string_view prompt) const {
  std::string_view region = prompt;
  const auto open = prompt.find(spec_.input_marker);
  const auto close = prompt.rfind(spec_.response_marker);
  if (open != std::string_view::npos && close != std::string_view::npos &&
      open + spec_.input_marker.size() <= close) {
    region = prompt.substr(open + spec_.input_marker.size(),
                           close - open - spec_.input_marker.size());
  }
  std::set<std::string> found;
  std::size_t i = 0;
  while (i < region.size()) {
    while (i < region.size() && is_space(region[i])) ++i;
    std::size_t j = i;
    while (j < region.size() && !is_space(region[j])) ++j;
    const auto token = region.substr(i, j - i);
    if (const auto colon = token.find(':'); colon != std::string_view::npos) {
      std::string key(token.substr(0, colon));
      if (spec_.weights.contains(key)) found.insert(std::move(key));
    }
    i = j;
  }
  return {found.begin(), found.end()};
}

std::string SyntheticBackend::describe() const { return "synthetic"; }

TopKDistribution SyntheticBackend::do_query(std::string_view prompt, int k) const {
  double z = spec_.bias;
  for (const auto& key : present_keys(prompt)) z += spec_.weights.at(key);

  TopKDistribution dist;
  dist.k = k;
  TokenLogprob pos{spec_.surface_prefix + spec_.classes[0], log_logistic(z)};
  TokenLogprob neg{spec_.surface_prefix + spec_.classes[1], log_logistic(-z)};
  if (neg.logprob > pos.logprob) {
    dist.entries = {std::move(neg), std::move(pos)};
  } else {
    dist.entries = {std::move(pos), std::move(neg)};
  }
  if (dist.entries.size() > static_cast<std::size_t>(k)) dist.entries.resize(k);
  return dist;
}

// --- replay ------------------------------------------------------------------

std::map<std::string, TopKDistribution> read_replay_file(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open replay cache " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": replay cache must be an object");
  std::map<std::string, TopKDistribution> entries;
  for (const auto& [digest, value] : j.items()) {
    try {
      entries.emplace(digest, topk_from_json(value, value.at("k").get<int>()));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": bad entry " + digest + ": " + e.what());
    }
  }
  return entries;
}

void write_replay_file(const std::filesystem::path& path,
                       const std::map<std::string, TopKDistribution>& entries) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [digest, dist] : entries) j[digest] = to_json(dist);
  detail::write_file_atomically(path, j.dump(1) + "\n");
}

ReplayBackend::ReplayBackend(const std::filesystem::path& cache_path)
    : source_(cache_path.string()), entries_(read_replay_file(cache_path)) {}

ReplayBackend::ReplayBackend(std::map<std::string, TopKDistribution> entries)
    : source_("<memory>"), entries_(std::move(entries)) {}

std::string ReplayBackend::describe() const { return "replay:" + source_; }

TopKDistribution ReplayBackend::do_query(std::string_view prompt, int k) const {
  auto digest = prompt_digest(prompt, k);
  const auto it = entries_.find(digest);
  if (it == entries_.end()) throw CacheMissError(std::move(digest));
  return it->second;
}

// --- recording ---------------------------------------------------------------

RecordingStore::RecordingStore(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) entries_ = read_replay_file(path_);
}

RecordingStore::~RecordingStore() {
  try {
    flush();
  } catch (...) {
    // Destructors must not throw; callers that care call flush() themselves.
  }
}

void RecordingStore::put(std::string_view prompt, int k, const TopKDistribution& dist) {
  auto digest = prompt_digest(prompt, k);
  std::lock_guard lock(mutex_);
  auto [it, inserted] = entries_.try_emplace(std::move(digest), dist);
  if (!inserted && it->second != dist) {
    it->second = dist;
    inserted = true;
  }
  dirty_ = dirty_ || inserted;
}

void RecordingStore::flush() {
  std::lock_guard lock(mutex_);
  if (!dirty_) return;
  write_replay_file(path_, entries_);
  dirty_ = false;
}

std::size_t RecordingStore::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

RecordingBackend::RecordingBackend(std::shared_ptr<const Backend> inner,
                                   std::shared_ptr<RecordingStore> store)
    : inner_(std::move(inner)), store_(std::move(store)) {}

std::string RecordingBackend::describe() const {
  return inner_->describe() + " (recording)";
}

TopKDistribution RecordingBackend::do_query(std::string_view prompt, int k) const {
  auto dist = inner_->query(prompt, k);
  store_->put(prompt, k, dist);
  return dist;
}

// --- descriptor --------------------------------------------------------------

BackendDescriptor BackendDescriptor::parse(std::string_view text) {
  BackendDescriptor d;
  auto strip = [&](std::string_view prefix) {
    return std::string(text.substr(prefix.size()));
  };
  if (text.starts_with("synthetic:")) {
    d.kind = BackendKind::synthetic;
    d.location = strip("synthetic:");
  } else if (text.starts_with("replay:")) {
    d.kind = BackendKind::replay;
    d.location = strip("replay:");
  } else if (text.starts_with("http://") || text.starts_with("https://")) {
    d.kind = BackendKind::http;
    d.location = std::string(text);
  } else {
    throw ConfigError("unrecognized backend '" + std::string(text) +
                      "' (expected synthetic:<path>, replay:<path> or an http(s) URL)");
  }
  if (d.location.empty()) throw ConfigError("backend location is empty");
  return d;
}

std::string BackendDescriptor::to_string() const {
  switch (kind) {
    case BackendKind::synthetic:
      return "synthetic:" + location;
    case BackendKind::replay:
      return "replay:" + location;
    case BackendKind::http:
      return location;
  }
  return location;
}

std::shared_ptr<const Backend> make_backend(const BackendDescriptor& desc) {
  switch (desc.kind) {
    case BackendKind::synthetic:
      return std::make_shared<SyntheticBackend>(SyntheticOracleSpec::from_file(desc.location));
    case BackendKind::replay:
      return std::make_shared<ReplayBackend>(desc.location);
    case BackendKind::http: {
      HttpBackendOptions opts;
      opts.url = desc.location;
      opts.timeout = desc.timeout;
      opts.retries = desc.retries;
      opts.max_in_flight = desc.max_in_flight;
      auto http = std::make_shared<HttpBackend>(std::move(opts));
      if (!desc.record_path) return http;
      return std::make_shared<RecordingBackend>(
          std::move(http), std::make_shared<RecordingStore>(*desc.record_path));
    }
  }
  throw ConfigError("unknown backend kind");
}

}  // namespace tabshap
