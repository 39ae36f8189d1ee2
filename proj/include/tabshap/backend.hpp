#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tabshap {

struct TokenLogprob {
  std::string token;  // surface form exactly as the backend produced it
  double logprob = 0.0;  // natural log

  bool operator==(const TokenLogprob&) const = default;
};

// Next-token candidates at the final prompt position, most probable first.
struct TopKDistribution {
  std::vector<TokenLogprob> entries;
  int k = 1;

  static constexpr double kMassTolerance = 1e-6;

  // Throws ProtocolError when an invariant is violated: logprob > 0,
  // entries not sorted non-increasing, more than k entries, or total mass
  // above 1 + kMassTolerance.
  void validate() const;
  double total_mass() const;

  bool operator==(const TopKDistribution&) const = default;
};

nlohmann::json to_json(const TopKDistribution& dist);
// Wire shape {"tokens": [{"token", "logprob"}]}; k taken from the argument.
TopKDistribution topk_from_json(const nlohmann::json& j, int k);

// "prompt -> top-k next-token logprobs". Implementations must tolerate
// concurrent calls.
class Backend {
 public:
  virtual ~Backend() = default;

  // Throws ContractError for an empty prompt or k < 1, and a BackendError
  // subclass when no distribution can be produced.
  TopKDistribution query(std::string_view prompt, int k) const;

  virtual std::string describe() const = 0;

 protected:
  virtual TopKDistribution do_query(std::string_view prompt, int k) const = 0;
};

// ---------------------------------------------------------------------------
// Synthetic oracle: a logistic model over the feature keys present in the
// prompt. Stands in for a fine-tuned classifier in tests and demos.

struct SyntheticOracleSpec {
  // classes[0] is the positive class.
  std::vector<std::string> classes = {"yes", "no"};
  std::map<std::string, double> weights;
  double bias = 0.0;
  // Keys that exist in generated instances but carry no weight.
  std::vector<std::string> extra_features;
  // Prepended to each class label to form the emitted token.
  std::string surface_prefix = " ";
  // When both markers occur in a prompt only the text between them is
  // scanned for `key:` tokens.
  std::string input_marker = "### Input:";
  std::string response_marker = "### Response:";

  // All feature keys: weighted keys in map order, then extra_features.
  std::vector<std::string> feature_keys() const;
  double positive_probability(const std::vector<std::string>& present_keys) const;

  static SyntheticOracleSpec from_json(const nlohmann::json& j);
  static SyntheticOracleSpec from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

class SyntheticBackend final : public Backend {
 public:
  explicit SyntheticBackend(SyntheticOracleSpec spec);

  const SyntheticOracleSpec& spec() const noexcept { return spec_; }
  // Weighted keys found in the scanned region of `prompt`.
  std::vector<std::string> present_keys(std::string_view prompt) const;
  std::string describe() const override;

 protected:
  TopKDistribution do_query(std::string_view prompt, int k) const override;

 private:
  SyntheticOracleSpec spec_;
};

// ---------------------------------------------------------------------------
// Replay: digest -> distribution, read-only.

class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(const std::filesystem::path& cache_path);
  explicit ReplayBackend(std::map<std::string, TopKDistribution> entries);

  std::size_t size() const noexcept { return entries_.size(); }
  std::string describe() const override;

 protected:
  TopKDistribution do_query(std::string_view prompt, int k) const override;

 private:
  std::string source_;
  std::map<std::string, TopKDistribution> entries_;
};

// Accumulates responses under their prompt digest and writes them in the
// replay file format. One writer; put() calls are serialized.
class RecordingStore {
 public:
  // Existing entries at `path` are loaded so a recording can extend a file.
  explicit RecordingStore(std::filesystem::path path);
  ~RecordingStore();

  RecordingStore(const RecordingStore&) = delete;
  RecordingStore& operator=(const RecordingStore&) = delete;

  void put(std::string_view prompt, int k, const TopKDistribution& dist);
  // Atomic write (temp file + rename). No-op when nothing changed.
  void flush();
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::string, TopKDistribution> entries_;
  bool dirty_ = false;
};

std::map<std::string, TopKDistribution> read_replay_file(
    const std::filesystem::path& path);
void write_replay_file(const std::filesystem::path& path,
                       const std::map<std::string, TopKDistribution>& entries);

// Forwards to `inner` and persists every successful response.
class RecordingBackend final : public Backend {
 public:
  RecordingBackend(std::shared_ptr<const Backend> inner,
                   std::shared_ptr<RecordingStore> store);

  RecordingStore& store() const noexcept { return *store_; }
  std::string describe() const override;

 protected:
  TopKDistribution do_query(std::string_view prompt, int k) const override;

 private:
  std::shared_ptr<const Backend> inner_;
  std::shared_ptr<RecordingStore> store_;
};

// ---------------------------------------------------------------------------
// HTTP: POST {"prompt", "top_k"} -> {"tokens": [{"token", "logprob"}]}.

struct HttpBackendOptions {
  std::string url;  // http[s]://host[:port]/path
  std::chrono::milliseconds timeout{30000};
  int retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  int max_in_flight = 4;
};

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options);
  ~HttpBackend() override;

  std::string describe() const override;

 protected:
  TopKDistribution do_query(std::string_view prompt, int k) const override;

 private:
  struct Impl;
  HttpBackendOptions options_;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------

enum class BackendKind { http, replay, synthetic };

struct BackendDescriptor {
  BackendKind kind = BackendKind::synthetic;
  // URL, replay cache path, or synthetic spec path depending on kind.
  std::string location;
  std::chrono::milliseconds timeout{30000};
  int retries = 3;
  int max_in_flight = 4;
  // HTTP only: persist every live response here.
  std::optional<std::filesystem::path> record_path;

  // "synthetic:<spec.json>", "replay:<cache.json>", "http://..." or
  // "https://...".
  static BackendDescriptor parse(std::string_view text);
  std::string to_string() const;
};

std::shared_ptr<const Backend> make_backend(const BackendDescriptor& desc);

}  // namespace tabshap
