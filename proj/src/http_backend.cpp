#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <semaphore>
#include <thread>

#include "tabshap/backend.hpp"
#include "tabshap/error.hpp"

namespace tabshap {
namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("invalid URL '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

struct HttpBackend::Impl {
  explicit Impl(int max_in_flight) : slots(max_in_flight) {}
  SplitUrl url;
  mutable std::counting_semaphore<> slots;
};

HttpBackend::HttpBackend(HttpBackendOptions options)
    : options_(std::move(options)),
      impl_(std::make_unique<Impl>(std::max(1, options_.max_in_flight))) {
  if (options_.retries < 0) throw ConfigError("retry count must be non-negative");
  impl_->url = split_url(options_.url);
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::describe() const { return options_.url; }

TopKDistribution HttpBackend::do_query(std::string_view prompt, int k) const {
  const nlohmann::json request = {{"prompt", std::string(prompt)}, {"top_k", k}};
  const std::string body = request.dump();

  impl_->slots.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{impl_->slots};

  std::string last_failure = "no attempt made";
  auto backoff = options_.initial_backoff;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(impl_->url.origin);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    client.set_write_timeout(options_.timeout);
    auto res = client.Post(impl_->url.path, body, "application/json");
    if (!res) {
      last_failure = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_failure = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw ProtocolError("backend answered HTTP " + std::to_string(res->status));
    }
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
    return topk_from_json(parsed, k);
  }
  throw BackendUnavailableError(options_.url + " unavailable after " +
                                std::to_string(options_.retries + 1) +
                                " attempts: " + last_failure);
}

}  // namespace tabshap
