#include "remote_backend.hpp"

#include <cmath>

#include "httplib.h"

namespace mmsrarec::backends {

namespace {

Error unavailable(const std::string& what) {
  return Error(ErrorCode::kBackendUnavailable, what);
}

json user_messages(const std::string& prompt) {
  return json::array({json{{"role", "user"}, {"content", prompt}}});
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw invalid_argument("remote backend needs an endpoint");
  if (config_.embedding_endpoint.empty()) config_.embedding_endpoint = config_.endpoint;
  if (config_.max_in_flight < 1) config_.max_in_flight = 1;
  if (config_.retries < 0) config_.retries = 0;

  const json caps = call(config_.endpoint, "GET", "/v1/capabilities", nullptr);
  for (const char* needed : {"generation", "token_logprobs", "first_token_logprobs"}) {
    if (!caps.value(needed, false)) {
      throw Error(ErrorCode::kCapability,
                  std::string("remote backend lacks capability '") + needed + "'");
    }
  }
  const json embed_caps =
      config_.embedding_endpoint == config_.endpoint
          ? caps
          : call(config_.embedding_endpoint, "GET", "/v1/capabilities", nullptr);
  if (!embed_caps.value("embedding", false)) {
    throw Error(ErrorCode::kCapability, "remote backend lacks capability 'embedding'");
  }
  if (embed_caps.contains("embedding_dim")) {
    dimension_ = embed_caps["embedding_dim"].get<std::size_t>();
  }
}

void RemoteBackend::acquire() {
  std::unique_lock lock(slots_mutex_);
  slots_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
  ++in_flight_;
}

void RemoteBackend::release() {
  {
    std::lock_guard lock(slots_mutex_);
    --in_flight_;
  }
  slots_cv_.notify_one();
}

json RemoteBackend::call(const std::string& base, const std::string& method,
                         const std::string& path, const json* body) {
  std::string last_error;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    ++attempts_;
    acquire();
    httplib::Result res;
    {
      // One client per request keeps the adapter usable from many threads.
      httplib::Client client(base);
      const auto sec = config_.timeout_ms / 1000;
      const auto usec = (config_.timeout_ms % 1000) * 1000;
      client.set_connection_timeout(sec, usec);
      client.set_read_timeout(sec, usec);
      client.set_write_timeout(sec, usec);
      res = method == "GET" ? client.Get(path)
                            : client.Post(path, body->dump(), "application/json");
    }
    release();

    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) {
      try {
        return json::parse(res->body);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::kParse, base + path + ": malformed response: " + e.what());
      }
    }
    last_error = "HTTP " + std::to_string(res->status);
    if (!retryable_status(res->status)) break;
  }
  throw unavailable(base + path + " failed after " +
                    std::to_string(config_.retries + 1) + " attempt(s): " + last_error);
}

std::string RemoteBackend::generate(const GenerationRequest& request) {
  const json body{{"messages", user_messages(request.prompt)},
                  {"images", request.media},
                  {"max_tokens", request.max_tokens}};
  const json res = call(config_.endpoint, "POST", "/v1/generate", &body);
  if (!res.contains("text") || !res["text"].is_string()) {
    throw Error(ErrorCode::kParse, "generate response without 'text'");
  }
  return res["text"].get<std::string>();
}

std::vector<double> RemoteBackend::score(
    const std::vector<std::string>& conditioning_keywords,
    const std::vector<std::string>& target_tokens) {
  const json body{{"context", config_.keyword_context_prefix + join(conditioning_keywords, ", ")},
                  {"continuation", target_tokens}};
  const json res = call(config_.endpoint, "POST", "/v1/score", &body);
  auto lps = res.value("token_logprobs", std::vector<double>{});
  if (lps.size() != target_tokens.size()) {
    throw Error(ErrorCode::kParse, "score response has " + std::to_string(lps.size()) +
                                       " log-probs for " +
                                       std::to_string(target_tokens.size()) + " tokens");
  }
  for (double& lp : lps) {
    if (!std::isfinite(lp) || lp > 1e-9) {
      throw Error(ErrorCode::kParse, "score response log-prob out of range");
    }
    lp = std::min(lp, 0.0);
  }
  return lps;
}

std::vector<double> RemoteBackend::embed(const std::string& text) {
  const json body{{"text", text}};
  const json res = call(config_.embedding_endpoint, "POST", "/v1/embed", &body);
  auto v = res.value("vector", std::vector<double>{});
  std::size_t expected = 0;
  if (!dimension_.compare_exchange_strong(expected, v.size()) && expected != v.size()) {
    throw Error(ErrorCode::kParse, "embedding dimension changed from " +
                                       std::to_string(expected) + " to " +
                                       std::to_string(v.size()));
  }
  return v;
}

TokenDistribution RemoteBackend::first_token(const FirstTokenRequest& request) {
  const json body{{"messages", user_messages(request.prompt)},
                  {"images", request.media},
                  {"top_k", request.top_k}};
  const json res = call(config_.endpoint, "POST", "/v1/first_token", &body);
  if (!res.contains("logprobs") || !res["logprobs"].is_object()) {
    throw Error(ErrorCode::kParse, "first_token response without 'logprobs'");
  }
  TokenDistribution dist;
  for (const auto& [token, lp] : res["logprobs"].items()) {
    dist[token] = std::exp(lp.get<double>());
  }
  return dist;
}

BackendSuite make_remote_suite(const RemoteConfig& config) {
  auto remote = std::make_shared<RemoteBackend>(config);
  return BackendSuite{remote, remote, remote, remote, "remote:" + config.endpoint};
}

}  // namespace mmsrarec::backends
