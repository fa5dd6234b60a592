#pragma once

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <string>

#include "backends.hpp"

namespace mmsrarec::backends {

struct RemoteConfig {
  std::string endpoint;            // e.g. "http://127.0.0.1:8000"
  std::string embedding_endpoint;  // defaults to `endpoint` when empty
  int timeout_ms = 30000;
  int retries = 2;                 // extra attempts after the first
  int max_in_flight = 8;
  int max_tokens = 256;
  std::string keyword_context_prefix = "Keywords: ";
};

// Adapter for an HTTP+JSON model service; field names are frozen in
// docs/remote_protocol.md. Capabilities are checked once, at construction.
class RemoteBackend final : public Generator,
                            public TokenScorer,
                            public Embedder,
                            public FirstTokenScorer {
 public:
  explicit RemoteBackend(RemoteConfig config);

  std::string generate(const GenerationRequest& request) override;
  std::vector<double> score(const std::vector<std::string>& conditioning_keywords,
                            const std::vector<std::string>& target_tokens) override;
  std::vector<double> embed(const std::string& text) override;
  std::size_t dimension() const override { return dimension_.load(); }
  TokenDistribution first_token(const FirstTokenRequest& request) override;

  // Requests issued so far, counting retries.
  std::size_t attempts() const { return attempts_.load(); }

 private:
  json call(const std::string& base, const std::string& method,
            const std::string& path, const json* body);
  void acquire();
  void release();

  RemoteConfig config_;
  std::atomic<std::size_t> dimension_{0};
  std::atomic<std::size_t> attempts_{0};
  std::mutex slots_mutex_;
  std::condition_variable slots_cv_;
  int in_flight_ = 0;
};

BackendSuite make_remote_suite(const RemoteConfig& config);

}  // namespace mmsrarec::backends
