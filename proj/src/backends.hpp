#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace mmsrarec::backends {

// Lowercase (ASCII), split on maximal runs of non-alphanumeric characters,
// drop empty tokens. Bytes >= 0x80 count as alphanumeric so UTF-8 words stay
// intact.
std::vector<std::string> tokenize(std::string_view text);

// ---------------------------------------------------------------------------
// Requests

// Structured side-channel some requests carry next to the rendered prompt.
// Remote backends ignore it; the mock reads it instead of parsing prose.
struct SubjectItem {
  std::string title;
  std::string description;
  std::string caption;
};

struct GenerationRequest {
  std::string prompt;
  std::vector<std::string> media;
  int max_tokens = 256;
  std::optional<SubjectItem> subject;
};

struct PromptFeatures {
  std::vector<std::string> context_keywords;    // user + neighbor keywords
  std::vector<std::string> candidate_keywords;
  bool candidate_is_ground_truth = false;
  std::string user_id;
  std::string item_id;
};

struct FirstTokenRequest {
  std::string prompt;
  std::vector<std::string> media;
  int top_k = 20;
  PromptFeatures features;
};

using TokenDistribution = std::map<std::string, double>;

// ---------------------------------------------------------------------------
// Contracts

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string generate(const GenerationRequest& request) = 0;
};

class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  // One log-probability (<= 0) per target token, conditioned on the keywords.
  virtual std::vector<double> score(const std::vector<std::string>& conditioning_keywords,
                                    const std::vector<std::string>& target_tokens) = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(const std::string& text) = 0;
  virtual std::size_t dimension() const = 0;
};

class FirstTokenScorer {
 public:
  virtual ~FirstTokenScorer() = default;
  // Probability masses (not log) over candidate first tokens; sums to <= 1.
  virtual TokenDistribution first_token(const FirstTokenRequest& request) = 0;
};

struct BackendSuite {
  std::shared_ptr<Generator> generator;
  std::shared_ptr<TokenScorer> token_scorer;
  std::shared_ptr<Embedder> embedder;
  std::shared_ptr<FirstTokenScorer> first_token;
  std::string description;  // "mock-oracle", "remote:http://..."
};

// ---------------------------------------------------------------------------
// Deterministic mock

enum class MockMode { kOracle, kRandom };

struct MockState {
  std::uint64_t seed = 0;
  MockMode mode = MockMode::kOracle;
  std::size_t embed_dim = 256;
  double smoothing = 1.0;           // lambda
  double virtual_vocab = 65536.0;   // V
  std::size_t summary_keywords = 4; // m
};

// Signed feature hashing of the token bag into `dim` coordinates, then L2
// normalized (the all-zero vector is returned unchanged).
std::vector<double> hash_embed(std::string_view text, std::size_t dim = 256);

// Top-m tokens of `text` by (frequency desc, token asc).
std::vector<std::string> top_tokens(std::string_view text, std::size_t m);

// "Cover: a,b\nContent: c,d"
std::string render_keyword_lines(const std::vector<std::string>& cover,
                                 const std::vector<std::string>& content);

class MockBackend final : public Generator,
                          public TokenScorer,
                          public Embedder,
                          public FirstTokenScorer {
 public:
  explicit MockBackend(MockState state = {}) : state_(state) {}

  const MockState& state() const { return state_; }

  std::string generate(const GenerationRequest& request) override;

  std::vector<double> score(const std::vector<std::string>& conditioning_keywords,
                            const std::vector<std::string>& target_tokens) override;

  std::vector<double> embed(const std::string& text) override {
    return hash_embed(text, state_.embed_dim);
  }
  std::size_t dimension() const override { return state_.embed_dim; }

  TokenDistribution first_token(const FirstTokenRequest& request) override;

  // The yes-probability the mock assigns before it is split into yes/no.
  double yes_mass(const PromptFeatures& features) const;

 private:
  MockState state_;
};

BackendSuite make_mock_suite(MockState state);

std::string mode_name(MockMode mode);

// Jaccard overlap of the token sets of two keyword lists; 0 when both empty.
double keyword_jaccard(const std::vector<std::string>& a,
                       const std::vector<std::string>& b);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mmsrarec::backends
