#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "backends.hpp"
#include "corpus.hpp"
#include "summarizer.hpp"

namespace mmsrarec::recommender {

struct YesNoTokens {
  std::vector<std::string> yes = {"Yes", "yes", " Yes"};
  std::vector<std::string> no = {"No", "no", " No"};
};

struct YesProbability {
  double p = 0.5;
  bool degenerate = false;  // both masses were zero
};

// mass(yes) / (mass(yes) + mass(no)); 0.5 and flagged when both are zero.
YesProbability yes_probability(const backends::TokenDistribution& dist,
                               const YesNoTokens& tokens = {});

struct ScoredCandidate {
  std::string item_id;
  double yes_prob = 0.0;
  std::size_t rank = 0;
  bool is_positive = false;
};

// Keyword context of one impression. nullopt neighbors means no similar-user
// section in the prompt.
struct ImpressionContext {
  std::vector<std::string> user_keywords;
  std::optional<std::vector<std::string>> neighbor_keywords;
};

struct ScoreOptions {
  YesNoTokens tokens;
  // Tells the backend which candidate is the held-out positive. Only the
  // oracle mock reads it.
  bool reveal_ground_truth = true;
  int top_k = 20;
};

// Positive first, then the negatives in impression order.
std::vector<ScoredCandidate> score_impression(const corpus::Impression& imp,
                                              const ImpressionContext& context,
                                              const corpus::ItemCatalog& catalog,
                                              const summarizer::KeywordStore& store,
                                              backends::FirstTokenScorer& scorer,
                                              const ScoreOptions& options,
                                              std::size_t* degenerate = nullptr);

// Descending yes_prob, ties by item_id ascending; ranks from 1.
std::vector<ScoredCandidate> rank(std::vector<ScoredCandidate> scored);

// Rank of the positive in an already ranked list. Throws unless exactly one
// candidate is positive.
std::size_t positive_rank(const std::vector<ScoredCandidate>& ranked);

double hit_rate_at_k(std::size_t positive_rank, std::size_t k = 5);
double ndcg_at_k(std::size_t positive_rank, std::size_t k = 5);
// (wins + 0.5 * ties) / #negatives for the single positive.
double auc(const std::vector<ScoredCandidate>& scored);

struct UserRow {
  std::string user_id;
  std::size_t target_index = 0;
  std::size_t positive_rank = 0;
  double hit = 0.0;
  double ndcg = 0.0;
  double auc = 0.0;
};

struct EvalReport {
  std::vector<UserRow> rows;
  double hr = 0.0;    // x100
  double ndcg = 0.0;  // x100
  double auc = 0.0;   // x100
  std::size_t k = 5;
  std::size_t impressions = 0;
  std::size_t failed = 0;
  std::size_t degenerate_distributions = 0;
  std::vector<std::string> failures;
  json config;

  json to_json() const;
  std::string to_csv() const;
  void save(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

struct EvalOptions {
  ScoreOptions score;
  std::size_t k = 5;
  std::size_t workers = 1;
  json config = json::object();
};

// `contexts` is aligned with `impressions`. Impressions whose scoring throws
// are excluded and counted; throws if every impression fails.
EvalReport evaluate(const std::vector<corpus::Impression>& impressions,
                    const std::vector<ImpressionContext>& contexts,
                    const corpus::ItemCatalog& catalog, const summarizer::KeywordStore& store,
                    backends::FirstTokenScorer& scorer, const EvalOptions& options);

}  // namespace mmsrarec::recommender
