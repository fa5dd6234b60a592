#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "backends.hpp"
#include "corpus.hpp"

namespace mmsrarec::summarizer {

// Cover and content keyword lists for one item. Construction strips each
// keyword, drops empties and removes duplicates within each list.
struct KeywordSummary {
  std::string item_id;
  std::vector<std::string> cover;
  std::vector<std::string> content;

  KeywordSummary() = default;
  KeywordSummary(std::string id, std::vector<std::string> cover_keywords,
                 std::vector<std::string> content_keywords);

  std::size_t size() const { return cover.size() + content.size(); }
  bool empty() const { return size() == 0; }
  // Cover keywords followed by content keywords.
  std::vector<std::string> all() const;
  // Output format of the summarization prompt.
  std::string render() const;

  bool operator==(const KeywordSummary&) const = default;
};

struct StoreEntry {
  KeywordSummary summary;
  bool failed = false;
};

class KeywordStore {
 public:
  void put(KeywordSummary summary, bool failed = false);
  bool contains(const std::string& item_id) const { return index_.count(item_id) != 0; }
  const StoreEntry* find(const std::string& item_id) const;
  // All keywords of an item; empty when the item is unknown.
  std::vector<std::string> keywords(const std::string& item_id) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t failures() const;
  const std::vector<StoreEntry>& entries() const { return entries_; }

  static json entry_json(const StoreEntry& e);
  static StoreEntry entry_from_json(const json& j);
  static KeywordStore load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<StoreEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Summarization prompt

struct RenderedPrompt {
  std::string text;
  std::vector<std::string> media;
};

RenderedPrompt render_summary_prompt(const corpus::Item& item);

class SummaryParseError : public Error {
 public:
  explicit SummaryParseError(std::string raw)
      : Error(ErrorCode::kParse, "summary has no Cover:/Content: sections: " + raw),
        raw_(std::move(raw)) {}
  const std::string& raw_text() const { return raw_; }

 private:
  std::string raw_;
};

// Reads the last "Cover:" and last "Content:" lines (case-insensitive).
KeywordSummary parse_summary(const std::string& text, const std::string& item_id);

// ---------------------------------------------------------------------------
// Rewards

struct RewardWeights {
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 0.05;

  void validate() const;
};

struct ReconOptions {
  bool clamp = true;
  double perplexity_cap = 100.0;
};

struct ReconReward {
  double value = -1.0;
  std::size_t token_count = 0;
  bool degenerate = false;  // empty reconstruction target
};

struct RewardBreakdown {
  double r_info = 0.0;
  double r_recon = 0.0;
  double r_len = 0.0;
  double total = 0.0;
  std::size_t token_count = 0;

  json to_json() const;
};

double reward_info(const KeywordSummary& summary, const std::string& item_text,
                   backends::Embedder& embedder);

ReconReward reward_recon(const KeywordSummary& summary, const std::string& item_text,
                         backends::TokenScorer& scorer, const ReconOptions& options = {});

double reward_len(const KeywordSummary& summary);

RewardBreakdown total_reward(double r_info, double r_recon, double r_len,
                             const RewardWeights& weights);

RewardBreakdown score_summary(const KeywordSummary& summary, const std::string& item_text,
                              const backends::BackendSuite& suite,
                              const RewardWeights& weights,
                              const ReconOptions& recon = {});

// ---------------------------------------------------------------------------
// GRPO

struct GrpoConfig {
  std::size_t group_size = 8;
  double std_epsilon = 1e-8;
  double learning_rate = 0.1;
  std::size_t steps = 200;

  void validate() const;
};

// (r - mean) / (population std + eps), per group member.
std::vector<double> grpo_advantages(std::span<const double> rewards, double std_epsilon);

// Keyword subsets (sizes min_size..max_size) of the item's top `top` tokens,
// enumerated by size, then lexicographically by token position.
std::vector<std::vector<std::string>> candidate_space(const corpus::Item& item,
                                                      std::size_t top = 8,
                                                      std::size_t min_size = 2,
                                                      std::size_t max_size = 6);

struct GrpoStep {
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<double> advantages;
  double mean_reward = 0.0;
};

struct GrpoTrace {
  std::string item_id;
  std::vector<std::vector<std::string>> candidates;
  std::vector<RewardBreakdown> candidate_rewards;
  std::vector<GrpoStep> steps;
  std::vector<double> initial_logits;
  std::vector<double> final_logits;

  std::vector<double> mean_rewards() const;
  // Mean of the per-step mean rewards over [begin, end).
  double window_mean(std::size_t begin, std::size_t end) const;
};

// Categorical policy over `candidate_space(item)`, trained with group-relative
// advantages and the exact softmax score-function gradient.
GrpoTrace grpo_toy_optimize(const corpus::Item& item,
                            const std::vector<std::vector<std::string>>& candidates,
                            const backends::BackendSuite& suite,
                            const RewardWeights& weights, const ReconOptions& recon,
                            const GrpoConfig& config, std::uint64_t seed);

// One record per sampled completion: {item_id, prompt, completion,
// reward_breakdown, advantage, group_id}.
std::vector<json> advantage_records(const GrpoTrace& trace, const corpus::Item& item);

// ---------------------------------------------------------------------------
// Catalog summarization

struct SummarizeStats {
  std::size_t generated = 0;
  std::size_t resumed = 0;
  std::size_t retries = 0;
  std::size_t failures = 0;
};

// Summarizes every catalog item through `generator`, appending each record to
// `checkpoint` as it completes. Items already present in the checkpoint are
// not regenerated. Backend failures propagate with the checkpoint intact.
KeywordStore summarize_catalog(const corpus::ItemCatalog& catalog,
                               backends::Generator& generator,
                               const std::filesystem::path& checkpoint,
                               SummarizeStats* stats = nullptr);

}  // namespace mmsrarec::summarizer
