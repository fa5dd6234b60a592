#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "backends.hpp"
#include "corpus.hpp"
#include "summarizer.hpp"

namespace mmsrarec::promptkit {

enum class TaskKind { kPointwise = 0, kMulticlass = 1, kReconstruction = 2, kSummarization = 3 };

inline constexpr std::array<TaskKind, 4> kAllTasks = {
    TaskKind::kPointwise, TaskKind::kMulticlass, TaskKind::kReconstruction,
    TaskKind::kSummarization};

std::string task_name(TaskKind kind);
TaskKind parse_task(std::string_view name);

struct PromptInstance {
  TaskKind task_kind = TaskKind::kPointwise;
  std::string text;
  std::vector<std::string> media;
  std::string target;  // empty at inference time

  // {task_kind, messages, images, target}
  json to_json() const;
  // {messages: [user, assistant], images}
  json to_conversation() const;
};

// Number of "<image>" slots in a rendered prompt.
std::size_t image_slots(const std::string& text);

// Keywords of the history items in chronological order, duplicates removed.
std::vector<std::string> user_keywords(const std::vector<std::string>& history,
                                       const summarizer::KeywordStore& store);

// `neighbor_keywords` == nullopt drops the similar-user section entirely
// (k = 0); an empty list keeps the section with an empty keyword line.
PromptInstance render_pointwise(const std::vector<std::string>& user_kw,
                                const std::optional<std::vector<std::string>>& neighbor_kw,
                                const corpus::Item& candidate);

PromptInstance render_multiclass(const std::vector<std::string>& user_kw,
                                 const std::optional<std::vector<std::string>>& neighbor_kw,
                                 const std::vector<corpus::Item>& candidates,
                                 std::size_t max_candidates = 5);

// Target is the item's title + description. Nullopt for an empty keyword list.
std::optional<PromptInstance> render_reconstruction(const std::vector<std::string>& keywords,
                                                    const corpus::Item& item);

// Summarization prompt with the stored summary as target. Nullopt when the
// store has no successful summary for the item.
std::optional<PromptInstance> render_summarization(const corpus::Item& item,
                                                   const summarizer::KeywordStore& store);

// ---------------------------------------------------------------------------
// SFT dataset

struct SftOptions {
  // pointwise / multiclass / reconstruction / summarization
  std::vector<double> mix = {50, 20, 15, 15};
  std::size_t total_instances = 0;  // 0: twice the number of train impressions
  std::size_t multiclass_candidates = 5;
  std::uint64_t seed = 0;
};

struct SftDataset {
  std::vector<PromptInstance> instances;
  std::array<std::size_t, 4> counts{};   // per TaskKind
  std::array<std::size_t, 4> planned{};  // largest-remainder allocation
  std::size_t skipped = 0;
  std::uint64_t seed = 0;

  json mix_report() const;
};

// Neighbor keywords per training user; a missing user or nullopt renders
// prompts without the similar-user section.
using NeighborKeywords = std::unordered_map<std::string, std::optional<std::vector<std::string>>>;

SftDataset build_sft_dataset(const std::vector<corpus::Impression>& train,
                             const corpus::ItemCatalog& catalog,
                             const summarizer::KeywordStore& store,
                             const NeighborKeywords& neighbors, const SftOptions& options);

void write_sft_dataset(const std::filesystem::path& path, const SftDataset& dataset);
void write_conversations(const std::filesystem::path& path, const SftDataset& dataset);

// -(1/N) * sum over instances and target tokens of log P. Throws on N = 0.
double sft_loss_reference(const std::vector<std::vector<double>>& target_logprobs);

// Per-instance target-token log-probabilities from a token scorer conditioned
// on the prompt tokens.
std::vector<std::vector<double>> score_targets(const std::vector<PromptInstance>& instances,
                                               backends::TokenScorer& scorer);

}  // namespace mmsrarec::promptkit
