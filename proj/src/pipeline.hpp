#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "backends.hpp"
#include "recommender.hpp"
#include "retriever.hpp"
#include "summarizer.hpp"

namespace mmsrarec::pipeline {

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path workdir = "run";
  std::filesystem::path items_path = "data/items.jsonl";
  std::filesystem::path interactions_path = "data/interactions.jsonl";

  // corpus
  std::size_t min_user = 6;
  std::size_t min_item = 5;
  std::size_t history_length = 5;
  std::size_t num_negatives = 20;
  bool multi_prefix = false;
  std::vector<double> split = {8, 1, 1};

  // backend: "mock-oracle", "mock-random" or "remote:<url>"
  std::string backend = "mock-oracle";
  std::string embedding_endpoint;
  int timeout_ms = 30000;
  int retries = 2;
  int max_in_flight = 8;
  bool reveal_ground_truth = true;
  std::size_t summary_keywords = 4;
  recommender::YesNoTokens tokens;

  summarizer::RewardWeights weights;
  summarizer::ReconOptions recon;
  summarizer::GrpoConfig grpo;
  std::size_t grpo_items = 10;

  std::string encoder = "sasrec";  // or "bag"
  retriever::EncoderConfig encoder_config;
  std::size_t k = 3;

  std::vector<double> task_mix = {50, 20, 15, 15};
  std::size_t sft_instances = 0;
  std::size_t multiclass_candidates = 5;

  std::string eval_split = "test";
  std::size_t hr_k = 5;
  std::size_t workers = 1;

  json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static PipelineConfig from_json(const json& j);
  void validate() const;
  // Covers every setting except file locations, so moved runs compare equal.
  std::uint64_t hash() const;
};

// Defaults, then the file (if any), then MMSRAREC_* environment overrides.
// Relative paths in the file resolve against the file's directory.
PipelineConfig load_config(const std::optional<std::filesystem::path>& file);

// MMSRAREC_SEED=7, MMSRAREC_CORPUS__HISTORY_LENGTH=3: "__" separates nesting
// levels, names are matched case-insensitively against existing keys and
// values are parsed as JSON when possible, else taken as strings.
void apply_env_overrides(json& doc, const std::vector<std::pair<std::string, std::string>>& env);
std::vector<std::pair<std::string, std::string>> environment_overrides();

backends::BackendSuite make_backend(const PipelineConfig& config);

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "ingest",          "filter",      "impressions", "split",     "summarize", "grpo-toy",
      "train-retriever", "build-index", "retrieve",    "build-sft", "evaluate"};
  return names;
}

struct StageOutcome {
  std::string stage;
  bool skipped = false;
  double seconds = 0.0;
  json summary;
};

struct SweepRow {
  std::string value;
  double hr = 0.0;
  double ndcg = 0.0;
  double auc = 0.0;
  std::size_t scored = 0;
  std::size_t failed = 0;
};

struct SweepResult {
  std::string param;
  std::vector<SweepRow> rows;
  std::filesystem::path table_path;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  const PipelineConfig& config() const { return config_; }
  void set_logger(std::function<void(const std::string&)> log) { log_ = std::move(log); }

  StageOutcome run_stage(const std::string& name, bool force = false);
  std::vector<StageOutcome> run_all(bool force = false);

  // One evaluation per value of `param` ("n" or "k"); the table is rewritten
  // after every value so a failure leaves the finished rows on disk.
  SweepResult sweep(const std::string& param, const std::vector<std::size_t>& values,
                    bool force = false);

  std::filesystem::path artifact(const std::string& relative) const {
    return config_.workdir / relative;
  }

 private:
  struct Plan {
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> outputs;
    json slice;
  };

  Plan plan(const std::string& name) const;
  json execute(const std::string& name);
  void require_inputs(const std::string& name, const Plan& plan) const;
  bool up_to_date(const std::string& name, const Plan& plan, const json& manifest) const;
  json read_manifest() const;
  void write_manifest(const json& manifest) const;
  json config_echo() const;
  void log(const std::string& msg) const;

  json run_ingest();
  json run_filter();
  json run_impressions();
  json run_split();
  json run_summarize();
  json run_grpo_toy();
  json run_train_retriever();
  json run_build_index();
  json run_retrieve();
  json run_build_sft();
  json run_evaluate();

  PipelineConfig config_;
  std::function<void(const std::string&)> log_;
};

// Artifact paths, relative to the work directory.
namespace artifacts {
inline constexpr const char* kItems = "corpus/items.jsonl";
inline constexpr const char* kInteractions = "corpus/interactions.jsonl";
inline constexpr const char* kRejects = "corpus/rejects.jsonl";
inline constexpr const char* kFilteredItems = "corpus/filtered_items.jsonl";
inline constexpr const char* kFilteredInteractions = "corpus/filtered_interactions.jsonl";
inline constexpr const char* kImpressions = "impressions/all.jsonl";
inline constexpr const char* kTrain = "impressions/train.jsonl";
inline constexpr const char* kValid = "impressions/valid.jsonl";
inline constexpr const char* kTest = "impressions/test.jsonl";
inline constexpr const char* kKeywords = "summaries/keywords.jsonl";
inline constexpr const char* kSummaryCheckpoint = "summaries/checkpoint.jsonl";
inline constexpr const char* kGrpoTrace = "grpo/trace.json";
inline constexpr const char* kAdvantages = "grpo/advantages.jsonl";
inline constexpr const char* kEncoder = "retriever/encoder.bin";
inline constexpr const char* kTraining = "retriever/training.json";
inline constexpr const char* kEmbeddings = "retriever/train_embeddings.jsonl";
inline constexpr const char* kIndexManifest = "retriever/index_manifest.json";
inline constexpr const char* kNeighbors = "retriever/neighbors.jsonl";
inline constexpr const char* kSft = "sft/dataset.jsonl";
inline constexpr const char* kConversations = "sft/conversations.jsonl";
inline constexpr const char* kSftMix = "sft/mix.json";
inline constexpr const char* kReport = "reports/report.json";
inline constexpr const char* kReportCsv = "reports/report_users.csv";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace artifacts

}  // namespace mmsrarec::pipeline
