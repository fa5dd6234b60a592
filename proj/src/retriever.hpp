#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"
#include "summarizer.hpp"

namespace mmsrarec::retriever {

struct EncoderConfig {
  std::size_t embed_dim = 32;
  std::size_t blocks = 1;
  std::size_t heads = 1;
  std::size_t max_len = 10;
  double dropout = 0.1;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.005;

  void validate(std::size_t history_length) const;
  json to_json() const;
  static EncoderConfig from_json(const json& j);
};

struct UserEmbedding {
  std::string user_id;
  std::vector<double> vector;
  std::string encoder_version;

  json to_json() const;
  static UserEmbedding from_json(const json& j);
};

// Maps a user's item sequence to a fixed-size vector.
class SequenceEncoder {
 public:
  virtual ~SequenceEncoder() = default;
  // `history` is chronological; unknown item ids are ignored.
  virtual UserEmbedding encode(const std::string& user_id,
                               const std::vector<std::string>& history) const = 0;
  virtual std::string version() const = 0;
  virtual std::size_t dimension() const = 0;
};

// Training-free encoder: one coordinate per catalog item, weight 0.9^(r-1) at
// recency rank r (1 = most recent), L2-normalized.
class BagOfItemsEncoder final : public SequenceEncoder {
 public:
  explicit BagOfItemsEncoder(const corpus::ItemCatalog& catalog);
  UserEmbedding encode(const std::string& user_id,
                       const std::vector<std::string>& history) const override;
  std::string version() const override { return version_; }
  std::size_t dimension() const override { return positions_.size(); }

 private:
  std::unordered_map<std::string, std::size_t> positions_;
  std::string version_;
};

class SasRecModel;

// Causal self-attention next-item model over item ids; the user embedding is
// the final hidden state at the most recent position.
class SasRecEncoder final : public SequenceEncoder {
 public:
  explicit SasRecEncoder(std::shared_ptr<const SasRecModel> model);

  UserEmbedding encode(const std::string& user_id,
                       const std::vector<std::string>& history) const override;
  std::string version() const override;
  std::size_t dimension() const override;

  // Scores of every catalog item as the next interaction, catalog order.
  std::vector<double> next_item_scores(const std::vector<std::string>& history) const;
  // Highest-scoring item id not already in `history` (ties to catalog order).
  // Sequences hold distinct items and training never contrasts a user's own
  // items, so seen items are excluded. Empty when no history item is known.
  std::string predict_next(const std::vector<std::string>& history) const;

  const SasRecModel& model() const { return *model_; }
  void save(const std::filesystem::path& path) const;
  static SasRecEncoder load(const std::filesystem::path& path);

 private:
  std::shared_ptr<const SasRecModel> model_;
  std::string version_;
};

struct TrainedEncoder {
  std::shared_ptr<SasRecEncoder> encoder;
  std::vector<double> loss_curve;  // mean training loss per epoch
  double initial_loss = 0.0;       // dropout-free loss before the first update
  double final_loss = 0.0;         // same fixed evaluation, after training
};

// `sequences` are chronological item-id lists from training-split users.
TrainedEncoder train_sequence_encoder(const std::vector<std::vector<std::string>>& sequences,
                                      const corpus::ItemCatalog& catalog,
                                      const EncoderConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Similar-user index

struct Neighbor {
  std::string user_id;
  double similarity = 0.0;
};

struct RetrievalResult {
  std::string query_user;
  std::vector<Neighbor> neighbors;
  bool short_result = false;     // fewer than k candidates existed
  bool degenerate_query = false; // zero query vector
};

// Immutable exact (linear scan) cosine index over training-split users.
class SimilarUserIndex {
 public:
  // Throws on an empty input or mixed encoder versions / dimensions.
  explicit SimilarUserIndex(std::vector<UserEmbedding> entries);

  std::size_t size() const { return entries_.size(); }
  const std::string& encoder_version() const { return version_; }
  const std::vector<UserEmbedding>& entries() const { return entries_; }
  bool contains(const std::string& user_id) const;
  std::uint64_t checksum() const;
  json manifest() const;

  RetrievalResult retrieve(const UserEmbedding& query, std::size_t k,
                           const std::string& exclude) const;

 private:
  std::vector<UserEmbedding> entries_;
  std::vector<double> norms_;
  std::string version_;
};

RetrievalResult retrieve_similar(const SimilarUserIndex& index, const UserEmbedding& query,
                                 std::size_t k, const std::string& exclude);

struct NeighborEntry {
  std::string user_id;
  double similarity = 0.0;
  std::vector<std::string> keywords;
};

struct NeighborBundle {
  std::vector<NeighborEntry> entries;
  std::size_t missing_keywords = 0;
  std::vector<std::string> warnings;

  // Keywords of all neighbors, neighbor order, duplicates removed.
  std::vector<std::string> keywords() const;
};

// For each neighbor, the keywords of its training-impression positive item.
NeighborBundle neighbor_context(
    const RetrievalResult& result, const summarizer::KeywordStore& store,
    const std::unordered_map<std::string, corpus::Impression>& train_by_user);

// Chronological item sequence of each impression's user strictly before its
// positive, truncated to the most recent `max_len` items. Falls back to the
// impression history when the user is absent from `log`.
std::vector<std::string> context_sequence(const corpus::Impression& imp,
                                          const std::unordered_map<std::string, std::vector<std::string>>& sequences,
                                          std::size_t max_len);

}  // namespace mmsrarec::retriever
