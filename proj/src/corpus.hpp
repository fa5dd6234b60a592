#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace mmsrarec::corpus {

// One catalog entry. `image_ref` is a media path for real backends or an
// inline caption consumed by the mock backend; empty means caption-less.
struct Item {
  std::string item_id;
  std::string title;
  std::string description;
  std::string image_ref;

  // Title and description joined by a single space (either may be empty).
  std::string text() const;

  json to_json() const;
  static Item from_json(const json& j);

  bool operator==(const Item&) const = default;
};

class ItemCatalog {
 public:
  ItemCatalog() = default;

  // Throws kCorpus on a duplicate or empty id.
  void add(Item item);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  bool contains(const std::string& item_id) const {
    return index_.count(item_id) != 0;
  }
  std::optional<std::size_t> position(const std::string& item_id) const;
  const Item& at(const std::string& item_id) const;
  const Item& operator[](std::size_t pos) const { return items_[pos]; }
  const std::vector<Item>& items() const { return items_; }

  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<Item> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;

  json to_json() const;
  bool operator==(const Interaction&) const = default;
};

struct Reject {
  std::size_t line_number;
  std::string reason;
};

struct ItemIngest {
  ItemCatalog catalog;
  std::vector<Reject> rejects;
};

struct InteractionIngest {
  std::vector<Interaction> interactions;
  std::vector<Reject> rejects;
  std::size_t duplicates = 0;
};

ItemIngest ingest_items(const std::filesystem::path& path);
InteractionIngest ingest_interactions(const std::filesystem::path& path);

// Exact (user, item, timestamp) duplicates removed; first occurrence kept.
std::vector<Interaction> dedupe_interactions(std::vector<Interaction> log,
                                             std::size_t* removed = nullptr);

struct FilterResult {
  std::vector<Interaction> interactions;
  ItemCatalog catalog;
  std::size_t rounds = 0;
};

// Iterates to the fixed point where every remaining user has >= min_user and
// every remaining item >= min_item interactions. Interactions naming items
// outside the catalog are dropped first.
FilterResult filter_min_activity(const std::vector<Interaction>& log,
                                 const ItemCatalog& catalog,
                                 std::size_t min_user, std::size_t min_item);

// A user's distinct items in (timestamp, item_id) order; a repeated item keeps
// its first occurrence only.
std::unordered_map<std::string, std::vector<std::string>> user_sequences(
    const std::vector<Interaction>& log);

struct Impression {
  std::string user_id;
  std::vector<std::string> history;
  std::string positive;
  std::vector<std::string> negatives;
  // Position of `positive` in the user's sequence; identifies the impression
  // when several prefixes of one user are emitted.
  std::size_t target_index = 0;

  json to_json() const;
  static Impression from_json(const json& j);
  bool operator==(const Impression&) const = default;
};

struct ImpressionOptions {
  std::size_t history_length = 5;
  std::size_t num_negatives = 20;
  std::uint64_t seed = 0;
  bool multi_prefix = false;
};

struct ImpressionBuild {
  std::vector<Impression> impressions;  // sorted by (user_id, target_index)
  std::size_t skipped_users = 0;
};

ImpressionBuild build_impressions(const std::vector<Interaction>& log,
                                  const ItemCatalog& catalog,
                                  const ImpressionOptions& options);

// Empty when the impression satisfies every structural invariant, otherwise
// the first violation found.
std::optional<std::string> validate_impression(const Impression& imp,
                                               const ItemCatalog& catalog,
                                               std::size_t num_negatives);

struct SplitSet {
  std::vector<Impression> train;
  std::vector<Impression> valid;
  std::vector<Impression> test;
  std::uint64_t seed = 0;
};

SplitSet split_impressions(std::vector<Impression> impressions,
                           const std::vector<double>& ratios,
                           std::uint64_t seed);

std::vector<Impression> read_impressions(const std::filesystem::path& path);
void write_impressions(const std::filesystem::path& path,
                       const std::vector<Impression>& impressions);
void write_items(const std::filesystem::path& path, const ItemCatalog& catalog);
ItemCatalog read_catalog(const std::filesystem::path& path);
void write_interactions(const std::filesystem::path& path,
                        const std::vector<Interaction>& log);
std::vector<Interaction> read_interactions(const std::filesystem::path& path);

}  // namespace mmsrarec::corpus
