#include "corpus.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <tuple>
#include <unordered_set>

namespace mmsrarec::corpus {

namespace {

Error corpus_error(const std::string& what) {
  return Error(ErrorCode::kCorpus, what);
}

std::string require_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw std::invalid_argument(std::string("missing field ") + key);
  if (!it->is_string()) throw std::invalid_argument(std::string("field ") + key + " is not a string");
  return it->get<std::string>();
}

std::vector<std::string> require_string_list(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) {
    throw Error(ErrorCode::kParse, std::string("missing list field ") + key);
  }
  std::vector<std::string> out;
  for (const auto& v : *it) out.push_back(v.get<std::string>());
  return out;
}

}  // namespace

std::string Item::text() const {
  if (title.empty()) return description;
  if (description.empty()) return title;
  return title + " " + description;
}

json Item::to_json() const {
  return json{{"item_id", item_id},
              {"title", title},
              {"description", description},
              {"image_ref", image_ref}};
}

Item Item::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not an object");
  Item item{require_string(j, "item_id"), require_string(j, "title"),
            require_string(j, "description"), require_string(j, "image_ref")};
  if (item.item_id.empty()) throw std::invalid_argument("empty item_id");
  return item;
}

void ItemCatalog::add(Item item) {
  if (item.item_id.empty()) throw corpus_error("item with empty item_id");
  if (index_.count(item.item_id)) {
    throw corpus_error("duplicate item_id: " + item.item_id);
  }
  index_.emplace(item.item_id, items_.size());
  items_.push_back(std::move(item));
}

std::optional<std::size_t> ItemCatalog::position(
    const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const Item& ItemCatalog::at(const std::string& item_id) const {
  auto it = index_.find(item_id);
  if (it == index_.end()) throw corpus_error("unknown item_id: " + item_id);
  return items_[it->second];
}

json Interaction::to_json() const {
  return json{{"user_id", user_id}, {"item_id", item_id}, {"timestamp", timestamp}};
}

ItemIngest ingest_items(const std::filesystem::path& path) {
  ItemIngest out;
  for (const auto& line : read_lines(path)) {
    Item item;
    try {
      item = Item::from_json(json::parse(line.text));
    } catch (const std::exception& e) {
      out.rejects.push_back({line.line_number, e.what()});
      continue;
    }
    out.catalog.add(std::move(item));  // duplicates are fatal
  }
  return out;
}

InteractionIngest ingest_interactions(const std::filesystem::path& path) {
  InteractionIngest out;
  for (const auto& line : read_lines(path)) {
    try {
      const json j = json::parse(line.text);
      if (!j.is_object()) throw std::invalid_argument("record is not an object");
      Interaction x;
      x.user_id = require_string(j, "user_id");
      x.item_id = require_string(j, "item_id");
      auto ts = j.find("timestamp");
      if (ts == j.end() || !ts->is_number_integer()) {
        throw std::invalid_argument("timestamp missing or not an integer");
      }
      x.timestamp = ts->get<std::int64_t>();
      if (x.user_id.empty() || x.item_id.empty()) {
        throw std::invalid_argument("empty user_id or item_id");
      }
      if (x.timestamp < 0) throw std::invalid_argument("negative timestamp");
      out.interactions.push_back(std::move(x));
    } catch (const std::exception& e) {
      out.rejects.push_back({line.line_number, e.what()});
    }
  }
  out.interactions = dedupe_interactions(std::move(out.interactions), &out.duplicates);
  return out;
}

std::vector<Interaction> dedupe_interactions(std::vector<Interaction> log,
                                             std::size_t* removed) {
  std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
  std::vector<Interaction> out;
  out.reserve(log.size());
  for (auto& x : log) {
    if (seen.emplace(x.user_id, x.item_id, x.timestamp).second) {
      out.push_back(std::move(x));
    }
  }
  if (removed) *removed = log.size() - out.size();
  return out;
}

FilterResult filter_min_activity(const std::vector<Interaction>& log,
                                 const ItemCatalog& catalog,
                                 std::size_t min_user, std::size_t min_item) {
  if (min_user < 1 || min_item < 1) {
    throw invalid_argument("activity thresholds must be >= 1");
  }
  std::vector<Interaction> kept;
  for (const auto& x : log) {
    if (catalog.contains(x.item_id)) kept.push_back(x);
  }
  std::unordered_set<std::string> live_items;
  for (const auto& item : catalog) live_items.insert(item.item_id);

  FilterResult out;
  for (;;) {
    ++out.rounds;
    std::unordered_map<std::string, std::size_t> per_user, per_item;
    for (const auto& x : kept) {
      ++per_user[x.user_id];
      ++per_item[x.item_id];
    }
    std::unordered_set<std::string> drop_items;
    for (const auto& id : live_items) {
      auto it = per_item.find(id);
      if (it == per_item.end() || it->second < min_item) drop_items.insert(id);
    }
    std::unordered_set<std::string> drop_users;
    for (const auto& [user, count] : per_user) {
      if (count < min_user) drop_users.insert(user);
    }
    if (drop_items.empty() && drop_users.empty()) break;
    for (const auto& id : drop_items) live_items.erase(id);
    std::erase_if(kept, [&](const Interaction& x) {
      return drop_users.count(x.user_id) || drop_items.count(x.item_id);
    });
  }
  if (kept.empty() || live_items.empty()) {
    throw corpus_error("empty corpus after filtering");
  }
  for (const auto& item : catalog) {
    if (live_items.count(item.item_id)) out.catalog.add(item);
  }
  out.interactions = std::move(kept);
  return out;
}

std::unordered_map<std::string, std::vector<std::string>> user_sequences(
    const std::vector<Interaction>& log) {
  std::unordered_map<std::string, std::vector<const Interaction*>> by_user;
  for (const auto& x : log) by_user[x.user_id].push_back(&x);

  std::unordered_map<std::string, std::vector<std::string>> out;
  for (auto& [user, xs] : by_user) {
    std::sort(xs.begin(), xs.end(), [](const Interaction* a, const Interaction* b) {
      return std::tie(a->timestamp, a->item_id) < std::tie(b->timestamp, b->item_id);
    });
    std::unordered_set<std::string> seen;
    auto& seq = out[user];
    for (const auto* x : xs) {
      if (seen.insert(x->item_id).second) seq.push_back(x->item_id);
    }
  }
  return out;
}

json Impression::to_json() const {
  json j{{"user_id", user_id},
         {"history", history},
         {"positive", positive},
         {"negatives", negatives}};
  j["target_index"] = target_index;
  return j;
}

Impression Impression::from_json(const json& j) {
  Impression imp;
  imp.user_id = j.at("user_id").get<std::string>();
  imp.history = require_string_list(j, "history");
  imp.positive = j.at("positive").get<std::string>();
  imp.negatives = require_string_list(j, "negatives");
  imp.target_index = j.value("target_index", imp.history.size());
  return imp;
}

ImpressionBuild build_impressions(const std::vector<Interaction>& log,
                                  const ItemCatalog& catalog,
                                  const ImpressionOptions& options) {
  if (options.history_length < 1) throw invalid_argument("history length must be >= 1");

  std::vector<Interaction> known;
  for (const auto& x : log) {
    if (catalog.contains(x.item_id)) known.push_back(x);
  }
  auto sequences = user_sequences(known);
  std::vector<std::string> users;
  users.reserve(sequences.size());
  for (const auto& [user, seq] : sequences) users.push_back(user);
  std::sort(users.begin(), users.end());

  const std::size_t n = options.history_length;
  ImpressionBuild out;
  for (const auto& user : users) {
    const auto& seq = sequences[user];
    if (seq.size() < n + 1) {
      ++out.skipped_users;
      continue;
    }
    const std::unordered_set<std::string> interacted(seq.begin(), seq.end());
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < catalog.size(); ++i) {
      if (!interacted.count(catalog[i].item_id)) eligible.push_back(i);
    }
    if (eligible.size() < options.num_negatives) {
      throw corpus_error("catalog too small: user " + user + " has " +
                         std::to_string(eligible.size()) +
                         " eligible negatives, need " +
                         std::to_string(options.num_negatives));
    }

    const std::size_t first_target = options.multi_prefix ? n : seq.size() - 1;
    for (std::size_t t = first_target; t < seq.size(); ++t) {
      Impression imp;
      imp.user_id = user;
      imp.history.assign(seq.begin() + static_cast<std::ptrdiff_t>(t - n),
                         seq.begin() + static_cast<std::ptrdiff_t>(t));
      imp.positive = seq[t];
      imp.target_index = t;

      const std::string t_key = std::to_string(t);
      Rng rng(options.multi_prefix ? derive_seed(options.seed, {user, t_key})
                                   : derive_seed(options.seed, {user}));
      std::vector<std::size_t> pool = eligible;
      for (std::size_t k = 0; k < options.num_negatives; ++k) {
        const std::size_t j = k + rng.uniform_index(pool.size() - k);
        std::swap(pool[k], pool[j]);
        imp.negatives.push_back(catalog[pool[k]].item_id);
      }
      out.impressions.push_back(std::move(imp));
    }
  }
  return out;
}

std::optional<std::string> validate_impression(const Impression& imp,
                                               const ItemCatalog& catalog,
                                               std::size_t num_negatives) {
  if (std::find(imp.history.begin(), imp.history.end(), imp.positive) !=
      imp.history.end()) {
    return "positive appears in history";
  }
  if (imp.negatives.size() != num_negatives) return "wrong negative count";
  std::unordered_set<std::string> seen;
  for (const auto& neg : imp.negatives) {
    if (!seen.insert(neg).second) return "duplicate negative " + neg;
    if (neg == imp.positive) return "negative equals positive";
    if (std::find(imp.history.begin(), imp.history.end(), neg) != imp.history.end()) {
      return "negative " + neg + " appears in history";
    }
    if (!catalog.contains(neg)) return "negative " + neg + " not in catalog";
  }
  if (!catalog.contains(imp.positive)) return "positive not in catalog";
  return std::nullopt;
}

SplitSet split_impressions(std::vector<Impression> impressions,
                           const std::vector<double>& ratios,
                           std::uint64_t seed) {
  if (ratios.size() != 3) throw invalid_argument("split needs three ratios");
  for (double r : ratios) {
    if (!(r > 0.0)) throw invalid_argument("split ratios must be positive");
  }
  if (impressions.size() < ratios.size()) {
    throw corpus_error("fewer impressions (" + std::to_string(impressions.size()) +
                       ") than split parts");
  }
  std::sort(impressions.begin(), impressions.end(),
            [](const Impression& a, const Impression& b) {
              return std::tie(a.user_id, a.target_index) <
                     std::tie(b.user_id, b.target_index);
            });
  Rng rng(derive_seed(seed, {"split"}));
  rng.shuffle(impressions);

  const auto counts = largest_remainder(impressions.size(), ratios);
  SplitSet out;
  out.seed = seed;
  auto it = impressions.begin();
  auto take = [&](std::vector<Impression>& dst, std::size_t count) {
    dst.assign(std::make_move_iterator(it),
               std::make_move_iterator(it + static_cast<std::ptrdiff_t>(count)));
    it += static_cast<std::ptrdiff_t>(count);
  };
  take(out.train, counts[0]);
  take(out.valid, counts[1]);
  take(out.test, counts[2]);
  return out;
}

std::vector<Impression> read_impressions(const std::filesystem::path& path) {
  std::vector<Impression> out;
  for (const auto& j : read_jsonl(path)) out.push_back(Impression::from_json(j));
  return out;
}

void write_impressions(const std::filesystem::path& path,
                       const std::vector<Impression>& impressions) {
  std::vector<json> records;
  records.reserve(impressions.size());
  for (const auto& imp : impressions) records.push_back(imp.to_json());
  write_jsonl(path, records);
}

void write_items(const std::filesystem::path& path, const ItemCatalog& catalog) {
  std::vector<json> records;
  for (const auto& item : catalog) records.push_back(item.to_json());
  write_jsonl(path, records);
}

ItemCatalog read_catalog(const std::filesystem::path& path) {
  ItemCatalog catalog;
  for (const auto& j : read_jsonl(path)) catalog.add(Item::from_json(j));
  return catalog;
}

void write_interactions(const std::filesystem::path& path,
                        const std::vector<Interaction>& log) {
  std::vector<json> records;
  records.reserve(log.size());
  for (const auto& x : log) records.push_back(x.to_json());
  write_jsonl(path, records);
}

std::vector<Interaction> read_interactions(const std::filesystem::path& path) {
  std::vector<Interaction> out;
  for (const auto& j : read_jsonl(path)) {
    out.push_back({j.at("user_id").get<std::string>(),
                   j.at("item_id").get<std::string>(),
                   j.at("timestamp").get<std::int64_t>()});
  }
  return out;
}

}  // namespace mmsrarec::corpus
