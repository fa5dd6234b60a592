#include "retriever.hpp"

#include <algorithm>
#include <cmath>

namespace mmsrarec::retriever {

void EncoderConfig::validate(std::size_t history_length) const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw invalid_argument("encoder embed_dim must be a positive multiple of heads");
  }
  if (blocks == 0) throw invalid_argument("encoder needs at least one block");
  if (max_len < history_length) {
    throw invalid_argument("encoder max_len (" + std::to_string(max_len) +
                           ") is shorter than the history length (" +
                           std::to_string(history_length) + ")");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw invalid_argument("dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw invalid_argument("encoder learning rate must be positive");
}

json EncoderConfig::to_json() const {
  return json{{"embed_dim", embed_dim}, {"blocks", blocks},   {"heads", heads},
              {"max_len", max_len},     {"dropout", dropout}, {"epochs", epochs},
              {"batch_size", batch_size}, {"learning_rate", learning_rate}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.blocks = j.value("blocks", c.blocks);
  c.heads = j.value("heads", c.heads);
  c.max_len = j.value("max_len", c.max_len);
  c.dropout = j.value("dropout", c.dropout);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  return c;
}

json UserEmbedding::to_json() const {
  return json{{"user_id", user_id}, {"vector", vector}, {"encoder_version", encoder_version}};
}

UserEmbedding UserEmbedding::from_json(const json& j) {
  return {j.at("user_id").get<std::string>(), j.at("vector").get<std::vector<double>>(),
          j.at("encoder_version").get<std::string>()};
}

BagOfItemsEncoder::BagOfItemsEncoder(const corpus::ItemCatalog& catalog) {
  std::uint64_t h = fnv1a64("bag-of-items");
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    positions_.emplace(catalog[i].item_id, i);
    h = fnv1a64(catalog[i].item_id, fnv1a64("\x1f", h));
  }
  version_ = "bag:" + hex64(h);
}

UserEmbedding BagOfItemsEncoder::encode(const std::string& user_id,
                                        const std::vector<std::string>& history) const {
  std::vector<double> v(positions_.size(), 0.0);
  double weight = 1.0;
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    auto pos = positions_.find(*it);
    if (pos == positions_.end()) continue;
    v[pos->second] += weight;
    weight *= 0.9;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return {user_id, std::move(v), version_};
}

// ---------------------------------------------------------------------------

SimilarUserIndex::SimilarUserIndex(std::vector<UserEmbedding> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw invalid_argument("cannot build an empty similar-user index");
  version_ = entries_.front().encoder_version;
  const std::size_t dim = entries_.front().vector.size();
  norms_.reserve(entries_.size());
  for (const auto& e : entries_) {
    if (e.encoder_version != version_) {
      throw invalid_argument("mixed encoder versions in index: " + version_ + " vs " +
                             e.encoder_version);
    }
    if (e.vector.size() != dim) throw invalid_argument("mixed embedding dimensions in index");
    double n = 0.0;
    for (double x : e.vector) {
      if (!std::isfinite(x)) throw invalid_argument("non-finite embedding for " + e.user_id);
      n += x * x;
    }
    norms_.push_back(std::sqrt(n));
  }
}

bool SimilarUserIndex::contains(const std::string& user_id) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const UserEmbedding& e) { return e.user_id == user_id; });
}

std::uint64_t SimilarUserIndex::checksum() const {
  std::uint64_t h = fnv1a64(version_);
  for (const auto& e : entries_) {
    h = fnv1a64(e.user_id, fnv1a64("\x1f", h));
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(e.vector.data()),
                                 e.vector.size() * sizeof(double)),
                h);
  }
  return h;
}

json SimilarUserIndex::manifest() const {
  return json{{"encoder_version", version_},
              {"user_count", entries_.size()},
              {"checksum", hex64(checksum())}};
}

RetrievalResult SimilarUserIndex::retrieve(const UserEmbedding& query, std::size_t k,
                                           const std::string& exclude) const {
  if (k < 1) throw invalid_argument("k must be >= 1");
  if (query.vector.size() != entries_.front().vector.size()) {
    throw invalid_argument("query dimension does not match the index");
  }
  RetrievalResult out;
  out.query_user = query.user_id;

  double qn = 0.0;
  for (double x : query.vector) qn += x * x;
  qn = std::sqrt(qn);
  out.degenerate_query = qn == 0.0;

  std::vector<Neighbor> cands;
  cands.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.user_id == exclude) continue;
    double sim = 0.0;
    if (qn > 0.0 && norms_[i] > 0.0) {
      double dot = 0.0;
      for (std::size_t j = 0; j < e.vector.size(); ++j) dot += query.vector[j] * e.vector[j];
      sim = std::clamp(dot / (qn * norms_[i]), -1.0, 1.0);
    }
    cands.push_back({e.user_id, sim});
  }
  const auto better = [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.user_id < b.user_id;
  };
  const std::size_t take = std::min(k, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take),
                    cands.end(), better);
  cands.resize(take);
  out.neighbors = std::move(cands);
  out.short_result = take < k;
  return out;
}

RetrievalResult retrieve_similar(const SimilarUserIndex& index, const UserEmbedding& query,
                                 std::size_t k, const std::string& exclude) {
  return index.retrieve(query, k, exclude);
}

std::vector<std::string> NeighborBundle::keywords() const {
  std::vector<std::string> all;
  for (const auto& e : entries) all.insert(all.end(), e.keywords.begin(), e.keywords.end());
  return dedupe_stable(all);
}

NeighborBundle neighbor_context(
    const RetrievalResult& result, const summarizer::KeywordStore& store,
    const std::unordered_map<std::string, corpus::Impression>& train_by_user) {
  NeighborBundle bundle;
  for (const auto& n : result.neighbors) {
    auto it = train_by_user.find(n.user_id);
    if (it == train_by_user.end()) {
      bundle.warnings.push_back("neighbor " + n.user_id + " has no training impression");
      continue;
    }
    NeighborEntry entry{n.user_id, n.similarity, store.keywords(it->second.positive)};
    if (entry.keywords.empty()) {
      ++bundle.missing_keywords;
      bundle.warnings.push_back("no keywords for item " + it->second.positive +
                                " (neighbor " + n.user_id + ")");
    }
    bundle.entries.push_back(std::move(entry));
  }
  return bundle;
}

std::vector<std::string> context_sequence(
    const corpus::Impression& imp,
    const std::unordered_map<std::string, std::vector<std::string>>& sequences,
    std::size_t max_len) {
  std::vector<std::string> seq;
  auto it = sequences.find(imp.user_id);
  if (it != sequences.end()) {
    const auto& full = it->second;
    auto pos = std::find(full.begin(), full.end(), imp.positive);
    seq.assign(full.begin(), pos);
  }
  if (seq.empty()) seq = imp.history;
  if (seq.size() > max_len) {
    seq.erase(seq.begin(), seq.end() - static_cast<std::ptrdiff_t>(max_len));
  }
  return seq;
}

}  // namespace mmsrarec::retriever
