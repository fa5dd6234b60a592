#include "promptkit.hpp"

#include <algorithm>
#include <map>

namespace mmsrarec::promptkit {

namespace {

constexpr const char* kUserSection =
    "You are an expert in recommendation. Below is the list of keywords of the products "
    "that the user prefers:\n\n";
constexpr const char* kNeighborSection =
    "Below are the keywords of products that relevant users prefer:\n\n";
constexpr const char* kPointwiseQuestion =
    "Based on the above information, please predict whether the user is likely to "
    "purchase this product. Answer with 'Yes' or 'No'.\n";
constexpr const char* kMulticlassQuestion =
    "Based on the above information, please predict which candidate products the user "
    "will purchase. Answer with the serial number of this product.\n";
constexpr const char* kReconstructionHead =
    "You are an expert in recommendation. Below are the keywords of a product:\n\n";
constexpr const char* kReconstructionQuestion =
    "Based on these keywords, please describe this product in its entirety.\n";

std::string keyword_line(const std::vector<std::string>& kws) { return join(kws, ", "); }

std::string context_block(const std::vector<std::string>& user_kw,
                          const std::optional<std::vector<std::string>>& neighbor_kw) {
  std::string s = kUserSection;
  s += keyword_line(user_kw);
  s += "\n\n";
  if (neighbor_kw) {
    s += kNeighborSection;
    s += keyword_line(*neighbor_kw);
    s += "\n\n";
  }
  return s;
}

std::string product_line(const corpus::Item& item) {
  return "Cover: <image> Title: " + item.title + " Description: " + item.description;
}

}  // namespace

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kPointwise: return "pointwise";
    case TaskKind::kMulticlass: return "multiclass";
    case TaskKind::kReconstruction: return "reconstruction";
    case TaskKind::kSummarization: return "summarization";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view name) {
  for (auto k : kAllTasks) {
    if (task_name(k) == name) return k;
  }
  throw invalid_argument("unknown task kind: " + std::string(name));
}

json PromptInstance::to_json() const {
  return json{{"task_kind", task_name(task_kind)},
              {"messages", json::array({json{{"role", "user"}, {"content", text}}})},
              {"images", media},
              {"target", target}};
}

json PromptInstance::to_conversation() const {
  return json{{"messages", json::array({json{{"role", "user"}, {"content", text}},
                                        json{{"role", "assistant"}, {"content", target}}})},
              {"images", media}};
}

std::size_t image_slots(const std::string& text) {
  std::size_t n = 0;
  for (auto pos = text.find("<image>"); pos != std::string::npos;
       pos = text.find("<image>", pos + 7)) {
    ++n;
  }
  return n;
}

std::vector<std::string> user_keywords(const std::vector<std::string>& history,
                                       const summarizer::KeywordStore& store) {
  std::vector<std::string> all;
  for (const auto& id : history) {
    auto kws = store.keywords(id);
    all.insert(all.end(), kws.begin(), kws.end());
  }
  return dedupe_stable(all);
}

PromptInstance render_pointwise(const std::vector<std::string>& user_kw,
                                const std::optional<std::vector<std::string>>& neighbor_kw,
                                const corpus::Item& candidate) {
  PromptInstance p;
  p.task_kind = TaskKind::kPointwise;
  p.text = context_block(user_kw, neighbor_kw);
  p.text += "The next product: " + product_line(candidate) + "\n\n";
  p.text += kPointwiseQuestion;
  p.media = {candidate.image_ref};
  return p;
}

PromptInstance render_multiclass(const std::vector<std::string>& user_kw,
                                 const std::optional<std::vector<std::string>>& neighbor_kw,
                                 const std::vector<corpus::Item>& candidates,
                                 std::size_t max_candidates) {
  if (candidates.size() < 2) throw invalid_argument("multiclass prompt needs >= 2 candidates");
  if (candidates.size() > max_candidates) {
    throw invalid_argument("multiclass prompt allows at most " +
                           std::to_string(max_candidates) + " candidates");
  }
  PromptInstance p;
  p.task_kind = TaskKind::kMulticlass;
  p.text = context_block(user_kw, neighbor_kw);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    p.text += "Candidate " + std::to_string(i + 1) + ": " + product_line(candidates[i]) + "\n\n";
    p.media.push_back(candidates[i].image_ref);
  }
  p.text += kMulticlassQuestion;
  return p;
}

std::optional<PromptInstance> render_reconstruction(const std::vector<std::string>& keywords,
                                                    const corpus::Item& item) {
  if (keywords.empty()) return std::nullopt;
  PromptInstance p;
  p.task_kind = TaskKind::kReconstruction;
  p.text = kReconstructionHead;
  p.text += keyword_line(keywords);
  p.text += "\n\n";
  p.text += kReconstructionQuestion;
  p.target = item.text();
  return p;
}

std::optional<PromptInstance> render_summarization(const corpus::Item& item,
                                                   const summarizer::KeywordStore& store) {
  const auto* entry = store.find(item.item_id);
  if (entry == nullptr || entry->failed) return std::nullopt;
  auto prompt = summarizer::render_summary_prompt(item);
  PromptInstance p;
  p.task_kind = TaskKind::kSummarization;
  p.text = std::move(prompt.text);
  p.media = std::move(prompt.media);
  p.target = entry->summary.render();
  return p;
}

// ---------------------------------------------------------------------------

json SftDataset::mix_report() const {
  json counts_j = json::object(), planned_j = json::object();
  for (auto k : kAllTasks) {
    counts_j[task_name(k)] = counts[static_cast<int>(k)];
    planned_j[task_name(k)] = planned[static_cast<int>(k)];
  }
  return json{{"counts", counts_j}, {"planned", planned_j},
              {"skipped", skipped}, {"seed", seed}, {"total", instances.size()}};
}

namespace {

struct Keyed {
  std::string key;
  TaskKind kind;
  std::size_t index;
  PromptInstance instance;
};

std::optional<std::vector<std::string>> neighbors_of(const NeighborKeywords& neighbors,
                                                     const std::string& user_id) {
  auto it = neighbors.find(user_id);
  if (it == neighbors.end()) return std::nullopt;
  return it->second;
}

}  // namespace

SftDataset build_sft_dataset(const std::vector<corpus::Impression>& train_in,
                             const corpus::ItemCatalog& catalog,
                             const summarizer::KeywordStore& store,
                             const NeighborKeywords& neighbors, const SftOptions& options) {
  if (options.mix.size() != 4) throw invalid_argument("task mix needs exactly 4 weights");
  for (double w : options.mix) {
    if (!(w >= 0.0)) throw invalid_argument("task mix weights must be >= 0");
  }
  if (options.multiclass_candidates < 2) {
    throw invalid_argument("multiclass candidate count must be >= 2");
  }

  SftDataset ds;
  ds.seed = options.seed;
  if (train_in.empty()) return ds;

  std::vector<corpus::Impression> train = train_in;
  std::sort(train.begin(), train.end(), [](const auto& a, const auto& b) {
    return std::tie(a.user_id, a.target_index) < std::tie(b.user_id, b.target_index);
  });

  const std::size_t total =
      options.total_instances > 0 ? options.total_instances : 2 * train.size();
  auto alloc = largest_remainder(total, options.mix);
  // Pointwise instances come in Yes/No pairs.
  if (alloc[0] % 2 == 1) --alloc[0];
  for (std::size_t i = 0; i < 4; ++i) ds.planned[i] = alloc[i];

  std::vector<Keyed> out;
  std::map<std::pair<std::string, int>, std::size_t> next_index;
  auto emit = [&](const std::string& key, PromptInstance inst) {
    const int kind = static_cast<int>(inst.task_kind);
    const std::size_t idx = next_index[{key, kind}]++;
    ++ds.counts[kind];
    out.push_back({key, inst.task_kind, idx, std::move(inst)});
  };

  const auto context_for = [&](const corpus::Impression& imp) {
    return std::make_pair(user_keywords(imp.history, store), neighbors_of(neighbors, imp.user_id));
  };

  // Pointwise: one Yes and one No instance per pair, cycling over impressions.
  for (std::size_t pair = 0; pair < alloc[0] / 2; ++pair) {
    const auto& imp = train[pair % train.size()];
    const std::size_t round = pair / train.size();
    if (imp.negatives.empty() || !catalog.contains(imp.positive)) {
      ds.skipped += 2;
      continue;
    }
    Rng rng(derive_seed(options.seed, {"sft-pointwise", imp.user_id,
                                       std::to_string(imp.target_index),
                                       std::to_string(round)}));
    const auto& neg_id = imp.negatives[rng.uniform_index(imp.negatives.size())];
    if (!catalog.contains(neg_id)) {
      ds.skipped += 2;
      continue;
    }
    const auto [ukw, nkw] = context_for(imp);
    auto pos = render_pointwise(ukw, nkw, catalog.at(imp.positive));
    pos.target = "Yes";
    auto neg = render_pointwise(ukw, nkw, catalog.at(neg_id));
    neg.target = "No";
    emit(imp.user_id, std::move(pos));
    emit(imp.user_id, std::move(neg));
  }

  // Multiclass: the positive at a seeded serial position among sampled negatives.
  const std::size_t c = options.multiclass_candidates;
  for (std::size_t m = 0; m < alloc[1]; ++m) {
    const auto& imp = train[m % train.size()];
    const std::size_t round = m / train.size();
    if (imp.negatives.size() < c - 1 || !catalog.contains(imp.positive)) {
      ++ds.skipped;
      continue;
    }
    Rng rng(derive_seed(options.seed, {"sft-multiclass", imp.user_id,
                                       std::to_string(imp.target_index),
                                       std::to_string(round)}));
    std::vector<std::string> pool = imp.negatives;
    for (std::size_t i = 0; i < c - 1; ++i) {
      std::swap(pool[i], pool[i + rng.uniform_index(pool.size() - i)]);
    }
    pool.resize(c - 1);
    const std::size_t slot = rng.uniform_index(c);
    pool.insert(pool.begin() + static_cast<std::ptrdiff_t>(slot), imp.positive);
    std::vector<corpus::Item> cands;
    bool ok = true;
    for (const auto& id : pool) {
      if (!catalog.contains(id)) {
        ok = false;
        break;
      }
      cands.push_back(catalog.at(id));
    }
    if (!ok) {
      ++ds.skipped;
      continue;
    }
    const auto [ukw, nkw] = context_for(imp);
    try {
      auto inst = render_multiclass(ukw, nkw, cands, c);
      inst.target = std::to_string(slot + 1);
      emit(imp.user_id, std::move(inst));
    } catch (const Error&) {
      ++ds.skipped;
    }
  }

  // Reconstruction and summarization cycle over items seen in training
  // impressions (history and positive), in item_id order.
  std::vector<std::string> seen;
  for (const auto& imp : train) {
    seen.insert(seen.end(), imp.history.begin(), imp.history.end());
    seen.push_back(imp.positive);
  }
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());

  std::vector<PromptInstance> recon_pool, summ_pool;
  std::vector<std::string> recon_keys, summ_keys;
  for (const auto& id : seen) {
    if (!catalog.contains(id)) continue;
    const auto& item = catalog.at(id);
    if (auto r = render_reconstruction(store.keywords(id), item)) {
      recon_pool.push_back(std::move(*r));
      recon_keys.push_back(id);
    }
    if (auto s = render_summarization(item, store)) {
      summ_pool.push_back(std::move(*s));
      summ_keys.push_back(id);
    }
  }
  const auto cycle = [&](std::size_t want, const std::vector<PromptInstance>& pool,
                         const std::vector<std::string>& keys) {
    if (pool.empty()) {
      ds.skipped += want;
      return;
    }
    for (std::size_t i = 0; i < want; ++i) emit(keys[i % pool.size()], pool[i % pool.size()]);
  };
  cycle(alloc[2], recon_pool, recon_keys);
  cycle(alloc[3], summ_pool, summ_keys);

  std::stable_sort(out.begin(), out.end(), [](const Keyed& a, const Keyed& b) {
    return std::tie(a.key, a.kind, a.index) < std::tie(b.key, b.kind, b.index);
  });
  ds.instances.reserve(out.size());
  for (auto& k : out) ds.instances.push_back(std::move(k.instance));
  return ds;
}

void write_sft_dataset(const std::filesystem::path& path, const SftDataset& dataset) {
  std::vector<json> records;
  records.reserve(dataset.instances.size());
  for (const auto& inst : dataset.instances) records.push_back(inst.to_json());
  write_jsonl(path, records);
}

void write_conversations(const std::filesystem::path& path, const SftDataset& dataset) {
  std::vector<json> records;
  records.reserve(dataset.instances.size());
  for (const auto& inst : dataset.instances) records.push_back(inst.to_conversation());
  write_jsonl(path, records);
}

double sft_loss_reference(const std::vector<std::vector<double>>& target_logprobs) {
  if (target_logprobs.empty()) throw invalid_argument("SFT loss over an empty dataset");
  double sum = 0.0;
  for (const auto& inst : target_logprobs) {
    for (double lp : inst) sum += lp;
  }
  return -sum / static_cast<double>(target_logprobs.size());
}

std::vector<std::vector<double>> score_targets(const std::vector<PromptInstance>& instances,
                                               backends::TokenScorer& scorer) {
  std::vector<std::vector<double>> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    out.push_back(scorer.score(backends::tokenize(inst.text), backends::tokenize(inst.target)));
  }
  return out;
}

}  // namespace mmsrarec::promptkit
