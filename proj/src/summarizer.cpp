#include "summarizer.hpp"

#include <cmath>
#include <fstream>

namespace mmsrarec::summarizer {

namespace {

std::vector<std::string> normalize_keywords(std::vector<std::string> raw) {
  std::vector<std::string> out;
  for (auto& kw : raw) {
    std::string t = trim(kw);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return dedupe_stable(out);
}

constexpr const char* kSummaryTemplateHead =
    "You are an expert in recommendation. Below is an Amazon product:\n"
    "\n"
    "Cover: <image>\n"
    "\n"
    "Title: ";

constexpr const char* kSummaryTemplateTail =
    "\n"
    "\n"
    "Please summarize the cover and content of this product with several keywords "
    "respectively. The summary should be concise and accurate. Output using the "
    "following template:\n"
    "\n"
    "Cover: <image keyword 1>,<image keyword 2> ...\n"
    "\n"
    "Content: <content keyword 1>,<content keyword 2> ...\n";

}  // namespace

KeywordSummary::KeywordSummary(std::string id, std::vector<std::string> cover_keywords,
                               std::vector<std::string> content_keywords)
    : item_id(std::move(id)),
      cover(normalize_keywords(std::move(cover_keywords))),
      content(normalize_keywords(std::move(content_keywords))) {}

std::vector<std::string> KeywordSummary::all() const {
  std::vector<std::string> out = cover;
  out.insert(out.end(), content.begin(), content.end());
  return out;
}

std::string KeywordSummary::render() const {
  return backends::render_keyword_lines(cover, content);
}

void KeywordStore::put(KeywordSummary summary, bool failed) {
  auto it = index_.find(summary.item_id);
  if (it != index_.end()) {
    entries_[it->second] = {std::move(summary), failed};
    return;
  }
  index_.emplace(summary.item_id, entries_.size());
  entries_.push_back({std::move(summary), failed});
}

const StoreEntry* KeywordStore::find(const std::string& item_id) const {
  auto it = index_.find(item_id);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::vector<std::string> KeywordStore::keywords(const std::string& item_id) const {
  const auto* e = find(item_id);
  return e ? e->summary.all() : std::vector<std::string>{};
}

std::size_t KeywordStore::failures() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.failed ? 1 : 0;
  return n;
}

json KeywordStore::entry_json(const StoreEntry& e) {
  return json{{"item_id", e.summary.item_id},
              {"cover_keywords", e.summary.cover},
              {"content_keywords", e.summary.content},
              {"failure_flag", e.failed}};
}

StoreEntry KeywordStore::entry_from_json(const json& j) {
  return {KeywordSummary(j.at("item_id").get<std::string>(),
                         j.at("cover_keywords").get<std::vector<std::string>>(),
                         j.at("content_keywords").get<std::vector<std::string>>()),
          j.value("failure_flag", false)};
}

KeywordStore KeywordStore::load(const std::filesystem::path& path) {
  KeywordStore store;
  for (const auto& j : read_jsonl(path)) {
    auto e = entry_from_json(j);
    store.put(std::move(e.summary), e.failed);
  }
  return store;
}

void KeywordStore::save(const std::filesystem::path& path) const {
  std::vector<json> records;
  records.reserve(entries_.size());
  for (const auto& e : entries_) records.push_back(entry_json(e));
  write_jsonl(path, records);
}

RenderedPrompt render_summary_prompt(const corpus::Item& item) {
  std::string text = kSummaryTemplateHead;
  text += item.title;
  text += "\n\nDescription: ";
  text += item.description;
  text += kSummaryTemplateTail;
  return {std::move(text), {item.image_ref}};
}

KeywordSummary parse_summary(const std::string& text, const std::string& item_id) {
  std::optional<std::string> cover, content;
  for (const auto& raw_line : split(text, '\n')) {
    const std::string line = trim(raw_line);
    if (starts_with_ci(line, "cover:")) {
      cover = line.substr(6);
    } else if (starts_with_ci(line, "content:")) {
      content = line.substr(8);
    }
  }
  if (!cover || !content) throw SummaryParseError(text);
  return KeywordSummary(item_id, split(*cover, ','), split(*content, ','));
}

void RewardWeights::validate() const {
  for (double w : {alpha, beta, gamma}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw invalid_argument("reward weights must be finite and non-negative");
    }
  }
  if (alpha == 0.0 && beta == 0.0 && gamma == 0.0) {
    throw invalid_argument("at least one reward weight must be positive");
  }
}

json RewardBreakdown::to_json() const {
  return json{{"r_info", r_info},
              {"r_recon", r_recon},
              {"r_len", r_len},
              {"total", total},
              {"token_count", token_count}};
}

double reward_info(const KeywordSummary& summary, const std::string& item_text,
                   backends::Embedder& embedder) {
  const auto a = embedder.embed(join(summary.all(), " "));
  const auto b = embedder.embed(item_text);
  return backends::cosine(a, b);
}

ReconReward reward_recon(const KeywordSummary& summary, const std::string& item_text,
                         backends::TokenScorer& scorer, const ReconOptions& options) {
  const auto tokens = backends::tokenize(item_text);
  if (tokens.empty()) return {-1.0, 0, true};
  const auto lps = scorer.score(summary.all(), tokens);
  if (lps.size() != tokens.size()) {
    throw Error(ErrorCode::kInternal, "token scorer returned a wrong-length result");
  }
  double sum = 0.0;
  for (double lp : lps) sum += lp;
  double perplexity = std::exp(-sum / static_cast<double>(tokens.size()));
  if (options.clamp) perplexity = std::min(perplexity, options.perplexity_cap);
  return {-perplexity, tokens.size(), false};
}

double reward_len(const KeywordSummary& summary) {
  return -static_cast<double>(summary.size());
}

RewardBreakdown total_reward(double r_info, double r_recon, double r_len,
                             const RewardWeights& weights) {
  RewardBreakdown b;
  b.r_info = r_info;
  b.r_recon = r_recon;
  b.r_len = r_len;
  b.total = weights.alpha * r_info + weights.beta * r_recon + weights.gamma * r_len;
  return b;
}

RewardBreakdown score_summary(const KeywordSummary& summary, const std::string& item_text,
                              const backends::BackendSuite& suite,
                              const RewardWeights& weights, const ReconOptions& recon) {
  const double info = reward_info(summary, item_text, *suite.embedder);
  const ReconReward rec = reward_recon(summary, item_text, *suite.token_scorer, recon);
  auto b = total_reward(info, rec.value, reward_len(summary), weights);
  b.token_count = rec.token_count;
  return b;
}

KeywordStore summarize_catalog(const corpus::ItemCatalog& catalog,
                               backends::Generator& generator,
                               const std::filesystem::path& checkpoint,
                               SummarizeStats* stats) {
  SummarizeStats local;
  SummarizeStats& st = stats ? *stats : local;

  std::unordered_map<std::string, StoreEntry> done;
  if (std::filesystem::exists(checkpoint)) {
    for (const auto& line : read_lines(checkpoint)) {
      try {
        auto e = KeywordStore::entry_from_json(json::parse(line.text));
        if (catalog.contains(e.summary.item_id)) done[e.summary.item_id] = std::move(e);
      } catch (const std::exception&) {
        // A torn trailing record from an interrupted run; regenerate it.
      }
    }
  } else if (checkpoint.has_parent_path()) {
    std::filesystem::create_directories(checkpoint.parent_path());
  }
  st.resumed = done.size();

  {
    std::ofstream out(checkpoint, std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + checkpoint.string());
    for (const auto& item : catalog) {
      if (done.count(item.item_id)) continue;
      const auto prompt = render_summary_prompt(item);
      backends::GenerationRequest req;
      req.prompt = prompt.text;
      req.media = prompt.media;
      req.subject = backends::SubjectItem{item.title, item.description, item.image_ref};

      StoreEntry entry{KeywordSummary(item.item_id, {}, {}), true};
      for (int attempt = 0; attempt < 2; ++attempt) {
        if (attempt) ++st.retries;
        const std::string text = generator.generate(req);
        try {
          entry = {parse_summary(text, item.item_id), false};
          break;
        } catch (const SummaryParseError&) {
        }
      }
      if (entry.failed) ++st.failures;
      ++st.generated;
      out << KeywordStore::entry_json(entry).dump() << '\n';
      out.flush();
      done[item.item_id] = std::move(entry);
    }
  }

  KeywordStore store;
  for (const auto& item : catalog) {
    auto& e = done.at(item.item_id);
    store.put(std::move(e.summary), e.failed);
  }
  store.save(checkpoint);
  return store;
}

}  // namespace mmsrarec::summarizer
