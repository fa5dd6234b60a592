#include "backends.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

namespace mmsrarec::backends {

namespace {

bool is_token_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
         (c >= 'A' && c <= 'Z') || c >= 0x80;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Recovers the subject item from a rendered summarization prompt when no
// structured subject was attached.
SubjectItem subject_from_prompt(const GenerationRequest& request) {
  SubjectItem s;
  if (!request.media.empty()) s.caption = request.media.front();
  const auto lines = split(request.prompt, '\n');
  bool in_description = false;
  std::vector<std::string> description;
  for (const auto& line : lines) {
    if (in_description) {
      if (line.rfind("Please summarize", 0) == 0) break;
      description.push_back(line);
    } else if (line.rfind("Title: ", 0) == 0) {
      s.title = line.substr(7);
    } else if (line.rfind("Description: ", 0) == 0) {
      description.push_back(line.substr(13));
      in_description = true;
    }
  }
  s.description = trim(join(description, "\n"));
  return s;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (is_token_byte(c)) {
      current += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a')
                                        : static_cast<char>(c);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<double> hash_embed(std::string_view text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  for (const auto& tok : tokenize(text)) {
    const std::uint64_t h = fnv1a64(tok);
    const double sign = ((h >> 8) & 1ULL) ? 1.0 : -1.0;
    v[h % dim] += sign;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

std::vector<std::string> top_tokens(std::string_view text, std::size_t m) {
  std::unordered_map<std::string, std::size_t> freq;
  for (auto& tok : tokenize(text)) ++freq[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < m; ++i) out.push_back(ranked[i].first);
  return out;
}

std::string render_keyword_lines(const std::vector<std::string>& cover,
                                 const std::vector<std::string>& content) {
  return "Cover: " + join(cover, ",") + "\nContent: " + join(content, ",");
}

std::string MockBackend::generate(const GenerationRequest& request) {
  const SubjectItem subject =
      request.subject ? *request.subject : subject_from_prompt(request);
  std::string text = subject.title;
  if (!subject.description.empty()) text += " " + subject.description;
  return render_keyword_lines(top_tokens(subject.caption, state_.summary_keywords),
                              top_tokens(text, state_.summary_keywords));
}

std::vector<double> MockBackend::score(
    const std::vector<std::string>& conditioning_keywords,
    const std::vector<std::string>& target_tokens) {
  std::unordered_map<std::string, double> counts;
  double total = 0.0;
  for (const auto& kw : conditioning_keywords) {
    for (auto& tok : tokenize(kw)) {
      counts[tok] += 1.0;
      total += 1.0;
    }
  }
  const double denom = total + state_.smoothing * state_.virtual_vocab;
  std::vector<double> out;
  out.reserve(target_tokens.size());
  for (const auto& tok : target_tokens) {
    auto it = counts.find(tok);
    const double c = it == counts.end() ? 0.0 : it->second;
    out.push_back(std::log((c + state_.smoothing) / denom));
  }
  return out;
}

double MockBackend::yes_mass(const PromptFeatures& f) const {
  if (state_.mode == MockMode::kRandom) {
    Rng rng(derive_seed(state_.seed, {"first-token", f.user_id, f.item_id}));
    return rng.uniform_open01();
  }
  double p = sigmoid(8.0 * (keyword_jaccard(f.context_keywords, f.candidate_keywords) - 0.05));
  if (f.candidate_is_ground_truth) p = std::max(p, 0.99);
  return p;
}

TokenDistribution MockBackend::first_token(const FirstTokenRequest& request) {
  const double p = yes_mass(request.features);
  return {{"yes", p}, {"no", 1.0 - p}};
}

BackendSuite make_mock_suite(MockState state) {
  auto mock = std::make_shared<MockBackend>(state);
  return BackendSuite{mock, mock, mock, mock, "mock-" + mode_name(state.mode)};
}

std::string mode_name(MockMode mode) {
  return mode == MockMode::kOracle ? "oracle" : "random";
}

double keyword_jaccard(const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
  std::set<std::string> sa, sb;
  for (const auto& kw : a)
    for (auto& t : tokenize(kw)) sa.insert(std::move(t));
  for (const auto& kw : b)
    for (auto& t : tokenize(kw)) sb.insert(std::move(t));
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  return static_cast<double>(inter) /
         static_cast<double>(sa.size() + sb.size() - inter);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw invalid_argument("cosine of mismatched dimensions");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace mmsrarec::backends
