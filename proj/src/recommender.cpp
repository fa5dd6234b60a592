#include "recommender.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "promptkit.hpp"

namespace mmsrarec::recommender {

YesProbability yes_probability(const backends::TokenDistribution& dist,
                               const YesNoTokens& tokens) {
  const auto mass = [&](const std::vector<std::string>& set) {
    double m = 0.0;
    for (const auto& t : set) {
      auto it = dist.find(t);
      if (it != dist.end()) m += it->second;
    }
    return m;
  };
  const double yes = mass(tokens.yes);
  const double no = mass(tokens.no);
  if (!(yes + no > 0.0)) return {0.5, true};
  return {yes / (yes + no), false};
}

std::vector<ScoredCandidate> score_impression(const corpus::Impression& imp,
                                              const ImpressionContext& context,
                                              const corpus::ItemCatalog& catalog,
                                              const summarizer::KeywordStore& store,
                                              backends::FirstTokenScorer& scorer,
                                              const ScoreOptions& options,
                                              std::size_t* degenerate) {
  std::vector<std::string> ctx = context.user_keywords;
  if (context.neighbor_keywords) {
    ctx.insert(ctx.end(), context.neighbor_keywords->begin(), context.neighbor_keywords->end());
  }
  ctx = dedupe_stable(ctx);

  std::vector<std::string> ids;
  ids.reserve(imp.negatives.size() + 1);
  ids.push_back(imp.positive);
  ids.insert(ids.end(), imp.negatives.begin(), imp.negatives.end());

  std::vector<ScoredCandidate> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& id = ids[i];
    if (!catalog.contains(id)) {
      throw Error(ErrorCode::kCorpus, "candidate " + id + " is not in the catalog");
    }
    const auto prompt = promptkit::render_pointwise(context.user_keywords,
                                                    context.neighbor_keywords, catalog.at(id));
    backends::FirstTokenRequest req;
    req.prompt = prompt.text;
    req.media = prompt.media;
    req.top_k = options.top_k;
    req.features.context_keywords = ctx;
    req.features.candidate_keywords = store.keywords(id);
    req.features.candidate_is_ground_truth = options.reveal_ground_truth && i == 0;
    req.features.user_id = imp.user_id;
    req.features.item_id = id;
    const auto yp = yes_probability(scorer.first_token(req), options.tokens);
    if (yp.degenerate && degenerate != nullptr) ++*degenerate;
    if (!std::isfinite(yp.p)) throw Error(ErrorCode::kBackendUnavailable, "non-finite score");
    out.push_back({id, yp.p, 0, i == 0});
  }
  return out;
}

std::vector<ScoredCandidate> rank(std::vector<ScoredCandidate> scored) {
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.yes_prob != b.yes_prob) return a.yes_prob > b.yes_prob;
    return a.item_id < b.item_id;
  });
  for (std::size_t i = 0; i < scored.size(); ++i) scored[i].rank = i + 1;
  return scored;
}

std::size_t positive_rank(const std::vector<ScoredCandidate>& ranked) {
  std::size_t found = 0, count = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].is_positive) {
      found = ranked[i].rank != 0 ? ranked[i].rank : i + 1;
      ++count;
    }
  }
  if (count != 1) throw invalid_argument("impression must have exactly one positive");
  return found;
}

double hit_rate_at_k(std::size_t positive_rank, std::size_t k) {
  return positive_rank >= 1 && positive_rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(std::size_t positive_rank, std::size_t k) {
  if (positive_rank < 1 || positive_rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(positive_rank) + 1.0);
}

double auc(const std::vector<ScoredCandidate>& scored) {
  const ScoredCandidate* pos = nullptr;
  for (const auto& c : scored) {
    if (c.is_positive) {
      if (pos != nullptr) throw invalid_argument("impression must have exactly one positive");
      pos = &c;
    }
  }
  if (pos == nullptr) throw invalid_argument("impression must have exactly one positive");
  double wins = 0.0;
  std::size_t negatives = 0;
  for (const auto& c : scored) {
    if (c.is_positive) continue;
    ++negatives;
    if (pos->yes_prob > c.yes_prob) {
      wins += 1.0;
    } else if (pos->yes_prob == c.yes_prob) {
      wins += 0.5;
    }
  }
  if (negatives == 0) throw invalid_argument("AUC needs at least one negative");
  return wins / static_cast<double>(negatives);
}

// ---------------------------------------------------------------------------

json EvalReport::to_json() const {
  json users = json::array();
  for (const auto& r : rows) {
    users.push_back(json{{"user_id", r.user_id},
                         {"target_index", r.target_index},
                         {"positive_rank", r.positive_rank},
                         {"hit", r.hit},
                         {"ndcg", r.ndcg},
                         {"auc", r.auc}});
  }
  const std::string ks = std::to_string(k);
  return json{{"aggregates", {{"HR@" + ks, hr}, {"NDCG@" + ks, ndcg}, {"AUC", auc}}},
              {"counts",
               {{"impressions", impressions},
                {"scored", rows.size()},
                {"failed", failed},
                {"degenerate_distributions", degenerate_distributions}}},
              {"failures", failures},
              {"config", config},
              {"users", users}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "user_id,target_index,positive_rank,hit,ndcg,auc\n";
  for (const auto& r : rows) {
    os << r.user_id << ',' << r.target_index << ',' << r.positive_rank << ','
       << json(r.hit).dump() << ',' << json(r.ndcg).dump() << ',' << json(r.auc).dump()
       << '\n';
  }
  return os.str();
}

void EvalReport::save(const std::filesystem::path& json_path,
                      const std::filesystem::path& csv_path) const {
  write_file(json_path, to_json().dump(2) + "\n");
  write_file(csv_path, to_csv());
}

EvalReport evaluate(const std::vector<corpus::Impression>& impressions,
                    const std::vector<ImpressionContext>& contexts,
                    const corpus::ItemCatalog& catalog, const summarizer::KeywordStore& store,
                    backends::FirstTokenScorer& scorer, const EvalOptions& options) {
  if (impressions.empty()) throw invalid_argument("nothing to evaluate");
  if (contexts.size() != impressions.size()) {
    throw invalid_argument("one context per impression is required");
  }

  struct Outcome {
    std::optional<UserRow> row;
    std::string error;
    std::size_t degenerate = 0;
  };
  std::vector<Outcome> outcomes(impressions.size());

  const auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < impressions.size(); i += stride) {
      const auto& imp = impressions[i];
      auto& o = outcomes[i];
      try {
        auto ranked = rank(score_impression(imp, contexts[i], catalog, store, scorer,
                                            options.score, &o.degenerate));
        const std::size_t r = positive_rank(ranked);
        o.row = UserRow{imp.user_id, imp.target_index, r, hit_rate_at_k(r, options.k),
                        ndcg_at_k(r, options.k), auc(ranked)};
      } catch (const std::exception& e) {
        o.error = imp.user_id + ": " + e.what();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }

  EvalReport rep;
  rep.k = options.k;
  rep.config = options.config;
  rep.impressions = impressions.size();
  double hr = 0.0, nd = 0.0, au = 0.0;
  for (auto& o : outcomes) {
    rep.degenerate_distributions += o.degenerate;
    if (!o.row) {
      ++rep.failed;
      rep.failures.push_back(std::move(o.error));
      continue;
    }
    hr += o.row->hit;
    nd += o.row->ndcg;
    au += o.row->auc;
    rep.rows.push_back(std::move(*o.row));
  }
  if (rep.rows.empty()) {
    throw Error(ErrorCode::kBackendUnavailable,
                "every impression failed to score; first error: " + rep.failures.front());
  }
  const double n = static_cast<double>(rep.rows.size());
  rep.hr = 100.0 * hr / n;
  rep.ndcg = 100.0 * nd / n;
  rep.auc = 100.0 * au / n;
  return rep;
}

}  // namespace mmsrarec::recommender
