#include "mmsrarec/mmsrarec.h"

#include <cstring>
#include <iostream>

#include "pipeline.hpp"
#include "recommender.hpp"
#include "retriever.hpp"
#include "summarizer.hpp"
#include "synth.hpp"

using namespace mmsrarec;

struct mmsr_pipeline {
  std::unique_ptr<pipeline::Pipeline> impl;
};

struct mmsr_index {
  std::unique_ptr<retriever::SimilarUserIndex> impl;
};

namespace {

thread_local std::string g_last_error;

mmsr_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return MMSR_INVALID_ARGUMENT;
    case ErrorCode::kIo: return MMSR_IO;
    case ErrorCode::kParse: return MMSR_PARSE;
    case ErrorCode::kCorpus: return MMSR_CORPUS;
    case ErrorCode::kBackendUnavailable: return MMSR_BACKEND_UNAVAILABLE;
    case ErrorCode::kCapability: return MMSR_CAPABILITY;
    case ErrorCode::kMissingArtifact: return MMSR_MISSING_ARTIFACT;
    case ErrorCode::kInternal: return MMSR_INTERNAL;
  }
  return MMSR_INTERNAL;
}

template <typename Fn>
mmsr_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return MMSR_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return MMSR_PARSE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MMSR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MMSR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const json& j) {
  if (out != nullptr) *out = dup_string(j.dump(2));
}

void require(bool ok, const char* what) {
  if (!ok) throw invalid_argument(what);
}

json outcome_json(const pipeline::StageOutcome& o) {
  return {{"stage", o.stage}, {"skipped", o.skipped}, {"seconds", o.seconds},
          {"summary", o.summary}};
}

}  // namespace

extern "C" {

const char* mmsr_version(void) { return "0.1.0"; }

const char* mmsr_status_name(mmsr_status status) {
  switch (status) {
    case MMSR_OK: return "ok";
    case MMSR_INVALID_ARGUMENT: return "invalid-argument";
    case MMSR_IO: return "io";
    case MMSR_PARSE: return "parse";
    case MMSR_CORPUS: return "corpus";
    case MMSR_BACKEND_UNAVAILABLE: return "backend-unavailable";
    case MMSR_CAPABILITY: return "capability";
    case MMSR_MISSING_ARTIFACT: return "missing-artifact";
    case MMSR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* mmsr_last_error(void) { return g_last_error.c_str(); }

void mmsr_string_free(char* s) { std::free(s); }

mmsr_status mmsr_pipeline_create(const char* config_path, const char* overrides_json,
                                 mmsr_pipeline** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be NULL");
    *out = nullptr;
    std::optional<std::filesystem::path> file;
    if (config_path != nullptr && *config_path != '\0') file = config_path;
    auto cfg = pipeline::load_config(file);
    if (overrides_json != nullptr && *overrides_json != '\0') {
      json doc = cfg.to_json();
      doc.merge_patch(json::parse(overrides_json));
      cfg = pipeline::PipelineConfig::from_json(doc);
    }
    auto p = std::make_unique<mmsr_pipeline>();
    p->impl = std::make_unique<pipeline::Pipeline>(std::move(cfg));
    *out = p.release();
  });
}

void mmsr_pipeline_destroy(mmsr_pipeline* pipeline) { delete pipeline; }

mmsr_status mmsr_pipeline_set_verbose(mmsr_pipeline* p, int verbose) {
  return guarded([&] {
    require(p != nullptr, "pipeline must not be NULL");
    if (verbose) {
      p->impl->set_logger([](const std::string& msg) { std::cerr << msg << '\n'; });
    } else {
      p->impl->set_logger(nullptr);
    }
  });
}

mmsr_status mmsr_pipeline_config(const mmsr_pipeline* p, char** config_json) {
  return guarded([&] {
    require(p != nullptr && config_json != nullptr, "NULL argument");
    emit(config_json, p->impl->config().to_json());
  });
}

mmsr_status mmsr_pipeline_run_stage(mmsr_pipeline* p, const char* stage, int force,
                                    char** summary_json) {
  return guarded([&] {
    require(p != nullptr && stage != nullptr, "NULL argument");
    emit(summary_json, outcome_json(p->impl->run_stage(stage, force != 0)));
  });
}

mmsr_status mmsr_pipeline_run_all(mmsr_pipeline* p, int force, char** summary_json) {
  return guarded([&] {
    require(p != nullptr, "pipeline must not be NULL");
    json all = json::array();
    for (const auto& o : p->impl->run_all(force != 0)) all.push_back(outcome_json(o));
    emit(summary_json, all);
  });
}

mmsr_status mmsr_pipeline_sweep(mmsr_pipeline* p, const char* param, const size_t* values,
                                size_t count, int force, char** table_json) {
  return guarded([&] {
    require(p != nullptr && param != nullptr, "NULL argument");
    require(values != nullptr || count == 0, "values must not be NULL");
    const auto res =
        p->impl->sweep(param, std::vector<std::size_t>(values, values + count), force != 0);
    json rows = json::array();
    for (const auto& r : res.rows) {
      rows.push_back({{"value", r.value}, {"hr", r.hr}, {"ndcg", r.ndcg}, {"auc", r.auc},
                      {"scored", r.scored}, {"failed", r.failed}});
    }
    emit(table_json, {{"param", res.param}, {"table", res.table_path.string()}, {"rows", rows}});
  });
}

mmsr_status mmsr_synth(const char* profile, uint64_t seed, size_t users, const char* out_dir,
                       char** summary_json) {
  return guarded([&] {
    require(profile != nullptr && out_dir != nullptr, "NULL argument");
    synth::SynthOptions opt;
    opt.profile = profile;
    opt.seed = seed;
    opt.users = users;
    const auto corpus = synth::synth_corpus(opt);
    synth::write_synth(out_dir, corpus);
    emit(summary_json, {{"profile", opt.profile},
                        {"seed", seed},
                        {"items", corpus.catalog.size()},
                        {"interactions", corpus.interactions.size()},
                        {"out_dir", out_dir}});
  });
}

mmsr_status mmsr_tokenize(const char* text, char** tokens_json) {
  return guarded([&] {
    require(text != nullptr && tokens_json != nullptr, "NULL argument");
    emit(tokens_json, backends::tokenize(text));
  });
}

mmsr_status mmsr_reward_breakdown(const char* summary_text, const char* item_text,
                                  const char* weights_json, char** breakdown_json) {
  return guarded([&] {
    require(summary_text != nullptr && item_text != nullptr && breakdown_json != nullptr,
            "NULL argument");
    summarizer::RewardWeights w;
    summarizer::ReconOptions recon;
    if (weights_json != nullptr && *weights_json != '\0') {
      const json j = json::parse(weights_json);
      w.alpha = j.value("alpha", w.alpha);
      w.beta = j.value("beta", w.beta);
      w.gamma = j.value("gamma", w.gamma);
      recon.clamp = j.value("recon_clamp", recon.clamp);
    }
    const auto summary = summarizer::parse_summary(summary_text, "");
    const auto suite = backends::make_mock_suite({});
    emit(breakdown_json, summarizer::score_summary(summary, item_text, suite, w, recon).to_json());
  });
}

mmsr_status mmsr_grpo_advantages(const double* rewards, size_t count, double std_epsilon,
                                 double* advantages_out) {
  return guarded([&] {
    require(rewards != nullptr && advantages_out != nullptr, "NULL argument");
    const auto adv = summarizer::grpo_advantages({rewards, count}, std_epsilon);
    std::copy(adv.begin(), adv.end(), advantages_out);
  });
}

mmsr_status mmsr_rank_metrics(const double* scores, const char* const* item_ids, size_t count,
                              size_t positive, size_t k, size_t* rank_out, double* hr_out,
                              double* ndcg_out, double* auc_out) {
  return guarded([&] {
    require(scores != nullptr && item_ids != nullptr, "NULL argument");
    require(positive < count, "positive index out of range");
    std::vector<recommender::ScoredCandidate> cands;
    for (size_t i = 0; i < count; ++i) {
      require(item_ids[i] != nullptr, "NULL item id");
      cands.push_back({item_ids[i], scores[i], 0, i == positive});
    }
    const auto ranked = recommender::rank(cands);
    const auto r = recommender::positive_rank(ranked);
    if (rank_out) *rank_out = r;
    if (hr_out) *hr_out = recommender::hit_rate_at_k(r, k);
    if (ndcg_out) *ndcg_out = recommender::ndcg_at_k(r, k);
    if (auc_out) *auc_out = recommender::auc(cands);
  });
}

mmsr_status mmsr_index_create(const double* vectors, size_t count, size_t dim,
                              const char* const* user_ids, const char* encoder_version,
                              mmsr_index** out) {
  return guarded([&] {
    require(out != nullptr, "out must not be NULL");
    *out = nullptr;
    require(count == 0 || (vectors != nullptr && user_ids != nullptr), "NULL argument");
    std::vector<retriever::UserEmbedding> embs;
    for (size_t i = 0; i < count; ++i) {
      require(user_ids[i] != nullptr, "NULL user id");
      embs.push_back({user_ids[i], std::vector<double>(vectors + i * dim, vectors + (i + 1) * dim),
                      encoder_version ? encoder_version : ""});
    }
    auto idx = std::make_unique<mmsr_index>();
    idx->impl = std::make_unique<retriever::SimilarUserIndex>(std::move(embs));
    *out = idx.release();
  });
}

mmsr_status mmsr_index_load(const char* embeddings_path, mmsr_index** out) {
  return guarded([&] {
    require(out != nullptr && embeddings_path != nullptr, "NULL argument");
    *out = nullptr;
    std::vector<retriever::UserEmbedding> embs;
    for (const auto& j : read_jsonl(embeddings_path)) {
      embs.push_back(retriever::UserEmbedding::from_json(j));
    }
    auto idx = std::make_unique<mmsr_index>();
    idx->impl = std::make_unique<retriever::SimilarUserIndex>(std::move(embs));
    *out = idx.release();
  });
}

void mmsr_index_destroy(mmsr_index* index) { delete index; }

size_t mmsr_index_size(const mmsr_index* index) {
  return index == nullptr ? 0 : index->impl->size();
}

mmsr_status mmsr_index_query(const mmsr_index* index, const double* query, size_t dim, size_t k,
                             const char* exclude, char** result_json) {
  return guarded([&] {
    require(index != nullptr && query != nullptr && result_json != nullptr, "NULL argument");
    retriever::UserEmbedding q{"", std::vector<double>(query, query + dim),
                               index->impl->encoder_version()};
    const auto res = index->impl->retrieve(q, k, exclude ? exclude : "");
    json ns = json::array();
    for (const auto& n : res.neighbors) {
      ns.push_back({{"user_id", n.user_id}, {"similarity", n.similarity}});
    }
    emit(result_json, {{"neighbors", ns},
                       {"short_result", res.short_result},
                       {"degenerate_query", res.degenerate_query}});
  });
}

}  // extern "C"
