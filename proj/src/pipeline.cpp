#include "pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "corpus.hpp"
#include "promptkit.hpp"
#include "remote_backend.hpp"
#include "sasrec.hpp"

extern char** environ;

namespace mmsrarec::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

json PipelineConfig::to_json() const {
  const auto& e = encoder_config;
  return json{
      {"seed", seed},
      {"workdir", workdir.string()},
      {"data", {{"items", items_path.string()}, {"interactions", interactions_path.string()}}},
      {"corpus",
       {{"min_user", min_user},
        {"min_item", min_item},
        {"history_length", history_length},
        {"num_negatives", num_negatives},
        {"multi_prefix", multi_prefix},
        {"split", split}}},
      {"backend",
       {{"kind", backend},
        {"embedding_endpoint", embedding_endpoint},
        {"timeout_ms", timeout_ms},
        {"retries", retries},
        {"max_in_flight", max_in_flight},
        {"reveal_ground_truth", reveal_ground_truth},
        {"summary_keywords", summary_keywords},
        {"yes_tokens", tokens.yes},
        {"no_tokens", tokens.no}}},
      {"rewards",
       {{"alpha", weights.alpha},
        {"beta", weights.beta},
        {"gamma", weights.gamma},
        {"recon_clamp", recon.clamp},
        {"perplexity_cap", recon.perplexity_cap}}},
      {"grpo",
       {{"group_size", grpo.group_size},
        {"std_epsilon", grpo.std_epsilon},
        {"learning_rate", grpo.learning_rate},
        {"steps", grpo.steps},
        {"items", grpo_items}}},
      {"retriever",
       {{"encoder", encoder},
        {"k", k},
        {"embed_dim", e.embed_dim},
        {"blocks", e.blocks},
        {"heads", e.heads},
        {"max_len", e.max_len},
        {"dropout", e.dropout},
        {"epochs", e.epochs},
        {"batch_size", e.batch_size},
        {"learning_rate", e.learning_rate}}},
      {"sft",
       {{"task_mix", task_mix},
        {"instances", sft_instances},
        {"multiclass_candidates", multiclass_candidates}}},
      {"evaluate", {{"split", eval_split}, {"hr_k", hr_k}, {"workers", workers}}},
  };
}

namespace {

void check_known_keys(const json& defaults, const json& given, const std::string& prefix) {
  if (!given.is_object()) throw invalid_argument("config section " + prefix + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    auto d = defaults.find(it.key());
    if (d == defaults.end()) throw invalid_argument("unknown config key: " + path);
    if (d->is_object()) check_known_keys(*d, it.value(), path);
  }
}

template <typename T>
void read(const json& j, const char* section, const char* key, T& out) {
  try {
    out = j.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw invalid_argument(std::string("config key ") + section + "." + key +
                           " has the wrong type");
  }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& given) {
  PipelineConfig c;
  json doc = c.to_json();
  check_known_keys(doc, given, "");
  doc.merge_patch(given);
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.workdir = doc.at("workdir").get<std::string>();
  } catch (const json::exception&) {
    throw invalid_argument("config keys seed/workdir have the wrong type");
  }
  std::string s;
  read(doc, "data", "items", s);
  c.items_path = s;
  read(doc, "data", "interactions", s);
  c.interactions_path = s;
  read(doc, "corpus", "min_user", c.min_user);
  read(doc, "corpus", "min_item", c.min_item);
  read(doc, "corpus", "history_length", c.history_length);
  read(doc, "corpus", "num_negatives", c.num_negatives);
  read(doc, "corpus", "multi_prefix", c.multi_prefix);
  read(doc, "corpus", "split", c.split);
  read(doc, "backend", "kind", c.backend);
  read(doc, "backend", "embedding_endpoint", c.embedding_endpoint);
  read(doc, "backend", "timeout_ms", c.timeout_ms);
  read(doc, "backend", "retries", c.retries);
  read(doc, "backend", "max_in_flight", c.max_in_flight);
  read(doc, "backend", "reveal_ground_truth", c.reveal_ground_truth);
  read(doc, "backend", "summary_keywords", c.summary_keywords);
  read(doc, "backend", "yes_tokens", c.tokens.yes);
  read(doc, "backend", "no_tokens", c.tokens.no);
  read(doc, "rewards", "alpha", c.weights.alpha);
  read(doc, "rewards", "beta", c.weights.beta);
  read(doc, "rewards", "gamma", c.weights.gamma);
  read(doc, "rewards", "recon_clamp", c.recon.clamp);
  read(doc, "rewards", "perplexity_cap", c.recon.perplexity_cap);
  read(doc, "grpo", "group_size", c.grpo.group_size);
  read(doc, "grpo", "std_epsilon", c.grpo.std_epsilon);
  read(doc, "grpo", "learning_rate", c.grpo.learning_rate);
  read(doc, "grpo", "steps", c.grpo.steps);
  read(doc, "grpo", "items", c.grpo_items);
  read(doc, "retriever", "encoder", c.encoder);
  read(doc, "retriever", "k", c.k);
  read(doc, "retriever", "embed_dim", c.encoder_config.embed_dim);
  read(doc, "retriever", "blocks", c.encoder_config.blocks);
  read(doc, "retriever", "heads", c.encoder_config.heads);
  read(doc, "retriever", "max_len", c.encoder_config.max_len);
  read(doc, "retriever", "dropout", c.encoder_config.dropout);
  read(doc, "retriever", "epochs", c.encoder_config.epochs);
  read(doc, "retriever", "batch_size", c.encoder_config.batch_size);
  read(doc, "retriever", "learning_rate", c.encoder_config.learning_rate);
  read(doc, "sft", "task_mix", c.task_mix);
  read(doc, "sft", "instances", c.sft_instances);
  read(doc, "sft", "multiclass_candidates", c.multiclass_candidates);
  read(doc, "evaluate", "split", c.eval_split);
  read(doc, "evaluate", "hr_k", c.hr_k);
  read(doc, "evaluate", "workers", c.workers);
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  if (min_user < 1 || min_item < 1) throw invalid_argument("min_user and min_item must be >= 1");
  if (history_length < 1) throw invalid_argument("history_length must be >= 1");
  if (num_negatives < 1) throw invalid_argument("num_negatives must be >= 1");
  if (split.size() != 3) throw invalid_argument("split needs three ratios");
  for (double r : split) {
    if (!(r > 0.0)) throw invalid_argument("split ratios must be positive");
  }
  if (backend != "mock-oracle" && backend != "mock-random" && backend.rfind("remote:", 0) != 0) {
    throw invalid_argument("backend must be mock-oracle, mock-random or remote:<url>, got " +
                           backend);
  }
  if (backend.rfind("remote:", 0) == 0 && backend.size() <= 7) {
    throw invalid_argument("remote backend needs an endpoint URL");
  }
  if (encoder != "sasrec" && encoder != "bag") {
    throw invalid_argument("retriever.encoder must be sasrec or bag");
  }
  if (eval_split != "test" && eval_split != "valid") {
    throw invalid_argument("evaluate.split must be test or valid");
  }
  if (hr_k < 1) throw invalid_argument("evaluate.hr_k must be >= 1");
  weights.validate();
  grpo.validate();
  encoder_config.validate(history_length);
}

std::uint64_t PipelineConfig::hash() const {
  json j = to_json();
  j.erase("workdir");
  j.erase("data");
  return fnv1a64(j.dump());
}

void apply_env_overrides(json& doc, const std::vector<std::pair<std::string, std::string>>& env) {
  const std::string prefix = "MMSRAREC_";
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    const std::string path = to_lower_ascii(name.substr(prefix.size()));
    std::vector<std::string> parts;
    for (std::size_t pos = 0;;) {
      const auto next = path.find("__", pos);
      parts.push_back(path.substr(pos, next - pos));
      if (next == std::string::npos) break;
      pos = next + 2;
    }
    json* node = &doc;
    for (const auto& p : parts) {
      if (!node->is_object() || !node->contains(p)) {
        throw invalid_argument("environment override " + name + " names no config key");
      }
      node = &(*node)[p];
    }
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;
    }
    if (node->is_string() && !parsed.is_string()) parsed = value;
    *node = std::move(parsed);
  }
}

std::vector<std::pair<std::string, std::string>> environment_overrides() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view kv(*e);
    if (kv.rfind("MMSRAREC_", 0) != 0) continue;
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    out.emplace_back(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

PipelineConfig load_config(const std::optional<fs::path>& file) {
  json doc = PipelineConfig{}.to_json();
  if (file) {
    json given;
    try {
      given = json::parse(read_file(*file));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, "config " + file->string() + ": " + e.what());
    }
    check_known_keys(doc, given, "");
    const fs::path base = file->parent_path();
    const auto rebase = [&](json& v) {
      if (!v.is_string()) return;
      fs::path p = v.get<std::string>();
      if (p.is_relative() && !base.empty()) v = (base / p).lexically_normal().string();
    };
    if (given.contains("workdir")) rebase(given["workdir"]);
    if (given.contains("data")) {
      if (given["data"].contains("items")) rebase(given["data"]["items"]);
      if (given["data"].contains("interactions")) rebase(given["data"]["interactions"]);
    }
    doc.merge_patch(given);
  }
  apply_env_overrides(doc, environment_overrides());
  return PipelineConfig::from_json(doc);
}

backends::BackendSuite make_backend(const PipelineConfig& c) {
  if (c.backend.rfind("remote:", 0) == 0) {
    backends::RemoteConfig rc;
    rc.endpoint = c.backend.substr(7);
    rc.embedding_endpoint = c.embedding_endpoint;
    rc.timeout_ms = c.timeout_ms;
    rc.retries = c.retries;
    rc.max_in_flight = c.max_in_flight;
    return backends::make_remote_suite(rc);
  }
  backends::MockState st;
  st.seed = c.seed;
  st.mode = c.backend == "mock-random" ? backends::MockMode::kRandom : backends::MockMode::kOracle;
  st.summary_keywords = c.summary_keywords;
  return backends::make_mock_suite(st);
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

using namespace artifacts;

std::string producer_of(const std::string& rel) {
  static const std::map<std::string, std::string> producers = {
      {kItems, "ingest"},
      {kInteractions, "ingest"},
      {kFilteredItems, "filter"},
      {kFilteredInteractions, "filter"},
      {kImpressions, "impressions"},
      {kTrain, "split"},
      {kValid, "split"},
      {kTest, "split"},
      {kKeywords, "summarize"},
      {kEncoder, "train-retriever"},
      {kEmbeddings, "build-index"},
      {kIndexManifest, "build-index"},
      {kNeighbors, "retrieve"},
  };
  auto it = producers.find(rel);
  return it == producers.end() ? std::string() : it->second;
}

std::string generator_identity(const PipelineConfig& c) {
  return c.backend.rfind("mock-", 0) == 0 ? "mock" : c.backend;
}

std::string checksum_hex(const fs::path& p) { return hex64(file_checksum(p)); }

// Latest training impression of each user.
std::unordered_map<std::string, corpus::Impression> latest_by_user(
    const std::vector<corpus::Impression>& imps) {
  std::unordered_map<std::string, corpus::Impression> out;
  for (const auto& imp : imps) {
    auto it = out.find(imp.user_id);
    if (it == out.end() || it->second.target_index < imp.target_index) out[imp.user_id] = imp;
  }
  return out;
}

std::unique_ptr<retriever::SequenceEncoder> load_encoder(const fs::path& path,
                                                         const corpus::ItemCatalog& catalog) {
  const std::string blob = read_file(path);
  const auto nl = blob.find('\n');
  json header;
  try {
    header = json::parse(blob.substr(0, nl));
  } catch (const json::exception&) {
    throw Error(ErrorCode::kParse, "unreadable encoder checkpoint " + path.string());
  }
  if (header.value("format", "") == "mmsrarec-bag") {
    auto enc = std::make_unique<retriever::BagOfItemsEncoder>(catalog);
    if (enc->version() != header.value("version", "")) {
      throw Error(ErrorCode::kMissingArtifact,
                  "bag encoder was built for another catalog; run stage 'train-retriever' first");
    }
    return enc;
  }
  return std::make_unique<retriever::SasRecEncoder>(retriever::SasRecEncoder::load(path));
}

std::string impression_key(const std::string& user, std::size_t target_index) {
  return user + "#" + std::to_string(target_index);
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) { config_.validate(); }

void Pipeline::log(const std::string& msg) const {
  if (log_) log_(msg);
}

json Pipeline::config_echo() const {
  return json{{"n", config_.history_length},
              {"k", config_.k},
              {"seed", config_.seed},
              {"backend", config_.backend},
              {"num_negatives", config_.num_negatives},
              {"encoder", config_.encoder},
              {"split", config_.eval_split},
              {"reveal_ground_truth", config_.reveal_ground_truth},
              {"config_hash", hex64(config_.hash())}};
}

Pipeline::Plan Pipeline::plan(const std::string& name) const {
  const auto& c = config_;
  const auto a = [&](const char* rel) { return artifact(rel); };
  Plan p;
  if (name == "ingest") {
    p.inputs = {c.items_path, c.interactions_path};
    p.outputs = {a(kItems), a(kInteractions), a(kRejects)};
  } else if (name == "filter") {
    p.inputs = {a(kItems), a(kInteractions)};
    p.outputs = {a(kFilteredItems), a(kFilteredInteractions)};
    p.slice = {{"min_user", c.min_user}, {"min_item", c.min_item}};
  } else if (name == "impressions") {
    p.inputs = {a(kFilteredItems), a(kFilteredInteractions)};
    p.outputs = {a(kImpressions)};
    p.slice = {{"n", c.history_length},
               {"num_negatives", c.num_negatives},
               {"multi_prefix", c.multi_prefix},
               {"seed", c.seed}};
  } else if (name == "split") {
    p.inputs = {a(kImpressions)};
    p.outputs = {a(kTrain), a(kValid), a(kTest)};
    p.slice = {{"split", c.split}, {"seed", c.seed}};
  } else if (name == "summarize") {
    p.inputs = {a(kFilteredItems)};
    p.outputs = {a(kKeywords)};
    p.slice = {{"generator", generator_identity(c)}, {"summary_keywords", c.summary_keywords}};
  } else if (name == "grpo-toy") {
    p.inputs = {a(kFilteredItems)};
    p.outputs = {a(kGrpoTrace), a(kAdvantages)};
    p.slice = c.to_json()["grpo"];
    p.slice["rewards"] = c.to_json()["rewards"];
    p.slice["generator"] = generator_identity(c);
    p.slice["seed"] = c.seed;
  } else if (name == "train-retriever") {
    p.inputs = {a(kFilteredItems), a(kFilteredInteractions), a(kTrain)};
    p.outputs = {a(kEncoder), a(kTraining)};
    p.slice = c.to_json()["retriever"];
    p.slice.erase("k");
    p.slice["seed"] = c.seed;
  } else if (name == "build-index") {
    p.inputs = {a(kFilteredItems), a(kFilteredInteractions), a(kTrain), a(kEncoder)};
    p.outputs = {a(kEmbeddings), a(kIndexManifest)};
  } else if (name == "retrieve") {
    p.inputs = {a(kFilteredItems), a(kFilteredInteractions), a(kTrain), a(kValid), a(kTest),
                a(kEncoder), a(kEmbeddings), a(kKeywords)};
    p.outputs = {a(kNeighbors)};
    p.slice = {{"k", c.k}};
  } else if (name == "build-sft") {
    p.inputs = {a(kFilteredItems), a(kTrain), a(kKeywords), a(kNeighbors)};
    p.outputs = {a(kSft), a(kConversations), a(kSftMix)};
    p.slice = c.to_json()["sft"];
    p.slice["seed"] = c.seed;
    p.slice["k"] = c.k;
  } else if (name == "evaluate") {
    p.inputs = {a(kFilteredItems), a(c.eval_split == "test" ? kTest : kValid), a(kKeywords)};
    if (c.k > 0) p.inputs.push_back(a(kNeighbors));
    p.outputs = {a(kReport), a(kReportCsv)};
    p.slice = config_echo();
    p.slice["tokens"] = {c.tokens.yes, c.tokens.no};
    p.slice["hr_k"] = c.hr_k;
  } else {
    throw invalid_argument("unknown stage: " + name);
  }
  return p;
}

void Pipeline::require_inputs(const std::string& name, const Plan& plan) const {
  const json stages = read_manifest()["stages"];
  for (const auto& in : plan.inputs) {
    const auto rel = in.lexically_relative(config_.workdir).generic_string();
    const auto producer = producer_of(rel);
    if (!fs::exists(in)) {
      if (producer.empty()) {
        throw Error(ErrorCode::kIo, "stage '" + name + "': input file not found: " + in.string());
      }
      throw Error(ErrorCode::kMissingArtifact, "stage '" + name + "' needs " + rel +
                                                   "; run stage '" + producer + "' first");
    }
    // An artifact made under other settings (say a different k) is as good as missing.
    if (producer.empty() || !stages.contains(producer)) continue;
    const auto recorded = stages[producer].value("slice_hash", "");
    if (recorded != hex64(fnv1a64(this->plan(producer).slice.dump()))) {
      throw Error(ErrorCode::kMissingArtifact,
                  "stage '" + name + "' needs " + rel +
                      " built with the current settings; run stage '" + producer + "' first");
    }
  }
}

json Pipeline::read_manifest() const {
  const auto path = artifact(kManifest);
  if (!fs::exists(path)) return json{{"stages", json::object()}};
  try {
    json m = json::parse(read_file(path));
    if (!m.contains("stages")) m["stages"] = json::object();
    return m;
  } catch (const json::exception&) {
    return json{{"stages", json::object()}};
  }
}

void Pipeline::write_manifest(const json& manifest) const {
  write_file(artifact(kManifest), manifest.dump(2) + "\n");
}

bool Pipeline::up_to_date(const std::string& name, const Plan& plan, const json& manifest) const {
  const auto& stages = manifest.at("stages");
  if (!stages.contains(name)) return false;
  const auto& rec = stages.at(name);
  if (rec.value("slice_hash", "") != hex64(fnv1a64(plan.slice.dump()))) return false;
  const auto& ins = rec.value("inputs", json::object());
  const auto& outs = rec.value("outputs", json::object());
  for (const auto& in : plan.inputs) {
    auto it = ins.find(in.string());
    if (it == ins.end() || *it != checksum_hex(in)) return false;
  }
  for (const auto& out : plan.outputs) {
    auto it = outs.find(out.string());
    if (!fs::exists(out) || it == outs.end() || *it != checksum_hex(out)) return false;
  }
  return true;
}

StageOutcome Pipeline::run_stage(const std::string& name, bool force) {
  const Plan p = plan(name);
  require_inputs(name, p);
  json manifest = read_manifest();
  StageOutcome outcome;
  outcome.stage = name;
  if (!force && up_to_date(name, p, manifest)) {
    outcome.skipped = true;
    outcome.summary = manifest["stages"][name].value("summary", json::object());
    log(name + ": up to date, skipped");
    return outcome;
  }
  if (name == "summarize" && force) fs::remove(artifact(kSummaryCheckpoint));

  const auto t0 = std::chrono::steady_clock::now();
  outcome.summary = execute(name);
  outcome.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json rec;
  rec["slice_hash"] = hex64(fnv1a64(p.slice.dump()));
  rec["inputs"] = json::object();
  rec["outputs"] = json::object();
  for (const auto& in : p.inputs) rec["inputs"][in.string()] = checksum_hex(in);
  for (const auto& out : p.outputs) rec["outputs"][out.string()] = checksum_hex(out);
  rec["completed"] = true;
  rec["seconds"] = outcome.seconds;
  rec["summary"] = outcome.summary;
  manifest = read_manifest();
  manifest["config_hash"] = hex64(config_.hash());
  manifest["stages"][name] = rec;
  write_manifest(manifest);
  log(name + ": done in " + std::to_string(outcome.seconds) + " s " + outcome.summary.dump());
  return outcome;
}

std::vector<StageOutcome> Pipeline::run_all(bool force) {
  std::vector<StageOutcome> out;
  for (const auto& s : stage_names()) out.push_back(run_stage(s, force));
  return out;
}

json Pipeline::execute(const std::string& name) {
  if (name == "ingest") return run_ingest();
  if (name == "filter") return run_filter();
  if (name == "impressions") return run_impressions();
  if (name == "split") return run_split();
  if (name == "summarize") return run_summarize();
  if (name == "grpo-toy") return run_grpo_toy();
  if (name == "train-retriever") return run_train_retriever();
  if (name == "build-index") return run_build_index();
  if (name == "retrieve") return run_retrieve();
  if (name == "build-sft") return run_build_sft();
  if (name == "evaluate") return run_evaluate();
  throw invalid_argument("unknown stage: " + name);
}

// ---------------------------------------------------------------------------
// Stages

json Pipeline::run_ingest() {
  auto items = corpus::ingest_items(config_.items_path);
  auto log_in = corpus::ingest_interactions(config_.interactions_path);
  corpus::write_items(artifact(kItems), items.catalog);
  corpus::write_interactions(artifact(kInteractions), log_in.interactions);
  std::vector<json> rejects;
  for (const auto& r : items.rejects) {
    rejects.push_back({{"file", "items"}, {"line_number", r.line_number}, {"reason", r.reason}});
  }
  for (const auto& r : log_in.rejects) {
    rejects.push_back(
        {{"file", "interactions"}, {"line_number", r.line_number}, {"reason", r.reason}});
  }
  write_jsonl(artifact(kRejects), rejects);
  return {{"items", items.catalog.size()},
          {"interactions", log_in.interactions.size()},
          {"duplicate_interactions", log_in.duplicates},
          {"rejects", rejects.size()}};
}

json Pipeline::run_filter() {
  const auto catalog = corpus::read_catalog(artifact(kItems));
  const auto log_in = corpus::read_interactions(artifact(kInteractions));
  auto res = corpus::filter_min_activity(log_in, catalog, config_.min_user, config_.min_item);
  corpus::write_items(artifact(kFilteredItems), res.catalog);
  corpus::write_interactions(artifact(kFilteredInteractions), res.interactions);
  std::set<std::string> users;
  for (const auto& x : res.interactions) users.insert(x.user_id);
  return {{"items", res.catalog.size()},
          {"users", users.size()},
          {"interactions", res.interactions.size()},
          {"rounds", res.rounds}};
}

json Pipeline::run_impressions() {
  const auto catalog = corpus::read_catalog(artifact(kFilteredItems));
  const auto log_in = corpus::read_interactions(artifact(kFilteredInteractions));
  corpus::ImpressionOptions opt;
  opt.history_length = config_.history_length;
  opt.num_negatives = config_.num_negatives;
  opt.seed = config_.seed;
  opt.multi_prefix = config_.multi_prefix;
  auto built = corpus::build_impressions(log_in, catalog, opt);
  for (const auto& imp : built.impressions) {
    if (auto bad = corpus::validate_impression(imp, catalog, config_.num_negatives)) {
      throw Error(ErrorCode::kInternal, "invalid impression for " + imp.user_id + ": " + *bad);
    }
  }
  corpus::write_impressions(artifact(kImpressions), built.impressions);
  return {{"impressions", built.impressions.size()}, {"skipped_users", built.skipped_users}};
}

json Pipeline::run_split() {
  auto all = corpus::read_impressions(artifact(kImpressions));
  auto parts = corpus::split_impressions(std::move(all), config_.split, config_.seed);
  corpus::write_impressions(artifact(kTrain), parts.train);
  corpus::write_impressions(artifact(kValid), parts.valid);
  corpus::write_impressions(artifact(kTest), parts.test);
  return {{"train", parts.train.size()},
          {"valid", parts.valid.size()},
          {"test", parts.test.size()}};
}

json Pipeline::run_summarize() {
  const auto catalog = corpus::read_catalog(artifact(kFilteredItems));
  // A checkpoint written under another generator setting is stale.
  const auto meta_path = artifact("summaries/checkpoint.meta");
  const std::string meta = hex64(fnv1a64(plan("summarize").slice.dump()));
  if (!fs::exists(meta_path) || trim(read_file(meta_path)) != meta) {
    fs::remove(artifact(kSummaryCheckpoint));
    write_file(meta_path, meta + "\n");
  }
  auto suite = make_backend(config_);
  summarizer::SummarizeStats stats;
  auto store =
      summarizer::summarize_catalog(catalog, *suite.generator, artifact(kSummaryCheckpoint), &stats);
  store.save(artifact(kKeywords));
  return {{"items", store.size()},
          {"generated", stats.generated},
          {"resumed", stats.resumed},
          {"retries", stats.retries},
          {"failures", stats.failures}};
}

json Pipeline::run_grpo_toy() {
  const auto catalog = corpus::read_catalog(artifact(kFilteredItems));
  auto suite = make_backend(config_);
  json items = json::array();
  std::vector<json> records;
  std::size_t improved = 0, ran = 0;
  for (std::size_t i = 0; i < catalog.size() && ran < config_.grpo_items; ++i) {
    const auto& item = catalog[i];
    const auto cands = summarizer::candidate_space(item);
    if (cands.empty()) {
      log("grpo-toy: " + item.item_id + " has fewer than 2 distinct tokens, skipped");
      continue;
    }
    const auto trace = summarizer::grpo_toy_optimize(item, cands, suite, config_.weights,
                                                     config_.recon, config_.grpo, config_.seed);
    ++ran;
    const std::size_t w = std::min<std::size_t>(20, trace.steps.size());
    const double first = trace.window_mean(0, w);
    const double last = trace.window_mean(trace.steps.size() - w, trace.steps.size());
    if (last > first) ++improved;
    const auto best = static_cast<std::size_t>(
        std::max_element(trace.final_logits.begin(), trace.final_logits.end()) -
        trace.final_logits.begin());
    items.push_back({{"item_id", item.item_id},
                     {"candidates", cands.size()},
                     {"first_window_mean", first},
                     {"last_window_mean", last},
                     {"mean_rewards", trace.mean_rewards()},
                     {"policy_mode", cands[best]},
                     {"policy_mode_reward", trace.candidate_rewards[best].to_json()}});
    auto recs = summarizer::advantage_records(trace, item);
    records.insert(records.end(), std::make_move_iterator(recs.begin()),
                   std::make_move_iterator(recs.end()));
  }
  write_file(artifact(kGrpoTrace),
             json{{"config", config_echo()}, {"items", items}}.dump(2) + "\n");
  write_jsonl(artifact(kAdvantages), records);
  return {{"items", ran}, {"improved", improved}, {"records", records.size()}};
}

json Pipeline::run_train_retriever() {
  const auto catalog = corpus::read_catalog(artifact(kFilteredItems));
  if (config_.encoder == "bag") {
    retriever::BagOfItemsEncoder enc(catalog);
    write_file(artifact(kEncoder),
               json{{"format", "mmsrarec-bag"}, {"version", enc.version()}}.dump() + "\n");
    write_file(artifact(kTraining),
               json{{"config", config_echo()}, {"encoder", "bag"}, {"version", enc.version()}}
                       .dump(2) +
                   "\n");
    return {{"encoder", "bag"}, {"version", enc.version()}};
  }
  const auto log_in = corpus::read_interactions(artifact(kFilteredInteractions));
  const auto train = corpus::read_impressions(artifact(kTrain));
  const auto seqs = corpus::user_sequences(log_in);
  std::set<std::string> users;
  for (const auto& imp : train) users.insert(imp.user_id);
  std::vector<std::vector<std::string>> sequences;
  for (const auto& u : users) {
    auto it = seqs.find(u);
    if (it != seqs.end()) sequences.push_back(it->second);
  }
  auto trained =
      retriever::train_sequence_encoder(sequences, catalog, config_.encoder_config, config_.seed);
  trained.encoder->save(artifact(kEncoder));
  write_file(artifact(kTraining), json{{"config", config_echo()},
                                       {"encoder", "sasrec"},
                                       {"encoder_config", config_.encoder_config.to_json()},
                                       {"version", trained.encoder->version()},
                                       {"initial_loss", trained.initial_loss},
                                       {"final_loss", trained.final_loss},
                                       {"loss_curve", trained.loss_curve}}
                                      .dump(2) +
                                      "\n");
  return {{"encoder", "sasrec"},
          {"sequences", sequences.size()},
          {"initial_loss", trained.initial_loss},
          {"final_loss", trained.final_loss}};
}

json Pipeline::run_build_index() {
  const auto catalog = corpus::read_catalog(artifact(kFilteredItems));
  const auto log_in = corpus::read_interactions(artifact(kFilteredInteractions));
  const auto train = latest_by_user(corpus::read_impressions(artifact(kTrain)));
  const auto encoder = load_encoder(artifact(kEncoder), catalog);
  const auto seqs = corpus::user_sequences(log_in);

  std::vector<std::string> users;
  for (const auto& [u, _] : train) users.push_back(u);
  std::sort(users.begin(), users.end());
  std::vector<retriever::UserEmbedding> embs(users.size());
  parallel_for(users.size(), std::max<std::size_t>(1, config_.workers), [&](std::size_t i) {
    const auto& imp = train.at(users[i]);
    embs[i] = encoder->encode(
        imp.user_id, retriever::context_sequence(imp, seqs, config_.encoder_config.max_len));
  });
  std::size_t zero = 0;
  for (const auto& e : embs) {
    if (std::all_of(e.vector.begin(), e.vector.end(), [](double x) { return x == 0.0; })) ++zero;
  }
  if (zero > 0) log("build-index: " + std::to_string(zero) + " users have zero embeddings");
  std::vector<json> records;
  records.reserve(embs.size());
  for (const auto& e : embs) records.push_back(e.to_json());
  retriever::SimilarUserIndex index(std::move(embs));
  write_jsonl(artifact(kEmbeddings), records);
  json manifest = index.manifest();
  manifest["config"] = config_echo();
  write_file(artifact(kIndexManifest), manifest.dump(2) + "\n");
  return {{"users", index.size()}, {"zero_embeddings", zero},
          {"encoder_version", index.encoder_version()}};
}

json Pipeline::run_retrieve() {
  const auto catalog = corpus::read_catalog(artifact(kFilteredItems));
  const auto log_in = corpus::read_interactions(artifact(kFilteredInteractions));
  const auto seqs = corpus::user_sequences(log_in);
  const auto store = summarizer::KeywordStore::load(artifact(kKeywords));
  const auto train_imps = corpus::read_impressions(artifact(kTrain));
  const auto train_by_user = latest_by_user(train_imps);

  std::vector<retriever::UserEmbedding> embs;
  for (const auto& j : read_jsonl(artifact(kEmbeddings))) {
    embs.push_back(retriever::UserEmbedding::from_json(j));
  }
  const retriever::SimilarUserIndex index(std::move(embs));
  const auto encoder = load_encoder(artifact(kEncoder), catalog);
  if (encoder->version() != index.encoder_version()) {
    throw Error(ErrorCode::kMissingArtifact,
                "index was built with another encoder; run stage 'build-index' first");
  }

  struct Job {
    std::string split;
    const corpus::Impression* imp;
  };
  const auto valid = corpus::read_impressions(artifact(kValid));
  const auto test = corpus::read_impressions(artifact(kTest));
  std::vector<Job> jobs;
  for (const auto& imp : train_imps) jobs.push_back({"train", &imp});
  for (const auto& imp : valid) jobs.push_back({"valid", &imp});
  for (const auto& imp : test) jobs.push_back({"test", &imp});

  std::vector<json> records(jobs.size());
  std::vector<std::size_t> shorts(jobs.size()), degens(jobs.size()), warns(jobs.size());
  const std::size_t k = config_.k;
  parallel_for(jobs.size(), std::max<std::size_t>(1, config_.workers), [&](std::size_t i) {
    const auto& imp = *jobs[i].imp;
    json rec{{"split", jobs[i].split},
             {"user_id", imp.user_id},
             {"target_index", imp.target_index},
             {"neighbors", json::array()},
             {"keywords", json::array()}};
    if (k > 0) {
      const auto q = encoder->encode(
          imp.user_id, retriever::context_sequence(imp, seqs, config_.encoder_config.max_len));
      const auto result = index.retrieve(q, k, imp.user_id);
      const auto bundle = retriever::neighbor_context(result, store, train_by_user);
      for (const auto& e : bundle.entries) {
        rec["neighbors"].push_back(
            {{"user_id", e.user_id}, {"similarity", e.similarity}, {"keywords", e.keywords}});
      }
      rec["keywords"] = bundle.keywords();
      rec["short_result"] = result.short_result;
      rec["degenerate_query"] = result.degenerate_query;
      rec["warnings"] = bundle.warnings;
      shorts[i] = result.short_result;
      degens[i] = result.degenerate_query;
      warns[i] = bundle.warnings.size();
    }
    records[i] = std::move(rec);
  });
  write_jsonl(artifact(kNeighbors), records);
  const auto sum = [](const std::vector<std::size_t>& v) {
    std::size_t s = 0;
    for (auto x : v) s += x;
    return s;
  };
  return {{"queries", records.size()},
          {"k", k},
          {"short_results", sum(shorts)},
          {"degenerate_queries", sum(degens)},
          {"warnings", sum(warns)}};
}

namespace {

// (user, target_index) -> neighbor keywords, for one split.
std::unordered_map<std::string, std::vector<std::string>> neighbor_keywords(
    const fs::path& path, const std::string& split) {
  std::unordered_map<std::string, std::vector<std::string>> out;
  for (const auto& j : read_jsonl(path)) {
    if (j.value("split", "") != split) continue;
    out[impression_key(j.at("user_id").get<std::string>(), j.at("target_index").get<std::size_t>())] =
        j.at("keywords").get<std::vector<std::string>>();
  }
  return out;
}

}  // namespace

json Pipeline::run_build_sft() {
  const auto catalog = corpus::read_catalog(artifact(kFilteredItems));
  const auto train = corpus::read_impressions(artifact(kTrain));
  const auto store = summarizer::KeywordStore::load(artifact(kKeywords));
  promptkit::NeighborKeywords nk;
  if (config_.k > 0) {
    const auto by_key = neighbor_keywords(artifact(kNeighbors), "train");
    for (const auto& [u, imp] : latest_by_user(train)) {
      auto it = by_key.find(impression_key(u, imp.target_index));
      nk[u] = it == by_key.end() ? std::vector<std::string>{} : it->second;
    }
  }
  promptkit::SftOptions opt;
  opt.mix = config_.task_mix;
  opt.total_instances = config_.sft_instances;
  opt.multiclass_candidates = config_.multiclass_candidates;
  opt.seed = config_.seed;
  const auto ds = promptkit::build_sft_dataset(train, catalog, store, nk, opt);
  promptkit::write_sft_dataset(artifact(kSft), ds);
  promptkit::write_conversations(artifact(kConversations), ds);
  json mix = ds.mix_report();
  mix["config"] = config_echo();
  write_file(artifact(kSftMix), mix.dump(2) + "\n");
  return ds.mix_report();
}

json Pipeline::run_evaluate() {
  const auto catalog = corpus::read_catalog(artifact(kFilteredItems));
  const auto imps =
      corpus::read_impressions(artifact(config_.eval_split == "test" ? kTest : kValid));
  const auto store = summarizer::KeywordStore::load(artifact(kKeywords));
  std::unordered_map<std::string, std::vector<std::string>> nk;
  if (config_.k > 0) nk = neighbor_keywords(artifact(kNeighbors), config_.eval_split);

  std::vector<recommender::ImpressionContext> contexts;
  contexts.reserve(imps.size());
  std::size_t missing = 0;
  for (const auto& imp : imps) {
    recommender::ImpressionContext ctx;
    ctx.user_keywords = promptkit::user_keywords(imp.history, store);
    if (config_.k > 0) {
      auto it = nk.find(impression_key(imp.user_id, imp.target_index));
      if (it == nk.end()) {
        ++missing;
        ctx.neighbor_keywords = std::vector<std::string>{};
      } else {
        ctx.neighbor_keywords = it->second;
      }
    }
    contexts.push_back(std::move(ctx));
  }
  if (missing > 0) {
    throw Error(ErrorCode::kMissingArtifact,
                std::to_string(missing) + " impressions have no retrieval record; run stage "
                                          "'retrieve' first");
  }

  auto suite = make_backend(config_);
  recommender::EvalOptions opt;
  opt.score.tokens = config_.tokens;
  opt.score.reveal_ground_truth = config_.reveal_ground_truth;
  opt.k = config_.hr_k;
  opt.workers = config_.workers;
  opt.config = config_echo();
  const auto report =
      recommender::evaluate(imps, contexts, catalog, store, *suite.first_token, opt);
  report.save(artifact(kReport), artifact(kReportCsv));
  const json doc = report.to_json();
  json summary = doc["aggregates"];
  summary.update(doc["counts"]);
  return summary;
}

// ---------------------------------------------------------------------------

SweepResult Pipeline::sweep(const std::string& param, const std::vector<std::size_t>& values,
                            bool force) {
  if (param != "n" && param != "k") throw invalid_argument("sweep parameter must be n or k");
  if (values.empty()) throw invalid_argument("sweep needs at least one value");
  const PipelineConfig base = config_;
  SweepResult res;
  res.param = param;
  res.table_path = artifact("sweeps/sweep_" + param + ".json");
  const auto csv_path = artifact("sweeps/sweep_" + param + ".csv");
  const std::string hk = "HR@" + std::to_string(base.hr_k);
  const std::string nk = "NDCG@" + std::to_string(base.hr_k);

  const auto write_table = [&](const std::string& status) {
    json rows = json::array();
    std::ostringstream csv;
    csv << param << ',' << hk << ',' << nk << ",AUC,scored,failed\n";
    for (const auto& r : res.rows) {
      rows.push_back({{param, std::stoul(r.value)},
                      {hk, r.hr},
                      {nk, r.ndcg},
                      {"AUC", r.auc},
                      {"scored", r.scored},
                      {"failed", r.failed}});
      csv << r.value << ',' << json(r.hr).dump() << ',' << json(r.ndcg).dump() << ','
          << json(r.auc).dump() << ',' << r.scored << ',' << r.failed << '\n';
    }
    json echo = config_echo();
    echo.erase(param);
    echo.erase("config_hash");
    write_file(res.table_path, json{{"param", param},
                                    {"values", values},
                                    {"status", status},
                                    {"config", echo},
                                    {"rows", rows}}
                                       .dump(2) +
                                   "\n");
    write_file(csv_path, csv.str());
  };

  static const std::set<std::string> skip = {"grpo-toy", "build-sft"};
  try {
    for (std::size_t v : values) {
      config_ = base;
      (param == "n" ? config_.history_length : config_.k) = v;
      config_.validate();
      log("sweep " + param + "=" + std::to_string(v));
      for (const auto& s : stage_names()) {
        if (skip.count(s) == 0) run_stage(s, force && s != "ingest");
      }
      const json rep = json::parse(read_file(artifact(kReport)));
      write_file(artifact("sweeps/" + param + "_" + std::to_string(v) + "/report.json"),
                 rep.dump(2) + "\n");
      SweepRow row;
      row.value = std::to_string(v);
      row.hr = rep["aggregates"][hk].get<double>();
      row.ndcg = rep["aggregates"][nk].get<double>();
      row.auc = rep["aggregates"]["AUC"].get<double>();
      row.scored = rep["counts"]["scored"].get<std::size_t>();
      row.failed = rep["counts"]["failed"].get<std::size_t>();
      res.rows.push_back(row);
      write_table(res.rows.size() == values.size() ? "complete" : "partial");
    }
  } catch (...) {
    config_ = base;
    write_table("aborted");
    throw;
  }
  config_ = base;
  return res;
}

}  // namespace mmsrarec::pipeline
