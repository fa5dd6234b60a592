#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "retriever.hpp"
#include "sasrec.hpp"

using namespace mmsrarec;
using namespace mmsrarec::retriever;

namespace {

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("it" + std::to_string(i));
  return out;
}

corpus::ItemCatalog catalog_of(int n) {
  corpus::ItemCatalog c;
  for (const auto& id : ids(n)) c.add({id, "", "", ""});
  return c;
}

double brute_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<UserEmbedding> random_embeddings(Rng& rng, int n, int dim, const std::string& ver) {
  std::vector<UserEmbedding> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    out.push_back({"u" + std::to_string(1000 + i), v, ver});
  }
  return out;
}

}  // namespace

TEST_CASE("EncoderConfig validation") {
  EncoderConfig c;
  CHECK_NOTHROW(c.validate(5));
  auto bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(5), Error);
  bad = c;
  bad.max_len = 4;
  CHECK_THROWS_AS(bad.validate(5), Error);
  bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(5), Error);
  bad = c;
  bad.blocks = 0;
  CHECK_THROWS_AS(bad.validate(5), Error);
  const auto round = EncoderConfig::from_json(c.to_json());
  CHECK(round.to_json() == c.to_json());
}

TEST_CASE("SasRec gradient matches finite differences") {
  EncoderConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.blocks = 2;
  cfg.max_len = 6;
  SasRecModel model(cfg, ids(12), 3);
  CHECK(model.parameters().size() == sasrec_parameter_count(cfg, 12));

  const std::vector<TrainingExample> batch = {
      {{1, 2, 3, 4}, {2, 3, 4, 5}, {9, 8, 7, 6}},
      {{5, 6}, {6, 7}, {1, 12}},
  };
  std::vector<double> grad(model.parameters().size(), 0.0);
  model.loss_and_grad(batch, 0.0, 0, &grad);

  Rng rng(11);
  auto& theta = model.parameters();
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t i = rng.uniform_index(theta.size());
    const double keep = theta[i];
    theta[i] = keep + h;
    const double up = model.loss_and_grad(batch, 0.0, 0, nullptr);
    theta[i] = keep - h;
    const double down = model.loss_and_grad(batch, 0.0, 0, nullptr);
    theta[i] = keep;
    const double numeric = (up - down) / (2 * h);
    CHECK(grad[i] == doctest::Approx(numeric).epsilon(1e-4).scale(1e-6));
    ++checked;
  }
  CHECK(checked == 60);
}

TEST_CASE("SasRec encoder: unknown ids are ignored, empty history is zero") {
  auto model = std::make_shared<SasRecModel>(EncoderConfig{}, ids(10), 1);
  SasRecEncoder enc(model);
  const auto a = enc.encode("u", {"it1", "it2"});
  const auto b = enc.encode("u", {"it1", "nope", "it2"});
  CHECK(a.vector == b.vector);
  const auto z = enc.encode("u", {});
  CHECK(std::all_of(z.vector.begin(), z.vector.end(), [](double x) { return x == 0.0; }));
  CHECK(a.encoder_version == enc.version());
  CHECK(enc.dimension() == 32);
  CHECK(enc.predict_next({}).empty());
}

TEST_CASE("SasRec encoder: predict_next is the best unseen item") {
  auto model = std::make_shared<SasRecModel>(EncoderConfig{}, ids(10), 3);
  SasRecEncoder enc(model);
  const std::vector<std::string> history = {"it4", "it1", "it7"};
  const auto scores = enc.next_item_scores(history);
  REQUIRE(scores.size() == 10);
  std::string best;
  double top = -1e300;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::string id = "it" + std::to_string(i);
    if (std::find(history.begin(), history.end(), id) != history.end()) continue;
    if (scores[i] > top) {
      top = scores[i];
      best = id;
    }
  }
  CHECK(enc.predict_next(history) == best);
  CHECK(enc.predict_next({"nope"}).empty());
}

TEST_CASE("train_sequence_encoder: seeded, loss decreases, save/load round-trip") {
  testing::TempDir dir("retr");
  const auto cat = catalog_of(20);
  std::vector<std::vector<std::string>> seqs;
  for (int u = 0; u < 40; ++u) {
    std::vector<std::string> s;
    for (int t = 0; t < 7; ++t) s.push_back("it" + std::to_string((u + t) % 20));
    seqs.push_back(s);
  }
  EncoderConfig cfg;
  cfg.embed_dim = 16;
  cfg.epochs = 15;
  const auto a = train_sequence_encoder(seqs, cat, cfg, 5);
  const auto b = train_sequence_encoder(seqs, cat, cfg, 5);
  CHECK(a.final_loss < a.initial_loss);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.encoder->model().parameters() == b.encoder->model().parameters());

  a.encoder->save(dir / "enc.bin");
  const auto loaded = SasRecEncoder::load(dir / "enc.bin");
  CHECK(loaded.version() == a.encoder->version());
  CHECK(loaded.encode("u", seqs[0]).vector == a.encoder->encode("u", seqs[0]).vector);
}

TEST_CASE("BagOfItemsEncoder: recency weights and cosine of overlapping users") {
  const auto cat = catalog_of(5);
  BagOfItemsEncoder enc(cat);
  CHECK(enc.dimension() == 5);
  const auto e = enc.encode("u", {"it0", "it1"});
  // it1 is most recent: weight 1, it0 weight 0.9
  const double n = std::sqrt(1.0 + 0.81);
  CHECK(e.vector[1] == doctest::Approx(1.0 / n));
  CHECK(e.vector[0] == doctest::Approx(0.9 / n));
  CHECK(e.vector[2] == 0.0);

  const auto same = enc.encode("v", {"it0", "it1"});
  const auto disjoint = enc.encode("w", {"it3", "it4"});
  CHECK(brute_cosine(e.vector, same.vector) == doctest::Approx(1.0));
  CHECK(brute_cosine(e.vector, disjoint.vector) == 0.0);
  CHECK(enc.encode("x", {"zzz"}).vector == std::vector<double>(5, 0.0));
  CHECK(enc.version().rfind("bag:", 0) == 0);
}

TEST_CASE("SimilarUserIndex matches a brute-force scan") {
  Rng rng(42);
  // Duplicated vectors force similarity ties.
  auto embs = random_embeddings(rng, 60, 6, "v1");
  for (int i = 0; i < 10; ++i) embs.push_back({"dup" + std::to_string(i), embs[i].vector, "v1"});
  SimilarUserIndex index(embs);
  CHECK(index.size() == 70);

  for (int q = 0; q < 20; ++q) {
    const auto& query = embs[rng.uniform_index(embs.size())];
    for (std::size_t k : {1, 3, 5, 80}) {
      std::vector<std::pair<double, std::string>> all;
      for (const auto& e : embs) {
        if (e.user_id == query.user_id) continue;
        all.emplace_back(-brute_cosine(query.vector, e.vector), e.user_id);
      }
      std::sort(all.begin(), all.end());
      const auto res = index.retrieve(query, k, query.user_id);
      const std::size_t want = std::min<std::size_t>(k, all.size());
      REQUIRE(res.neighbors.size() == want);
      CHECK(res.short_result == (want < k));
      for (std::size_t i = 0; i < want; ++i) {
        CHECK(res.neighbors[i].user_id == all[i].second);
        CHECK(res.neighbors[i].similarity == doctest::Approx(-all[i].first).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("SimilarUserIndex: scale invariance, degenerate query, input checks") {
  Rng rng(3);
  auto embs = random_embeddings(rng, 20, 4, "v");
  SimilarUserIndex index(embs);
  auto q = embs[0];
  auto scaled = q;
  for (auto& x : scaled.vector) x *= 7.5;
  const auto a = index.retrieve(q, 5, "");
  const auto b = index.retrieve(scaled, 5, "");
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.neighbors[i].user_id == b.neighbors[i].user_id);
  CHECK(a.neighbors[0].user_id == q.user_id);

  UserEmbedding zero{"z", std::vector<double>(4, 0.0), "v"};
  const auto d = index.retrieve(zero, 3, "");
  CHECK(d.degenerate_query);
  // Every similarity is 0, so ties resolve by user id.
  CHECK(d.neighbors[0].user_id == "u1000");
  CHECK(d.neighbors[2].user_id == "u1002");

  CHECK_THROWS_AS(SimilarUserIndex({}), Error);
  auto mixed = embs;
  mixed[3].encoder_version = "other";
  CHECK_THROWS_AS(SimilarUserIndex{mixed}, Error);
  auto bad_dim = embs;
  bad_dim[2].vector.push_back(1.0);
  CHECK_THROWS_AS(SimilarUserIndex{bad_dim}, Error);
  auto nan = embs;
  nan[1].vector[0] = std::nan("");
  CHECK_THROWS_AS(SimilarUserIndex{nan}, Error);
  CHECK_THROWS_AS(index.retrieve(q, 0, ""), Error);
  CHECK_THROWS_AS(index.retrieve({"x", {1.0}, "v"}, 1, ""), Error);
  CHECK(index.manifest()["user_count"] == 20);
  CHECK(SimilarUserIndex(embs).checksum() == index.checksum());
}

TEST_CASE("neighbor_context gathers positive-item keywords and warns on gaps") {
  summarizer::KeywordStore store;
  store.put(summarizer::KeywordSummary("p1", {"red"}, {"car"}));
  store.put(summarizer::KeywordSummary("p2", {}, {"car", "kite"}));
  store.put(summarizer::KeywordSummary("p3", {}, {}), true);
  std::unordered_map<std::string, corpus::Impression> train;
  train["a"] = {"a", {}, "p1", {}, 5};
  train["b"] = {"b", {}, "p2", {}, 5};
  train["c"] = {"c", {}, "p3", {}, 5};

  RetrievalResult r;
  r.neighbors = {{"a", 0.9}, {"b", 0.8}, {"c", 0.7}, {"ghost", 0.6}};
  const auto bundle = neighbor_context(r, store, train);
  CHECK(bundle.entries.size() == 3);
  CHECK(bundle.missing_keywords == 1);
  CHECK(bundle.warnings.size() == 2);
  CHECK(bundle.keywords() == std::vector<std::string>{"red", "car", "kite"});
}

TEST_CASE("context_sequence prefers the full log and truncates") {
  std::unordered_map<std::string, std::vector<std::string>> seqs;
  seqs["u"] = {"a", "b", "c", "d", "e", "f", "g"};
  const corpus::Impression imp{"u", {"b", "c"}, "f", {}, 5};
  CHECK(context_sequence(imp, seqs, 10) == std::vector<std::string>{"a", "b", "c", "d", "e"});
  CHECK(context_sequence(imp, seqs, 2) == std::vector<std::string>{"d", "e"});
  const corpus::Impression other{"v", {"x", "y"}, "z", {}, 2};
  CHECK(context_sequence(other, seqs, 10) == std::vector<std::string>{"x", "y"});
}
