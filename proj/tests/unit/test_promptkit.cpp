#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "golden.hpp"
#include "helpers.hpp"

#include "promptkit.hpp"

using namespace mmsrarec;
using namespace mmsrarec::promptkit;

namespace {

struct Fixture {
  corpus::ItemCatalog catalog;
  summarizer::KeywordStore store;
  std::vector<corpus::Impression> train;

  Fixture() {
    for (int i = 0; i < 30; ++i) {
      const std::string id = "i" + std::to_string(100 + i);
      catalog.add({id, "Title " + id, "Desc " + id, "cap " + id});
      store.put(summarizer::KeywordSummary(id, {"c" + id}, {"k" + id}));
    }
    for (int u = 0; u < 6; ++u) {
      corpus::Impression imp;
      imp.user_id = "u" + std::to_string(u);
      for (int h = 0; h < 5; ++h) imp.history.push_back("i" + std::to_string(100 + u + h));
      imp.positive = "i" + std::to_string(105 + u);
      for (int n = 0; n < 8; ++n) imp.negatives.push_back("i" + std::to_string(120 + (u + n) % 10));
      imp.target_index = 5;
      train.push_back(imp);
    }
  }
};

std::array<std::size_t, 4> count_kinds(const SftDataset& ds) {
  std::array<std::size_t, 4> c{};
  for (const auto& inst : ds.instances) ++c[static_cast<int>(inst.task_kind)];
  return c;
}

}  // namespace

TEST_CASE("pointwise prompt matches the golden file") {
  const auto p = render_pointwise(golden::user_keywords(), golden::neighbor_keywords(), golden::shoe());
  CHECK(p.text == golden::file("pointwise.txt"));
  CHECK(p.media == std::vector<std::string>{"blue shoe on rocks"});
  CHECK(image_slots(p.text) == p.media.size());
  CHECK(p.target.empty());
}

TEST_CASE("pointwise prompt without neighbors drops the section") {
  const auto p = render_pointwise(golden::user_keywords(), std::nullopt, golden::shoe());
  CHECK(p.text == golden::file("pointwise_no_neighbors.txt"));
  const auto empty = render_pointwise(golden::user_keywords(), std::vector<std::string>{},
                                      golden::shoe());
  CHECK(empty.text.find("relevant users prefer:\n\n\n\n") != std::string::npos);
}

TEST_CASE("multiclass prompt matches the golden file") {
  const auto p = render_multiclass(golden::user_keywords(), golden::neighbor_keywords(),
                                   {golden::shoe(), golden::stove()});
  CHECK(p.text == golden::file("multiclass.txt"));
  CHECK(p.media == std::vector<std::string>{"blue shoe on rocks", "steel stove"});
  CHECK(image_slots(p.text) == 2);
  CHECK_THROWS_AS(render_multiclass({}, std::nullopt, {golden::shoe()}), Error);
  const std::vector<corpus::Item> six(6, golden::shoe());
  CHECK_THROWS_AS(render_multiclass({}, std::nullopt, six), Error);
}

TEST_CASE("reconstruction prompt matches the golden file") {
  const auto p = render_reconstruction(golden::item_keywords(), golden::shoe());
  REQUIRE(p.has_value());
  CHECK(p->text == golden::file("reconstruction.txt"));
  CHECK(p->target == "Trail Runner Shoe Lightweight shoe for rocky trails.");
  CHECK(p->media.empty());
  CHECK_FALSE(render_reconstruction({}, golden::shoe()).has_value());
}

TEST_CASE("summarization instance reuses the summary prompt with the stored target") {
  summarizer::KeywordStore store;
  store.put(summarizer::KeywordSummary("g1", {"blue shoe"}, {"trail", "lightweight"}));
  const auto p = render_summarization(golden::shoe(), store);
  REQUIRE(p.has_value());
  CHECK(p->text == golden::file("summarization.txt"));
  CHECK(p->target == "Cover: blue shoe\nContent: trail,lightweight");
  CHECK_FALSE(render_summarization(golden::stove(), store).has_value());
  store.put(summarizer::KeywordSummary("g2", {}, {}), true);
  CHECK_FALSE(render_summarization(golden::stove(), store).has_value());
}

TEST_CASE("PromptInstance serializations") {
  auto p = render_pointwise({"a"}, std::nullopt, golden::shoe());
  p.target = "Yes";
  const auto j = p.to_json();
  CHECK(j["task_kind"] == "pointwise");
  CHECK(j["messages"][0]["role"] == "user");
  CHECK(j["messages"][0]["content"] == p.text);
  CHECK(j["target"] == "Yes");
  const auto c = p.to_conversation();
  CHECK(c["messages"][1]["role"] == "assistant");
  CHECK(c["messages"][1]["content"] == "Yes");
  CHECK(parse_task("multiclass") == TaskKind::kMulticlass);
  CHECK_THROWS_AS(parse_task("nope"), Error);
}

TEST_CASE("user_keywords flattens in history order without duplicates") {
  summarizer::KeywordStore store;
  store.put(summarizer::KeywordSummary("a", {"red"}, {"car"}));
  store.put(summarizer::KeywordSummary("b", {"car"}, {"fast"}));
  CHECK(user_keywords({"a", "b", "zzz"}, store) == std::vector<std::string>{"red", "car", "fast"});
}

TEST_CASE("build_sft_dataset: pointwise-only mix") {
  Fixture f;
  SftOptions opt;
  opt.mix = {1, 0, 0, 0};
  opt.total_instances = 10;
  const auto ds = build_sft_dataset(f.train, f.catalog, f.store, {}, opt);
  CHECK(ds.instances.size() == 10);
  std::size_t yes = 0, no = 0;
  for (const auto& inst : ds.instances) {
    CHECK(inst.task_kind == TaskKind::kPointwise);
    yes += inst.target == "Yes";
    no += inst.target == "No";
  }
  CHECK(yes == 5);
  CHECK(no == 5);
}

TEST_CASE("build_sft_dataset: 100 instances split 50/20/15/15") {
  Fixture f;
  SftOptions opt;
  opt.total_instances = 100;
  opt.seed = 4;
  NeighborKeywords nk;
  nk["u0"] = std::vector<std::string>{"x", "y"};
  nk["u1"] = std::nullopt;
  const auto ds = build_sft_dataset(f.train, f.catalog, f.store, nk, opt);
  const std::array<std::size_t, 4> want = {50, 20, 15, 15};
  CHECK(ds.planned == want);
  CHECK(ds.counts == want);
  CHECK(count_kinds(ds) == want);
  CHECK(ds.skipped == 0);
  CHECK(ds.mix_report()["counts"]["multiclass"] == 20);

  for (const auto& inst : ds.instances) {
    if (inst.task_kind == TaskKind::kMulticlass) {
      const int slot = std::stoi(inst.target);
      CHECK(slot >= 1);
      CHECK(slot <= 5);
      CHECK(inst.media.size() == 5);
    }
    CHECK(image_slots(inst.text) == inst.media.size());
  }
  // u0 has neighbor keywords, u1 has none.
  std::size_t with_u0 = 0, with_u1 = 0;
  for (const auto& inst : ds.instances) {
    if (inst.task_kind != TaskKind::kPointwise) continue;
    const bool has_section = inst.text.find("relevant users prefer:\n\nx, y\n") != std::string::npos;
    if (inst.text.find("prefers:\n\nci100,") != std::string::npos) {
      ++with_u0;
      CHECK(has_section);
    }
    if (inst.text.find("prefers:\n\nci101,") != std::string::npos) {
      ++with_u1;
      CHECK(inst.text.find("relevant users") == std::string::npos);
    }
  }
  CHECK(with_u0 > 0);
  CHECK(with_u1 > 0);
}

TEST_CASE("build_sft_dataset: odd pointwise allocation drops one instance") {
  Fixture f;
  SftOptions opt;
  opt.mix = {1, 0, 0, 0};
  opt.total_instances = 7;
  const auto ds = build_sft_dataset(f.train, f.catalog, f.store, {}, opt);
  CHECK(ds.instances.size() == 6);
  CHECK(ds.planned[0] == 6);
}

TEST_CASE("build_sft_dataset: default size, seeded and order independent") {
  Fixture f;
  SftOptions opt;
  opt.seed = 9;
  const auto a = build_sft_dataset(f.train, f.catalog, f.store, {}, opt);
  CHECK(a.instances.size() == 12);
  auto reversed = f.train;
  std::reverse(reversed.begin(), reversed.end());
  const auto b = build_sft_dataset(reversed, f.catalog, f.store, {}, opt);
  REQUIRE(a.instances.size() == b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) {
    CHECK(a.instances[i].to_json() == b.instances[i].to_json());
  }
  opt.total_instances = 200;
  const auto c1 = build_sft_dataset(f.train, f.catalog, f.store, {}, opt);
  opt.seed = 10;
  const auto c2 = build_sft_dataset(f.train, f.catalog, f.store, {}, opt);
  bool differs = false;
  for (std::size_t i = 0; i < c1.instances.size(); ++i) {
    differs = differs || c1.instances[i].to_json() != c2.instances[i].to_json();
  }
  CHECK(differs);
}

TEST_CASE("build_sft_dataset: dataset files are written one record per line") {
  testing::TempDir dir("sft");
  Fixture f;
  SftOptions opt;
  opt.total_instances = 20;
  const auto ds = build_sft_dataset(f.train, f.catalog, f.store, {}, opt);
  write_sft_dataset(dir / "d.jsonl", ds);
  write_conversations(dir / "c.jsonl", ds);
  CHECK(read_jsonl(dir / "d.jsonl").size() == ds.instances.size());
  CHECK(read_jsonl(dir / "c.jsonl").size() == ds.instances.size());
}

TEST_CASE("sft_loss_reference worked examples") {
  CHECK(sft_loss_reference({{0.0, 0.0}, {0.0}}) == 0.0);
  CHECK(sft_loss_reference({{-1.0, -1.0}}) == doctest::Approx(2.0));
  CHECK(sft_loss_reference({{-1.0}, {-3.0, -1.0}}) == doctest::Approx(2.5));
  CHECK_THROWS_AS(sft_loss_reference({}), Error);
}

TEST_CASE("score_targets conditions on the prompt tokens") {
  backends::MockBackend mock;
  PromptInstance p;
  p.text = "yes yes maybe";
  p.target = "Yes";
  const auto lps = score_targets({p}, mock);
  REQUIRE(lps.size() == 1);
  REQUIRE(lps[0].size() == 1);
  CHECK(lps[0][0] == doctest::Approx(std::log(3.0 / (3.0 + 65536.0))));
}
