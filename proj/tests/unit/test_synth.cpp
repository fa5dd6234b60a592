#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "synth.hpp"

using namespace mmsrarec;
using namespace mmsrarec::synth;

namespace {

std::map<std::string, std::set<std::string>> items_by_user(const SynthCorpus& c) {
  std::map<std::string, std::set<std::string>> out;
  for (const auto& x : c.interactions) out[x.user_id].insert(x.item_id);
  return out;
}

}  // namespace

TEST_CASE("synth: same seed gives byte-identical files") {
  testing::TempDir a("synth"), b("synth");
  SynthOptions opt;
  opt.users = 50;
  opt.seed = 3;
  write_synth(a.path(), synth_corpus(opt));
  write_synth(b.path(), synth_corpus(opt));
  CHECK(testing::read_text(a / "items.jsonl") == testing::read_text(b / "items.jsonl"));
  CHECK(testing::read_text(a / "interactions.jsonl") ==
        testing::read_text(b / "interactions.jsonl"));
  opt.seed = 4;
  testing::TempDir c("synth");
  write_synth(c.path(), synth_corpus(opt));
  CHECK(testing::read_text(a / "interactions.jsonl") !=
        testing::read_text(c / "interactions.jsonl"));
  // Output ingests cleanly.
  CHECK(corpus::ingest_items(a / "items.jsonl").rejects.empty());
  CHECK(corpus::ingest_interactions(a / "interactions.jsonl").rejects.empty());
}

TEST_CASE("synth: clustered users overlap more within a cluster") {
  SynthOptions opt;
  opt.users = 200;
  opt.seed = 1;
  const auto c = synth_corpus(opt);
  CHECK(c.catalog.size() == 200);
  const auto by_user = items_by_user(c);
  CHECK(by_user.size() == 200);
  double same = 0, cross = 0;
  std::size_t n_same = 0, n_cross = 0;
  std::vector<std::string> users;
  for (const auto& [u, _] : by_user) users.push_back(u);
  for (std::size_t i = 0; i < users.size(); i += 3) {
    for (std::size_t j = i + 1; j < users.size(); j += 7) {
      const auto& a = by_user.at(users[i]);
      const auto& b = by_user.at(users[j]);
      std::size_t inter = 0;
      for (const auto& x : a) inter += b.count(x);
      const double jac = static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
      if (c.user_cluster.at(users[i]) == c.user_cluster.at(users[j])) {
        same += jac;
        ++n_same;
      } else {
        cross += jac;
        ++n_cross;
      }
    }
  }
  REQUIRE(n_same > 0);
  REQUIRE(n_cross > 0);
  CHECK(same / n_same > cross / n_cross);
  CHECK(cross == 0.0);
}

TEST_CASE("synth: sequence lengths and timestamps") {
  SynthOptions opt;
  opt.users = 30;
  const auto c = synth_corpus(opt);
  for (const auto& [u, items] : items_by_user(c)) {
    CHECK(items.size() >= 6);
    CHECK(items.size() <= 9);
  }
  for (const auto& x : c.interactions) CHECK(x.timestamp >= 1700000000);
}

TEST_CASE("synth: planted-sequential walks consecutive ring items") {
  SynthOptions opt;
  opt.profile = "planted-sequential";
  opt.users = 20;
  const auto c = synth_corpus(opt);
  CHECK(c.catalog.size() == 50);
  std::map<std::string, std::vector<corpus::Interaction>> seq;
  for (const auto& x : c.interactions) seq[x.user_id].push_back(x);
  for (auto& [u, xs] : seq) {
    std::sort(xs.begin(), xs.end(), [](auto& a, auto& b) { return a.timestamp < b.timestamp; });
    for (std::size_t i = 1; i < xs.size(); ++i) {
      const int prev = std::stoi(xs[i - 1].item_id.substr(1));
      const int cur = std::stoi(xs[i].item_id.substr(1));
      CHECK(cur == (prev + 1) % 50);
    }
  }
}

TEST_CASE("synth: unknown profile is rejected") {
  SynthOptions opt;
  opt.profile = "nope";
  CHECK_THROWS_AS(synth_corpus(opt), Error);
}
