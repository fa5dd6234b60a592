#include <cmath>

#include "doctest.h"

#include "backends.hpp"

using namespace mmsrarec;
using namespace mmsrarec::backends;

namespace {

// FNV-1a written out independently of the library helper.
std::uint64_t fnv_reference(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("tokenize: case folding and separators") {
  CHECK(tokenize("Red, TOY-car!!") == std::vector<std::string>{"red", "toy", "car"});
  CHECK(tokenize("  a1 b2  ") == std::vector<std::string>{"a1", "b2"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("...!!").empty());
  CHECK(tokenize("caf\xc3\xa9 bar") == std::vector<std::string>{"caf\xc3\xa9", "bar"});
}

TEST_CASE("hash_embed: coordinates follow the FNV hash") {
  const auto v = hash_embed("kayak", 256);
  const std::uint64_t h = fnv_reference("kayak");
  const double sign = ((h >> 8) & 1ULL) ? 1.0 : -1.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(v[i] == doctest::Approx(i == h % 256 ? sign : 0.0));
  }
}

TEST_CASE("hash_embed: unit norm, zero for empty text, order free") {
  CHECK(norm(hash_embed("a b c d e", 256)) == doctest::Approx(1.0));
  CHECK(norm(hash_embed("", 256)) == 0.0);
  CHECK(hash_embed("x y z") == hash_embed("Z, y x"));
  CHECK(hash_embed("x", 16).size() == 16);
}

TEST_CASE("cosine and keyword_jaccard") {
  CHECK(cosine({1, 0}, {0, 1}) == doctest::Approx(0.0));
  CHECK(cosine({1, 1}, {2, 2}) == doctest::Approx(1.0));
  CHECK(cosine({0, 0}, {1, 2}) == 0.0);
  CHECK_THROWS_AS(cosine({1}, {1, 2}), Error);
  CHECK(keyword_jaccard({"red car"}, {"car", "blue"}) == doctest::Approx(1.0 / 3.0));
  CHECK(keyword_jaccard({}, {}) == 0.0);
}

TEST_CASE("mock scorer: smoothed unigram log-probabilities") {
  MockBackend mock;
  const auto lps = mock.score({"red car", "red"}, {"red", "car", "bike"});
  REQUIRE(lps.size() == 3);
  const double denom = 3.0 + 65536.0;
  CHECK(lps[0] == doctest::Approx(std::log(3.0 / denom)));
  CHECK(lps[1] == doctest::Approx(std::log(2.0 / denom)));
  CHECK(lps[2] == doctest::Approx(std::log(1.0 / denom)));
  const auto empty = mock.score({}, {"x"});
  CHECK(empty[0] == doctest::Approx(std::log(1.0 / 65536.0)));
}

TEST_CASE("mock generator: top-m keywords of caption and text") {
  MockState st;
  st.summary_keywords = 3;
  MockBackend mock(st);
  GenerationRequest req;
  req.subject = SubjectItem{"red toy car", "red car for toddlers", "a small red car"};
  CHECK(mock.generate(req) == "Cover: a,car,red\nContent: car,red,for");

  GenerationRequest plain;
  plain.prompt = "Summarize.\nTitle: red toy car\nDescription: red car for toddlers\n";
  CHECK(mock.generate(plain) == "Cover: \nContent: car,red,for");
}

TEST_CASE("mock first token: oracle closed form") {
  MockBackend mock;
  FirstTokenRequest req;
  req.features.context_keywords = {"alpha"};
  req.features.candidate_keywords = {"beta"};
  auto d = mock.first_token(req);
  CHECK(d.at("yes") == doctest::Approx(0.401312339887548).epsilon(1e-12));
  CHECK(d.at("no") == doctest::Approx(1.0 - 0.401312339887548).epsilon(1e-12));

  req.features.candidate_keywords = {"alpha"};
  d = mock.first_token(req);
  CHECK(d.at("yes") == doctest::Approx(1.0 / (1.0 + std::exp(-8.0 * 0.95))));

  req.features.candidate_keywords = {"beta"};
  req.features.candidate_is_ground_truth = true;
  CHECK(mock.first_token(req).at("yes") >= 0.99);
}

TEST_CASE("mock first token: random mode is seeded and ignores features") {
  MockState st;
  st.mode = MockMode::kRandom;
  st.seed = 5;
  MockBackend a(st), b(st);
  PromptFeatures f;
  f.user_id = "u1";
  f.item_id = "i1";
  const double p = a.yes_mass(f);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(b.yes_mass(f) == p);
  f.candidate_is_ground_truth = true;
  CHECK(a.yes_mass(f) == p);
  f.item_id = "i2";
  CHECK(a.yes_mass(f) != p);
  st.seed = 6;
  f.item_id = "i1";
  CHECK(MockBackend(st).yes_mass(f) != p);
}

TEST_CASE("make_mock_suite wires one backend into every role") {
  const auto suite = make_mock_suite({});
  CHECK(suite.description == "mock-oracle");
  CHECK(suite.embedder->dimension() == 256);
  CHECK(suite.generator != nullptr);
  CHECK(suite.token_scorer != nullptr);
  CHECK(suite.first_token != nullptr);
}
