#include <cmath>
#include <numeric>

#include "doctest.h"

#include "summarizer.hpp"

using namespace mmsrarec;
using namespace mmsrarec::summarizer;

namespace {

corpus::Item toy_item() {
  return {"t1", "Waterproof hiking boot", "Leather hiking boot with waterproof lining and grip sole",
          "brown boot"};
}

}  // namespace

TEST_CASE("grpo_advantages: worked example") {
  const std::vector<double> r = {1.0, 2.0, 3.0};
  const auto a = grpo_advantages(r, 0.0 + 1e-12);
  // mean 2, population std sqrt(2/3)
  const double s = std::sqrt(2.0 / 3.0);
  CHECK(a[0] == doctest::Approx(-1.0 / s));
  CHECK(a[1] == doctest::Approx(0.0));
  CHECK(a[2] == doctest::Approx(1.0 / s));
  CHECK(a[2] == doctest::Approx(1.2247448713915890));
}

TEST_CASE("grpo_advantages: equal rewards give zeros; small groups rejected") {
  const std::vector<double> r(8, -3.5);
  for (double a : grpo_advantages(r, 1e-8)) CHECK(a == 0.0);
  const std::vector<double> one = {1.0};
  CHECK_THROWS_AS(grpo_advantages(one, 1e-8), Error);
}

TEST_CASE("candidate_space enumerates subsets by size then position") {
  const corpus::Item item{"i", "a b c", "", ""};
  const auto cs = candidate_space(item, 8, 2, 6);
  // C(3,2) + C(3,3)
  REQUIRE(cs.size() == 4);
  CHECK(cs[0] == std::vector<std::string>{"a", "b"});
  CHECK(cs[1] == std::vector<std::string>{"a", "c"});
  CHECK(cs[2] == std::vector<std::string>{"b", "c"});
  CHECK(cs[3] == std::vector<std::string>{"a", "b", "c"});
  // 8 tokens, sizes 2..6: 28+56+70+56+28
  const corpus::Item wide{"w", "a b c d e f g h i j", "", ""};
  CHECK(candidate_space(wide).size() == 238);
}

TEST_CASE("grpo_toy_optimize: zero learning rate leaves logits unchanged") {
  const auto item = toy_item();
  const auto suite = backends::make_mock_suite({});
  GrpoConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.steps = 20;
  const auto trace = grpo_toy_optimize(item, candidate_space(item), suite, {}, {}, cfg, 1);
  CHECK(trace.final_logits == trace.initial_logits);
  CHECK(trace.steps.size() == 20);
  for (const auto& s : trace.steps) CHECK(s.actions.size() == 8);
}

TEST_CASE("grpo_toy_optimize: single candidate has zero advantage throughout") {
  const auto item = toy_item();
  const auto suite = backends::make_mock_suite({});
  GrpoConfig cfg;
  cfg.steps = 5;
  const auto trace = grpo_toy_optimize(item, {{"boot", "hiking"}}, suite, {}, {}, cfg, 1);
  for (const auto& s : trace.steps) {
    for (double a : s.advantages) CHECK(a == 0.0);
  }
  CHECK(trace.final_logits == trace.initial_logits);
  CHECK_THROWS_AS(grpo_toy_optimize(item, {}, suite, {}, {}, cfg, 1), Error);
}

TEST_CASE("grpo_toy_optimize: mean reward rises and the run is seeded") {
  const auto item = toy_item();
  const auto suite = backends::make_mock_suite({});
  const auto cands = candidate_space(item);
  const auto a = grpo_toy_optimize(item, cands, suite, {}, {}, {}, 7);
  CHECK(a.window_mean(180, 200) > a.window_mean(0, 20));
  const auto b = grpo_toy_optimize(item, cands, suite, {}, {}, {}, 7);
  CHECK(a.final_logits == b.final_logits);
  const auto c = grpo_toy_optimize(item, cands, suite, {}, {}, {}, 8);
  CHECK(a.final_logits != c.final_logits);
}

TEST_CASE("advantage_records carry one row per sampled completion") {
  const auto item = toy_item();
  const auto suite = backends::make_mock_suite({});
  GrpoConfig cfg;
  cfg.steps = 3;
  const auto trace = grpo_toy_optimize(item, candidate_space(item), suite, {}, {}, cfg, 2);
  const auto rows = advantage_records(trace, item);
  CHECK(rows.size() == 24);
  CHECK(rows[0]["group_id"] == "t1/0");
  CHECK(rows[23]["group_id"] == "t1/2");
  CHECK(rows[0]["completion"].get<std::string>().rfind("Cover: \nContent: ", 0) == 0);
  double sum = 0.0;
  for (std::size_t i = 0; i < 8; ++i) sum += rows[i]["advantage"].get<double>();
  CHECK(std::abs(sum) < 1e-9);
}
