#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "mmsrarec/mmsrarec.h"

using nlohmann::json;

namespace {

json take(char* s) {
  REQUIRE(s != nullptr);
  json j = json::parse(s);
  mmsr_string_free(s);
  return j;
}

std::filesystem::path scratch(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("mmsr_capi_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(mmsr_version()) == "0.1.0");
  CHECK(std::string(mmsr_status_name(MMSR_OK)) == "ok");
  CHECK(std::string(mmsr_status_name(MMSR_MISSING_ARTIFACT)) == "missing-artifact");
}

TEST_CASE("tokenize through the C API") {
  char* out = nullptr;
  REQUIRE(mmsr_tokenize("Red-Car, fast!", &out) == MMSR_OK);
  CHECK(take(out) == json::array({"red", "car", "fast"}));
  CHECK(mmsr_tokenize(nullptr, &out) == MMSR_INVALID_ARGUMENT);
  CHECK(std::string(mmsr_last_error()).size() > 0);
}

TEST_CASE("reward breakdown through the C API") {
  char* out = nullptr;
  REQUIRE(mmsr_reward_breakdown("Cover: red\nContent: car", "red car", nullptr, &out) == MMSR_OK);
  const json j = take(out);
  CHECK(j["r_info"].get<double>() == doctest::Approx(1.0));
  CHECK(j["r_len"] == -2.0);
  CHECK(j["total"].get<double>() ==
        doctest::Approx(j["r_info"].get<double>() + 0.1 * j["r_recon"].get<double>() - 0.1));
  CHECK(mmsr_reward_breakdown("nothing", "x", nullptr, &out) == MMSR_PARSE);
  CHECK(mmsr_reward_breakdown("Cover: a\nContent: b", "x", "{oops", &out) == MMSR_PARSE);
}

TEST_CASE("GRPO advantages and rank metrics through the C API") {
  const double r[] = {1.0, 2.0, 3.0};
  double adv[3];
  REQUIRE(mmsr_grpo_advantages(r, 3, 1e-8, adv) == MMSR_OK);
  CHECK(adv[2] == doctest::Approx(std::sqrt(1.5)));
  CHECK(mmsr_grpo_advantages(r, 1, 1e-8, adv) == MMSR_INVALID_ARGUMENT);

  const double scores[] = {0.4, 0.9, 0.1, 0.4};
  const char* ids[] = {"p", "a", "b", "c"};
  size_t rank = 0;
  double hr = 0, ndcg = 0, auc = 0;
  REQUIRE(mmsr_rank_metrics(scores, ids, 4, 0, 5, &rank, &hr, &ndcg, &auc) == MMSR_OK);
  // "c" ties with "p" and sorts first.
  CHECK(rank == 3);
  CHECK(hr == 1.0);
  CHECK(ndcg == doctest::Approx(0.5));
  CHECK(auc == doctest::Approx(1.5 / 3.0));
  CHECK(mmsr_rank_metrics(scores, ids, 4, 9, 5, &rank, nullptr, nullptr, nullptr) ==
        MMSR_INVALID_ARGUMENT);
}

TEST_CASE("similar-user index through the C API") {
  const double v[] = {1, 0, 0, 1, 0.9, 0.1};
  const char* users[] = {"a", "b", "c"};
  mmsr_index* idx = nullptr;
  REQUIRE(mmsr_index_create(v, 3, 2, users, "test", &idx) == MMSR_OK);
  CHECK(mmsr_index_size(idx) == 3);
  const double q[] = {1, 0};
  char* out = nullptr;
  REQUIRE(mmsr_index_query(idx, q, 2, 2, "a", &out) == MMSR_OK);
  const json j = take(out);
  CHECK(j["neighbors"][0]["user_id"] == "c");
  CHECK(j["neighbors"][1]["user_id"] == "b");
  CHECK(j["short_result"] == false);
  const double bad[] = {1, 0, 0};
  CHECK(mmsr_index_query(idx, bad, 3, 1, nullptr, &out) == MMSR_INVALID_ARGUMENT);
  mmsr_index_destroy(idx);

  mmsr_index* none = nullptr;
  CHECK(mmsr_index_create(v, 0, 2, users, "test", &none) == MMSR_INVALID_ARGUMENT);
  CHECK(none == nullptr);
}

TEST_CASE("pipeline through the C API") {
  const auto dir = scratch("pipe");
  char* out = nullptr;
  REQUIRE(mmsr_synth("clustered-taste", 1, 400, (dir / "data").c_str(), &out) == MMSR_OK);
  CHECK(take(out)["items"] == 200);

  json overrides = {{"workdir", (dir / "run").string()},
                    {"data",
                     {{"items", (dir / "data/items.jsonl").string()},
                      {"interactions", (dir / "data/interactions.jsonl").string()}}},
                    {"retriever", {{"encoder", "bag"}}}};
  mmsr_pipeline* p = nullptr;
  REQUIRE(mmsr_pipeline_create(nullptr, overrides.dump().c_str(), &p) == MMSR_OK);

  CHECK(mmsr_pipeline_run_stage(p, "evaluate", 0, &out) == MMSR_MISSING_ARTIFACT);
  CHECK(std::string(mmsr_last_error()).find("run stage") != std::string::npos);

  REQUIRE(mmsr_pipeline_run_all(p, 0, &out) == MMSR_OK);
  const json all = take(out);
  CHECK(all.size() == 11);
  CHECK(all.back()["stage"] == "evaluate");
  CHECK(all.back()["summary"]["HR@5"] == 100.0);

  REQUIRE(mmsr_pipeline_config(p, &out) == MMSR_OK);
  CHECK(take(out)["retriever"]["encoder"] == "bag");
  mmsr_pipeline_destroy(p);

  mmsr_pipeline* q = nullptr;
  CHECK(mmsr_pipeline_create(nullptr, "{\"nope\":1}", &q) == MMSR_INVALID_ARGUMENT);
  CHECK(q == nullptr);
  CHECK(mmsr_synth("nope", 0, 0, dir.c_str(), &out) == MMSR_INVALID_ARGUMENT);
  std::filesystem::remove_all(dir);
}
