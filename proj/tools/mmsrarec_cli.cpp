#include <cstdio>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmsrarec/mmsrarec.h"

namespace {

int fail(mmsr_status st) {
  std::fprintf(stderr, "error (%s): %s\n", mmsr_status_name(st), mmsr_last_error());
  return static_cast<int>(st);
}

void print_and_free(char* s) {
  if (s != nullptr) {
    std::printf("%s\n", s);
    mmsr_string_free(s);
  }
}

std::string json_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out + "\"";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal sequential recommendation pipeline"};
  app.fallthrough();  // global options may follow the subcommand
  app.require_subcommand(1);
  app.set_version_flag("--version", mmsr_version());

  std::string config_path, backend, workdir;
  std::optional<std::uint64_t> seed;
  bool force = false, verbose = false;
  app.add_option("--config", config_path, "Pipeline config file (JSON)");
  app.add_option("--seed", seed, "Override the global seed");
  app.add_option("--backend", backend, "mock-oracle, mock-random or remote:<url>");
  app.add_option("--workdir", workdir, "Override the artifact directory");
  app.add_flag("--force", force, "Re-run stages even when their inputs are unchanged");
  app.add_flag("-v,--verbose", verbose, "Progress messages on stderr");

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"ingest", "Read items and interactions, collect malformed lines"},
      {"filter", "Drop low-activity users and items"},
      {"impressions", "Build history/positive/negatives impressions"},
      {"split", "Seeded train/valid/test split"},
      {"summarize", "Keyword summaries for every item"},
      {"grpo-toy", "Toy GRPO keyword-policy optimization"},
      {"train-retriever", "Train the sequence encoder"},
      {"build-index", "Embed training users into the similar-user index"},
      {"retrieve", "Similar users and their next-item keywords"},
      {"build-sft", "Multi-task instruction dataset"},
      {"evaluate", "Score impressions, HR/NDCG/AUC report"},
  };
  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  for (const auto& [name, help] : stages) stage_cmds.emplace_back(app.add_subcommand(name, help), name);

  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run every stage in order");

  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate once per value of n or k");
  std::string sweep_param;
  std::vector<std::size_t> sweep_values;
  sweep_cmd->add_option("--param", sweep_param, "n or k")
      ->required()
      ->check(CLI::IsMember({"n", "k"}));
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated values")
      ->required()
      ->delimiter(',');

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus");
  std::string profile = "clustered-taste", out_dir = "data";
  std::size_t users = 0;
  synth_cmd->add_option("--profile", profile, "planted-sequential or clustered-taste");
  synth_cmd->add_option("--out", out_dir, "Output directory");
  synth_cmd->add_option("--users", users, "Number of users (0: profile default)");

  CLI11_PARSE(app, argc, argv);

  if (synth_cmd->parsed()) {
    char* out = nullptr;
    const auto st = mmsr_synth(profile.c_str(), seed.value_or(0), users, out_dir.c_str(), &out);
    if (st != MMSR_OK) return fail(st);
    print_and_free(out);
    return 0;
  }

  std::ostringstream overrides;
  overrides << '{';
  bool first = true;
  const auto field = [&](const std::string& text) {
    if (!first) overrides << ',';
    overrides << text;
    first = false;
  };
  if (seed) field("\"seed\":" + std::to_string(*seed));
  if (!backend.empty()) field("\"backend\":{\"kind\":" + json_string(backend) + "}");
  if (!workdir.empty()) field("\"workdir\":" + json_string(workdir));
  overrides << '}';

  mmsr_pipeline* p = nullptr;
  auto st = mmsr_pipeline_create(config_path.empty() ? nullptr : config_path.c_str(),
                                 overrides.str().c_str(), &p);
  if (st != MMSR_OK) return fail(st);
  mmsr_pipeline_set_verbose(p, verbose ? 1 : 0);

  char* out = nullptr;
  if (pipeline_cmd->parsed()) {
    st = mmsr_pipeline_run_all(p, force, &out);
  } else if (sweep_cmd->parsed()) {
    st = mmsr_pipeline_sweep(p, sweep_param.c_str(), sweep_values.data(), sweep_values.size(),
                             force, &out);
  } else {
    for (const auto& [cmd, name] : stage_cmds) {
      if (cmd->parsed()) st = mmsr_pipeline_run_stage(p, name.c_str(), force, &out);
    }
  }
  mmsr_pipeline_destroy(p);
  if (st != MMSR_OK) return fail(st);
  print_and_free(out);
  return 0;
}
