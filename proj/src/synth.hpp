#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"

namespace mmsrarec::synth {

// planted-sequential: every user walks consecutive items of one ring of 50.
// clustered-taste: items carry cluster-themed title/caption words and each
// user walks a contiguous stretch of one cluster's ring.
struct SynthOptions {
  std::string profile = "clustered-taste";
  std::uint64_t seed = 0;
  std::size_t users = 0;  // 0: profile default (500 planted, 2000 clustered)
  std::size_t items = 0;  // planted only; 0: 50
  std::size_t clusters = 4;
  std::size_t items_per_cluster = 50;
  std::size_t min_length = 0;  // 0: profile default
  std::size_t max_length = 0;
  double noise = 0.0;  // clustered: chance an interaction leaves the cluster
};

struct SynthCorpus {
  corpus::ItemCatalog catalog;
  std::vector<corpus::Interaction> interactions;
  std::unordered_map<std::string, std::size_t> user_cluster;  // clustered only
};

// Throws kInvalidArgument for an unknown profile name.
SynthCorpus synth_corpus(const SynthOptions& options);

// Writes items.jsonl and interactions.jsonl under `dir`.
void write_synth(const std::filesystem::path& dir, const SynthCorpus& corpus);

}  // namespace mmsrarec::synth
