#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "retriever.hpp"

namespace mmsrarec::retriever {

// A training example: item indices (1-based; 0 is padding) with the next-item
// target and one sampled negative per input position.
struct TrainingExample {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<int> negatives;
};

// Parameters live in one flat vector so the optimizer and checkpoints treat
// them uniformly; see sasrec.cpp for the layout.
class SasRecModel {
 public:
  SasRecModel(EncoderConfig config, std::vector<std::string> item_ids, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  std::size_t num_items() const { return item_ids_.size(); }
  std::vector<double>& parameters() { return theta_; }
  const std::vector<double>& parameters() const { return theta_; }

  // 1-based index, or 0 for an unknown id.
  int index_of(const std::string& item_id) const;

  // Final hidden state at the last position (dropout off). Empty input gives
  // the zero vector.
  std::vector<double> encode(const std::vector<int>& items) const;

  // Mean next-item BCE over all positions of `batch`; accumulates the gradient
  // of that mean into `grad` (same layout as parameters()). `dropout_seed`
  // drives the dropout masks; pass dropout <= 0 for a deterministic pass.
  double loss_and_grad(const std::vector<TrainingExample>& batch, double dropout,
                       std::uint64_t dropout_seed, std::vector<double>* grad) const;

  std::string version() const;

  json header() const;
  static SasRecModel from_parts(const json& header, std::vector<double> theta);

 private:
  EncoderConfig config_;
  std::vector<std::string> item_ids_;
  std::unordered_map<std::string, int> index_;
  std::vector<double> theta_;
};

std::size_t sasrec_parameter_count(const EncoderConfig& config, std::size_t num_items);

}  // namespace mmsrarec::retriever
