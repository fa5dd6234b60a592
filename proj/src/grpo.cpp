#include <algorithm>
#include <cmath>
#include <numeric>

#include "summarizer.hpp"

namespace mmsrarec::summarizer {

void GrpoConfig::validate() const {
  if (group_size < 2) throw invalid_argument("GRPO group size must be >= 2");
  if (!(std_epsilon > 0.0)) throw invalid_argument("GRPO std epsilon must be positive");
  if (!(learning_rate >= 0.0)) throw invalid_argument("GRPO learning rate must be >= 0");
}

std::vector<double> grpo_advantages(std::span<const double> rewards, double std_epsilon) {
  if (rewards.size() < 2) throw invalid_argument("GRPO group needs at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  // Rounding in the mean would otherwise give an all-equal group tiny nonzero advantages.
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) {
    return std::vector<double>(rewards.size(), 0.0);
  }
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double denom = std::sqrt(var / n) + std_epsilon;
  std::vector<double> adv;
  adv.reserve(rewards.size());
  for (double r : rewards) adv.push_back((r - mean) / denom);
  return adv;
}

std::vector<std::vector<std::string>> candidate_space(const corpus::Item& item,
                                                      std::size_t top,
                                                      std::size_t min_size,
                                                      std::size_t max_size) {
  const auto tokens = backends::top_tokens(item.text(), top);
  std::vector<std::vector<std::string>> out;
  const std::size_t n = tokens.size();
  for (std::size_t size = min_size; size <= std::min(max_size, n); ++size) {
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    for (;;) {
      std::vector<std::string> subset;
      for (auto i : idx) subset.push_back(tokens[i]);
      out.push_back(std::move(subset));
      // Advance to the next combination in lexicographic order.
      std::size_t k = size;
      while (k > 0 && idx[k - 1] == n - size + k - 1) --k;
      if (k == 0) break;
      ++idx[k - 1];
      for (std::size_t j = k; j < size; ++j) idx[j] = idx[j - 1] + 1;
    }
  }
  return out;
}

std::vector<double> GrpoTrace::mean_rewards() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.mean_reward);
  return out;
}

double GrpoTrace::window_mean(std::size_t begin, std::size_t end) const {
  end = std::min(end, steps.size());
  if (begin >= end) return 0.0;
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += steps[i].mean_reward;
  return sum / static_cast<double>(end - begin);
}

GrpoTrace grpo_toy_optimize(const corpus::Item& item,
                            const std::vector<std::vector<std::string>>& candidates,
                            const backends::BackendSuite& suite,
                            const RewardWeights& weights, const ReconOptions& recon,
                            const GrpoConfig& config, std::uint64_t seed) {
  config.validate();
  weights.validate();
  if (candidates.empty()) throw invalid_argument("empty candidate space for " + item.item_id);

  GrpoTrace trace;
  trace.item_id = item.item_id;
  trace.candidates = candidates;
  const std::string text = item.text();
  for (const auto& kws : candidates) {
    trace.candidate_rewards.push_back(
        score_summary(KeywordSummary(item.item_id, {}, kws), text, suite, weights, recon));
  }

  const std::size_t m = candidates.size();
  std::vector<double> logits(m, 0.0), pi(m), grad(m);
  trace.initial_logits = logits;
  Rng rng(derive_seed(seed, {"grpo", item.item_id}));

  for (std::size_t step = 0; step < config.steps; ++step) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t a = 0; a < m; ++a) z += (pi[a] = std::exp(logits[a] - mx));
    for (double& p : pi) p /= z;

    GrpoStep s;
    for (std::size_t g = 0; g < config.group_size; ++g) {
      const double u = rng.uniform01();
      double acc = 0.0;
      std::size_t a = m - 1;
      for (std::size_t c = 0; c < m; ++c) {
        acc += pi[c];
        if (u < acc) {
          a = c;
          break;
        }
      }
      s.actions.push_back(a);
      s.rewards.push_back(trace.candidate_rewards[a].total);
    }
    s.advantages = grpo_advantages(s.rewards, config.std_epsilon);
    s.mean_reward = std::accumulate(s.rewards.begin(), s.rewards.end(), 0.0) /
                    static_cast<double>(s.rewards.size());

    // d log pi(a) / d logit(b) = 1[a == b] - pi(b)
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t g = 0; g < s.actions.size(); ++g) {
      const double adv = s.advantages[g];
      for (std::size_t b = 0; b < m; ++b) grad[b] -= adv * pi[b];
      grad[s.actions[g]] += adv;
    }
    for (std::size_t b = 0; b < m; ++b) logits[b] += config.learning_rate * grad[b];
    trace.steps.push_back(std::move(s));
  }
  trace.final_logits = logits;
  return trace;
}

std::vector<json> advantage_records(const GrpoTrace& trace, const corpus::Item& item) {
  const std::string prompt = render_summary_prompt(item).text;
  std::vector<json> out;
  for (std::size_t step = 0; step < trace.steps.size(); ++step) {
    const auto& s = trace.steps[step];
    const std::string group_id = trace.item_id + "/" + std::to_string(step);
    for (std::size_t g = 0; g < s.actions.size(); ++g) {
      const auto a = s.actions[g];
      out.push_back(json{
          {"item_id", trace.item_id},
          {"prompt", prompt},
          {"completion", backends::render_keyword_lines({}, trace.candidates[a])},
          {"reward_breakdown", trace.candidate_rewards[a].to_json()},
          {"advantage", s.advantages[g]},
          {"group_id", group_id}});
    }
  }
  return out;
}

}  // namespace mmsrarec::summarizer
