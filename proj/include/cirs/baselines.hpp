#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cirs/rng.hpp"

namespace cirs::baselines {

enum class StaticStrategy { kSoftmax, kEpsGreedy, kRandom };

struct StaticConfig {
  StaticStrategy strategy = StaticStrategy::kSoftmax;
  double temperature = 1.0;  // softmax sampling
  double epsilon = 0.1;      // eps-greedy exploration rate

  void validate() const;
};

// Sampling distribution used by the softmax strategy: p_i proportional to
// exp(score_i / temperature).
std::vector<double> softmax_probs(std::span<const double> scores, double temperature);

std::size_t select_static(std::span<const double> scores, const StaticConfig& cfg, Rng& rng);

// UCB1 bookkeeping. The caller records each observed reward with update().
struct BanditStats {
  std::vector<std::size_t> pulls;
  std::vector<double> means;
  std::size_t total = 0;
  double c = 1.0;

  explicit BanditStats(std::size_t items, double c = 1.0);
  std::size_t items() const { return pulls.size(); }
  void update(std::size_t item, double reward);
  void validate() const;
};

// Unpulled items first (smallest id), then argmax of mean + c*sqrt(2*ln T / n).
std::size_t select_ucb(const BanditStats& stats, Rng& rng);

}  // namespace cirs::baselines
