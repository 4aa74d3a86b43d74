#include "cirs/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cirs::baselines {

void StaticConfig::validate() const {
  if (temperature <= 0.0) throw std::invalid_argument("baselines: temperature must be positive");
  if (epsilon < 0.0 || epsilon > 1.0) {
    throw std::invalid_argument("baselines: epsilon must be in [0,1]");
  }
}

std::vector<double> softmax_probs(std::span<const double> scores, double temperature) {
  if (scores.empty()) throw std::invalid_argument("baselines: empty catalog");
  if (temperature <= 0.0) throw std::invalid_argument("baselines: temperature must be positive");
  double top = scores[0];
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("baselines: non-finite score");
    top = std::max(top, s);
  }
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp((scores[i] - top) / temperature);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::size_t select_static(std::span<const double> scores, const StaticConfig& cfg, Rng& rng) {
  cfg.validate();
  if (scores.empty()) throw std::invalid_argument("baselines: empty catalog");
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("baselines: non-finite score");
  }

  auto argmax = [&] {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
      if (scores[i] > scores[best]) best = i;
    }
    return best;
  };

  switch (cfg.strategy) {
    case StaticStrategy::kSoftmax: {
      std::vector<double> p = softmax_probs(scores, cfg.temperature);
      return static_cast<std::size_t>(rng.categorical(p));
    }
    case StaticStrategy::kEpsGreedy:
      if (rng.uniform01() < cfg.epsilon) return rng.uniform_int(scores.size());
      return argmax();
    case StaticStrategy::kRandom:
      return rng.uniform_int(scores.size());
  }
  throw std::logic_error("baselines: unknown strategy");
}

BanditStats::BanditStats(std::size_t items, double c)
    : pulls(items, 0), means(items, 0.0), c(c) {
  if (items == 0) throw std::invalid_argument("baselines: empty catalog");
  if (c < 0.0) throw std::invalid_argument("baselines: exploration coefficient must be >= 0");
}

void BanditStats::update(std::size_t item, double reward) {
  if (item >= pulls.size()) {
    throw std::out_of_range("baselines: item " + std::to_string(item) + " out of range");
  }
  pulls[item] += 1;
  total += 1;
  means[item] += (reward - means[item]) / static_cast<double>(pulls[item]);
}

void BanditStats::validate() const {
  if (pulls.size() != means.size()) {
    throw std::invalid_argument("baselines: pulls/means size mismatch");
  }
  std::size_t n = 0;
  for (std::size_t p : pulls) n += p;
  if (n != total) throw std::invalid_argument("baselines: pull counts disagree with total");
}

std::size_t select_ucb(const BanditStats& stats, Rng&) {
  stats.validate();
  if (stats.items() == 0) throw std::invalid_argument("baselines: empty catalog");
  for (std::size_t i = 0; i < stats.items(); ++i) {
    if (stats.pulls[i] == 0) return i;
  }
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  double log_total = std::log(static_cast<double>(stats.total));
  for (std::size_t i = 0; i < stats.items(); ++i) {
    double bonus = stats.c * std::sqrt(2.0 * log_total / static_cast<double>(stats.pulls[i]));
    double score = stats.means[i] + bonus;
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

}  // namespace cirs::baselines
