#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cirs/adam.hpp"
#include "cirs/env.hpp"
#include "cirs/graph.hpp"
#include "cirs/params.hpp"
#include "cirs/rng.hpp"
#include "cirs/statetracker.hpp"
#include "cirs/usermodel.hpp"

namespace cirs::policy {

struct PolicyConfig {
  std::size_t items = 0;      // discrete catalog size
  std::size_t d_s = 32;       // state width coming from the tracker
  bool continuous = false;    // diagonal-Gaussian actor over raw action vectors
  std::size_t action_dim = 0; // continuous mode only
};

// Actor and critic heads over tracker states. Heads live in separate stores so
// each side keeps its own optimizer.
class ActorCritic {
 public:
  ActorCritic(PolicyConfig cfg, std::uint64_t seed);

  const PolicyConfig& config() const { return cfg_; }
  nn::ParamStore& actor() { return actor_; }
  const nn::ParamStore& actor() const { return actor_; }
  nn::ParamStore& critic() { return critic_; }
  const nn::ParamStore& critic() const { return critic_; }

  nn::Val logits(nn::Graph& g, nn::Val states) const;        // [T, items]
  nn::Val value(nn::Graph& g, nn::Val states) const;         // [T, 1]
  nn::Val action_mean(nn::Graph& g, nn::Val states) const;   // [T, action_dim]
  nn::Val action_log_std(nn::Graph& g, std::size_t steps) const;  // [T, action_dim]

 private:
  PolicyConfig cfg_;
  nn::ParamStore actor_;
  nn::ParamStore critic_;
};

enum class ActMode { kSample, kGreedy };

struct ActResult {
  std::size_t item = 0;          // discrete choice
  std::vector<double> action;    // continuous choice
  double log_prob = 0.0;
  double value = 0.0;
};

ActResult act(const ActorCritic& ac, std::span<const double> state, ActMode mode, Rng& rng);

// One fixed-horizon planning episode. values carries the bootstrap entry, so
// it is one longer than the per-step vectors.
struct Episode {
  std::size_t user = 0;
  std::vector<std::size_t> items;
  std::vector<std::vector<double>> actions;  // continuous mode only
  std::vector<double> gate_rewards;          // what the tracker gate saw
  std::vector<double> rewards;               // training rewards
  std::vector<double> log_probs;             // behavior policy, frozen
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t steps() const { return rewards.size(); }
  void validate(bool continuous) const;
};

struct RolloutBatch {
  std::vector<Episode> episodes;

  std::size_t total_steps() const;
  void validate(bool continuous) const;
};

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  std::size_t update_epochs = 4;
  std::size_t minibatch = 2;   // episodes per optimizer step
  std::size_t rollouts = 8;    // episodes per planning epoch
  std::size_t horizon = 30;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double tracker_lr = 1e-3;
  bool anneal = false;         // decay all three rates linearly over the epochs
  std::size_t epochs = 50;     // planning epochs

  void validate() const;
};

// Optimizer bundle that persists across planning epochs. The tracker entry
// applies the gradients accumulated while the heads were updating.
struct PpoOptimizers {
  nn::Adam actor;
  nn::Adam critic;
  nn::Adam tracker;

  PpoOptimizers(ActorCritic& ac, tracker::StateTracker& tr, const PpoConfig& cfg);
};

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        double gamma, double lambda);

// Shifts and scales advantages across the whole batch to mean 0, std 1.
void normalize_advantages(RolloutBatch& batch);

// min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv), elementwise.
nn::Val clipped_objective(nn::Graph& g, nn::Val ratio, nn::Val adv, double eps);

// Sum over the episode's steps of the PPO loss (negated clipped objective plus
// weighted value and entropy terms). Exposed for gradient diagnostics.
nn::Val episode_loss(nn::Graph& g, const Episode& ep, const ActorCritic& ac,
                     const tracker::StateTracker& tr, const PpoConfig& cfg,
                     const std::vector<std::vector<double>>* user_features = nullptr);

struct PpoDiagnostics {
  double surrogate = 0.0;      // mean clipped objective before any update
  double value_loss = 0.0;     // before any update
  double entropy = 0.0;        // before any update
  double clip_fraction = 0.0;  // measured over the final update epoch
};

PpoDiagnostics ppo_update(const RolloutBatch& batch, ActorCritic& ac, tracker::StateTracker& tr,
                          const PpoConfig& cfg, PpoOptimizers& opt, Rng& rng,
                          const std::vector<std::vector<double>>* user_features = nullptr);

struct PlanEpochStats {
  std::size_t epoch = 0;
  double mean_reward = 0.0;    // counterfactual reward per step
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

struct PlanResult {
  std::vector<PlanEpochStats> stats;
};

// Invoked after each planning epoch's update, e.g. to interleave evaluation.
using PlanCallback = std::function<void(const PlanEpochStats&)>;

// Nearest catalog item by Euclidean distance; ties go to the smaller id.
std::size_t nearest_item(const env::ItemCatalog& catalog, std::span<const double> action);

// One fixed-horizon episode against the counterfactual reward.
Episode rollout_episode(const ActorCritic& ac, const tracker::StateTracker& tr,
                        const model::CausalUserModel& um, const env::ItemCatalog& catalog,
                        std::size_t user, const PpoConfig& cfg, Rng& rng,
                        ActMode mode = ActMode::kSample,
                        const std::vector<std::vector<double>>* user_features = nullptr);

// Planning stage: rolls fixed-horizon episodes against the counterfactual
// reward and applies PPO updates; users are sampled with replacement.
// Continuous trackers read per-user feature vectors from user_features.
PlanResult plan(ActorCritic& ac, tracker::StateTracker& tr, const model::CausalUserModel& um,
                const env::ItemCatalog& catalog, std::size_t users, const PpoConfig& cfg,
                std::uint64_t seed,
                const std::vector<std::vector<double>>* user_features = nullptr,
                const PlanCallback& on_epoch = {});

}  // namespace cirs::policy
