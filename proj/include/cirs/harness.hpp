#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cirs/baselines.hpp"
#include "cirs/env.hpp"
#include "cirs/policy.hpp"
#include "cirs/synth.hpp"
#include "cirs/usermodel.hpp"

namespace cirs::harness {

enum class EnvKind { kSyntheticCategorical, kSyntheticContinuous, kFiles };
enum class PolicyKind { kCirs, kCirsNoCi, kRandom, kEpsGreedy, kUcb, kSoftmaxStatic };

const char* env_kind_name(EnvKind kind);
const char* policy_kind_name(PolicyKind kind);
EnvKind parse_env_kind(const std::string& name);
PolicyKind parse_policy_kind(const std::string& name);
bool is_rl_policy(PolicyKind kind);

struct EvalConfig {
  std::size_t trajectories = 100;
  policy::ActMode mode = policy::ActMode::kSample;
};

struct ExperimentConfig {
  EnvKind env_kind = EnvKind::kSyntheticCategorical;
  env::SynthEnvSpec synth;
  env::SynthLogSpec logs;
  std::string ratings_path;  // files mode
  std::string catalog_path;  // files mode
  env::ExitConfig exit{1, env::ExitMode::kCategorical, 1, 0.2, 30};
  model::ModelConfig model{.tau = 30.0, .tau_star = 0.1};
  model::TrainConfig train;
  policy::PpoConfig ppo;
  std::size_t tracker_dim = 32;
  std::size_t tracker_ffn = 32;
  bool continuous_actions = false;  // Gaussian actor; synthetic-continuous only
  PolicyKind policy = PolicyKind::kCirs;
  baselines::StaticConfig static_cfg;
  double ucb_c = 1.0;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  void validate() const;
};

// Reads a structured-text config; unknown keys anywhere are errors. Values
// not present keep the defaults above.
ExperimentConfig parse_config(const std::string& text, const std::string& origin);
ExperimentConfig load_config(const std::string& path);
std::string config_to_text(const ExperimentConfig& cfg, const std::string& resolved_policy);

// Per-step policy adapter used by the evaluation loop. UCB keeps learning
// across trajectories through observe(); the others are stateless between
// trajectories.
class Recommender {
 public:
  virtual ~Recommender() = default;
  virtual void begin_trajectory(std::size_t user) { (void)user; }
  virtual std::size_t recommend(std::size_t user, Rng& rng) = 0;
  virtual void observe(std::size_t item, double reward) {
    (void)item;
    (void)reward;
  }
};

struct TrajectoryRecord {
  std::size_t user = 0;
  double cumulative = 0.0;
  std::size_t length = 0;
  env::ExitReason reason = env::ExitReason::kNone;
};

struct EvalPoint {
  double mean_cum_sat = 0.0;
  double mean_len = 0.0;
  double mean_single_round = 0.0;
  std::vector<TrajectoryRecord> trajectories;
};

EvalPoint evaluate(Recommender& rec, const env::Environment& world, std::size_t n_traj, Rng& rng);

struct MetricsRow {
  std::size_t epoch = 0;
  double mean_cum_sat = 0.0;
  double mean_len = 0.0;
  double mean_single_round = 0.0;
};

struct RunResult {
  std::vector<MetricsRow> rows;
  double final_cum_sat = 0.0;
  std::string resolved_policy;
  std::vector<policy::PlanEpochStats> plan_stats;
  std::vector<double> train_loss_curve;
};

// Three stages: pre-learn the user model on logs, plan the policy against the
// counterfactual reward, evaluate in the environment after each planning
// epoch. Baseline policies skip planning but still produce one metrics row
// per epoch. Artifacts land in cfg.out_dir.
RunResult run_experiment(const ExperimentConfig& cfg);

struct SweepCell {
  double tau = 0.0;
  double tau_star = 0.0;
  bool ok = false;
  double final_cum_sat = 0.0;
  std::string error;
};

struct SweepResult {
  std::vector<SweepCell> cells;
};

SweepResult sweep(const ExperimentConfig& base, std::span<const double> taus,
                  std::span<const double> tau_stars);

}  // namespace cirs::harness
