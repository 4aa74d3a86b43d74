#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cirs/harness.hpp"

namespace {

using cirs::harness::ExperimentConfig;

int run(const ExperimentConfig& cfg) {
  cirs::harness::RunResult result = cirs::harness::run_experiment(cfg);
  std::printf("policy: %s\n", result.resolved_policy.c_str());
  std::printf("epochs: %zu\n", result.rows.size());
  const cirs::harness::MetricsRow& last = result.rows.back();
  std::printf("final mean_cum_sat: %.6f\n", last.mean_cum_sat);
  std::printf("final mean_len: %.6f\n", last.mean_len);
  std::printf("final mean_single_round: %.6f\n", last.mean_single_round);
  std::printf("out: %s\n", cfg.out_dir.c_str());
  return 0;
}

int run_sweep(const ExperimentConfig& cfg, const std::vector<double>& taus,
              const std::vector<double>& tau_stars) {
  cirs::harness::SweepResult result = cirs::harness::sweep(cfg, taus, tau_stars);
  const cirs::harness::SweepCell* best = nullptr;
  std::size_t failures = 0;
  for (const cirs::harness::SweepCell& cell : result.cells) {
    if (!cell.ok) {
      ++failures;
      std::printf("tau=%g tau_star=%g FAILED: %s\n", cell.tau, cell.tau_star,
                  cell.error.c_str());
      continue;
    }
    std::printf("tau=%g tau_star=%g final_cum_sat=%.6f\n", cell.tau, cell.tau_star,
                cell.final_cum_sat);
    if (best == nullptr || cell.final_cum_sat > best->final_cum_sat) best = &cell;
  }
  if (best != nullptr) {
    std::printf("best: tau=%g tau_star=%g final_cum_sat=%.6f\n", best->tau, best->tau_star,
                best->final_cum_sat);
  }
  std::printf("out: %s\n", cfg.out_dir.c_str());
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual interactive recommendation lab"};

  std::string config_path;
  std::string env_name;
  std::string policy_name;
  std::uint64_t seed = 0;
  std::size_t max_round = 0;
  std::size_t epochs = 0;
  std::string out_dir;
  std::vector<double> sweep_tau;
  std::vector<double> sweep_tau_star;

  CLI::Option* config_opt = app.add_option("--config", config_path, "Config file path");
  CLI::Option* env_opt =
      app.add_option("--env", env_name, "Environment kind")
          ->check(CLI::IsMember({"synthetic-categorical", "synthetic-continuous", "files"}));
  CLI::Option* policy_opt =
      app.add_option("--policy", policy_name, "Policy to run")
          ->check(CLI::IsMember(
              {"cirs", "cirs-no-ci", "random", "eps-greedy", "ucb", "softmax-static"}));
  CLI::Option* seed_opt = app.add_option("--seed", seed, "Master seed");
  CLI::Option* round_opt = app.add_option("--max-round", max_round, "Episode length cap");
  CLI::Option* epochs_opt = app.add_option("--epochs", epochs, "Planning epochs");
  CLI::Option* out_opt = app.add_option("--out", out_dir, "Output directory");
  CLI::Option* tau_opt = app.add_option("--sweep-tau", sweep_tau, "Sweep values for tau")
                             ->delimiter(',');
  CLI::Option* tau_star_opt =
      app.add_option("--sweep-tau-star", sweep_tau_star, "Sweep values for tau*")
          ->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg;
    if (config_opt->count() > 0) cfg = cirs::harness::load_config(config_path);
    if (env_opt->count() > 0) cfg.env_kind = cirs::harness::parse_env_kind(env_name);
    if (policy_opt->count() > 0) cfg.policy = cirs::harness::parse_policy_kind(policy_name);
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (round_opt->count() > 0) cfg.exit.horizon = max_round;
    if (epochs_opt->count() > 0) cfg.ppo.epochs = epochs;
    if (out_opt->count() > 0) cfg.out_dir = out_dir;

    bool has_tau = tau_opt->count() > 0;
    bool has_tau_star = tau_star_opt->count() > 0;
    if (has_tau != has_tau_star) {
      std::fprintf(stderr, "error: --sweep-tau and --sweep-tau-star must be given together\n");
      return 2;
    }
    if (has_tau) return run_sweep(cfg, sweep_tau, sweep_tau_star);
    return run(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
