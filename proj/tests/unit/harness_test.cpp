#include "cirs/harness.hpp"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

using namespace cirs;
using harness::EnvKind;
using harness::ExperimentConfig;
using harness::PolicyKind;

namespace {

namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("cirs_harness_" + name + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& leaf) const { return (path / leaf).string(); }
};

env::Environment toy_world(std::size_t items, std::size_t horizon) {
  env::RatingMatrix m(2, items);
  for (std::size_t u = 0; u < 2; ++u) {
    for (std::size_t i = 0; i < items; ++i) m.at(u, i) = 0.25 + 0.1 * static_cast<double>(i);
  }
  env::ItemCatalog cat;
  cat.mode = env::CatalogMode::kCategorical;
  cat.tag_vocab = items;
  cat.tags.resize(items);
  for (std::size_t i = 0; i < items; ++i) cat.tags[i] = {static_cast<int>(i)};
  env::ExitConfig exit_cfg{1, env::ExitMode::kCategorical, 1, 0.0, horizon};
  return env::Environment(std::move(m), std::move(cat), exit_cfg);
}

class RepeatRecommender : public harness::Recommender {
 public:
  explicit RepeatRecommender(std::size_t item) : item_(item) {}
  std::size_t recommend(std::size_t, Rng&) override { return item_; }

 private:
  std::size_t item_;
};

class RoundRobinRecommender : public harness::Recommender {
 public:
  explicit RoundRobinRecommender(std::size_t items) : items_(items) {}
  void begin_trajectory(std::size_t) override { next_ = 0; }
  std::size_t recommend(std::size_t, Rng&) override {
    std::size_t pick = next_;
    next_ = (next_ + 1) % items_;
    return pick;
  }

 private:
  std::size_t items_;
  std::size_t next_ = 0;
};

ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig cfg;
  cfg.env_kind = EnvKind::kSyntheticCategorical;
  cfg.synth.users = 4;
  cfg.synth.items = 8;
  cfg.synth.tag_vocab = 8;
  cfg.logs.records_per_user = 30;
  cfg.exit.horizon = 6;
  cfg.model.embed_dim = 4;
  cfg.model.hidden = 8;
  cfg.train.epochs = 2;
  cfg.train.batch = 32;
  cfg.ppo.epochs = 2;
  cfg.ppo.rollouts = 2;
  cfg.ppo.minibatch = 1;
  cfg.ppo.update_epochs = 1;
  cfg.tracker_dim = 8;
  cfg.tracker_ffn = 8;
  cfg.eval.trajectories = 5;
  cfg.seed = 7;
  cfg.out_dir = out;
  return cfg;
}

}  // namespace

TEST_CASE("kind names round-trip and reject junk") {
  for (EnvKind k : {EnvKind::kSyntheticCategorical, EnvKind::kSyntheticContinuous,
                    EnvKind::kFiles}) {
    CHECK(harness::parse_env_kind(harness::env_kind_name(k)) == k);
  }
  for (PolicyKind k : {PolicyKind::kCirs, PolicyKind::kCirsNoCi, PolicyKind::kRandom,
                       PolicyKind::kEpsGreedy, PolicyKind::kUcb, PolicyKind::kSoftmaxStatic}) {
    CHECK(harness::parse_policy_kind(harness::policy_kind_name(k)) == k);
  }
  CHECK(harness::is_rl_policy(PolicyKind::kCirs));
  CHECK(harness::is_rl_policy(PolicyKind::kCirsNoCi));
  CHECK_FALSE(harness::is_rl_policy(PolicyKind::kUcb));
  CHECK_THROWS_WITH_AS(harness::parse_env_kind("synthetic"),
                       doctest::Contains("unknown environment"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_policy_kind("greedy"), doctest::Contains("unknown policy"),
                       std::invalid_argument);
}

TEST_CASE("config parsing fills defaults and reads overrides") {
  ExperimentConfig cfg = harness::parse_config("{}", "inline");
  CHECK(cfg.env_kind == EnvKind::kSyntheticCategorical);
  CHECK(cfg.policy == PolicyKind::kCirs);
  CHECK(cfg.eval.trajectories == 100);
  CHECK(cfg.seed == 0);
  CHECK(cfg.model.tau == doctest::Approx(30.0));
  CHECK(cfg.model.tau_star == doctest::Approx(0.1));

  const char* text = R"({
    "env": {"kind": "synthetic-continuous", "users": 7, "items": 20, "dim": 5},
    "exit": {"window": 3, "share_count": 2, "max_round": 12},
    "model": {"tau": 4.0, "tau_star": 1.5, "gamma_star": 2.0},
    "train": {"loss": "bpr", "epochs": 3},
    "ppo": {"epochs": 9, "rollouts": 4, "clip": 0.1},
    "tracker": {"d_s": 16, "ffn": 24},
    "policy": "ucb",
    "ucb_c": 0.7,
    "static": {"strategy": "eps-greedy", "epsilon": 0.25},
    "eval": {"trajectories": 11, "mode": "greedy"},
    "seed": 99,
    "out": "somewhere"
  })";
  cfg = harness::parse_config(text, "inline");
  CHECK(cfg.env_kind == EnvKind::kSyntheticContinuous);
  CHECK(cfg.synth.users == 7);
  CHECK(cfg.synth.items == 20);
  CHECK(cfg.synth.dim == 5);
  CHECK(cfg.exit.window == 3);
  CHECK(cfg.exit.share_count == 2);
  CHECK(cfg.exit.horizon == 12);
  CHECK(cfg.model.tau == doctest::Approx(4.0));
  CHECK(cfg.model.tau_star == doctest::Approx(1.5));
  CHECK(cfg.model.gamma_star == doctest::Approx(2.0));
  CHECK(cfg.train.loss == model::TrainConfig::Loss::kBpr);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.ppo.epochs == 9);
  CHECK(cfg.ppo.rollouts == 4);
  CHECK(cfg.ppo.clip == doctest::Approx(0.1));
  CHECK(cfg.tracker_dim == 16);
  CHECK(cfg.tracker_ffn == 24);
  CHECK(cfg.policy == PolicyKind::kUcb);
  CHECK(cfg.ucb_c == doctest::Approx(0.7));
  CHECK(cfg.static_cfg.strategy == baselines::StaticStrategy::kEpsGreedy);
  CHECK(cfg.static_cfg.epsilon == doctest::Approx(0.25));
  CHECK(cfg.eval.trajectories == 11);
  CHECK(cfg.eval.mode == policy::ActMode::kGreedy);
  CHECK(cfg.seed == 99);
  CHECK(cfg.out_dir == "somewhere");
}

TEST_CASE("config parsing rejects unknown keys, bad types, bad syntax") {
  CHECK_THROWS_WITH_AS(harness::parse_config(R"({"sedd": 1})", "cfg.json"),
                       doctest::Contains("unknown key \"sedd\""), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_config(R"({"ppo": {"horizons": 5}})", "cfg.json"),
                       doctest::Contains("unknown key \"ppo.horizons\""), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_config(R"({"env": {"kindd": "files"}})", "cfg.json"),
                       doctest::Contains("env.kindd"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_config(R"({"policy": 3})", "cfg.json"),
                       doctest::Contains("policy must be a string"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_config(R"({"seed": "high"})", "cfg.json"),
                       doctest::Contains("seed must be a number"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_config(R"({"train": {"loss": "hinge"}})", "cfg.json"),
                       doctest::Contains("train.loss"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_config(R"({"eval": {"mode": "argmax"}})", "cfg.json"),
                       doctest::Contains("eval.mode"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_config("{", "broken.json"),
                       doctest::Contains("broken.json"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_config("[1,2]", "cfg.json"),
                       doctest::Contains("top level"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::load_config("/nonexistent/cfg.json"),
                       doctest::Contains("not found"), std::invalid_argument);
}

TEST_CASE("config validation catches inconsistent setups") {
  ExperimentConfig cfg;
  cfg.eval.trajectories = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("trajectories"),
                       std::invalid_argument);

  cfg = ExperimentConfig{};
  cfg.continuous_actions = true;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("continuous_actions"),
                       std::invalid_argument);

  cfg = ExperimentConfig{};
  cfg.env_kind = EnvKind::kFiles;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("ratings"), std::invalid_argument);

  cfg = ExperimentConfig{};
  cfg.out_dir = "";
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("out"), std::invalid_argument);
}

TEST_CASE("emitted config text parses back to the same settings") {
  ExperimentConfig cfg = tiny_config("emit_out");
  cfg.policy = PolicyKind::kEpsGreedy;
  cfg.static_cfg.epsilon = 0.3;
  std::string text = harness::config_to_text(cfg, "eps-greedy");
  ExperimentConfig back = harness::parse_config(text, "emitted");
  CHECK(back.env_kind == cfg.env_kind);
  CHECK(back.policy == cfg.policy);
  CHECK(back.synth.users == cfg.synth.users);
  CHECK(back.exit.horizon == cfg.exit.horizon);
  CHECK(back.model.tau == doctest::Approx(cfg.model.tau));
  CHECK(back.train.epochs == cfg.train.epochs);
  CHECK(back.ppo.epochs == cfg.ppo.epochs);
  CHECK(back.static_cfg.epsilon == doctest::Approx(cfg.static_cfg.epsilon));
  CHECK(back.seed == cfg.seed);
  CHECK(back.out_dir == cfg.out_dir);
}

TEST_CASE("repeating one item ends the session after a single rewarded step") {
  env::Environment world = toy_world(4, 10);
  RepeatRecommender rec(2);
  Rng rng(5);
  harness::EvalPoint point = harness::evaluate(rec, world, 20, rng);
  CHECK(point.mean_len == doctest::Approx(1.0));
  // Reward for item 2 is the same for both users, so the mean is exact.
  CHECK(point.mean_cum_sat == doctest::Approx(0.45));
  CHECK(point.mean_single_round == doctest::Approx(0.45));
  for (const harness::TrajectoryRecord& t : point.trajectories) {
    CHECK(t.length == 1);
    CHECK(t.reason == env::ExitReason::kBubble);
  }
}

TEST_CASE("distinct tags every round survive to the horizon") {
  env::Environment world = toy_world(6, 5);
  RoundRobinRecommender rec(6);
  Rng rng(5);
  harness::EvalPoint point = harness::evaluate(rec, world, 10, rng);
  CHECK(point.mean_len == doctest::Approx(5.0));
  double expected = 0.25 + 0.35 + 0.45 + 0.55 + 0.65;
  CHECK(point.mean_cum_sat == doctest::Approx(expected));
  CHECK(point.mean_single_round == doctest::Approx(expected / 5.0));
  for (const harness::TrajectoryRecord& t : point.trajectories) {
    CHECK(t.reason == env::ExitReason::kHorizon);
  }
}

TEST_CASE("evaluate rejects an empty request") {
  env::Environment world = toy_world(4, 10);
  RepeatRecommender rec(0);
  Rng rng(1);
  CHECK_THROWS_WITH_AS(harness::evaluate(rec, world, 0, rng), doctest::Contains("trajectory"),
                       std::invalid_argument);
}

TEST_CASE("experiment writes one metrics row per planning epoch plus artifacts") {
  TempDir tmp("rl");
  ExperimentConfig cfg = tiny_config(tmp.sub("run"));
  harness::RunResult run = harness::run_experiment(cfg);

  CHECK(run.rows.size() == cfg.ppo.epochs);
  CHECK(run.resolved_policy == "cirs");
  CHECK(run.plan_stats.size() == cfg.ppo.epochs);
  CHECK(run.train_loss_curve.size() == cfg.train.epochs);
  CHECK(run.final_cum_sat == doctest::Approx(run.rows.back().mean_cum_sat));
  for (std::size_t e = 0; e < run.rows.size(); ++e) {
    CHECK(run.rows[e].epoch == e);
    CHECK(run.rows[e].mean_len >= 1.0);
    CHECK(run.rows[e].mean_cum_sat >= 0.0);
  }

  std::string metrics = read_file(tmp.sub("run") + "/metrics.csv");
  CHECK(metrics.rfind("epoch,mean_cum_sat,mean_len,mean_single_round\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : metrics) lines += c == '\n';
  CHECK(lines == 1 + cfg.ppo.epochs);

  CHECK(fs::exists(tmp.sub("run") + "/resolved_config.json"));
  CHECK(fs::exists(tmp.sub("run") + "/user_model.ckpt"));
  CHECK(fs::exists(tmp.sub("run") + "/policy.ckpt"));
  CHECK(fs::exists(tmp.sub("run") + "/plan_stats.csv"));

  ExperimentConfig resolved =
      harness::load_config(tmp.sub("run") + "/resolved_config.json");
  CHECK(resolved.seed == cfg.seed);
  CHECK(resolved.ppo.epochs == cfg.ppo.epochs);
}

TEST_CASE("rerunning the same config reproduces metrics byte for byte") {
  TempDir tmp("rerun");
  ExperimentConfig a = tiny_config(tmp.sub("a"));
  ExperimentConfig b = tiny_config(tmp.sub("b"));
  harness::run_experiment(a);
  harness::run_experiment(b);
  CHECK(read_file(tmp.sub("a") + "/metrics.csv") == read_file(tmp.sub("b") + "/metrics.csv"));
  CHECK(read_file(tmp.sub("a") + "/plan_stats.csv") ==
        read_file(tmp.sub("b") + "/plan_stats.csv"));
}

TEST_CASE("zero decay scales resolve to the no-intervention label") {
  TempDir tmp("noci");
  ExperimentConfig cfg = tiny_config(tmp.sub("zero"));
  cfg.model.tau = 0.0;
  cfg.model.tau_star = 0.0;
  harness::RunResult zero = harness::run_experiment(cfg);
  CHECK(zero.resolved_policy == "cirs-no-ci");

  ExperimentConfig no_ci = tiny_config(tmp.sub("flag"));
  no_ci.policy = PolicyKind::kCirsNoCi;
  harness::RunResult flagged = harness::run_experiment(no_ci);
  CHECK(flagged.resolved_policy == "cirs-no-ci");

  // Forcing the scales to zero via the policy flag must match setting them
  // to zero directly, run for run.
  CHECK(read_file(tmp.sub("zero") + "/metrics.csv") ==
        read_file(tmp.sub("flag") + "/metrics.csv"));
}

TEST_CASE("baseline policies evaluate without planning artifacts") {
  TempDir tmp("base");
  for (PolicyKind kind : {PolicyKind::kRandom, PolicyKind::kUcb, PolicyKind::kSoftmaxStatic,
                          PolicyKind::kEpsGreedy}) {
    ExperimentConfig cfg = tiny_config(tmp.sub(harness::policy_kind_name(kind)));
    cfg.policy = kind;
    harness::RunResult run = harness::run_experiment(cfg);
    CHECK(run.rows.size() == cfg.ppo.epochs);
    CHECK(run.resolved_policy == harness::policy_kind_name(kind));
    CHECK(run.plan_stats.empty());
    CHECK(fs::exists(cfg.out_dir + "/user_model.ckpt"));
    CHECK_FALSE(fs::exists(cfg.out_dir + "/policy.ckpt"));
    CHECK_FALSE(fs::exists(cfg.out_dir + "/plan_stats.csv"));
  }
}

TEST_CASE("a broken ratings file fails inside the data stage") {
  TempDir tmp("stage");
  std::string ratings = tmp.sub("ratings.csv");
  std::ofstream(ratings) << "user_id,item_id,timestamp,rating\n0,zero,10,1.0\n";
  std::string catalog = tmp.sub("catalog.csv");
  std::ofstream(catalog) << "item_id,tags\n0,0\n1,1\n";

  ExperimentConfig cfg = tiny_config(tmp.sub("run"));
  cfg.env_kind = EnvKind::kFiles;
  cfg.ratings_path = ratings;
  cfg.catalog_path = catalog;
  CHECK_THROWS_WITH_AS(harness::run_experiment(cfg), doctest::Contains("stage data failed"),
                       std::runtime_error);
}

TEST_CASE("sweep writes one row per successful cell and matches single runs") {
  TempDir tmp("sweep");
  ExperimentConfig base = tiny_config(tmp.sub("grid"));
  base.ppo.epochs = 1;
  const double taus[] = {0.0, 20.0};
  const double tau_stars[] = {0.0};
  harness::SweepResult grid = harness::sweep(base, taus, tau_stars);
  REQUIRE(grid.cells.size() == 2);
  for (const harness::SweepCell& cell : grid.cells) CHECK(cell.ok);
  CHECK(grid.cells[0].tau == doctest::Approx(0.0));
  CHECK(grid.cells[1].tau == doctest::Approx(20.0));

  // The zero cell is exactly the no-intervention policy on the same data.
  ExperimentConfig solo = tiny_config(tmp.sub("solo"));
  solo.ppo.epochs = 1;
  solo.policy = PolicyKind::kCirsNoCi;
  harness::RunResult no_ci = harness::run_experiment(solo);
  CHECK(grid.cells[0].final_cum_sat == no_ci.final_cum_sat);

  std::string matrix = read_file(tmp.sub("grid") + "/sweep.csv");
  CHECK(matrix.rfind("tau,tau_star,final_cum_sat\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : matrix) lines += c == '\n';
  CHECK(lines == 3);
  CHECK(fs::exists(tmp.sub("grid") + "/cell_tau20_ts0/metrics.csv"));
}

TEST_CASE("sweep records failing cells and keeps going") {
  TempDir tmp("sweepfail");
  ExperimentConfig base = tiny_config(tmp.sub("grid"));
  base.eval.trajectories = 0;
  const double taus[] = {0.0, 1.0};
  const double tau_stars[] = {0.5};
  harness::SweepResult grid = harness::sweep(base, taus, tau_stars);
  REQUIRE(grid.cells.size() == 2);
  for (const harness::SweepCell& cell : grid.cells) {
    CHECK_FALSE(cell.ok);
    CHECK(cell.error.find("trajectories") != std::string::npos);
  }
  std::string matrix = read_file(tmp.sub("grid") + "/sweep.csv");
  std::size_t lines = 0;
  for (char c : matrix) lines += c == '\n';
  CHECK(lines == 1);
  CHECK(fs::exists(tmp.sub("grid") + "/sweep_failures.txt"));

  const double none[] = {1.0};
  CHECK_THROWS_WITH_AS(harness::sweep(base, {}, none), doctest::Contains("empty grid"),
                       std::invalid_argument);
}
