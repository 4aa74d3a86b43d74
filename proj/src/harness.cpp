#include "cirs/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "cirs/checkpoint.hpp"
#include "cirs/statetracker.hpp"
#include "json.hpp"

namespace cirs::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed stream tags: data generation, user-model training, planning, and one
// evaluation stream per epoch.
constexpr std::uint64_t kSeedData = 1;
constexpr std::uint64_t kSeedPretrain = 2;
constexpr std::uint64_t kSeedPlan = 3;
constexpr std::uint64_t kSeedEval = 4;

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

[[noreturn]] void stage_fail(const std::string& stage, const std::exception& e) {
  std::string what = e.what();
  if (what.rfind("stage ", 0) == 0) throw std::runtime_error(what);
  throw std::runtime_error("stage " + stage + " failed: " + what);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

const char* env_kind_name(EnvKind kind) {
  switch (kind) {
    case EnvKind::kSyntheticCategorical: return "synthetic-categorical";
    case EnvKind::kSyntheticContinuous: return "synthetic-continuous";
    case EnvKind::kFiles: return "files";
  }
  return "?";
}

const char* policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kCirs: return "cirs";
    case PolicyKind::kCirsNoCi: return "cirs-no-ci";
    case PolicyKind::kRandom: return "random";
    case PolicyKind::kEpsGreedy: return "eps-greedy";
    case PolicyKind::kUcb: return "ucb";
    case PolicyKind::kSoftmaxStatic: return "softmax-static";
  }
  return "?";
}

EnvKind parse_env_kind(const std::string& name) {
  for (EnvKind k : {EnvKind::kSyntheticCategorical, EnvKind::kSyntheticContinuous,
                    EnvKind::kFiles}) {
    if (name == env_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown environment kind: " + name);
}

PolicyKind parse_policy_kind(const std::string& name) {
  for (PolicyKind k : {PolicyKind::kCirs, PolicyKind::kCirsNoCi, PolicyKind::kRandom,
                       PolicyKind::kEpsGreedy, PolicyKind::kUcb, PolicyKind::kSoftmaxStatic}) {
    if (name == policy_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown policy: " + name);
}

bool is_rl_policy(PolicyKind kind) {
  return kind == PolicyKind::kCirs || kind == PolicyKind::kCirsNoCi;
}

void ExperimentConfig::validate() const {
  if (eval.trajectories == 0) {
    throw std::invalid_argument("config: eval.trajectories must be at least 1");
  }
  exit.validate();
  ppo.validate();
  if (tracker_dim == 0 || tracker_ffn == 0) {
    throw std::invalid_argument("config: tracker widths must be positive");
  }
  if (continuous_actions && env_kind != EnvKind::kSyntheticContinuous) {
    throw std::invalid_argument("config: continuous_actions needs the synthetic-continuous env");
  }
  if (env_kind == EnvKind::kFiles) {
    if (ratings_path.empty() || catalog_path.empty()) {
      throw std::invalid_argument("config: files env needs env.ratings and env.catalog");
    }
    for (const std::string& p : {ratings_path, catalog_path}) {
      if (!fs::exists(p)) throw std::invalid_argument("config: missing file " + p);
    }
  }
  if (out_dir.empty()) throw std::invalid_argument("config: out directory must be set");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where, const std::string& origin) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) {
      throw std::invalid_argument(origin + ": unknown key \"" + where + it.key() + "\"");
    }
  }
}

template <typename T>
void read_num(const json& j, const char* key, T& out, const std::string& where,
              const std::string& origin) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number()) {
    throw std::invalid_argument(origin + ": " + where + key + " must be a number");
  }
  out = j.at(key).get<T>();
}

void read_str(const json& j, const char* key, std::string& out, const std::string& where,
              const std::string& origin) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) {
    throw std::invalid_argument(origin + ": " + where + key + " must be a string");
  }
  out = j.at(key).get<std::string>();
}

void read_bool(const json& j, const char* key, bool& out, const std::string& where,
               const std::string& origin) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean()) {
    throw std::invalid_argument(origin + ": " + where + key + " must be true or false");
  }
  out = j.at(key).get<bool>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(origin + ": " + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument(origin + ": top level must be an object");

  ExperimentConfig cfg;
  check_keys(j,
             {"env", "exit", "logs", "model", "train", "ppo", "tracker", "policy", "static",
              "ucb_c", "eval", "seed", "out", "continuous_actions", "resolved_policy"},
             "", origin);
  // resolved_policy appears in emitted configs; harmless on input.

  if (j.contains("env")) {
    const json& e = j.at("env");
    check_keys(e,
               {"kind", "users", "items", "tag_vocab", "dim", "user_dim", "r_max", "latent",
                "ratings", "catalog"},
               "env.", origin);
    std::string kind = env_kind_name(cfg.env_kind);
    read_str(e, "kind", kind, "env.", origin);
    cfg.env_kind = parse_env_kind(kind);
    read_num(e, "users", cfg.synth.users, "env.", origin);
    read_num(e, "items", cfg.synth.items, "env.", origin);
    read_num(e, "tag_vocab", cfg.synth.tag_vocab, "env.", origin);
    read_num(e, "dim", cfg.synth.dim, "env.", origin);
    read_num(e, "user_dim", cfg.synth.user_dim, "env.", origin);
    read_num(e, "r_max", cfg.synth.r_max, "env.", origin);
    read_num(e, "latent", cfg.synth.latent, "env.", origin);
    read_str(e, "ratings", cfg.ratings_path, "env.", origin);
    read_str(e, "catalog", cfg.catalog_path, "env.", origin);
  }
  if (j.contains("exit")) {
    const json& e = j.at("exit");
    check_keys(e, {"window", "share_count", "min_distance", "max_round"}, "exit.", origin);
    read_num(e, "window", cfg.exit.window, "exit.", origin);
    read_num(e, "share_count", cfg.exit.share_count, "exit.", origin);
    read_num(e, "min_distance", cfg.exit.min_distance, "exit.", origin);
    read_num(e, "max_round", cfg.exit.horizon, "exit.", origin);
  }
  if (j.contains("logs")) {
    const json& e = j.at("logs");
    check_keys(e,
               {"records_per_user", "tau", "alpha_lo", "alpha_hi", "beta_lo", "beta_hi", "gap_lo",
                "gap_hi", "repeat_prob", "repeat_window", "noise"},
               "logs.", origin);
    read_num(e, "records_per_user", cfg.logs.records_per_user, "logs.", origin);
    read_num(e, "tau", cfg.logs.tau, "logs.", origin);
    read_num(e, "alpha_lo", cfg.logs.alpha_lo, "logs.", origin);
    read_num(e, "alpha_hi", cfg.logs.alpha_hi, "logs.", origin);
    read_num(e, "beta_lo", cfg.logs.beta_lo, "logs.", origin);
    read_num(e, "beta_hi", cfg.logs.beta_hi, "logs.", origin);
    read_num(e, "gap_lo", cfg.logs.gap_lo, "logs.", origin);
    read_num(e, "gap_hi", cfg.logs.gap_hi, "logs.", origin);
    read_num(e, "repeat_prob", cfg.logs.repeat_prob, "logs.", origin);
    read_num(e, "repeat_window", cfg.logs.repeat_window, "logs.", origin);
    read_num(e, "noise", cfg.logs.noise, "logs.", origin);
  }
  if (j.contains("model")) {
    const json& e = j.at("model");
    check_keys(e, {"embed_dim", "hidden", "tau", "tau_star", "gamma_star"}, "model.", origin);
    read_num(e, "embed_dim", cfg.model.embed_dim, "model.", origin);
    read_num(e, "hidden", cfg.model.hidden, "model.", origin);
    read_num(e, "tau", cfg.model.tau, "model.", origin);
    read_num(e, "tau_star", cfg.model.tau_star, "model.", origin);
    read_num(e, "gamma_star", cfg.model.gamma_star, "model.", origin);
  }
  if (j.contains("train")) {
    const json& e = j.at("train");
    check_keys(e, {"loss", "epochs", "batch", "lr"}, "train.", origin);
    std::string loss = cfg.train.loss == model::TrainConfig::Loss::kBpr ? "bpr" : "mse";
    read_str(e, "loss", loss, "train.", origin);
    if (loss == "mse") {
      cfg.train.loss = model::TrainConfig::Loss::kMse;
    } else if (loss == "bpr") {
      cfg.train.loss = model::TrainConfig::Loss::kBpr;
    } else {
      throw std::invalid_argument(origin + ": train.loss must be \"mse\" or \"bpr\"");
    }
    read_num(e, "epochs", cfg.train.epochs, "train.", origin);
    read_num(e, "batch", cfg.train.batch, "train.", origin);
    read_num(e, "lr", cfg.train.lr, "train.", origin);
  }
  if (j.contains("ppo")) {
    const json& e = j.at("ppo");
    check_keys(e,
               {"clip", "gamma", "lambda", "update_epochs", "minibatch", "rollouts", "horizon",
                "entropy_coef", "value_coef", "actor_lr", "critic_lr", "tracker_lr", "anneal",
                "epochs"},
               "ppo.", origin);
    read_num(e, "horizon", cfg.ppo.horizon, "ppo.", origin);
    read_num(e, "clip", cfg.ppo.clip, "ppo.", origin);
    read_num(e, "gamma", cfg.ppo.gamma, "ppo.", origin);
    read_num(e, "lambda", cfg.ppo.lambda, "ppo.", origin);
    read_num(e, "update_epochs", cfg.ppo.update_epochs, "ppo.", origin);
    read_num(e, "minibatch", cfg.ppo.minibatch, "ppo.", origin);
    read_num(e, "rollouts", cfg.ppo.rollouts, "ppo.", origin);
    read_num(e, "entropy_coef", cfg.ppo.entropy_coef, "ppo.", origin);
    read_num(e, "value_coef", cfg.ppo.value_coef, "ppo.", origin);
    read_num(e, "actor_lr", cfg.ppo.actor_lr, "ppo.", origin);
    read_num(e, "critic_lr", cfg.ppo.critic_lr, "ppo.", origin);
    read_num(e, "tracker_lr", cfg.ppo.tracker_lr, "ppo.", origin);
    read_bool(e, "anneal", cfg.ppo.anneal, "ppo.", origin);
    read_num(e, "epochs", cfg.ppo.epochs, "ppo.", origin);
  }
  if (j.contains("tracker")) {
    const json& e = j.at("tracker");
    check_keys(e, {"d_s", "ffn"}, "tracker.", origin);
    read_num(e, "d_s", cfg.tracker_dim, "tracker.", origin);
    read_num(e, "ffn", cfg.tracker_ffn, "tracker.", origin);
  }
  if (j.contains("policy")) {
    std::string name = policy_kind_name(cfg.policy);
    read_str(j, "policy", name, "", origin);
    cfg.policy = parse_policy_kind(name);
  }
  if (j.contains("static")) {
    const json& e = j.at("static");
    check_keys(e, {"strategy", "temperature", "epsilon"}, "static.", origin);
    std::string strategy = "softmax";
    if (cfg.static_cfg.strategy == baselines::StaticStrategy::kEpsGreedy) strategy = "eps-greedy";
    if (cfg.static_cfg.strategy == baselines::StaticStrategy::kRandom) strategy = "random";
    read_str(e, "strategy", strategy, "static.", origin);
    if (strategy == "softmax") {
      cfg.static_cfg.strategy = baselines::StaticStrategy::kSoftmax;
    } else if (strategy == "eps-greedy") {
      cfg.static_cfg.strategy = baselines::StaticStrategy::kEpsGreedy;
    } else if (strategy == "random") {
      cfg.static_cfg.strategy = baselines::StaticStrategy::kRandom;
    } else {
      throw std::invalid_argument(origin +
                                  ": static.strategy must be softmax, eps-greedy, or random");
    }
    read_num(e, "temperature", cfg.static_cfg.temperature, "static.", origin);
    read_num(e, "epsilon", cfg.static_cfg.epsilon, "static.", origin);
  }
  read_num(j, "ucb_c", cfg.ucb_c, "", origin);
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"trajectories", "mode"}, "eval.", origin);
    read_num(e, "trajectories", cfg.eval.trajectories, "eval.", origin);
    std::string mode = cfg.eval.mode == policy::ActMode::kGreedy ? "greedy" : "sample";
    read_str(e, "mode", mode, "eval.", origin);
    if (mode == "sample") {
      cfg.eval.mode = policy::ActMode::kSample;
    } else if (mode == "greedy") {
      cfg.eval.mode = policy::ActMode::kGreedy;
    } else {
      throw std::invalid_argument(origin + ": eval.mode must be \"sample\" or \"greedy\"");
    }
  }
  read_num(j, "seed", cfg.seed, "", origin);
  read_str(j, "out", cfg.out_dir, "", origin);
  read_bool(j, "continuous_actions", cfg.continuous_actions, "", origin);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config file not found: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text, path);
}

std::string config_to_text(const ExperimentConfig& cfg, const std::string& resolved_policy) {
  json j;
  j["env"] = {{"kind", env_kind_name(cfg.env_kind)},   {"users", cfg.synth.users},
              {"items", cfg.synth.items},              {"tag_vocab", cfg.synth.tag_vocab},
              {"dim", cfg.synth.dim},                  {"user_dim", cfg.synth.user_dim},
              {"r_max", cfg.synth.r_max},              {"latent", cfg.synth.latent},
              {"ratings", cfg.ratings_path},           {"catalog", cfg.catalog_path}};
  j["exit"] = {{"window", cfg.exit.window},
               {"share_count", cfg.exit.share_count},
               {"min_distance", cfg.exit.min_distance},
               {"max_round", cfg.exit.horizon}};
  j["logs"] = {{"records_per_user", cfg.logs.records_per_user},
               {"tau", cfg.logs.tau},
               {"alpha_lo", cfg.logs.alpha_lo},
               {"alpha_hi", cfg.logs.alpha_hi},
               {"beta_lo", cfg.logs.beta_lo},
               {"beta_hi", cfg.logs.beta_hi},
               {"gap_lo", cfg.logs.gap_lo},
               {"gap_hi", cfg.logs.gap_hi},
               {"repeat_prob", cfg.logs.repeat_prob},
               {"repeat_window", cfg.logs.repeat_window},
               {"noise", cfg.logs.noise}};
  j["model"] = {{"embed_dim", cfg.model.embed_dim},
                {"hidden", cfg.model.hidden},
                {"tau", cfg.model.tau},
                {"tau_star", cfg.model.tau_star},
                {"gamma_star", cfg.model.gamma_star}};
  j["train"] = {{"loss", cfg.train.loss == model::TrainConfig::Loss::kBpr ? "bpr" : "mse"},
                {"epochs", cfg.train.epochs},
                {"batch", cfg.train.batch},
                {"lr", cfg.train.lr}};
  j["ppo"] = {{"clip", cfg.ppo.clip},
              {"gamma", cfg.ppo.gamma},
              {"lambda", cfg.ppo.lambda},
              {"update_epochs", cfg.ppo.update_epochs},
              {"minibatch", cfg.ppo.minibatch},
              {"rollouts", cfg.ppo.rollouts},
              {"horizon", cfg.ppo.horizon},
              {"entropy_coef", cfg.ppo.entropy_coef},
              {"value_coef", cfg.ppo.value_coef},
              {"actor_lr", cfg.ppo.actor_lr},
              {"critic_lr", cfg.ppo.critic_lr},
              {"tracker_lr", cfg.ppo.tracker_lr},
              {"anneal", cfg.ppo.anneal},
              {"epochs", cfg.ppo.epochs}};
  j["tracker"] = {{"d_s", cfg.tracker_dim}, {"ffn", cfg.tracker_ffn}};
  j["policy"] = policy_kind_name(cfg.policy);
  j["resolved_policy"] = resolved_policy;
  std::string strategy = "softmax";
  if (cfg.static_cfg.strategy == baselines::StaticStrategy::kEpsGreedy) strategy = "eps-greedy";
  if (cfg.static_cfg.strategy == baselines::StaticStrategy::kRandom) strategy = "random";
  j["static"] = {{"strategy", strategy},
                 {"temperature", cfg.static_cfg.temperature},
                 {"epsilon", cfg.static_cfg.epsilon}};
  j["ucb_c"] = cfg.ucb_c;
  j["eval"] = {{"trajectories", cfg.eval.trajectories},
               {"mode", cfg.eval.mode == policy::ActMode::kGreedy ? "greedy" : "sample"}};
  j["seed"] = cfg.seed;
  j["out"] = cfg.out_dir;
  j["continuous_actions"] = cfg.continuous_actions;
  return j.dump(2) + "\n";
}

EvalPoint evaluate(Recommender& rec, const env::Environment& world, std::size_t n_traj,
                   Rng& rng) {
  if (n_traj == 0) throw std::invalid_argument("evaluate: need at least one trajectory");
  EvalPoint point;
  point.trajectories.reserve(n_traj);
  for (std::size_t k = 0; k < n_traj; ++k) {
    std::size_t user = rng.uniform_int(world.users());
    env::EnvState state = world.reset(user, rng.next_u64());
    rec.begin_trajectory(user);
    env::ExitReason reason = env::ExitReason::kNone;
    while (!state.done) {
      std::size_t item = rec.recommend(user, rng);
      env::StepResult res = world.step(state, item);
      rec.observe(item, res.reward);
      if (res.done) reason = res.reason;
    }
    TrajectoryRecord traj{user, state.cumulative, state.t, reason};
    point.trajectories.push_back(traj);
    point.mean_cum_sat += traj.cumulative;
    point.mean_len += static_cast<double>(traj.length);
    point.mean_single_round += traj.cumulative / static_cast<double>(traj.length);
  }
  point.mean_cum_sat /= static_cast<double>(n_traj);
  point.mean_len /= static_cast<double>(n_traj);
  point.mean_single_round /= static_cast<double>(n_traj);
  return point;
}

namespace {

class CirsRecommender : public Recommender {
 public:
  CirsRecommender(const policy::ActorCritic& ac, const tracker::StateTracker& tr,
                  const env::ItemCatalog& catalog,
                  const std::vector<std::vector<double>>* user_features, policy::ActMode mode,
                  double reward_scale)
      : ac_(ac),
        tr_(tr),
        catalog_(catalog),
        user_features_(user_features),
        mode_(mode),
        reward_scale_(reward_scale > 0.0 ? reward_scale : 1.0) {}

  void begin_trajectory(std::size_t user) override {
    user_ = user;
    items_.clear();
    actions_.clear();
    rewards_.clear();
  }

  std::size_t recommend(std::size_t user, Rng& rng) override {
    std::vector<double> state =
        ac_.config().continuous
            ? tr_.state_vecs(user_features_->at(user), actions_, rewards_)
            : tr_.state_ids(user, items_, rewards_);
    policy::ActResult chosen = policy::act(ac_, state, mode_, rng);
    if (ac_.config().continuous) {
      last_action_ = std::move(chosen.action);
      return policy::nearest_item(catalog_, last_action_);
    }
    return chosen.item;
  }

  void observe(std::size_t item, double reward) override {
    items_.push_back(item);
    if (ac_.config().continuous) actions_.push_back(last_action_);
    rewards_.push_back(reward / reward_scale_);
  }

 private:
  const policy::ActorCritic& ac_;
  const tracker::StateTracker& tr_;
  const env::ItemCatalog& catalog_;
  const std::vector<std::vector<double>>* user_features_;
  policy::ActMode mode_;
  double reward_scale_;
  std::size_t user_ = 0;
  std::vector<std::size_t> items_;
  std::vector<std::vector<double>> actions_;
  std::vector<double> rewards_;
  std::vector<double> last_action_;
};

class StaticRecommender : public Recommender {
 public:
  StaticRecommender(const model::CausalUserModel* um, std::size_t items,
                    baselines::StaticConfig cfg)
      : um_(um), items_(items), cfg_(cfg) {}

  std::size_t recommend(std::size_t user, Rng& rng) override {
    if (cfg_.strategy == baselines::StaticStrategy::kRandom || um_ == nullptr) {
      std::vector<double> flat(items_, 0.0);
      baselines::StaticConfig random_cfg = cfg_;
      random_cfg.strategy = baselines::StaticStrategy::kRandom;
      return baselines::select_static(flat, random_cfg, rng);
    }
    if (scores_.size() <= user) scores_.resize(user + 1);
    if (scores_[user].empty()) scores_[user] = um_->predict_all(user);
    return baselines::select_static(scores_[user], cfg_, rng);
  }

 private:
  const model::CausalUserModel* um_;
  std::size_t items_;
  baselines::StaticConfig cfg_;
  std::vector<std::vector<double>> scores_;
};

class UcbRecommender : public Recommender {
 public:
  UcbRecommender(std::size_t items, double c) : stats_(items, c) {}

  std::size_t recommend(std::size_t, Rng& rng) override {
    return baselines::select_ucb(stats_, rng);
  }
  void observe(std::size_t item, double reward) override { stats_.update(item, reward); }

 private:
  baselines::BanditStats stats_;
};

struct WorldData {
  env::Environment world;
  std::vector<env::Interaction> records;
};

WorldData build_world(const ExperimentConfig& cfg) {
  std::uint64_t data_seed = derive_seed(cfg.seed, {kSeedData});
  if (cfg.env_kind == EnvKind::kFiles) {
    std::vector<env::Interaction> records = env::load_ratings(cfg.ratings_path);
    env::ItemCatalog catalog = env::load_catalog(cfg.catalog_path);
    env::RatingMatrix matrix = env::ratings_to_matrix(records, false, 0, catalog.item_count());
    env::ExitConfig exit_cfg = cfg.exit;
    exit_cfg.mode = catalog.mode == env::CatalogMode::kContinuous ? env::ExitMode::kContinuous
                                                                  : env::ExitMode::kCategorical;
    return {env::Environment(std::move(matrix), std::move(catalog), exit_cfg), std::move(records)};
  }

  env::SynthEnvSpec spec = cfg.synth;
  spec.mode = cfg.env_kind == EnvKind::kSyntheticContinuous ? env::CatalogMode::kContinuous
                                                            : env::CatalogMode::kCategorical;
  env::SynthEnv synth = env::synth_env(spec, data_seed);
  env::SynthLogs logs = env::synth_logs(synth, cfg.logs, derive_seed(data_seed, {2}));
  env::ExitConfig exit_cfg = cfg.exit;
  exit_cfg.mode = spec.mode == env::CatalogMode::kContinuous ? env::ExitMode::kContinuous
                                                             : env::ExitMode::kCategorical;
  return {env::Environment(std::move(synth.matrix), std::move(synth.catalog), exit_cfg,
                           std::move(synth.user_features)),
          std::move(logs.records)};
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& raw) {
  ExperimentConfig cfg = raw;
  cfg.ppo.horizon = cfg.exit.horizon;
  if (cfg.policy == PolicyKind::kCirsNoCi || !is_rl_policy(cfg.policy)) {
    cfg.model.tau = 0.0;
    cfg.model.tau_star = 0.0;
  }
  cfg.validate();

  std::string resolved = policy_kind_name(cfg.policy);
  if (cfg.policy == PolicyKind::kCirs && cfg.model.tau == 0.0 && cfg.model.tau_star == 0.0) {
    resolved = policy_kind_name(PolicyKind::kCirsNoCi);
  }

  fs::create_directories(cfg.out_dir);
  open_out(cfg.out_dir + "/resolved_config.json") << config_to_text(cfg, resolved);

  RunResult result;
  result.resolved_policy = resolved;

  // Stage 1: data and the pre-learned user model.
  std::unique_ptr<WorldData> data;
  try {
    data = std::make_unique<WorldData>(build_world(cfg));
  } catch (const std::exception& e) {
    stage_fail("data", e);
  }
  const env::Environment& world = data->world;

  model::ModelConfig mc = cfg.model;
  mc.users = world.users();
  mc.items = world.items();
  std::unique_ptr<model::CausalUserModel> um;
  try {
    um = std::make_unique<model::CausalUserModel>(mc, derive_seed(cfg.seed, {kSeedPretrain}));
    model::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, {kSeedPretrain, 1});
    model::TrainResult trained =
        model::train_user_model(*um, data->records, world.catalog(), tc);
    result.train_loss_curve = trained.loss_curve;
    um->save(cfg.out_dir + "/user_model.ckpt", trained.loss_curve);
  } catch (const std::exception& e) {
    stage_fail("pre-learning", e);
  }

  // Stage 2/3: planning interleaved with evaluation, or plain evaluation for
  // the static baselines.
  std::ofstream metrics = open_out(cfg.out_dir + "/metrics.csv");
  metrics << "epoch,mean_cum_sat,mean_len,mean_single_round\n";
  auto append_row = [&](std::size_t epoch, const EvalPoint& point) {
    MetricsRow row{epoch, point.mean_cum_sat, point.mean_len, point.mean_single_round};
    result.rows.push_back(row);
    metrics << epoch << ',' << fmt(row.mean_cum_sat) << ',' << fmt(row.mean_len) << ','
            << fmt(row.mean_single_round) << '\n';
    metrics.flush();
  };

  const std::vector<std::vector<double>>* features =
      world.user_features().empty() ? nullptr : &world.user_features();

  if (is_rl_policy(cfg.policy)) {
    tracker::TrackerConfig tcfg;
    tcfg.users = world.users();
    tcfg.items = world.items();
    tcfg.d_s = cfg.tracker_dim;
    tcfg.d_a = cfg.continuous_actions ? world.catalog().dim : cfg.tracker_dim;
    tcfg.d_u = cfg.continuous_actions && features ? (*features)[0].size() : cfg.tracker_dim;
    tcfg.ffn = cfg.tracker_ffn;
    tcfg.max_len = cfg.exit.horizon + 2;
    tcfg.continuous = cfg.continuous_actions;

    policy::PolicyConfig pcfg;
    pcfg.items = world.items();
    pcfg.d_s = cfg.tracker_dim;
    pcfg.continuous = cfg.continuous_actions;
    pcfg.action_dim = cfg.continuous_actions ? world.catalog().dim : 0;

    tracker::StateTracker tr(tcfg, derive_seed(cfg.seed, {kSeedPlan, 1}));
    policy::ActorCritic ac(pcfg, derive_seed(cfg.seed, {kSeedPlan, 2}));
    CirsRecommender rec(ac, tr, world.catalog(), features, cfg.eval.mode, um->target_scale());

    try {
      policy::PlanResult planned = policy::plan(
          ac, tr, *um, world.catalog(), world.users(), cfg.ppo, derive_seed(cfg.seed, {kSeedPlan}),
          cfg.continuous_actions ? features : nullptr, [&](const policy::PlanEpochStats& stats) {
            try {
              Rng eval_rng(derive_seed(cfg.seed, {kSeedEval, stats.epoch}));
              append_row(stats.epoch, evaluate(rec, world, cfg.eval.trajectories, eval_rng));
            } catch (const std::exception& e) {
              stage_fail("evaluation", e);
            }
          });
      result.plan_stats = planned.stats;
    } catch (const std::exception& e) {
      stage_fail("planning", e);
    }

    std::ofstream plan_file = open_out(cfg.out_dir + "/plan_stats.csv");
    plan_file << "epoch,mean_reward,surrogate,value_loss,entropy,clip_fraction\n";
    for (const policy::PlanEpochStats& s : result.plan_stats) {
      plan_file << s.epoch << ',' << fmt(s.mean_reward) << ',' << fmt(s.surrogate) << ','
                << fmt(s.value_loss) << ',' << fmt(s.entropy) << ',' << fmt(s.clip_fraction)
                << '\n';
    }

    nn::StoreRefs stores = {{"actor", &ac.actor()},
                            {"critic", &ac.critic()},
                            {"tracker", &tr.params()}};
    nn::save_checkpoint(cfg.out_dir + "/policy.ckpt", stores);
  } else {
    std::unique_ptr<Recommender> rec;
    switch (cfg.policy) {
      case PolicyKind::kRandom: {
        baselines::StaticConfig sc = cfg.static_cfg;
        sc.strategy = baselines::StaticStrategy::kRandom;
        rec = std::make_unique<StaticRecommender>(nullptr, world.items(), sc);
        break;
      }
      case PolicyKind::kEpsGreedy: {
        baselines::StaticConfig sc = cfg.static_cfg;
        sc.strategy = baselines::StaticStrategy::kEpsGreedy;
        rec = std::make_unique<StaticRecommender>(um.get(), world.items(), sc);
        break;
      }
      case PolicyKind::kSoftmaxStatic: {
        baselines::StaticConfig sc = cfg.static_cfg;
        sc.strategy = baselines::StaticStrategy::kSoftmax;
        rec = std::make_unique<StaticRecommender>(um.get(), world.items(), sc);
        break;
      }
      case PolicyKind::kUcb:
        rec = std::make_unique<UcbRecommender>(world.items(), cfg.ucb_c);
        break;
      default:
        throw std::logic_error("unreachable policy kind");
    }
    try {
      for (std::size_t epoch = 0; epoch < cfg.ppo.epochs; ++epoch) {
        Rng eval_rng(derive_seed(cfg.seed, {kSeedEval, epoch}));
        append_row(epoch, evaluate(*rec, world, cfg.eval.trajectories, eval_rng));
      }
    } catch (const std::exception& e) {
      stage_fail("evaluation", e);
    }
  }

  if (result.rows.empty()) throw std::runtime_error("stage evaluation failed: no metrics rows");
  result.final_cum_sat = result.rows.back().mean_cum_sat;
  return result;
}

SweepResult sweep(const ExperimentConfig& base, std::span<const double> taus,
                  std::span<const double> tau_stars) {
  if (taus.empty() || tau_stars.empty()) throw std::invalid_argument("sweep: empty grid");
  fs::create_directories(base.out_dir);
  std::ofstream matrix = open_out(base.out_dir + "/sweep.csv");
  matrix << "tau,tau_star,final_cum_sat\n";
  std::ofstream failures;

  SweepResult result;
  for (double tau : taus) {
    for (double tau_star : tau_stars) {
      ExperimentConfig cell_cfg = base;
      cell_cfg.policy = PolicyKind::kCirs;
      cell_cfg.model.tau = tau;
      cell_cfg.model.tau_star = tau_star;
      cell_cfg.out_dir =
          base.out_dir + "/cell_tau" + fmt_short(tau) + "_ts" + fmt_short(tau_star);

      SweepCell cell;
      cell.tau = tau;
      cell.tau_star = tau_star;
      try {
        RunResult run = run_experiment(cell_cfg);
        cell.ok = true;
        cell.final_cum_sat = run.final_cum_sat;
        matrix << fmt(tau) << ',' << fmt(tau_star) << ',' << fmt(cell.final_cum_sat) << '\n';
        matrix.flush();
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
        if (!failures.is_open()) failures = open_out(base.out_dir + "/sweep_failures.txt");
        failures << "tau=" << fmt_short(tau) << " tau_star=" << fmt_short(tau_star) << ": "
                 << cell.error << '\n';
        failures.flush();
      }
      result.cells.push_back(std::move(cell));
    }
  }
  return result;
}

}  // namespace cirs::harness
