#include "cirs/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cirs::policy {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;

void check_finite_tensor(const nn::Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("policy: non-finite ") + what);
  }
}

}  // namespace

ActorCritic::ActorCritic(PolicyConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.d_s == 0) throw std::invalid_argument("policy: state width must be positive");
  if (cfg_.continuous) {
    if (cfg_.action_dim == 0) {
      throw std::invalid_argument("policy: continuous mode needs action_dim");
    }
  } else if (cfg_.items == 0) {
    throw std::invalid_argument("policy: discrete mode needs an item count");
  }

  Rng rng(derive_seed(seed, {41}));
  if (cfg_.continuous) {
    actor_.add("mean_w", nn::Tensor::normal({cfg_.d_s, cfg_.action_dim}, 0.0, 0.01, rng));
    actor_.add("mean_b", nn::Tensor({1, cfg_.action_dim}));
    actor_.add("log_std", nn::Tensor::full({1, cfg_.action_dim}, -0.5));
  } else {
    actor_.add("actor_w", nn::Tensor::normal({cfg_.d_s, cfg_.items}, 0.0, 0.01, rng));
    actor_.add("actor_b", nn::Tensor({1, cfg_.items}));
  }
  critic_.add("critic_w", nn::Tensor::normal({cfg_.d_s, 1}, 0.0, 0.1, rng));
  critic_.add("critic_b", nn::Tensor({1, 1}));
}

nn::Val ActorCritic::logits(nn::Graph& g, nn::Val states) const {
  auto& ps = const_cast<nn::ParamStore&>(actor_);
  return g.linear(states, g.param(ps, "actor_w"), g.param(ps, "actor_b"));
}

nn::Val ActorCritic::value(nn::Graph& g, nn::Val states) const {
  auto& ps = const_cast<nn::ParamStore&>(critic_);
  return g.linear(states, g.param(ps, "critic_w"), g.param(ps, "critic_b"));
}

nn::Val ActorCritic::action_mean(nn::Graph& g, nn::Val states) const {
  auto& ps = const_cast<nn::ParamStore&>(actor_);
  return g.linear(states, g.param(ps, "mean_w"), g.param(ps, "mean_b"));
}

nn::Val ActorCritic::action_log_std(nn::Graph& g, std::size_t steps) const {
  auto& ps = const_cast<nn::ParamStore&>(actor_);
  nn::Val ones = g.constant(nn::Tensor::full({steps, 1}, 1.0));
  return g.matmul(ones, g.param(ps, "log_std"));
}

ActResult act(const ActorCritic& ac, std::span<const double> state, ActMode mode, Rng& rng) {
  const PolicyConfig& cfg = ac.config();
  if (state.size() != cfg.d_s) {
    throw std::invalid_argument("policy: state has " + std::to_string(state.size()) +
                                " entries, expected " + std::to_string(cfg.d_s));
  }
  nn::Graph g;
  nn::Val s =
      g.constant(nn::Tensor({1, cfg.d_s}, std::vector<double>(state.begin(), state.end())));
  ActResult out;
  out.value = g.value(ac.value(g, s))[0];

  if (!cfg.continuous) {
    nn::Val lg = ac.logits(g, s);
    check_finite_tensor(g.value(lg), "logits");
    nn::Val logp = g.log_softmax(lg);
    std::size_t chosen = 0;
    if (mode == ActMode::kGreedy) {
      const nn::Tensor& v = g.value(lg);
      for (std::size_t i = 1; i < cfg.items; ++i) {
        if (v[i] > v[chosen]) chosen = i;
      }
    } else {
      const nn::Tensor& probs = g.value(g.softmax(lg));
      chosen = static_cast<std::size_t>(rng.categorical(probs.data()));
    }
    out.item = chosen;
    out.log_prob = g.value(logp)[chosen];
    return out;
  }

  nn::Val mu = ac.action_mean(g, s);
  nn::Val ls = ac.action_log_std(g, 1);
  check_finite_tensor(g.value(mu), "action mean");
  check_finite_tensor(g.value(ls), "action log-std");
  out.action.resize(cfg.action_dim);
  out.log_prob = -0.5 * kLogTwoPi * static_cast<double>(cfg.action_dim);
  for (std::size_t j = 0; j < cfg.action_dim; ++j) {
    double m = g.value(mu)[j];
    double sd = std::exp(g.value(ls)[j]);
    double a = mode == ActMode::kGreedy ? m : m + sd * rng.normal(0.0, 1.0);
    double z = (a - m) / sd;
    out.action[j] = a;
    out.log_prob += -0.5 * z * z - g.value(ls)[j];
  }
  return out;
}

void Episode::validate(bool continuous) const {
  const std::size_t n = steps();
  if (n == 0) throw std::invalid_argument("ppo: empty episode");
  bool lengths_ok = gate_rewards.size() == n && log_probs.size() == n &&
                    values.size() == n + 1 && advantages.size() == n && returns.size() == n &&
                    (continuous ? actions.size() == n : items.size() == n);
  if (!lengths_ok) throw std::invalid_argument("ppo: episode arrays disagree on step count");
  for (double v : advantages) {
    if (!std::isfinite(v)) throw std::invalid_argument("ppo: non-finite advantage");
  }
}

std::size_t RolloutBatch::total_steps() const {
  std::size_t n = 0;
  for (const Episode& ep : episodes) n += ep.steps();
  return n;
}

void RolloutBatch::validate(bool continuous) const {
  if (episodes.empty()) throw std::invalid_argument("ppo: empty batch");
  for (const Episode& ep : episodes) ep.validate(continuous);
}

void PpoConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw std::invalid_argument("ppo: clip must be in (0,1)");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("ppo: gamma must be in (0,1]");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("ppo: lambda must be in (0,1]");
  if (update_epochs == 0 || minibatch == 0 || rollouts == 0 || horizon == 0 || epochs == 0) {
    throw std::invalid_argument("ppo: counts must be positive");
  }
  if (entropy_coef < 0.0 || value_coef < 0.0) {
    throw std::invalid_argument("ppo: loss coefficients must be non-negative");
  }
  if (actor_lr <= 0.0 || critic_lr <= 0.0 || tracker_lr <= 0.0) {
    throw std::invalid_argument("ppo: learning rates must be positive");
  }
}

PpoOptimizers::PpoOptimizers(ActorCritic& ac, tracker::StateTracker& tr, const PpoConfig& cfg)
    : actor(ac.actor(), {cfg.actor_lr}),
      critic(ac.critic(), {cfg.critic_lr}),
      tracker(tr.params(), {cfg.tracker_lr}) {}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        double gamma, double lambda) {
  if (values.size() != rewards.size() + 1) {
    throw std::invalid_argument("gae: " + std::to_string(rewards.size()) + " rewards need " +
                                std::to_string(rewards.size() + 1) + " values, got " +
                                std::to_string(values.size()));
  }
  std::vector<double> adv(rewards.size());
  double running = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    double delta = rewards[t] + gamma * values[t + 1] - values[t];
    running = delta + gamma * lambda * running;
    adv[t] = running;
  }
  return adv;
}

void normalize_advantages(RolloutBatch& batch) {
  std::size_t n = 0;
  double sum = 0.0;
  for (const Episode& ep : batch.episodes) {
    for (double a : ep.advantages) {
      sum += a;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("ppo: no advantages to normalize");
  double mean = sum / static_cast<double>(n);
  double var = 0.0;
  for (const Episode& ep : batch.episodes) {
    for (double a : ep.advantages) var += (a - mean) * (a - mean);
  }
  double stddev = std::sqrt(var / static_cast<double>(n));
  for (Episode& ep : batch.episodes) {
    for (double& a : ep.advantages) a = (a - mean) / (stddev + 1e-8);
  }
}

nn::Val clipped_objective(nn::Graph& g, nn::Val ratio, nn::Val adv, double eps) {
  nn::Val plain = g.mul(ratio, adv);
  nn::Val clamped = g.mul(g.clip(ratio, 1.0 - eps, 1.0 + eps), adv);
  return g.min(plain, clamped);
}

namespace {

struct EpisodeHandles {
  nn::Val loss;   // sum of per-step losses, unscaled
  nn::Val surr;   // [T,1]
  nn::Val ratio;  // [T,1]
  nn::Val vloss;  // [T,1]
  nn::Val ent;    // [T,1]
};

const std::vector<double>& user_vector(const std::vector<std::vector<double>>* user_features,
                                       std::size_t user) {
  if (user_features == nullptr) {
    throw std::invalid_argument("policy: continuous mode needs user feature vectors");
  }
  if (user >= user_features->size()) {
    throw std::out_of_range("policy: user " + std::to_string(user) + " has no feature vector");
  }
  return (*user_features)[user];
}

EpisodeHandles build_episode_loss(nn::Graph& g, const Episode& ep, const ActorCritic& ac,
                                  const tracker::StateTracker& tr, const PpoConfig& cfg,
                                  const std::vector<std::vector<double>>* user_features) {
  const PolicyConfig& pc = ac.config();
  const std::size_t n = ep.steps();

  nn::Val seq;  // [n, d_s]: the state each action was chosen from
  if (pc.continuous) {
    seq = tr.encode_vecs(g, user_vector(user_features, ep.user),
                         std::span(ep.actions.data(), n - 1),
                         std::span(ep.gate_rewards.data(), n - 1));
  } else {
    seq = tr.encode_ids(g, ep.user, std::span(ep.items.data(), n - 1),
                        std::span(ep.gate_rewards.data(), n - 1));
  }

  nn::Val lp;   // [n,1]
  nn::Val ent;  // [n,1]
  if (pc.continuous) {
    nn::Val mu = ac.action_mean(g, seq);
    nn::Val ls = ac.action_log_std(g, n);
    nn::Tensor acts({n, pc.action_dim});
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < pc.action_dim; ++j) acts.at(t, j) = ep.actions[t][j];
    nn::Val z = g.div(g.sub(g.constant(acts), mu), g.exp(ls));
    nn::Val colsum = g.constant(nn::Tensor::full({pc.action_dim, 1}, 1.0));
    double dim = static_cast<double>(pc.action_dim);
    lp = g.affine(g.matmul(g.add(g.scale(g.square(z), -0.5), g.neg(ls)), colsum), 1.0,
                  -0.5 * dim * kLogTwoPi);
    ent = g.affine(g.matmul(ls, colsum), 1.0, 0.5 * dim * (1.0 + kLogTwoPi));
  } else {
    nn::Val lg = ac.logits(g, seq);
    nn::Val logp = g.log_softmax(lg);
    nn::Tensor mask({n, pc.items});
    for (std::size_t t = 0; t < n; ++t) mask.at(t, ep.items[t]) = 1.0;
    nn::Val colsum = g.constant(nn::Tensor::full({pc.items, 1}, 1.0));
    lp = g.matmul(g.mul(logp, g.constant(mask)), colsum);
    ent = g.neg(g.matmul(g.mul(g.softmax(lg), logp), colsum));
  }

  nn::Val lp_old = g.constant(nn::Tensor({n, 1}, ep.log_probs));
  nn::Val ratio = g.exp(g.sub(lp, lp_old));
  nn::Val adv = g.constant(nn::Tensor({n, 1}, ep.advantages));
  nn::Val surr = clipped_objective(g, ratio, adv, cfg.clip);

  nn::Val vpred = ac.value(g, seq);
  nn::Val vloss = g.square(g.sub(vpred, g.constant(nn::Tensor({n, 1}, ep.returns))));

  nn::Val per_step = g.add(g.add(g.neg(surr), g.scale(vloss, cfg.value_coef)),
                           g.scale(ent, -cfg.entropy_coef));
  return {g.sum(per_step), surr, ratio, vloss, ent};
}

double tensor_sum(const nn::Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

}  // namespace

nn::Val episode_loss(nn::Graph& g, const Episode& ep, const ActorCritic& ac,
                     const tracker::StateTracker& tr, const PpoConfig& cfg,
                     const std::vector<std::vector<double>>* user_features) {
  ep.validate(ac.config().continuous);
  return build_episode_loss(g, ep, ac, tr, cfg, user_features).loss;
}

PpoDiagnostics ppo_update(const RolloutBatch& batch, ActorCritic& ac, tracker::StateTracker& tr,
                          const PpoConfig& cfg, PpoOptimizers& opt, Rng& rng,
                          const std::vector<std::vector<double>>* user_features) {
  cfg.validate();
  batch.validate(ac.config().continuous);
  const double total = static_cast<double>(batch.total_steps());

  PpoDiagnostics diag;
  for (const Episode& ep : batch.episodes) {
    nn::Graph g;
    EpisodeHandles h = build_episode_loss(g, ep, ac, tr, cfg, user_features);
    diag.surrogate += tensor_sum(g.value(h.surr));
    diag.value_loss += tensor_sum(g.value(h.vloss));
    diag.entropy += tensor_sum(g.value(h.ent));
  }
  diag.surrogate /= total;
  diag.value_loss /= total;
  diag.entropy /= total;

  std::vector<std::size_t> order(batch.episodes.size());
  std::iota(order.begin(), order.end(), 0);
  double clipped = 0.0;

  for (std::size_t epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      std::size_t stop = std::min(start + cfg.minibatch, order.size());
      std::size_t mb_steps = 0;
      for (std::size_t i = start; i < stop; ++i) mb_steps += batch.episodes[order[i]].steps();

      ac.actor().zero_grads();
      ac.critic().zero_grads();
      for (std::size_t i = start; i < stop; ++i) {
        const Episode& ep = batch.episodes[order[i]];
        nn::Graph g;
        EpisodeHandles h = build_episode_loss(g, ep, ac, tr, cfg, user_features);
        nn::Val scaled = g.scale(h.loss, 1.0 / static_cast<double>(mb_steps));
        double loss = g.scalar(scaled);
        if (!std::isfinite(loss)) {
          std::ostringstream msg;
          msg << "ppo: loss diverged at update epoch " << epoch << ", minibatch "
              << start / cfg.minibatch << " (loss=" << loss << ")";
          throw std::runtime_error(msg.str());
        }
        g.backward_accumulate(scaled);
        if (epoch + 1 == cfg.update_epochs) {
          const nn::Tensor& r = g.value(h.ratio);
          for (double v : r.data()) {
            if (std::abs(v - 1.0) > cfg.clip) clipped += 1.0;
          }
        }
      }
      opt.actor.step();
      opt.critic.step();
    }
  }
  ac.actor().zero_grads();
  ac.critic().zero_grads();

  opt.tracker.step();
  tr.params().zero_grads();

  diag.clip_fraction = clipped / total;
  return diag;
}

std::size_t nearest_item(const env::ItemCatalog& catalog, std::span<const double> action) {
  if (catalog.mode != env::CatalogMode::kContinuous) {
    throw std::invalid_argument("policy: nearest_item needs a continuous catalog");
  }
  if (action.size() != catalog.dim) {
    throw std::invalid_argument("policy: action has " + std::to_string(action.size()) +
                                " entries, catalog items have " + std::to_string(catalog.dim));
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < catalog.vectors.size(); ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < catalog.dim; ++j) {
      double diff = action[j] - catalog.vectors[i][j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

Episode rollout_episode(const ActorCritic& ac, const tracker::StateTracker& tr,
                        const model::CausalUserModel& um, const env::ItemCatalog& catalog,
                        std::size_t user, const PpoConfig& cfg, Rng& rng, ActMode mode,
                        const std::vector<std::vector<double>>* user_features) {
  const bool continuous = ac.config().continuous;
  Episode ep;
  ep.user = user;
  std::vector<model::PlanRecord> traj;
  traj.reserve(cfg.horizon);
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    std::vector<double> state =
        continuous ? tr.state_vecs(user_vector(user_features, user), ep.actions, ep.gate_rewards)
                   : tr.state_ids(user, ep.items, ep.gate_rewards);
    ActResult chosen = act(ac, state, mode, rng);
    std::size_t item = continuous ? nearest_item(catalog, chosen.action) : chosen.item;
    double reward = um.counterfactual_reward(traj, user, item, static_cast<double>(t), catalog);
    ep.items.push_back(item);
    if (continuous) ep.actions.push_back(std::move(chosen.action));
    ep.gate_rewards.push_back(reward);
    ep.rewards.push_back(reward);
    ep.log_probs.push_back(chosen.log_prob);
    ep.values.push_back(chosen.value);
    traj.push_back({item, static_cast<double>(t)});
  }
  ep.values.push_back(0.0);
  return ep;
}

PlanResult plan(ActorCritic& ac, tracker::StateTracker& tr, const model::CausalUserModel& um,
                const env::ItemCatalog& catalog, std::size_t users, const PpoConfig& cfg,
                std::uint64_t seed, const std::vector<std::vector<double>>* user_features,
                const PlanCallback& on_epoch) {
  cfg.validate();
  if (users == 0) throw std::invalid_argument("plan: no users to sample");
  if (ac.config().continuous != tr.config().continuous) {
    throw std::invalid_argument("plan: actor and tracker disagree on the action space");
  }

  PpoOptimizers opt(ac, tr, cfg);
  PlanResult out;
  out.stats.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.anneal) {
      double frac = static_cast<double>(cfg.epochs - epoch) / static_cast<double>(cfg.epochs);
      opt.actor.set_lr(cfg.actor_lr * frac);
      opt.critic.set_lr(cfg.critic_lr * frac);
      opt.tracker.set_lr(cfg.tracker_lr * frac);
    }
    RolloutBatch batch;
    batch.episodes.reserve(cfg.rollouts);
    double reward_sum = 0.0;
    for (std::size_t k = 0; k < cfg.rollouts; ++k) {
      Rng rng(derive_seed(seed, {42, epoch, k}));
      std::size_t user = rng.uniform_int(users);
      Episode ep =
          rollout_episode(ac, tr, um, catalog, user, cfg, rng, ActMode::kSample, user_features);
      for (double r : ep.rewards) reward_sum += r;
      batch.episodes.push_back(std::move(ep));
    }
    for (Episode& ep : batch.episodes) {
      ep.advantages = gae(ep.rewards, ep.values, cfg.gamma, cfg.lambda);
      ep.returns.resize(ep.steps());
      for (std::size_t t = 0; t < ep.steps(); ++t) ep.returns[t] = ep.advantages[t] + ep.values[t];
    }
    normalize_advantages(batch);

    Rng update_rng(derive_seed(seed, {43, epoch}));
    PpoDiagnostics diag = ppo_update(batch, ac, tr, cfg, opt, update_rng, user_features);

    PlanEpochStats row;
    row.epoch = epoch;
    row.mean_reward = reward_sum / static_cast<double>(batch.total_steps());
    row.surrogate = diag.surrogate;
    row.value_loss = diag.value_loss;
    row.entropy = diag.entropy;
    row.clip_fraction = diag.clip_fraction;
    out.stats.push_back(row);
    if (on_epoch) on_epoch(out.stats.back());
  }
  return out;
}

}  // namespace cirs::policy
