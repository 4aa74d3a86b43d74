#include "cirs/statetracker.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cirs/rng.hpp"

namespace cirs::tracker {

namespace {

constexpr double kMaskValue = -1e9;
constexpr double kNormEpsilon = 1e-5;

nn::Tensor causal_mask(std::size_t len) {
  nn::Tensor m({len, len});
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = i + 1; j < len; ++j) m.at(i, j) = kMaskValue;
  return m;
}

}  // namespace

StateTracker::StateTracker(TrackerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.d_s == 0 || cfg_.d_a == 0 || cfg_.d_u == 0 || cfg_.ffn == 0) {
    throw std::invalid_argument("tracker: widths must be positive");
  }
  if (cfg_.max_len < 2) throw std::invalid_argument("tracker: max_len must be at least 2");
  if (!cfg_.continuous && (cfg_.users == 0 || cfg_.items == 0)) {
    throw std::invalid_argument("tracker: categorical mode needs user and item counts");
  }

  Rng rng(derive_seed(seed, {31}));
  auto weight = [&](std::size_t r, std::size_t c) {
    return nn::Tensor::normal({r, c}, 0.0, 1.0 / std::sqrt(static_cast<double>(r)), rng);
  };

  if (!cfg_.continuous) {
    params_.add("user_emb", nn::Tensor::normal({cfg_.users, cfg_.d_u}, 0.0, 0.1, rng));
    params_.add("item_emb", nn::Tensor::normal({cfg_.items, cfg_.d_a}, 0.0, 0.1, rng));
  }
  params_.add("user_proj_w", weight(cfg_.d_u, cfg_.d_s));
  params_.add("user_proj_b", nn::Tensor({1, cfg_.d_s}));
  params_.add("gate_w", weight(1 + cfg_.d_a, cfg_.d_s));
  params_.add("gate_b", nn::Tensor({1, cfg_.d_s}));
  if (cfg_.d_a != cfg_.d_s) params_.add("act_proj_w", weight(cfg_.d_a, cfg_.d_s));

  for (const std::string prefix : {"enc0_", "enc1_"}) {
    params_.add(prefix + "wq", weight(cfg_.d_s, cfg_.d_s));
    params_.add(prefix + "wk", weight(cfg_.d_s, cfg_.d_s));
    params_.add(prefix + "wv", weight(cfg_.d_s, cfg_.d_s));
    params_.add(prefix + "wo", weight(cfg_.d_s, cfg_.d_s));
    params_.add(prefix + "ln1_g", nn::Tensor::full({1, cfg_.d_s}, 1.0));
    params_.add(prefix + "ln1_b", nn::Tensor({1, cfg_.d_s}));
    params_.add(prefix + "ffn_w1", weight(cfg_.d_s, cfg_.ffn));
    params_.add(prefix + "ffn_b1", nn::Tensor({1, cfg_.ffn}));
    params_.add(prefix + "ffn_w2", weight(cfg_.ffn, cfg_.d_s));
    params_.add(prefix + "ffn_b2", nn::Tensor({1, cfg_.d_s}));
    params_.add(prefix + "ln2_g", nn::Tensor::full({1, cfg_.d_s}, 1.0));
    params_.add(prefix + "ln2_b", nn::Tensor({1, cfg_.d_s}));
  }
}

nn::Val StateTracker::gate(nn::Graph& g, nn::Val reward, nn::Val action_vec) const {
  auto& ps = const_cast<nn::ParamStore&>(params_);
  nn::Val flat = g.reshape(action_vec, {cfg_.d_a});
  nn::Val joint = g.reshape(g.concat(g.reshape(reward, {1}), flat), {1, 1 + cfg_.d_a});
  nn::Val opened =
      g.sigmoid(g.add(g.matmul(joint, g.param(ps, "gate_w")), g.param(ps, "gate_b")));
  nn::Val lifted = g.reshape(flat, {1, cfg_.d_a});
  if (cfg_.d_a != cfg_.d_s) lifted = g.matmul(lifted, g.param(ps, "act_proj_w"));
  return g.mul(opened, lifted);
}

nn::Val StateTracker::encode_ids(nn::Graph& g, std::size_t user,
                                 std::span<const std::size_t> items,
                                 std::span<const double> rewards) const {
  if (cfg_.continuous) throw std::logic_error("tracker: encode_ids needs a categorical tracker");
  if (items.size() != rewards.size()) {
    throw std::invalid_argument("tracker: " + std::to_string(items.size()) + " items vs " +
                                std::to_string(rewards.size()) + " rewards");
  }
  if (user >= cfg_.users) {
    throw std::out_of_range("tracker: user id " + std::to_string(user) + " out of range");
  }
  auto& ps = const_cast<nn::ParamStore&>(params_);
  nn::Val user_token = g.row(g.param(ps, "user_emb"), user);
  std::vector<nn::Val> gated;
  gated.reserve(items.size());
  for (std::size_t l = 0; l < items.size(); ++l) {
    if (items[l] >= cfg_.items) {
      throw std::out_of_range("tracker: item id " + std::to_string(items[l]) + " out of range");
    }
    gated.push_back(gate(g, g.constant(rewards[l]), g.row(g.param(ps, "item_emb"), items[l])));
  }
  return encode_core(g, user_token, gated);
}

nn::Val StateTracker::encode_vecs(nn::Graph& g, std::span<const double> user_vec,
                                  std::span<const std::vector<double>> actions,
                                  std::span<const double> rewards) const {
  if (actions.size() != rewards.size()) {
    throw std::invalid_argument("tracker: " + std::to_string(actions.size()) + " actions vs " +
                                std::to_string(rewards.size()) + " rewards");
  }
  if (user_vec.size() != cfg_.d_u) {
    throw std::invalid_argument("tracker: user vector has " + std::to_string(user_vec.size()) +
                                " entries, expected " + std::to_string(cfg_.d_u));
  }
  nn::Val user_token = g.constant(
      nn::Tensor({1, cfg_.d_u}, std::vector<double>(user_vec.begin(), user_vec.end())));
  std::vector<nn::Val> gated;
  gated.reserve(actions.size());
  for (std::size_t l = 0; l < actions.size(); ++l) {
    if (actions[l].size() != cfg_.d_a) {
      throw std::invalid_argument("tracker: action " + std::to_string(l) + " has " +
                                  std::to_string(actions[l].size()) + " entries, expected " +
                                  std::to_string(cfg_.d_a));
    }
    gated.push_back(gate(g, g.constant(rewards[l]), g.constant(nn::Tensor({cfg_.d_a}, actions[l]))));
  }
  return encode_core(g, user_token, gated);
}

nn::Val StateTracker::encode_core(nn::Graph& g, nn::Val user_token,
                                  const std::vector<nn::Val>& gated) const {
  const std::size_t len = 1 + gated.size();
  if (len > cfg_.max_len) {
    throw std::invalid_argument("tracker: sequence of " + std::to_string(len) +
                                " exceeds max_len " + std::to_string(cfg_.max_len));
  }
  auto& ps = const_cast<nn::ParamStore&>(params_);
  std::vector<nn::Val> rows;
  rows.reserve(len);
  rows.push_back(g.linear(g.reshape(user_token, {1, cfg_.d_u}), g.param(ps, "user_proj_w"),
                          g.param(ps, "user_proj_b")));
  for (nn::Val v : gated) rows.push_back(v);
  nn::Val x = len == 1 ? rows[0] : g.concat(rows);
  x = g.add(x, g.constant(positional(len)));
  x = encoder_layer(g, x, "enc0_");
  x = encoder_layer(g, x, "enc1_");
  return x;
}

nn::Val StateTracker::encoder_layer(nn::Graph& g, nn::Val x, const std::string& prefix) const {
  auto& ps = const_cast<nn::ParamStore&>(params_);
  const std::size_t len = g.value(x).rows();
  nn::Val q = g.matmul(x, g.param(ps, prefix + "wq"));
  nn::Val k = g.matmul(x, g.param(ps, prefix + "wk"));
  nn::Val v = g.matmul(x, g.param(ps, prefix + "wv"));
  nn::Val scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(static_cast<double>(cfg_.d_s)));
  scores = g.add(scores, g.constant(causal_mask(len)));
  nn::Val ctx = g.matmul(g.softmax(scores), v);
  ctx = g.matmul(ctx, g.param(ps, prefix + "wo"));
  x = layer_norm(g, g.add(x, ctx), prefix + "ln1_g", prefix + "ln1_b");
  nn::Val h = g.relu(g.linear(x, g.param(ps, prefix + "ffn_w1"), g.param(ps, prefix + "ffn_b1")));
  h = g.linear(h, g.param(ps, prefix + "ffn_w2"), g.param(ps, prefix + "ffn_b2"));
  return layer_norm(g, g.add(x, h), prefix + "ln2_g", prefix + "ln2_b");
}

nn::Val StateTracker::layer_norm(nn::Graph& g, nn::Val x, const std::string& gamma,
                                 const std::string& beta) const {
  auto& ps = const_cast<nn::ParamStore&>(params_);
  const std::size_t len = g.value(x).rows();
  const std::size_t d = g.value(x).cols();
  nn::Val col_ones = g.constant(nn::Tensor::full({d, 1}, 1.0));
  nn::Val row_ones = g.constant(nn::Tensor::full({1, d}, 1.0));
  nn::Val mu = g.scale(g.matmul(x, col_ones), 1.0 / static_cast<double>(d));
  nn::Val centered = g.sub(x, g.matmul(mu, row_ones));
  nn::Val var = g.scale(g.matmul(g.square(centered), col_ones), 1.0 / static_cast<double>(d));
  nn::Val stddev = g.exp(g.scale(g.log(g.affine(var, 1.0, kNormEpsilon)), 0.5));
  nn::Val normed = g.div(centered, g.matmul(stddev, row_ones));
  nn::Val len_ones = g.constant(nn::Tensor::full({len, 1}, 1.0));
  return g.add(g.mul(normed, g.matmul(len_ones, g.param(ps, gamma))),
               g.matmul(len_ones, g.param(ps, beta)));
}

nn::Tensor StateTracker::positional(std::size_t len) const {
  nn::Tensor pe({len, cfg_.d_s});
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < cfg_.d_s; ++i) {
      double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) /
                                          static_cast<double>(cfg_.d_s));
      double angle = static_cast<double>(pos) / rate;
      pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

std::vector<double> StateTracker::state_ids(std::size_t user, std::span<const std::size_t> items,
                                            std::span<const double> rewards) const {
  nn::Graph g;
  nn::Val out = encode_ids(g, user, items, rewards);
  const nn::Tensor& v = g.value(out);
  std::vector<double> s(cfg_.d_s);
  for (std::size_t j = 0; j < cfg_.d_s; ++j) s[j] = v.at(v.rows() - 1, j);
  return s;
}

std::vector<double> StateTracker::state_vecs(std::span<const double> user_vec,
                                             std::span<const std::vector<double>> actions,
                                             std::span<const double> rewards) const {
  nn::Graph g;
  nn::Val out = encode_vecs(g, user_vec, actions, rewards);
  const nn::Tensor& v = g.value(out);
  std::vector<double> s(cfg_.d_s);
  for (std::size_t j = 0; j < cfg_.d_s; ++j) s[j] = v.at(v.rows() - 1, j);
  return s;
}

}  // namespace cirs::tracker
