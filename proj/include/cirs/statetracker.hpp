#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cirs/graph.hpp"
#include "cirs/params.hpp"

namespace cirs::tracker {

struct TrackerConfig {
  std::size_t users = 0;    // categorical mode: learned user embedding table size
  std::size_t items = 0;    // categorical mode: learned action embedding table size
  std::size_t d_s = 32;     // state width, shared with the policy heads
  std::size_t d_a = 32;     // action vector width fed to the gate
  std::size_t d_u = 32;     // user feature width fed to the projection
  std::size_t ffn = 32;     // encoder position-wise layer width
  std::size_t max_len = 64; // longest supported sequence (user token + actions)
  bool continuous = false;  // actions and user features arrive as raw vectors
};

// Reward-conditioned gate over action vectors followed by a two-layer causally
// masked self-attention encoder; the final position is the policy state.
class StateTracker {
 public:
  StateTracker(TrackerConfig cfg, std::uint64_t seed);

  const TrackerConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // g = sigmoid(W concat(r, e_a) + b); returns g * project(e_a), shape [1, d_s].
  nn::Val gate(nn::Graph& g, nn::Val reward, nn::Val action_vec) const;

  // Rows 0..n: row p is the state after the first p actions, shape [n+1, d_s].
  nn::Val encode_ids(nn::Graph& g, std::size_t user, std::span<const std::size_t> items,
                     std::span<const double> rewards) const;
  nn::Val encode_vecs(nn::Graph& g, std::span<const double> user_vec,
                      std::span<const std::vector<double>> actions,
                      std::span<const double> rewards) const;

  // Value-only convenience: the last row of the appropriate encode call.
  std::vector<double> state_ids(std::size_t user, std::span<const std::size_t> items,
                                std::span<const double> rewards) const;
  std::vector<double> state_vecs(std::span<const double> user_vec,
                                 std::span<const std::vector<double>> actions,
                                 std::span<const double> rewards) const;

 private:
  nn::Val encode_core(nn::Graph& g, nn::Val user_token, const std::vector<nn::Val>& gated) const;
  nn::Val encoder_layer(nn::Graph& g, nn::Val x, const std::string& prefix) const;
  nn::Val layer_norm(nn::Graph& g, nn::Val x, const std::string& gamma,
                     const std::string& beta) const;
  nn::Tensor positional(std::size_t len) const;

  TrackerConfig cfg_;
  nn::ParamStore params_;
};

}  // namespace cirs::tracker
