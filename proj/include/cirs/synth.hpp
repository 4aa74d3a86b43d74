#pragma once

#include <cstdint>
#include <vector>

#include "cirs/env.hpp"

namespace cirs::env {

struct SynthEnvSpec {
  std::size_t users = 20;
  std::size_t items = 100;
  CatalogMode mode = CatalogMode::kCategorical;
  std::size_t tag_vocab = 31;
  std::size_t dim = 27;      // continuous item vector length
  std::size_t user_dim = 88; // continuous binary user feature length
  double r_max = 1.0;        // categorical rating cap
  std::size_t latent = 8;    // rank of the planted interest structure
};

struct SynthEnv {
  RatingMatrix matrix;  // intrinsic interest, the evaluation ground truth
  ItemCatalog catalog;
  std::vector<std::vector<double>> user_features;  // continuous mode only
};

SynthEnv synth_env(const SynthEnvSpec& spec, std::uint64_t seed);

struct SynthLogSpec {
  std::size_t records_per_user = 200;
  double tau = 30.0;          // planted decay scale, log time is in seconds
  double alpha_lo = 0.2;
  double alpha_hi = 2.5;
  double beta_lo = 0.5;
  double beta_hi = 1.5;
  double gap_lo = 5.0;
  double gap_hi = 200.0;
  double repeat_prob = 0.3;   // chance of re-recommending a recently shown item
  std::size_t repeat_window = 5;
  double noise = 0.02;        // observation noise on logged ratings
};

struct SynthLogs {
  std::vector<Interaction> records;  // grouped by user, per-user timestamps strictly increasing
  std::vector<double> alpha;         // planted per-user exposure sensitivity
  std::vector<double> beta;          // planted per-item exposure weight
  double tau = 0.0;                  // planted decay scale
};

// Logged ratings are the intrinsic interest dampened by the planted exposure
// effect of each record's own in-log history, so the exposure parameters are
// recoverable from the logs alone.
SynthLogs synth_logs(const SynthEnv& world, const SynthLogSpec& spec, std::uint64_t seed);

}  // namespace cirs::env
