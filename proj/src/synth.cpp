#include "cirs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cirs/rng.hpp"

namespace cirs::env {

namespace {

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::vector<double> randn(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

SynthEnv synth_env(const SynthEnvSpec& spec, std::uint64_t seed) {
  if (spec.users < 1 || spec.items < 1) {
    throw std::invalid_argument("synth env: need at least one user and one item");
  }
  SynthEnv out;
  out.matrix = RatingMatrix(spec.users, spec.items);

  if (spec.mode == CatalogMode::kCategorical) {
    if (spec.tag_vocab < 4) throw std::invalid_argument("synth env: tag vocabulary too small");
    Rng rng(derive_seed(seed, {1}));
    out.catalog.mode = CatalogMode::kCategorical;
    out.catalog.tag_vocab = spec.tag_vocab;
    const std::vector<double> count_weights = {0.45, 0.35, 0.12, 0.08};
    for (std::size_t i = 0; i < spec.items; ++i) {
      std::size_t count = rng.categorical(count_weights) + 1;
      std::vector<int> tags;
      while (tags.size() < count) {
        int g = static_cast<int>(rng.uniform_int(spec.tag_vocab));
        if (std::find(tags.begin(), tags.end(), g) == tags.end()) tags.push_back(g);
      }
      std::sort(tags.begin(), tags.end());
      out.catalog.tags.push_back(std::move(tags));
    }

    Rng irng(derive_seed(seed, {2}));
    std::vector<std::vector<double>> user_latent, tag_latent;
    for (std::size_t u = 0; u < spec.users; ++u) user_latent.push_back(randn(spec.latent, irng));
    for (std::size_t g = 0; g < spec.tag_vocab; ++g) tag_latent.push_back(randn(spec.latent, irng));
    double scale = 1.5 / std::sqrt(static_cast<double>(spec.latent));
    for (std::size_t u = 0; u < spec.users; ++u) {
      for (std::size_t i = 0; i < spec.items; ++i) {
        double mean_affinity = 0.0;
        for (int g : out.catalog.tags[i]) mean_affinity += dot(user_latent[u], tag_latent[g]);
        mean_affinity /= static_cast<double>(out.catalog.tags[i].size());
        out.matrix.at(u, i) = spec.r_max * sigmoid(scale * mean_affinity);
      }
    }
  } else {
    if (spec.dim < 1 || spec.user_dim < 1) {
      throw std::invalid_argument("synth env: vector dimensions must be positive");
    }
    Rng rng(derive_seed(seed, {1}));
    out.catalog.mode = CatalogMode::kContinuous;
    out.catalog.dim = spec.dim;
    for (std::size_t i = 0; i < spec.items; ++i) {
      std::vector<double> v(spec.dim);
      for (double& x : v) x = rng.uniform01();
      out.catalog.vectors.push_back(std::move(v));
    }

    Rng urng(derive_seed(seed, {2}));
    std::vector<std::vector<double>> user_latent;
    for (std::size_t u = 0; u < spec.users; ++u) {
      user_latent.push_back(randn(spec.dim, urng));
      std::vector<double> f(spec.user_dim);
      for (double& x : f) x = urng.uniform01() < 0.5 ? 0.0 : 1.0;
      out.user_features.push_back(std::move(f));
    }
    double scale = 2.0 / std::sqrt(static_cast<double>(spec.dim));
    for (std::size_t u = 0; u < spec.users; ++u) {
      for (std::size_t i = 0; i < spec.items; ++i) {
        double raw = sigmoid(scale * dot(user_latent[u], out.catalog.vectors[i]));
        out.matrix.at(u, i) = std::round(10.0 * raw);
      }
    }
  }
  out.catalog.validate();
  out.matrix.validate();
  return out;
}

SynthLogs synth_logs(const SynthEnv& world, const SynthLogSpec& spec, std::uint64_t seed) {
  if (spec.records_per_user < 1) throw std::invalid_argument("synth logs: need records per user");
  if (spec.tau < 0.0) throw std::invalid_argument("synth logs: tau must be non-negative");
  const std::size_t users = world.matrix.users;
  const std::size_t items = world.matrix.items;

  SynthLogs out;
  out.tau = spec.tau;
  Rng prng(derive_seed(seed, {3}));
  for (std::size_t u = 0; u < users; ++u) out.alpha.push_back(prng.uniform(spec.alpha_lo, spec.alpha_hi));
  for (std::size_t i = 0; i < items; ++i) out.beta.push_back(prng.uniform(spec.beta_lo, spec.beta_hi));

  for (std::size_t u = 0; u < users; ++u) {
    Rng rng(derive_seed(seed, {4, u}));
    std::vector<std::size_t> shown;
    std::vector<double> when;
    double now = 0.0;
    for (std::size_t r = 0; r < spec.records_per_user; ++r) {
      now += rng.uniform(spec.gap_lo, spec.gap_hi);
      std::size_t item;
      if (!shown.empty() && rng.uniform01() < spec.repeat_prob) {
        std::size_t lo = shown.size() > spec.repeat_window ? shown.size() - spec.repeat_window : 0;
        item = shown[lo + rng.uniform_int(shown.size() - lo)];
      } else {
        item = rng.uniform_int(items);
      }
      double exposure = 0.0;
      if (spec.tau > 0.0) {
        double sum = 0.0;
        for (std::size_t l = 0; l < shown.size(); ++l) {
          double gap = now - when[l];
          sum += std::exp(-(gap / spec.tau) * item_distance(item, shown[l], world.catalog));
        }
        exposure = out.alpha[u] * out.beta[item] * sum;
      }
      double observed = world.matrix.at(u, item) / (1.0 + exposure) + spec.noise * rng.normal();
      Interaction rec;
      rec.user = u;
      rec.item = item;
      rec.timestamp = now;
      rec.rating = std::max(0.0, observed);
      out.records.push_back(rec);
      shown.push_back(item);
      when.push_back(now);
    }
  }
  return out;
}

}  // namespace cirs::env
