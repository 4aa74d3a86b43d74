#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cirs/env.hpp"
#include "cirs/graph.hpp"
#include "cirs/params.hpp"

namespace cirs::model {

struct ModelConfig {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t embed_dim = 8;
  std::size_t hidden = 32;
  double tau = 0.0;         // exposure decay over log time (seconds); 0 disables exposure
  double tau_star = 0.0;    // intervention decay over planning steps; 0 disables it
  double gamma_star = 10.0; // intervention scale
};

struct PlanRecord {
  std::size_t item = 0;
  double step = 0.0;
};

double satisfaction(double interest, double exposure);

// Interest estimator (factorization machine + small MLP head) with per-user /
// per-item overexposure parameters, softplus-reparameterized to stay positive.
class CausalUserModel {
 public:
  CausalUserModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Scoring graph shared by training and inference; u and i must be in range.
  nn::Val score(nn::Graph& g, std::size_t u, std::size_t i) const;
  double predict_interest(std::size_t u, std::size_t i) const;
  // One column of interest scores for every item under user u.
  std::vector<double> predict_all(std::size_t u) const;

  double alpha(std::size_t u) const;  // softplus of the raw per-user parameter
  double beta(std::size_t i) const;   // softplus of the raw per-item parameter

  double exposure_effect(std::span<const env::Interaction> history, std::size_t u, std::size_t i,
                         double t, const env::ItemCatalog& catalog) const;
  double counterfactual_exposure(std::span<const PlanRecord> traj, std::size_t u, std::size_t i,
                                 double t_step, const env::ItemCatalog& catalog) const;
  double counterfactual_reward(std::span<const PlanRecord> traj, std::size_t u, std::size_t i,
                               double t_step, const env::ItemCatalog& catalog) const;

  double target_scale() const { return target_scale_; }
  void set_target_scale(double s);

  void save(const std::string& path, const std::vector<double>& loss_curve = {}) const;
  static CausalUserModel load(const std::string& path);

 private:
  void check_ids(std::size_t u, std::size_t i) const;

  ModelConfig cfg_;
  nn::ParamStore params_;
  double target_scale_ = 1.0;
};

struct TrainConfig {
  enum class Loss { kMse, kBpr };
  Loss loss = Loss::kMse;
  std::size_t epochs = 30;
  std::size_t batch = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> loss_curve;  // one mean loss per epoch
  double target_scale = 1.0;       // divisor applied to ratings before the loss
};

// Builds the per-record loss with exposure taken from each record's own
// in-log history; check_gradients routes a small batch through gradient_check.
TrainResult train_user_model(CausalUserModel& model, const std::vector<env::Interaction>& logs,
                             const env::ItemCatalog& catalog, const TrainConfig& cfg);

double check_training_gradients(CausalUserModel& model, const std::vector<env::Interaction>& logs,
                                const env::ItemCatalog& catalog, TrainConfig::Loss loss,
                                std::size_t max_records, std::uint64_t seed);

}  // namespace cirs::model
