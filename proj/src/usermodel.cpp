#include "cirs/usermodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cirs/adam.hpp"
#include "cirs/checkpoint.hpp"
#include "cirs/rng.hpp"
#include "json.hpp"

namespace cirs::model {

namespace {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

constexpr double kUnitRaw = 0.5413248546129181;  // softplus(kUnitRaw) == 1

}  // namespace

double satisfaction(double interest, double exposure) {
  if (exposure < 0.0) throw std::invalid_argument("satisfaction: exposure must be non-negative");
  return interest / (1.0 + exposure);
}

CausalUserModel::CausalUserModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.users < 1 || cfg.items < 1) throw std::invalid_argument("user model: empty id space");
  if (cfg.embed_dim < 1 || cfg.hidden < 1) throw std::invalid_argument("user model: empty layers");
  if (cfg.tau < 0.0 || cfg.tau_star < 0.0) throw std::invalid_argument("user model: negative decay");
  if (!(cfg.gamma_star > 0.0)) throw std::invalid_argument("user model: intervention scale must be positive");

  Rng rng(derive_seed(seed, {11}));
  std::size_t k = cfg.embed_dim;
  using nn::Tensor;
  params_.add("bias", Tensor({1}));
  params_.add("user_first", Tensor({cfg.users}));
  params_.add("item_first", Tensor({cfg.items}));
  params_.add("user_emb", Tensor::normal({cfg.users, k}, 0.0, 0.1, rng));
  params_.add("item_emb", Tensor::normal({cfg.items, k}, 0.0, 0.1, rng));
  double s1 = 1.0 / std::sqrt(static_cast<double>(2 * k));
  params_.add("mlp_w1_user", Tensor::normal({k, cfg.hidden}, 0.0, s1, rng));
  params_.add("mlp_w1_item", Tensor::normal({k, cfg.hidden}, 0.0, s1, rng));
  params_.add("mlp_b1", Tensor({1, cfg.hidden}));
  params_.add("mlp_w2", Tensor::normal({cfg.hidden, 1}, 0.0, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)), rng));
  params_.add("mlp_b2", Tensor({1, 1}));
  params_.add("alpha_raw", Tensor::full({cfg.users}, kUnitRaw));
  params_.add("beta_raw", Tensor::full({cfg.items}, kUnitRaw));
}

void CausalUserModel::check_ids(std::size_t u, std::size_t i) const {
  if (u >= cfg_.users) throw std::out_of_range("user model: unknown user " + std::to_string(u));
  if (i >= cfg_.items) throw std::out_of_range("user model: unknown item " + std::to_string(i));
}

nn::Val CausalUserModel::score(nn::Graph& g, std::size_t u, std::size_t i) const {
  check_ids(u, i);
  auto& ps = const_cast<nn::ParamStore&>(params_);
  nn::Val eu = g.row(g.param(ps, "user_emb"), u);
  nn::Val ei = g.row(g.param(ps, "item_emb"), i);
  nn::Val fm = g.reshape(g.matmul(eu, g.transpose(ei)), {1});
  nn::Val hidden = g.sigmoid(g.add(
      g.add(g.matmul(eu, g.param(ps, "mlp_w1_user")), g.matmul(ei, g.param(ps, "mlp_w1_item"))),
      g.param(ps, "mlp_b1")));
  nn::Val head = g.reshape(g.add(g.matmul(hidden, g.param(ps, "mlp_w2")), g.param(ps, "mlp_b2")), {1});
  nn::Val first = g.add(g.row(g.param(ps, "user_first"), u), g.row(g.param(ps, "item_first"), i));
  return g.add(g.add(g.param(ps, "bias"), first), g.add(fm, head));
}

double CausalUserModel::predict_interest(std::size_t u, std::size_t i) const {
  nn::Graph g;
  return g.scalar(score(g, u, i));
}

std::vector<double> CausalUserModel::predict_all(std::size_t u) const {
  check_ids(u, 0);
  auto& ps = const_cast<nn::ParamStore&>(params_);
  nn::Graph g;
  std::size_t items = cfg_.items;
  nn::Val E = g.param(ps, "item_emb");
  nn::Val eu = g.row(g.param(ps, "user_emb"), u);
  nn::Val ones = g.constant(nn::Tensor::full({items, 1}, 1.0));
  nn::Val fm = g.matmul(E, g.transpose(eu));
  nn::Val user_part = g.add(g.matmul(eu, g.param(ps, "mlp_w1_user")), g.param(ps, "mlp_b1"));
  nn::Val hidden = g.sigmoid(g.add(g.matmul(ones, user_part), g.matmul(E, g.param(ps, "mlp_w1_item"))));
  nn::Val head = g.add(g.matmul(hidden, g.param(ps, "mlp_w2")), g.matmul(ones, g.param(ps, "mlp_b2")));
  nn::Val scalars = g.add(g.param(ps, "bias"), g.row(g.param(ps, "user_first"), u));
  nn::Val broadcast = g.matmul(ones, g.reshape(scalars, {1, 1}));
  nn::Val items_first = g.reshape(g.param(ps, "item_first"), {items, 1});
  nn::Val col = g.add(g.add(fm, head), g.add(broadcast, items_first));
  const nn::Tensor& t = g.value(col);
  return std::vector<double>(t.data().begin(), t.data().end());
}

double CausalUserModel::alpha(std::size_t u) const {
  check_ids(u, 0);
  return softplus(params_.value(params_.index("alpha_raw"))[u]);
}

double CausalUserModel::beta(std::size_t i) const {
  check_ids(0, i);
  return softplus(params_.value(params_.index("beta_raw"))[i]);
}

double CausalUserModel::exposure_effect(std::span<const env::Interaction> history, std::size_t u,
                                        std::size_t i, double t,
                                        const env::ItemCatalog& catalog) const {
  check_ids(u, i);
  for (const env::Interaction& h : history) {
    if (h.timestamp >= t) {
      throw std::invalid_argument("exposure: history record at time " +
                                  std::to_string(h.timestamp) + " is not before " +
                                  std::to_string(t));
    }
  }
  if (cfg_.tau == 0.0) return 0.0;
  double sum = 0.0;
  for (const env::Interaction& h : history) {
    sum += std::exp(-((t - h.timestamp) / cfg_.tau) * env::item_distance(i, h.item, catalog));
  }
  return alpha(u) * beta(i) * sum;
}

double CausalUserModel::counterfactual_exposure(std::span<const PlanRecord> traj, std::size_t u,
                                                std::size_t i, double t_step,
                                                const env::ItemCatalog& catalog) const {
  check_ids(u, i);
  for (const PlanRecord& p : traj) {
    if (p.step >= t_step) {
      throw std::invalid_argument("exposure: planning record at step " + std::to_string(p.step) +
                                  " is not before " + std::to_string(t_step));
    }
  }
  if (cfg_.tau_star == 0.0) return 0.0;
  double sum = 0.0;
  for (const PlanRecord& p : traj) {
    sum += std::exp(-((t_step - p.step) / cfg_.tau_star) * env::item_distance(i, p.item, catalog));
  }
  return cfg_.gamma_star * alpha(u) * beta(i) * sum;
}

double CausalUserModel::counterfactual_reward(std::span<const PlanRecord> traj, std::size_t u,
                                              std::size_t i, double t_step,
                                              const env::ItemCatalog& catalog) const {
  return satisfaction(predict_interest(u, i), counterfactual_exposure(traj, u, i, t_step, catalog));
}

void CausalUserModel::set_target_scale(double s) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw std::invalid_argument("user model: target scale must be positive and finite");
  }
  target_scale_ = s;
}

void CausalUserModel::save(const std::string& path, const std::vector<double>& loss_curve) const {
  nn::save_checkpoint(path, {{"user_model", const_cast<nn::ParamStore*>(&params_)}});
  nlohmann::json meta = {
      {"users", cfg_.users},         {"items", cfg_.items},
      {"embed_dim", cfg_.embed_dim}, {"hidden", cfg_.hidden},
      {"tau", cfg_.tau},             {"tau_star", cfg_.tau_star},
      {"gamma_star", cfg_.gamma_star}, {"target_scale", target_scale_},
      {"loss_curve", loss_curve},
  };
  std::ofstream out(path + ".json");
  if (!out) throw std::runtime_error("user model: cannot write " + path + ".json");
  out << meta.dump(2) << "\n";
}

CausalUserModel CausalUserModel::load(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw std::runtime_error("user model: cannot open " + path + ".json");
  nlohmann::json meta = nlohmann::json::parse(in);
  ModelConfig cfg;
  cfg.users = meta.at("users").get<std::size_t>();
  cfg.items = meta.at("items").get<std::size_t>();
  cfg.embed_dim = meta.at("embed_dim").get<std::size_t>();
  cfg.hidden = meta.at("hidden").get<std::size_t>();
  cfg.tau = meta.at("tau").get<double>();
  cfg.tau_star = meta.at("tau_star").get<double>();
  cfg.gamma_star = meta.at("gamma_star").get<double>();
  CausalUserModel model(cfg, 0);
  nn::load_checkpoint(path, {{"user_model", &model.params_}});
  model.target_scale_ = meta.at("target_scale").get<double>();
  return model;
}

namespace {

struct RecordContext {
  std::size_t user = 0;
  std::size_t item = 0;
  double time = 0.0;
  double target = 0.0;
  std::size_t prefix_begin = 0;  // range into per-user item/time arrays
  std::size_t prefix_end = 0;
};

struct TrainingData {
  std::vector<RecordContext> records;
  std::vector<std::vector<std::size_t>> user_items;  // per user, log order
  std::vector<std::vector<double>> user_times;
  std::vector<std::vector<std::size_t>> never_seen;  // per user, candidates for p_n
  std::vector<double> positive_sum;                  // exposure sum for each record's own item
};

double exposure_sum(const std::vector<std::size_t>& items, const std::vector<double>& times,
                    std::size_t begin, std::size_t end, std::size_t candidate, double t,
                    double tau, const env::ItemCatalog& catalog) {
  double sum = 0.0;
  for (std::size_t l = begin; l < end; ++l) {
    sum += std::exp(-((t - times[l]) / tau) * env::item_distance(candidate, items[l], catalog));
  }
  return sum;
}

TrainingData prepare(const CausalUserModel& model, const std::vector<env::Interaction>& logs,
                     const env::ItemCatalog& catalog, bool need_negatives) {
  const ModelConfig& cfg = model.config();
  TrainingData data;
  data.user_items.resize(cfg.users);
  data.user_times.resize(cfg.users);
  std::vector<std::vector<char>> seen(cfg.users, std::vector<char>(cfg.items, 0));
  for (const env::Interaction& r : logs) {
    if (r.user >= cfg.users || r.item >= cfg.items) {
      throw std::invalid_argument("user model: log record references user " +
                                  std::to_string(r.user) + ", item " + std::to_string(r.item) +
                                  " outside the model");
    }
    auto& times = data.user_times[r.user];
    if (!times.empty() && r.timestamp <= times.back()) {
      throw std::invalid_argument("user model: timestamps for user " + std::to_string(r.user) +
                                  " are not strictly increasing at t=" +
                                  std::to_string(r.timestamp));
    }
    RecordContext r2;
    r2.user = r.user;
    r2.item = r.item;
    r2.time = r.timestamp;
    r2.target = r.rating;
    r2.prefix_begin = 0;
    r2.prefix_end = data.user_items[r.user].size();
    data.records.push_back(r2);
    data.user_items[r.user].push_back(r.item);
    times.push_back(r.timestamp);
    seen[r.user][r.item] = 1;
  }
  data.positive_sum.assign(data.records.size(), 0.0);
  if (cfg.tau > 0.0) {
    for (std::size_t r = 0; r < data.records.size(); ++r) {
      const RecordContext& rec = data.records[r];
      data.positive_sum[r] =
          exposure_sum(data.user_items[rec.user], data.user_times[rec.user], rec.prefix_begin,
                       rec.prefix_end, rec.item, rec.time, cfg.tau, catalog);
    }
  }
  if (need_negatives) {
    data.never_seen.resize(cfg.users);
    for (std::size_t u = 0; u < cfg.users; ++u) {
      for (std::size_t i = 0; i < cfg.items; ++i) {
        if (!seen[u][i]) data.never_seen[u].push_back(i);
      }
      if (data.never_seen[u].empty() && !data.user_items[u].empty()) {
        throw std::invalid_argument("user model: user " + std::to_string(u) +
                                    " has interacted with every item, cannot sample negatives");
      }
    }
  }
  return data;
}

nn::Val record_satisfaction(nn::Graph& g, const CausalUserModel& model, std::size_t u,
                            std::size_t i, double exposure_weight) {
  auto& ps = const_cast<nn::ParamStore&>(model.params());
  nn::Val interest = model.score(g, u, i);
  if (model.config().tau == 0.0 || exposure_weight == 0.0) return interest;
  nn::Val a = g.softplus(g.row(g.param(ps, "alpha_raw"), u));
  nn::Val b = g.softplus(g.row(g.param(ps, "beta_raw"), i));
  nn::Val e = g.scale(g.mul(a, b), exposure_weight);
  return g.div(interest, g.affine(e, 1.0, 1.0));
}

struct BatchLoss {
  nn::Val loss;
};

BatchLoss build_batch_loss(nn::Graph& g, const CausalUserModel& model, const TrainingData& data,
                           std::span<const std::size_t> batch, TrainConfig::Loss kind,
                           double target_scale, const env::ItemCatalog& catalog, Rng* neg_rng) {
  const ModelConfig& cfg = model.config();
  std::vector<nn::Val> parts;
  parts.reserve(batch.size());
  for (std::size_t idx : batch) {
    const RecordContext& rec = data.records[idx];
    nn::Val pos = record_satisfaction(g, model, rec.user, rec.item, data.positive_sum[idx]);
    if (kind == TrainConfig::Loss::kMse) {
      nn::Val err = g.sub(pos, g.constant(rec.target / target_scale));
      parts.push_back(g.mul(err, err));
    } else {
      const auto& pool = data.never_seen[rec.user];
      std::size_t j = pool[neg_rng->uniform_int(pool.size())];
      double neg_sum = cfg.tau > 0.0
                           ? exposure_sum(data.user_items[rec.user], data.user_times[rec.user],
                                          rec.prefix_begin, rec.prefix_end, j, rec.time, cfg.tau,
                                          catalog)
                           : 0.0;
      nn::Val neg = record_satisfaction(g, model, rec.user, j, neg_sum);
      parts.push_back(g.softplus(g.neg(g.sub(pos, neg))));
    }
  }
  return {g.mean(g.concat(parts))};
}

}  // namespace

TrainResult train_user_model(CausalUserModel& model, const std::vector<env::Interaction>& logs,
                             const env::ItemCatalog& catalog, const TrainConfig& cfg) {
  if (logs.empty()) throw std::invalid_argument("user model: empty training log");
  if (cfg.epochs < 1 || cfg.batch < 1) throw std::invalid_argument("user model: epochs and batch must be positive");
  bool bpr = cfg.loss == TrainConfig::Loss::kBpr;
  TrainingData data = prepare(model, logs, catalog, bpr);

  TrainResult result;
  result.target_scale = 1.0;
  if (!bpr) {
    double top = 0.0;
    for (const env::Interaction& r : logs) top = std::max(top, r.rating);
    result.target_scale = top > 0.0 ? top : 1.0;
  }
  model.set_target_scale(result.target_scale);

  nn::Adam opt(model.params(), {.lr = cfg.lr});
  Rng shuffle_rng(derive_seed(cfg.seed, {21}));
  Rng neg_rng(derive_seed(cfg.seed, {22}));
  std::vector<std::size_t> order(data.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = shuffle_rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::size_t stop = std::min(order.size(), start + cfg.batch);
      std::span<const std::size_t> batch(order.data() + start, stop - start);
      nn::Graph g;
      BatchLoss bl = build_batch_loss(g, model, data, batch, cfg.loss, result.target_scale,
                                      catalog, &neg_rng);
      double loss = g.scalar(bl.loss);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("user model: loss diverged at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(start / cfg.batch) + " (loss=" +
                                 std::to_string(loss) + ")");
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      g.backward(bl.loss);
      opt.step();
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return result;
}

double check_training_gradients(CausalUserModel& model, const std::vector<env::Interaction>& logs,
                                const env::ItemCatalog& catalog, TrainConfig::Loss loss,
                                std::size_t max_records, std::uint64_t seed) {
  if (logs.empty()) throw std::invalid_argument("user model: empty training log");
  bool bpr = loss == TrainConfig::Loss::kBpr;
  TrainingData data = prepare(model, logs, catalog, bpr);
  double scale = 1.0;
  if (!bpr) {
    for (const env::Interaction& r : logs) scale = std::max(scale, r.rating);
  }
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < data.records.size() && batch.size() < max_records; ++i) {
    batch.push_back(i);
  }
  Rng neg_rng(derive_seed(seed, {23}));
  nn::Graph g;
  BatchLoss bl = build_batch_loss(g, model, data, batch, loss, scale, catalog, &neg_rng);
  return g.gradient_check(bl.loss, 1e-5);
}

}  // namespace cirs::model
