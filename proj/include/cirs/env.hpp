#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cirs::env {

enum class CatalogMode { kCategorical, kContinuous };

struct ItemCatalog {
  CatalogMode mode = CatalogMode::kCategorical;
  std::size_t tag_vocab = 0;                 // categorical: multi-hot length
  std::vector<std::vector<int>> tags;        // categorical: sorted unique tag ids per item
  std::size_t dim = 0;                       // continuous: vector dimension
  std::vector<std::vector<double>> vectors;  // continuous: one vector per item

  std::size_t item_count() const {
    return mode == CatalogMode::kCategorical ? tags.size() : vectors.size();
  }
  void validate() const;
};

struct RatingMatrix {
  std::size_t users = 0;
  std::size_t items = 0;
  std::vector<double> values;  // row-major users x items

  RatingMatrix() = default;
  RatingMatrix(std::size_t u, std::size_t i) : users(u), items(i), values(u * i, 0.0) {}
  double& at(std::size_t u, std::size_t i) { return values[u * items + i]; }
  double at(std::size_t u, std::size_t i) const { return values[u * items + i]; }
  double max_value() const;
  void validate() const;
};

enum class ExitMode { kCategorical, kContinuous };

struct ExitConfig {
  std::size_t window = 1;       // how many recent recommendations are compared
  ExitMode mode = ExitMode::kCategorical;
  std::size_t share_count = 1;  // categorical: exit when this many window items share a tag
  double min_distance = 0.0;    // continuous: exit when any window item is closer than this
  std::size_t horizon = 1;      // hard episode length cap

  void validate() const;
};

enum class ExitReason { kNone, kBubble, kHorizon };

struct StepResult {
  double reward = 0.0;
  bool done = false;
  ExitReason reason = ExitReason::kNone;
};

struct EnvState {
  std::size_t user = 0;
  std::size_t t = 0;                // completed (rewarded) steps
  std::vector<std::size_t> window;  // oldest first, at most ExitConfig::window items
  bool done = false;
  double cumulative = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const EnvState&) const = default;
};

double item_distance(std::size_t i, std::size_t j, const ItemCatalog& catalog);

bool check_exit(std::span<const std::size_t> window, std::size_t candidate, const ExitConfig& cfg,
                const ItemCatalog& catalog);

// Immutable after construction; per-episode mutable state lives in EnvState,
// so many episodes can run against one shared Environment.
class Environment {
 public:
  Environment(RatingMatrix matrix, ItemCatalog catalog, ExitConfig exit_cfg,
              std::vector<std::vector<double>> user_features = {});

  const RatingMatrix& matrix() const { return matrix_; }
  const ItemCatalog& catalog() const { return catalog_; }
  const ExitConfig& exit_config() const { return exit_; }
  const std::vector<std::vector<double>>& user_features() const { return user_features_; }
  std::size_t users() const { return matrix_.users; }
  std::size_t items() const { return matrix_.items; }

  EnvState reset(std::size_t user, std::uint64_t seed) const;
  StepResult step(EnvState& state, std::size_t item) const;

 private:
  RatingMatrix matrix_;
  ItemCatalog catalog_;
  ExitConfig exit_;
  std::vector<std::vector<double>> user_features_;
};

struct Interaction {
  std::size_t user = 0;
  std::size_t item = 0;
  double timestamp = 0.0;
  double rating = 0.0;
};

// Text loaders; all errors report file, line, and column.
std::vector<Interaction> load_ratings(const std::string& path);
RatingMatrix ratings_to_matrix(const std::vector<Interaction>& records, bool fully_observed,
                               std::size_t users = 0, std::size_t items = 0);
ItemCatalog load_catalog(const std::string& path, std::size_t tag_vocab = 0);

}  // namespace cirs::env
