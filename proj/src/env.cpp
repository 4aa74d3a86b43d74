#include "cirs/env.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cirs::env {

void ItemCatalog::validate() const {
  if (mode == CatalogMode::kCategorical) {
    if (tag_vocab == 0) throw std::invalid_argument("catalog: tag vocabulary must be non-empty");
    for (std::size_t i = 0; i < tags.size(); ++i) {
      const auto& t = tags[i];
      if (t.empty() || t.size() > 4) {
        throw std::invalid_argument("catalog: item " + std::to_string(i) + " has " +
                                    std::to_string(t.size()) + " tags, expected 1 to 4");
      }
      for (int g : t) {
        if (g < 0 || static_cast<std::size_t>(g) >= tag_vocab) {
          throw std::invalid_argument("catalog: item " + std::to_string(i) + " has tag " +
                                      std::to_string(g) + " outside vocabulary of " +
                                      std::to_string(tag_vocab));
        }
      }
      if (!std::is_sorted(t.begin(), t.end()) || std::adjacent_find(t.begin(), t.end()) != t.end()) {
        throw std::invalid_argument("catalog: item " + std::to_string(i) +
                                    " tags must be sorted and unique");
      }
    }
  } else {
    if (dim == 0) throw std::invalid_argument("catalog: vector dimension must be positive");
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      if (vectors[i].size() != dim) {
        throw std::invalid_argument("catalog: item " + std::to_string(i) + " has dimension " +
                                    std::to_string(vectors[i].size()) + ", expected " +
                                    std::to_string(dim));
      }
      for (double v : vectors[i]) {
        if (!std::isfinite(v)) {
          throw std::invalid_argument("catalog: item " + std::to_string(i) +
                                      " has a non-finite coordinate");
        }
      }
    }
  }
}

double RatingMatrix::max_value() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, v);
  return m;
}

void RatingMatrix::validate() const {
  if (users == 0 || items == 0) throw std::invalid_argument("rating matrix: empty");
  if (values.size() != users * items) throw std::invalid_argument("rating matrix: bad size");
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k]) || values[k] < 0.0) {
      throw std::invalid_argument("rating matrix: cell (" + std::to_string(k / items) + ", " +
                                  std::to_string(k % items) + ") is negative or non-finite");
    }
  }
}

void ExitConfig::validate() const {
  if (window < 1) throw std::invalid_argument("exit config: window must be at least 1");
  if (horizon < 1) throw std::invalid_argument("exit config: horizon must be at least 1");
  if (mode == ExitMode::kCategorical && share_count < 1) {
    throw std::invalid_argument("exit config: share count must be at least 1");
  }
  if (mode == ExitMode::kContinuous && !(min_distance > 0.0)) {
    throw std::invalid_argument("exit config: distance threshold must be positive");
  }
}

double item_distance(std::size_t i, std::size_t j, const ItemCatalog& catalog) {
  if (i >= catalog.item_count() || j >= catalog.item_count()) {
    throw std::out_of_range("item distance: unknown item id " +
                            std::to_string(std::max(i, j)));
  }
  if (catalog.mode == CatalogMode::kCategorical) {
    const auto& a = catalog.tags[i];
    const auto& b = catalog.tags[j];
    std::size_t shared = 0;
    std::size_t x = 0, y = 0;
    while (x < a.size() && y < b.size()) {
      if (a[x] == b[y]) { ++shared; ++x; ++y; }
      else if (a[x] < b[y]) ++x;
      else ++y;
    }
    std::size_t differing = a.size() + b.size() - 2 * shared;
    return static_cast<double>(differing) / static_cast<double>(catalog.tag_vocab);
  }
  const auto& a = catalog.vectors[i];
  const auto& b = catalog.vectors[j];
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

bool share_tag(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t x = 0, y = 0;
  while (x < a.size() && y < b.size()) {
    if (a[x] == b[y]) return true;
    if (a[x] < b[y]) ++x;
    else ++y;
  }
  return false;
}

}  // namespace

bool check_exit(std::span<const std::size_t> window, std::size_t candidate, const ExitConfig& cfg,
                const ItemCatalog& catalog) {
  if (window.empty()) return false;
  if (cfg.mode == ExitMode::kCategorical) {
    std::size_t sharing = 0;
    for (std::size_t w : window) {
      if (share_tag(catalog.tags[w], catalog.tags[candidate])) ++sharing;
    }
    return sharing >= cfg.share_count;
  }
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t w : window) closest = std::min(closest, item_distance(w, candidate, catalog));
  return closest < cfg.min_distance;
}

Environment::Environment(RatingMatrix matrix, ItemCatalog catalog, ExitConfig exit_cfg,
                         std::vector<std::vector<double>> user_features)
    : matrix_(std::move(matrix)),
      catalog_(std::move(catalog)),
      exit_(exit_cfg),
      user_features_(std::move(user_features)) {
  matrix_.validate();
  catalog_.validate();
  exit_.validate();
  if (catalog_.item_count() != matrix_.items) {
    throw std::invalid_argument("environment: catalog lists " +
                                std::to_string(catalog_.item_count()) + " items but the matrix has " +
                                std::to_string(matrix_.items));
  }
  if ((exit_.mode == ExitMode::kContinuous) != (catalog_.mode == CatalogMode::kContinuous)) {
    throw std::invalid_argument("environment: exit mode does not match the catalog mode");
  }
  if (!user_features_.empty() && user_features_.size() != matrix_.users) {
    throw std::invalid_argument("environment: user feature count does not match the matrix");
  }
}

EnvState Environment::reset(std::size_t user, std::uint64_t seed) const {
  if (user >= matrix_.users) {
    throw std::out_of_range("environment: unknown user " + std::to_string(user));
  }
  EnvState s;
  s.user = user;
  s.seed = seed;
  return s;
}

StepResult Environment::step(EnvState& state, std::size_t item) const {
  if (state.done) throw std::logic_error("environment: step on a finished episode");
  if (item >= matrix_.items) {
    throw std::out_of_range("environment: unknown item " + std::to_string(item));
  }
  StepResult r;
  if (check_exit(state.window, item, exit_, catalog_)) {
    state.done = true;
    r.reward = 0.0;
    r.done = true;
    r.reason = ExitReason::kBubble;
    return r;
  }
  r.reward = matrix_.at(state.user, item);
  state.cumulative += r.reward;
  state.window.push_back(item);
  if (state.window.size() > exit_.window) state.window.erase(state.window.begin());
  state.t += 1;
  if (state.t >= exit_.horizon) {
    state.done = true;
    r.done = true;
    r.reason = ExitReason::kHorizon;
  }
  return r;
}

namespace {

struct FieldCursor {
  const std::string& path;
  const std::string& line;
  std::size_t line_no;
  std::size_t pos = 0;
  std::size_t field_start = 0;

  [[noreturn]] void fail(const std::string& msg, std::size_t col) const {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ":" + std::to_string(col + 1) +
                             ": " + msg);
  }

  bool next(std::string& out) {
    if (pos > line.size()) return false;
    field_start = pos;
    std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      out = line.substr(pos);
      pos = line.size() + 1;
    } else {
      out = line.substr(pos, comma - pos);
      pos = comma + 1;
    }
    return true;
  }

  std::string require(const char* what) {
    std::string out;
    if (!next(out) || out.empty()) fail(std::string("missing ") + what, field_start);
    return out;
  }

  void done() {
    std::string extra;
    if (next(extra)) fail("unexpected extra field", field_start);
  }

  std::size_t parse_id(const std::string& s, const char* what) {
    for (char ch : s) {
      if (ch < '0' || ch > '9') fail(std::string("invalid ") + what + " '" + s + "'", field_start);
    }
    errno = 0;
    char* end = nullptr;
    unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (errno != 0 || end != s.c_str() + s.size()) {
      fail(std::string("invalid ") + what + " '" + s + "'", field_start);
    }
    return static_cast<std::size_t>(v);
  }

  double parse_num(const std::string& s, const char* what) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (errno != 0 || end != s.c_str() + s.size() || !std::isfinite(v)) {
      fail(std::string("invalid ") + what + " '" + s + "'", field_start);
    }
    return v;
  }
};

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open file");
  return in;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::vector<Interaction> load_ratings(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw std::runtime_error(path + ":1:1: empty file");
  ++line_no;
  line = strip_cr(line);
  if (line != "user_id,item_id,timestamp,rating") {
    throw std::runtime_error(path + ":1:1: expected header 'user_id,item_id,timestamp,rating', got '" +
                             line + "'");
  }
  std::vector<Interaction> out;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    FieldCursor cur{path, line, line_no};
    Interaction rec;
    rec.user = cur.parse_id(cur.require("user id"), "user id");
    rec.item = cur.parse_id(cur.require("item id"), "item id");
    rec.timestamp = cur.parse_num(cur.require("timestamp"), "timestamp");
    std::string rating = cur.require("rating");
    rec.rating = cur.parse_num(rating, "rating");
    if (rec.rating < 0.0) cur.fail("rating must be non-negative", cur.field_start);
    cur.done();
    out.push_back(rec);
  }
  return out;
}

RatingMatrix ratings_to_matrix(const std::vector<Interaction>& records, bool fully_observed,
                               std::size_t users, std::size_t items) {
  if (records.empty()) throw std::invalid_argument("ratings: no records");
  std::size_t max_user = 0, max_item = 0;
  for (const Interaction& r : records) {
    max_user = std::max(max_user, r.user);
    max_item = std::max(max_item, r.item);
  }
  if (users == 0) users = max_user + 1;
  if (items == 0) items = max_item + 1;
  if (max_user >= users || max_item >= items) {
    throw std::invalid_argument("ratings: record references user " + std::to_string(max_user) +
                                " or item " + std::to_string(max_item) + " outside the " +
                                std::to_string(users) + "x" + std::to_string(items) + " matrix");
  }
  RatingMatrix m(users, items);
  std::vector<char> seen(users * items, 0);
  std::vector<double> when(users * items, -std::numeric_limits<double>::infinity());
  for (const Interaction& r : records) {
    std::size_t k = r.user * items + r.item;
    if (r.timestamp >= when[k]) {
      when[k] = r.timestamp;
      m.values[k] = r.rating;
    }
    seen[k] = 1;
  }
  if (fully_observed) {
    for (std::size_t k = 0; k < seen.size(); ++k) {
      if (!seen[k]) {
        throw std::runtime_error("ratings: matrix is not fully observed, first missing cell is user " +
                                 std::to_string(k / items) + ", item " + std::to_string(k % items));
      }
    }
  }
  return m;
}

ItemCatalog load_catalog(const std::string& path, std::size_t tag_vocab) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ":1:1: empty file");
  line = strip_cr(line);

  ItemCatalog cat;
  std::size_t dim = 0;
  if (line == "item_id,tags") {
    cat.mode = CatalogMode::kCategorical;
  } else if (line.rfind("item_id,v0", 0) == 0) {
    cat.mode = CatalogMode::kContinuous;
    std::stringstream hs(line);
    std::string field;
    std::getline(hs, field, ',');
    while (std::getline(hs, field, ',')) {
      std::string want = "v" + std::to_string(dim);
      if (field != want) {
        throw std::runtime_error(path + ":1:1: expected column '" + want + "', got '" + field + "'");
      }
      ++dim;
    }
    cat.dim = dim;
  } else {
    throw std::runtime_error(path + ":1:1: expected header 'item_id,tags' or 'item_id,v0,...', got '" +
                             line + "'");
  }

  std::size_t line_no = 1;
  std::size_t next_item = 0;
  int max_tag = -1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    FieldCursor cur{path, line, line_no};
    std::size_t id = cur.parse_id(cur.require("item id"), "item id");
    if (id != next_item) {
      cur.fail("item ids must be dense and ascending, expected " + std::to_string(next_item), 0);
    }
    ++next_item;
    if (cat.mode == CatalogMode::kCategorical) {
      std::string field = cur.require("tags");
      cur.done();
      std::vector<int> tags;
      std::size_t start = 0;
      std::size_t base = cur.field_start;
      while (true) {
        std::size_t bar = field.find('|', start);
        std::string piece = bar == std::string::npos ? field.substr(start)
                                                     : field.substr(start, bar - start);
        if (piece.empty()) cur.fail("empty tag", base + start);
        for (char ch : piece) {
          if (ch < '0' || ch > '9') cur.fail("invalid tag '" + piece + "'", base + start);
        }
        tags.push_back(static_cast<int>(std::strtoull(piece.c_str(), nullptr, 10)));
        if (bar == std::string::npos) break;
        start = bar + 1;
      }
      if (tags.size() > 4) cur.fail("item has " + std::to_string(tags.size()) + " tags, at most 4 allowed", base);
      std::sort(tags.begin(), tags.end());
      if (std::adjacent_find(tags.begin(), tags.end()) != tags.end()) {
        cur.fail("duplicate tag", base);
      }
      max_tag = std::max(max_tag, tags.back());
      cat.tags.push_back(std::move(tags));
    } else {
      std::vector<double> v(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        v[k] = cur.parse_num(cur.require("coordinate"), "coordinate");
      }
      cur.done();
      cat.vectors.push_back(std::move(v));
    }
  }
  if (cat.mode == CatalogMode::kCategorical) {
    cat.tag_vocab = tag_vocab != 0 ? tag_vocab : static_cast<std::size_t>(max_tag + 1);
  }
  cat.validate();
  return cat;
}

}  // namespace cirs::env
