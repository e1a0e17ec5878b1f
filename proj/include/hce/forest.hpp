#pragma once

// CART trees with Gini splitting, class-weighted random forests, and a
// randomized grid search scored by k-fold cross validation.

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hce/common.hpp"
#include "hce/dataset.hpp"
#include "hce/metrics.hpp"
#include "hce/sampling.hpp"

namespace hce {

/// Gini impurity 1 - sum p_j^2 of a normalized probability vector.
inline double gini(std::span<const double> probs) {
  double sum = 0.0;
  double squares = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ConfigError("gini: probabilities must be nonnegative");
    sum += p;
    squares += p * p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("gini: probabilities must sum to 1");
  return 1.0 - squares;
}

enum class MaxFeatures { Sqrt, Half, All };

inline std::size_t resolve_max_features(MaxFeatures m, std::size_t d) {
  switch (m) {
    case MaxFeatures::Sqrt: return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
    case MaxFeatures::Half: return std::max<std::size_t>(1, (d + 1) / 2);
    case MaxFeatures::All: break;
  }
  return d;
}

struct ClassWeight {
  enum class Kind { Balanced, Equal, Explicit };
  Kind kind = Kind::Balanced;
  std::array<double, 2> weights = {1.0, 1.0};  // used when kind == Explicit

  static ClassWeight balanced() { return {Kind::Balanced, {1.0, 1.0}}; }
  static ClassWeight equal() { return {Kind::Equal, {1.0, 1.0}}; }
  static ClassWeight explicit_map(double w0, double w1) { return {Kind::Explicit, {w0, w1}}; }

  /// Balanced: n / (2 n_c) over the labels the tree is grown from.
  std::array<double, 2> resolve(std::span<const int> labels, std::span<const std::size_t> rows) const {
    if (kind == Kind::Equal) return {1.0, 1.0};
    if (kind == Kind::Explicit) return weights;
    std::array<double, 2> counts{0.0, 0.0};
    for (auto r : rows) counts[static_cast<std::size_t>(labels[r])] += 1.0;
    const double n = counts[0] + counts[1];
    return {counts[0] > 0 ? n / (2.0 * counts[0]) : 1.0, counts[1] > 0 ? n / (2.0 * counts[1]) : 1.0};
  }

  bool operator==(const ClassWeight&) const = default;
};

/// Per-tree sample: bootstrap of the training set, or bootstrap of a fresh
/// random under-sample (balanced draw) of it.
enum class TreeSampler { Bootstrap, RusPerTree };

struct ForestConfig {
  int n_estimators = 100;
  MaxFeatures max_features = MaxFeatures::Sqrt;
  std::optional<int> max_depth;  // nullopt: grow until pure or limited by sample counts
  ClassWeight class_weight = ClassWeight::balanced();
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  bool bootstrap = true;
  double bootstrap_fraction = 1.0;
  TreeSampler sampler = TreeSampler::Bootstrap;
  std::uint64_t seed = 0;

  void check() const {
    if (n_estimators < 1) throw ConfigError("n_estimators must be >= 1");
    if (max_depth && *max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (min_samples_split < 2) throw ConfigError("min_samples_split must be >= 2");
    if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
    if (!(bootstrap_fraction > 0.0 && bootstrap_fraction <= 1.0)) throw ConfigError("bootstrap_fraction must lie in (0, 1]");
  }

  bool operator==(const ForestConfig&) const = default;
};

/// Flat-array tree node. Leaves have feature == -1; x <= threshold goes left.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::array<double, 2> probs = {1.0, 0.0};

  bool is_leaf() const { return feature < 0; }
};

class DecisionTree {
 public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  template <typename Row>
  const std::array<double, 2>& leaf_probs(const Row& x) const {
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes_[static_cast<std::size_t>(i)];
      i = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(i)].probs;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int depth() const { return depth_from(0); }
  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

  std::vector<int> predict(const Eigen::MatrixXd& X) const {
    std::vector<int> out(static_cast<std::size_t>(X.rows()));
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const auto& p = leaf_probs(X.row(r));
      out[static_cast<std::size_t>(r)] = p[1] > p[0] ? 1 : 0;
    }
    return out;
  }

 private:
  int depth_from(int i) const {
    const auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth_from(n.left), depth_from(n.right));
  }

  std::vector<TreeNode> nodes_;
};

/// Rows of X sorted by each feature (ties by row index). Shared across trees.
struct PresortedColumns {
  std::vector<std::vector<std::size_t>> order;

  static PresortedColumns build(const Eigen::MatrixXd& X) {
    PresortedColumns p;
    p.order.resize(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index f = 0; f < X.cols(); ++f) {
      auto& o = p.order[static_cast<std::size_t>(f)];
      o.resize(static_cast<std::size_t>(X.rows()));
      std::iota(o.begin(), o.end(), std::size_t{0});
      const auto col = X.col(f);
      std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) {
        return col(static_cast<Eigen::Index>(a)) < col(static_cast<Eigen::Index>(b));
      });
    }
    return p;
  }
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, std::span<const int> y, const PresortedColumns& presorted,
              std::span<const std::size_t> sample_rows, std::array<double, 2> class_weights,
              const ForestConfig& config, Rng& rng)
      : X_(X), y_(y), config_(config), rng_(rng), class_weights_(class_weights) {
    const auto d = static_cast<std::size_t>(X.cols());
    rows_.assign(sample_rows.begin(), sample_rows.end());
    const std::size_t m = rows_.size();
    weight_.resize(m);
    for (std::size_t s = 0; s < m; ++s) weight_[s] = class_weights_[static_cast<std::size_t>(y_[rows_[s]])];

    // Slots sorted per feature: walk the global order and emit every sample
    // slot of each row, which yields a sorted, stable order in O(n + m).
    std::vector<std::size_t> first(static_cast<std::size_t>(X.rows()) + 1, 0);
    for (auto r : rows_) ++first[r + 1];
    for (std::size_t i = 1; i < first.size(); ++i) first[i] += first[i - 1];
    std::vector<std::size_t> slots_by_row(m);
    {
      auto cursor = first;
      for (std::size_t s = 0; s < m; ++s) slots_by_row[cursor[rows_[s]]++] = s;
    }
    order_.resize(d);
    for (std::size_t f = 0; f < d; ++f) {
      auto& o = order_[f];
      o.reserve(m);
      for (auto r : presorted.order[f]) {
        for (std::size_t k = first[r]; k < first[r + 1]; ++k) o.push_back(slots_by_row[k]);
      }
    }
    goes_left_.assign(m, 0);
    scratch_.resize(m);
    features_.resize(d);
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    n_try_ = resolve_max_features(config.max_features, d);
  }

  DecisionTree build() {
    if (rows_.empty()) throw DataError("cannot grow a tree on an empty sample");
    nodes_.clear();
    grow(0, rows_.size(), 0);
    return DecisionTree(std::move(nodes_));
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
  };

  double value(std::size_t slot, std::size_t f) const {
    return X_(static_cast<Eigen::Index>(rows_[slot]), static_cast<Eigen::Index>(f));
  }

  int grow(std::size_t begin, std::size_t end, int depth) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.emplace_back();

    std::array<double, 2> mass{0.0, 0.0};
    for (std::size_t i = begin; i < end; ++i) {
      const auto s = order_[0][i];
      mass[static_cast<std::size_t>(y_[rows_[s]])] += weight_[s];
    }
    const double total = mass[0] + mass[1];
    std::array<double, 2> probs = total > 0 ? std::array<double, 2>{mass[0] / total, mass[1] / total}
                                            : std::array<double, 2>{0.5, 0.5};
    nodes_[static_cast<std::size_t>(index)].probs = probs;

    const auto count = end - begin;
    const double impurity = 1.0 - probs[0] * probs[0] - probs[1] * probs[1];
    const bool depth_reached = config_.max_depth && depth >= *config_.max_depth;
    if (depth_reached || impurity <= 0.0 || count < static_cast<std::size_t>(config_.min_samples_split) ||
        count < 2 * static_cast<std::size_t>(config_.min_samples_leaf)) {
      return index;
    }

    const Split best = find_split(begin, end, mass, impurity);
    if (best.feature < 0) return index;

    const auto f = static_cast<std::size_t>(best.feature);
    std::size_t n_left = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto s = order_[f][i];
      goes_left_[s] = value(s, f) <= best.threshold ? 1 : 0;
      n_left += goes_left_[s];
    }
    for (auto& o : order_) {
      auto left_out = o.begin() + static_cast<std::ptrdiff_t>(begin);
      std::size_t n_right = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const auto s = o[i];
        if (goes_left_[s]) {
          *left_out++ = s;
        } else {
          scratch_[n_right++] = s;
        }
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(n_right), left_out);
    }

    nodes_[static_cast<std::size_t>(index)].feature = best.feature;
    nodes_[static_cast<std::size_t>(index)].threshold = best.threshold;
    const int left = grow(begin, begin + n_left, depth + 1);
    const int right = grow(begin + n_left, end, depth + 1);
    nodes_[static_cast<std::size_t>(index)].left = left;
    nodes_[static_cast<std::size_t>(index)].right = right;
    return index;
  }

  Split find_split(std::size_t begin, std::size_t end, const std::array<double, 2>& mass, double impurity) {
    // Partial Fisher-Yates draw of the candidate features, scanned in index order
    // so that equal gains resolve to the lowest feature index.
    const std::size_t d = features_.size();
    for (std::size_t i = 0; i < n_try_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, d - 1);
      std::swap(features_[i], features_[pick(rng_)]);
    }
    std::vector<std::size_t> candidates(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(n_try_));
    std::sort(candidates.begin(), candidates.end());

    const double total = mass[0] + mass[1];
    const auto min_leaf = static_cast<std::size_t>(config_.min_samples_leaf);
    const std::size_t count = end - begin;
    Split best;
    for (auto f : candidates) {
      const auto& o = order_[f];
      std::array<double, 2> left{0.0, 0.0};
      for (std::size_t i = begin; i + 1 < end; ++i) {
        const auto s = o[i];
        left[static_cast<std::size_t>(y_[rows_[s]])] += weight_[s];
        const std::size_t n_left = i - begin + 1;
        if (n_left < min_leaf) continue;
        if (count - n_left < min_leaf) break;
        const double v = value(s, f);
        const double v_next = value(o[i + 1], f);
        if (!(v < v_next)) continue;
        const double wl = left[0] + left[1];
        const double wr = total - wl;
        if (wl <= 0.0 || wr <= 0.0) continue;
        const double r0 = mass[0] - left[0];
        const double r1 = mass[1] - left[1];
        const double gl = 1.0 - (left[0] * left[0] + left[1] * left[1]) / (wl * wl);
        const double gr = 1.0 - (r0 * r0 + r1 * r1) / (wr * wr);
        const double gain = impurity - (wl * gl + wr * gr) / total;
        // zero-gain splits are allowed so that XOR-like structure can be reached
        if (best.feature < 0 ? gain >= -kMinGain : gain > best.gain + kMinGain) {
          double threshold = 0.5 * (v + v_next);
          if (!(threshold < v_next)) threshold = v;
          best = {static_cast<int>(f), threshold, gain};
        }
      }
    }
    return best;
  }

  static constexpr double kMinGain = 1e-12;

  const Eigen::MatrixXd& X_;
  std::span<const int> y_;
  const ForestConfig& config_;
  Rng& rng_;
  std::array<double, 2> class_weights_;
  std::vector<std::size_t> rows_;
  std::vector<double> weight_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<unsigned char> goes_left_;
  std::vector<std::size_t> scratch_;
  std::vector<std::size_t> features_;
  std::size_t n_try_ = 1;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

/// Greedy Gini tree over the given sample rows (duplicates allowed).
/// Class weights scale sample mass in impurities and leaf probabilities.
inline DecisionTree fit_tree(const Eigen::MatrixXd& X, std::span<const int> y, std::span<const std::size_t> rows,
                             std::array<double, 2> class_weights, const ForestConfig& config, Rng& rng,
                             const PresortedColumns* presorted = nullptr) {
  config.check();
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw DataError("fit_tree: X and y length mismatch");
  std::optional<PresortedColumns> local;
  if (!presorted) {
    local = PresortedColumns::build(X);
    presorted = &*local;
  }
  detail::TreeBuilder builder(X, y, *presorted, rows, class_weights, config, rng);
  return builder.build();
}

/// All rows, unit class weights.
inline DecisionTree fit_tree(const Eigen::MatrixXd& X, std::span<const int> y, const ForestConfig& config) {
  std::vector<std::size_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Rng rng(config.seed);
  return fit_tree(X, y, rows, config.class_weight.resolve(y, rows), config, rng);
}

class ForestModel {
 public:
  ForestModel() = default;
  ForestModel(ForestConfig config, std::vector<std::string> feature_names, std::vector<DecisionTree> trees)
      : config_(std::move(config)), feature_names_(std::move(feature_names)), trees_(std::move(trees)) {}

  /// Mean leaf probability of class 1.
  std::vector<double> predict_proba(const Eigen::MatrixXd& X) const {
    check_width(X);
    std::vector<double> out(static_cast<std::size_t>(X.rows()), 0.0);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      double p1 = 0.0;
      for (const auto& t : trees_) p1 += t.leaf_probs(X.row(r))[1];
      out[static_cast<std::size_t>(r)] = p1 / static_cast<double>(trees_.size());
    }
    return out;
  }

  /// Argmax of the averaged probabilities; an exact tie goes to class 0.
  std::vector<int> predict(const Eigen::MatrixXd& X) const {
    const auto p = predict_proba(X);
    std::vector<int> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] > 0.5 ? 1 : 0;
    return out;
  }

  const ForestConfig& config() const { return config_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  /// Split counts per feature.
  std::vector<std::size_t> split_counts() const {
    std::vector<std::size_t> counts(feature_names_.size(), 0);
    for (const auto& t : trees_) {
      for (const auto& n : t.nodes()) {
        if (!n.is_leaf()) ++counts[static_cast<std::size_t>(n.feature)];
      }
    }
    return counts;
  }

 private:
  void check_width(const Eigen::MatrixXd& X) const {
    if (!feature_names_.empty() && static_cast<std::size_t>(X.cols()) != feature_names_.size()) {
      throw DataError("forest expects " + std::to_string(feature_names_.size()) + " features, got " +
                      std::to_string(X.cols()));
    }
  }

  ForestConfig config_;
  std::vector<std::string> feature_names_;
  std::vector<DecisionTree> trees_;
};

/// Sample rows for tree `t`: optional balanced under-sample, then bootstrap.
inline std::vector<std::size_t> tree_sample(std::span<const int> y, const ForestConfig& config, std::size_t t, Rng& rng) {
  std::vector<std::size_t> pool;
  if (config.sampler == TreeSampler::RusPerTree) {
    pool = rus_indices(y, derive_seed(config.seed, 1'000'003 + t));
  } else {
    pool.resize(y.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
  }
  if (!config.bootstrap) return pool;
  const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.bootstrap_fraction * static_cast<double>(pool.size()))));
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::size_t> rows(m);
  for (auto& r : rows) r = pool[pick(rng)];
  std::sort(rows.begin(), rows.end());
  return rows;
}

/// Trains n_estimators trees independently; each tree's randomness derives
/// from (seed, tree index), so results do not depend on thread scheduling.
inline ForestModel fit_forest(const FeatureTable& train, const ForestConfig& config) {
  config.check();
  if (train.rows() == 0) throw DataError("cannot fit a forest on an empty training set");
  const std::span<const int> y(train.broken);
  const auto presorted = PresortedColumns::build(train.X);
  std::vector<DecisionTree> trees(static_cast<std::size_t>(config.n_estimators));
  parallel_for(trees.size(), [&](std::size_t t) {
    Rng rng(derive_seed(config.seed, t));
    const auto rows = tree_sample(y, config, t, rng);
    std::vector<std::size_t> weight_rows;
    if (config.sampler == TreeSampler::RusPerTree) {
      weight_rows = rows;
    } else {
      weight_rows.resize(y.size());
      std::iota(weight_rows.begin(), weight_rows.end(), std::size_t{0});
    }
    const auto weights = config.class_weight.resolve(y, weight_rows);
    detail::TreeBuilder builder(train.X, y, presorted, rows, weights, config, rng);
    trees[t] = builder.build();
  });
  return ForestModel(config, train.names, std::move(trees));
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string to_string(MaxFeatures m) {
  switch (m) {
    case MaxFeatures::Sqrt: return "sqrt";
    case MaxFeatures::Half: return "half";
    case MaxFeatures::All: return "all";
  }
  return "sqrt";
}

inline MaxFeatures parse_max_features(const std::string& s) {
  if (s == "sqrt") return MaxFeatures::Sqrt;
  if (s == "half") return MaxFeatures::Half;
  if (s == "all") return MaxFeatures::All;
  throw ConfigError("max_features must be sqrt, half or all; got '" + s + "'");
}

inline std::string to_string(const ClassWeight& w) {
  switch (w.kind) {
    case ClassWeight::Kind::Balanced: return "balanced";
    case ClassWeight::Kind::Equal: return "equal";
    case ClassWeight::Kind::Explicit: break;
  }
  return "{0:" + detail::format_number(w.weights[0]) + ",1:" + detail::format_number(w.weights[1]) + "}";
}

/// Accepts "balanced", "equal", or "w0:w1" / "{0:w0,1:w1}".
inline ClassWeight parse_class_weight(std::string s) {
  if (s == "balanced") return ClassWeight::balanced();
  if (s == "equal") return ClassWeight::equal();
  std::string digits;
  for (char c : s) {
    if (c != '{' && c != '}' && c != ' ') digits += c;
  }
  if (digits.rfind("0:", 0) == 0) {
    const auto comma = digits.find(",1:");
    if (comma == std::string::npos) throw ConfigError("bad class_weight '" + s + "'");
    digits = digits.substr(2, comma - 2) + ":" + digits.substr(comma + 3);
  }
  const auto colon = digits.find(':');
  if (colon == std::string::npos) throw ConfigError("bad class_weight '" + s + "'");
  try {
    const double w0 = std::stod(digits.substr(0, colon));
    const double w1 = std::stod(digits.substr(colon + 1));
    if (!(w0 > 0 && w1 > 0)) throw ConfigError("class weights must be positive");
    return ClassWeight::explicit_map(w0, w1);
  } catch (const std::logic_error&) {
    throw ConfigError("bad class_weight '" + s + "'");
  }
}

inline nlohmann::json to_json(const ForestConfig& c) {
  nlohmann::json j;
  j["n_estimators"] = c.n_estimators;
  j["max_features"] = to_string(c.max_features);
  j["max_depth"] = c.max_depth ? nlohmann::json(*c.max_depth) : nlohmann::json(nullptr);
  j["class_weight"] = to_string(c.class_weight);
  j["min_samples_split"] = c.min_samples_split;
  j["min_samples_leaf"] = c.min_samples_leaf;
  j["bootstrap"] = c.bootstrap;
  j["bootstrap_fraction"] = c.bootstrap_fraction;
  j["sampler"] = c.sampler == TreeSampler::RusPerTree ? "rus" : "bootstrap";
  j["seed"] = c.seed;
  return j;
}

inline ForestConfig forest_config_from_json(const nlohmann::json& j) {
  ForestConfig c;
  c.n_estimators = j.at("n_estimators").get<int>();
  c.max_features = parse_max_features(j.at("max_features").get<std::string>());
  if (!j.at("max_depth").is_null()) c.max_depth = j.at("max_depth").get<int>();
  c.class_weight = parse_class_weight(j.at("class_weight").get<std::string>());
  c.min_samples_split = j.at("min_samples_split").get<int>();
  c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  c.bootstrap = j.at("bootstrap").get<bool>();
  c.bootstrap_fraction = j.at("bootstrap_fraction").get<double>();
  c.sampler = j.at("sampler").get<std::string>() == "rus" ? TreeSampler::RusPerTree : TreeSampler::Bootstrap;
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const ForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees()) {
    nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                   left = nlohmann::json::array(), right = nlohmann::json::array(), p1 = nlohmann::json::array();
    for (const auto& n : t.nodes()) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      p1.push_back(n.probs[1]);
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"p1", p1}});
  }
  return {{"kind", "forest"}, {"config", to_json(m.config())}, {"features", m.feature_names()}, {"trees", trees}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  if (j.at("kind") != "forest") throw DataError("model file is not a forest");
  std::vector<DecisionTree> trees;
  for (const auto& t : j.at("trees")) {
    const auto feature = t.at("feature").get<std::vector<int>>();
    const auto threshold = t.at("threshold").get<std::vector<double>>();
    const auto left = t.at("left").get<std::vector<int>>();
    const auto right = t.at("right").get<std::vector<int>>();
    const auto p1 = t.at("p1").get<std::vector<double>>();
    std::vector<TreeNode> nodes(feature.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      nodes[i] = {feature[i], threshold[i], left[i], right[i], {1.0 - p1[i], p1[i]}};
    }
    trees.emplace_back(std::move(nodes));
  }
  return ForestModel(forest_config_from_json(j.at("config")), j.at("features").get<std::vector<std::string>>(),
                     std::move(trees));
}

// ---------------------------------------------------------------------------
// Randomized grid search

/// Candidate values per forest hyper-parameter.
struct ForestGrid {
  std::vector<int> n_estimators;
  std::vector<MaxFeatures> max_features;
  std::vector<std::optional<int>> max_depth;
  std::vector<ClassWeight> class_weight;
  std::vector<int> min_samples_split;
  std::vector<int> min_samples_leaf;

  /// n_estimators in [50, 1000) step 20, depth in [10, 100) step 10, and the
  /// listed categorical choices.
  static ForestGrid reference() {
    ForestGrid g;
    for (int n = 50; n < 1000; n += 20) g.n_estimators.push_back(n);
    g.max_features = {MaxFeatures::Sqrt, MaxFeatures::Half, MaxFeatures::All};
    for (int d = 10; d < 100; d += 10) g.max_depth.emplace_back(d);
    g.class_weight = {ClassWeight::balanced(), ClassWeight::equal(), ClassWeight::explicit_map(0.2, 0.5)};
    g.min_samples_split = {2, 5, 10};
    g.min_samples_leaf = {1, 2, 4};
    return g;
  }

  std::size_t size() const {
    return n_estimators.size() * max_features.size() * max_depth.size() * class_weight.size() *
           min_samples_split.size() * min_samples_leaf.size();
  }

  /// Config at a flat index (mixed radix, n_estimators fastest). Fields not on
  /// the grid are copied from `base`.
  ForestConfig at(std::size_t flat, const ForestConfig& base = {}) const {
    ForestConfig c = base;
    auto take = [&flat](const auto& values) {
      const auto& v = values[flat % values.size()];
      flat /= values.size();
      return v;
    };
    c.n_estimators = take(n_estimators);
    c.max_features = take(max_features);
    c.max_depth = take(max_depth);
    c.class_weight = take(class_weight);
    c.min_samples_split = take(min_samples_split);
    c.min_samples_leaf = take(min_samples_leaf);
    return c;
  }

  bool contains(const ForestConfig& c) const {
    auto has = [](const auto& values, const auto& v) { return std::find(values.begin(), values.end(), v) != values.end(); };
    return has(n_estimators, c.n_estimators) && has(max_features, c.max_features) && has(max_depth, c.max_depth) &&
           has(class_weight, c.class_weight) && has(min_samples_split, c.min_samples_split) &&
           has(min_samples_leaf, c.min_samples_leaf);
  }
};

struct GridSearchRow {
  ForestConfig config;
  std::vector<double> fold_scores;
  double mean_score = 0.0;
};

struct GridSearchResult {
  ForestConfig best;
  std::vector<GridSearchRow> table;  // evaluation order
  std::size_t best_row = 0;
};

struct GridSearchOptions {
  std::size_t n_configs = 50;
  int k = 3;
  std::uint64_t seed = 0;
  ForestConfig base;  // non-grid fields (seed, bootstrap, sampler)
};

/// Scores a config by the mean per-fold F1 of the broken class.
inline double cross_validate_forest(const FeatureTable& train, const std::vector<std::vector<std::size_t>>& folds,
                                    const ForestConfig& config, std::vector<double>* fold_scores = nullptr) {
  double total = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto fit_rows = fold_complement(folds, f);
    const auto model = fit_forest(train.select_rows(fit_rows), config);
    const auto held_out = train.select_rows(folds[f]);
    const double score = f1_broken(model.predict(held_out.X), held_out.broken);
    if (fold_scores) fold_scores->push_back(score);
    total += score;
  }
  return total / static_cast<double>(folds.size());
}

/// Samples n_configs distinct grid points (all of them when the grid is
/// smaller), scores each by k-fold CV, and returns the highest mean score.
/// Equal scores keep the earlier evaluated config.
inline GridSearchResult random_grid_search(const FeatureTable& train, const ForestGrid& grid,
                                           const GridSearchOptions& options = {}) {
  if (grid.size() == 0) throw ConfigError("forest grid is empty");
  Rng rng(options.seed);
  std::vector<std::size_t> picks;
  const std::size_t n = std::min(options.n_configs, grid.size());
  std::vector<std::size_t> all(grid.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::sample(all.begin(), all.end(), std::back_inserter(picks), n, rng);

  const auto folds = kfold_indices(train.broken, options.k, derive_seed(options.seed, 1));
  GridSearchResult result;
  result.table.resize(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) {
    auto& row = result.table[i];
    row.config = grid.at(picks[i], options.base);
    row.mean_score = cross_validate_forest(train, folds, row.config, &row.fold_scores);
    if (i == 0 || row.mean_score > result.table[result.best_row].mean_score) result.best_row = i;
  }
  result.best = result.table[result.best_row].config;
  return result;
}

inline void write_cv_table(std::ostream& out, const GridSearchResult& result) {
  out << "rank_order,n_estimators,max_features,max_depth,class_weight,min_samples_split,min_samples_leaf,"
         "fold_scores,mean_f1_broken,selected\n";
  for (std::size_t i = 0; i < result.table.size(); ++i) {
    const auto& row = result.table[i];
    const auto& c = row.config;
    std::string folds;
    for (double s : row.fold_scores) folds += (folds.empty() ? "" : ";") + detail::format_number(s);
    out << i << ',' << c.n_estimators << ',' << to_string(c.max_features) << ','
        << (c.max_depth ? std::to_string(*c.max_depth) : std::string("none")) << ','
        << detail::quote_csv(to_string(c.class_weight)) << ',' << c.min_samples_split << ',' << c.min_samples_leaf
        << ',' << folds << ',' << detail::format_number(row.mean_score) << ',' << (i == result.best_row ? 1 : 0)
        << '\n';
  }
}

// ---------------------------------------------------------------------------
// Partitioned over-sampling ensemble

using VotingForestModel = VotingEnsemble<ForestModel>;

struct VotingForestResult {
  VotingForestModel model;
  PartitionPlan plan;
};

/// One forest per plan subset, each reseeded from (seed, subset); majority vote, ties to class 0.
inline VotingForestResult fit_voting_forest(const FeatureTable& train, int t, const ForestConfig& config,
                                            std::uint64_t seed) {
  auto plan = partition_oversample(train.broken, t, seed);
  std::vector<ForestModel> members;
  for (std::size_t s = 0; s < plan.subsets.size(); ++s) {
    auto member_config = config;
    member_config.seed = derive_seed(seed, 0x5646 + s);
    members.push_back(fit_forest(train.select_rows(plan.subsets[s]), member_config));
  }
  return {VotingForestModel(std::move(members), 0), std::move(plan)};
}

}  // namespace hce
