#pragma once

// Histogram gradient boosting for binary targets: quantile binning (at most
// 255 bins per feature), second-order leaf-wise trees on binned features,
// binary cross-entropy, and a voting ensemble over under-sampled members.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hce/common.hpp"
#include "hce/sampling.hpp"

namespace hce {

inline constexpr int kMaxBins = 255;

/// Per-feature ascending edges; value x falls in bin #edges <= x. Values
/// outside the fitted range land in the boundary bins.
class BinMapper {
 public:
  static BinMapper fit(const Eigen::MatrixXd& X, int max_bins = kMaxBins) {
    if (X.rows() == 0) throw DataError("cannot fit bins on empty input");
    if (max_bins < 2 || max_bins > kMaxBins) throw ConfigError("max_bins must lie in [2, 255]");
    BinMapper m;
    m.edges_.resize(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index f = 0; f < X.cols(); ++f) {
      std::vector<double> v(X.col(f).data(), X.col(f).data() + X.rows());
      std::sort(v.begin(), v.end());
      std::vector<double> distinct;
      std::unique_copy(v.begin(), v.end(), std::back_inserter(distinct));
      auto& edges = m.edges_[static_cast<std::size_t>(f)];
      if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
        for (std::size_t i = 0; i + 1 < distinct.size(); ++i) edges.push_back(0.5 * (distinct[i] + distinct[i + 1]));
      } else {
        const auto n = v.size();
        for (int b = 1; b < max_bins; ++b) {
          const auto j = static_cast<std::size_t>(std::llround(static_cast<double>(b) * static_cast<double>(n) / max_bins));
          if (j == 0 || j >= n) continue;
          const double edge = v[j - 1] < v[j] ? 0.5 * (v[j - 1] + v[j]) : v[j];
          if (edges.empty() || edge > edges.back()) edges.push_back(edge);
        }
      }
    }
    return m;
  }

  static BinMapper from_edges(std::vector<std::vector<double>> edges) {
    BinMapper m;
    m.edges_ = std::move(edges);
    return m;
  }

  std::size_t features() const { return edges_.size(); }
  int bin_count(std::size_t f) const { return static_cast<int>(edges_[f].size()) + 1; }
  const std::vector<std::vector<double>>& edges() const { return edges_; }

  std::uint8_t bin(std::size_t f, double x) const {
    const auto& e = edges_[f];
    return static_cast<std::uint8_t>(std::upper_bound(e.begin(), e.end(), x) - e.begin());
  }

  /// Column-major bin codes, rows x features.
  std::vector<std::uint8_t> transform(const Eigen::MatrixXd& X) const {
    if (static_cast<std::size_t>(X.cols()) != edges_.size()) {
      throw DataError("bin mapper expects " + std::to_string(edges_.size()) + " features, got " + std::to_string(X.cols()));
    }
    std::vector<std::uint8_t> out(static_cast<std::size_t>(X.rows() * X.cols()));
    for (Eigen::Index f = 0; f < X.cols(); ++f) {
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        out[static_cast<std::size_t>(f * X.rows() + r)] = bin(static_cast<std::size_t>(f), X(r, f));
      }
    }
    return out;
  }

 private:
  std::vector<std::vector<double>> edges_;
};

struct BoostConfig {
  double learning_rate = 0.1;
  int n_iterations = 100;
  int max_leaf_nodes = 31;
  int min_samples_leaf = 20;
  double l2_regularization = 0.0;
  int max_bins = kMaxBins;
  std::uint64_t seed = 0;

  void check() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
    if (n_iterations < 0) throw ConfigError("n_iterations must be nonnegative");
    if (max_leaf_nodes < 2) throw ConfigError("max_leaf_nodes must be >= 2");
    if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
    if (l2_regularization < 0.0) throw ConfigError("l2_regularization must be nonnegative");
  }
};

/// Node of a boosting tree; leaves have feature == -1. bin <= bin_threshold goes left.
struct BoostNode {
  int feature = -1;
  int bin_threshold = 0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

struct BoostTree {
  std::vector<BoostNode> nodes;

  template <typename BinAt>
  double predict(const BinAt& bin_of) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = bin_of(static_cast<std::size_t>(n.feature)) <= n.bin_threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

struct BoostTraceRow {
  int iteration = 0;
  double train_log_loss = 0.0;
  double histogram_residual = 0.0;  // relative |sum over bins - sum over rows| of gradients
};

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

inline double log_loss(std::span<const double> raw, std::span<const int> y) {
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    // log(1 + e^z) - y z, stable for both signs
    const double z = raw[i];
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - y[i] * z;
  }
  return raw.empty() ? 0.0 : total / static_cast<double>(raw.size());
}

class BoostModel {
 public:
  BoostModel() = default;
  BoostModel(BoostConfig config, std::vector<std::string> names, BinMapper mapper, double base_score,
             std::vector<BoostTree> trees)
      : config_(config), names_(std::move(names)), mapper_(std::move(mapper)), base_score_(base_score),
        trees_(std::move(trees)) {}

  /// base + lr * sum of tree outputs.
  std::vector<double> predict_raw(const Eigen::MatrixXd& X) const {
    const auto bins = mapper_.transform(X);
    const auto n = static_cast<std::size_t>(X.rows());
    std::vector<double> out(n, base_score_);
    for (std::size_t r = 0; r < n; ++r) {
      auto bin_of = [&](std::size_t f) { return static_cast<int>(bins[f * n + r]); };
      double sum = 0.0;
      for (const auto& t : trees_) sum += t.predict(bin_of);
      out[r] += config_.learning_rate * sum;
    }
    return out;
  }

  std::vector<double> predict_proba(const Eigen::MatrixXd& X) const {
    auto raw = predict_raw(X);
    for (auto& z : raw) z = sigmoid(z);
    return raw;
  }

  /// Class 1 iff probability >= 0.5.
  std::vector<int> predict(const Eigen::MatrixXd& X) const {
    const auto p = predict_proba(X);
    std::vector<int> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= 0.5 ? 1 : 0;
    return out;
  }

  const BoostConfig& config() const { return config_; }
  const std::vector<std::string>& feature_names() const { return names_; }
  const BinMapper& mapper() const { return mapper_; }
  double base_score() const { return base_score_; }
  const std::vector<BoostTree>& trees() const { return trees_; }

 private:
  BoostConfig config_;
  std::vector<std::string> names_;
  BinMapper mapper_;
  double base_score_ = 0.0;
  std::vector<BoostTree> trees_;
};

namespace detail {

struct HistBin {
  double g = 0.0;
  double h = 0.0;
  std::uint32_t count = 0;
};

class BoostTreeGrower {
 public:
  BoostTreeGrower(const std::vector<std::uint8_t>& bins, std::size_t n, const BinMapper& mapper,
                  const BoostConfig& config)
      : bins_(bins), n_(n), d_(mapper.features()), mapper_(mapper), config_(config) {}

  /// Grows one tree on (grad, hess); writes each row's leaf value into `leaf_value`.
  /// Returns the relative gradient-conservation residual of the root histogram.
  BoostTree grow(const std::vector<double>& grad, const std::vector<double>& hess, std::vector<double>& leaf_value,
                 double& residual) {
    grad_ = &grad;
    hess_ = &hess;
    rows_.resize(n_);
    std::iota(rows_.begin(), rows_.end(), std::size_t{0});
    BoostTree tree;
    tree.nodes.emplace_back();

    std::vector<Leaf> open;
    Leaf root{0, n_, 0, build_hist(0, n_), {}};
    residual = conservation_residual(root);
    evaluate(root);
    open.push_back(std::move(root));

    int leaves = 1;
    while (leaves < config_.max_leaf_nodes) {
      std::size_t pick = open.size();
      for (std::size_t i = 0; i < open.size(); ++i) {
        if (open[i].split.feature >= 0 && (pick == open.size() || open[i].split.gain > open[pick].split.gain)) pick = i;
      }
      if (pick == open.size()) break;
      Leaf parent = std::move(open[pick]);
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));

      const auto f = static_cast<std::size_t>(parent.split.feature);
      const auto mid = std::stable_partition(rows_.begin() + static_cast<std::ptrdiff_t>(parent.begin),
                                             rows_.begin() + static_cast<std::ptrdiff_t>(parent.end),
                                             [&](std::size_t r) { return bins_[f * n_ + r] <= parent.split.bin; });
      const auto split_at = static_cast<std::size_t>(mid - rows_.begin());

      auto& node = tree.nodes[static_cast<std::size_t>(parent.node)];
      node.feature = parent.split.feature;
      node.bin_threshold = parent.split.bin;
      node.left = static_cast<int>(tree.nodes.size());
      node.right = node.left + 1;
      const int left_node = node.left;
      const int right_node = node.right;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();

      // Build the smaller child's histogram, derive the larger by subtraction.
      Leaf left{parent.begin, split_at, left_node, {}, {}};
      Leaf right{split_at, parent.end, right_node, {}, {}};
      Leaf& small = (left.end - left.begin) <= (right.end - right.begin) ? left : right;
      Leaf& large = &small == &left ? right : left;
      small.hist = build_hist(small.begin, small.end);
      large.hist = std::move(parent.hist);
      for (std::size_t k = 0; k < large.hist.size(); ++k) {
        large.hist[k].g -= small.hist[k].g;
        large.hist[k].h -= small.hist[k].h;
        large.hist[k].count -= small.hist[k].count;
      }
      evaluate(left);
      evaluate(right);
      open.push_back(std::move(left));
      open.push_back(std::move(right));
      ++leaves;
    }

    leaf_value.assign(n_, 0.0);
    for (const auto& leaf : open) {
      double g = 0.0, h = 0.0;
      for (std::size_t i = leaf.begin; i < leaf.end; ++i) {
        g += grad[rows_[i]];
        h += hess[rows_[i]];
      }
      const double value = -g / (h + config_.l2_regularization);
      tree.nodes[static_cast<std::size_t>(leaf.node)].value = value;
      for (std::size_t i = leaf.begin; i < leaf.end; ++i) leaf_value[rows_[i]] = value;
    }
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    int bin = 0;
    double gain = 0.0;
  };
  struct Leaf {
    std::size_t begin = 0;
    std::size_t end = 0;
    int node = 0;
    std::vector<HistBin> hist;
    Split split;
  };

  static constexpr double kMinHessian = 1e-3;
  static constexpr double kMinGain = 1e-12;

  std::vector<HistBin> build_hist(std::size_t begin, std::size_t end) const {
    std::vector<HistBin> hist(d_ * 256);
    for (std::size_t f = 0; f < d_; ++f) {
      HistBin* hf = hist.data() + f * 256;
      const std::uint8_t* col = bins_.data() + f * n_;
      for (std::size_t i = begin; i < end; ++i) {
        const auto r = rows_[i];
        auto& b = hf[col[r]];
        b.g += (*grad_)[r];
        b.h += (*hess_)[r];
        ++b.count;
      }
    }
    return hist;
  }

  double conservation_residual(const Leaf& root) const {
    double direct = 0.0, scale = 0.0;
    for (std::size_t r = 0; r < n_; ++r) {
      direct += (*grad_)[r];
      scale += std::abs((*grad_)[r]);
    }
    double worst = 0.0;
    for (std::size_t f = 0; f < d_; ++f) {
      double binned = 0.0;
      for (int b = 0; b < 256; ++b) binned += root.hist[f * 256 + static_cast<std::size_t>(b)].g;
      worst = std::max(worst, std::abs(binned - direct) / std::max(scale, 1e-300));
    }
    return worst;
  }

  void evaluate(Leaf& leaf) const {
    leaf.split = {};
    const auto count = leaf.end - leaf.begin;
    const auto min_leaf = static_cast<std::size_t>(config_.min_samples_leaf);
    if (count < 2 * min_leaf) return;
    const double lambda = config_.l2_regularization;
    double G = 0.0, H = 0.0;
    for (int b = 0; b < 256; ++b) {
      G += leaf.hist[static_cast<std::size_t>(b)].g;
      H += leaf.hist[static_cast<std::size_t>(b)].h;
    }
    const double parent_score = G * G / (H + lambda);
    for (std::size_t f = 0; f < d_; ++f) {
      const HistBin* hf = leaf.hist.data() + f * 256;
      const int nb = mapper_.bin_count(f);
      double gl = 0.0, hl = 0.0;
      std::size_t cl = 0;
      for (int b = 0; b + 1 < nb; ++b) {
        gl += hf[b].g;
        hl += hf[b].h;
        cl += hf[b].count;
        if (cl < min_leaf) continue;
        if (count - cl < min_leaf) break;
        const double gr = G - gl;
        const double hr = H - hl;
        if (hl < kMinHessian || hr < kMinHessian) continue;
        const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent_score;
        if (gain > leaf.split.gain + kMinGain) leaf.split = {static_cast<int>(f), b, gain};
      }
    }
  }

  const std::vector<std::uint8_t>& bins_;
  std::size_t n_;
  std::size_t d_;
  const BinMapper& mapper_;
  const BoostConfig& config_;
  const std::vector<double>* grad_ = nullptr;
  const std::vector<double>* hess_ = nullptr;
  std::vector<std::size_t> rows_;
};

}  // namespace detail

/// Fits n_iterations trees to the binary cross-entropy gradient. The base
/// score is the log-odds of training prevalence. Trace row 0 is the initial loss.
inline BoostModel fit_boost(const FeatureTable& train, const BoostConfig& config,
                            std::vector<BoostTraceRow>* trace = nullptr) {
  config.check();
  const auto n = train.rows();
  if (n == 0) throw DataError("cannot fit boosting on an empty training set");
  for (int y : train.broken) {
    if (y != 0 && y != 1) throw DataError("boosting needs binary targets");
  }
  auto mapper = BinMapper::fit(train.X, config.max_bins);
  const auto bins = mapper.transform(train.X);

  const double prevalence =
      std::clamp(std::accumulate(train.broken.begin(), train.broken.end(), 0.0) / static_cast<double>(n), 1e-12, 1.0 - 1e-12);
  const double base = std::log(prevalence / (1.0 - prevalence));
  std::vector<double> raw(n, base), grad(n), hess(n), leaf_value;
  if (trace) {
    trace->clear();
    trace->push_back({0, log_loss(raw, train.broken), 0.0});
  }

  detail::BoostTreeGrower grower(bins, n, mapper, config);
  std::vector<BoostTree> trees;
  trees.reserve(static_cast<std::size_t>(config.n_iterations));
  for (int it = 1; it <= config.n_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(raw[i]);
      grad[i] = p - train.broken[i];
      hess[i] = std::max(p * (1.0 - p), 1e-16);
    }
    double residual = 0.0;
    trees.push_back(grower.grow(grad, hess, leaf_value, residual));
    for (std::size_t i = 0; i < n; ++i) raw[i] += config.learning_rate * leaf_value[i];
    if (trace) trace->push_back({it, log_loss(raw, train.broken), residual});
  }
  return BoostModel(config, train.names, std::move(mapper), base, std::move(trees));
}

using VotingBoostModel = VotingEnsemble<BoostModel>;

/// Members trained on independent balanced under-samples; majority vote with
/// ties resolved to class 0.
inline VotingBoostModel fit_voting_boost(const FeatureTable& train, int n_members, const BoostConfig& config,
                                         std::uint64_t seed) {
  if (n_members < 1) throw ConfigError("voting ensemble needs at least one member");
  std::vector<BoostModel> members(static_cast<std::size_t>(n_members));
  parallel_for(members.size(), [&](std::size_t m) {
    const auto rows = rus_indices(train.broken, derive_seed(seed, m));
    members[m] = fit_boost(train.select_rows(rows), config);
  });
  return VotingBoostModel(std::move(members), 0);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const BoostConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"n_iterations", c.n_iterations}, {"max_leaf_nodes", c.max_leaf_nodes},
          {"min_samples_leaf", c.min_samples_leaf}, {"l2_regularization", c.l2_regularization},
          {"max_bins", c.max_bins}, {"seed", c.seed}};
}

inline BoostConfig boost_config_from_json(const nlohmann::json& j) {
  BoostConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.n_iterations = j.at("n_iterations").get<int>();
  c.max_leaf_nodes = j.at("max_leaf_nodes").get<int>();
  c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  c.l2_regularization = j.at("l2_regularization").get<double>();
  c.max_bins = j.at("max_bins").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const BoostModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees()) {
    nlohmann::json feature = nlohmann::json::array(), bin = nlohmann::json::array(), left = nlohmann::json::array(),
                   right = nlohmann::json::array(), value = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      bin.push_back(n.bin_threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
    }
    trees.push_back({{"feature", feature}, {"bin", bin}, {"left", left}, {"right", right}, {"value", value}});
  }
  return {{"kind", "boost"},       {"config", to_json(m.config())},     {"features", m.feature_names()},
          {"base_score", m.base_score()}, {"bin_edges", m.mapper().edges()}, {"trees", trees}};
}

inline BoostModel boost_from_json(const nlohmann::json& j) {
  if (j.at("kind") != "boost") throw DataError("model file is not a boosting model");
  std::vector<BoostTree> trees;
  for (const auto& t : j.at("trees")) {
    const auto feature = t.at("feature").get<std::vector<int>>();
    const auto bin = t.at("bin").get<std::vector<int>>();
    const auto left = t.at("left").get<std::vector<int>>();
    const auto right = t.at("right").get<std::vector<int>>();
    const auto value = t.at("value").get<std::vector<double>>();
    BoostTree tree;
    for (std::size_t i = 0; i < feature.size(); ++i) tree.nodes.push_back({feature[i], bin[i], left[i], right[i], value[i]});
    trees.push_back(std::move(tree));
  }
  return BoostModel(boost_config_from_json(j.at("config")), j.at("features").get<std::vector<std::string>>(),
                    BinMapper::from_edges(j.at("bin_edges").get<std::vector<std::vector<double>>>()),
                    j.at("base_score").get<double>(), std::move(trees));
}

inline void write_boost_trace(std::ostream& out, const std::vector<BoostTraceRow>& trace) {
  out << "iteration,train_log_loss,histogram_residual\n";
  for (const auto& r : trace) {
    out << r.iteration << ',' << detail::format_number(r.train_log_loss) << ','
        << detail::format_number(r.histogram_residual) << '\n';
  }
}

}  // namespace hce
