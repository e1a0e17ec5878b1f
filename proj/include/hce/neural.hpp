#pragma once

// Dense residual network with two softmax heads (glass state, plant identity),
// manual backpropagation, Adam, and Dense-Sparse-Dense training.
//
// Layout (batch rows x features):
//   stem:   a0 = act(X W0 + b0)
//   block:  x <- x + dropout(act(LN(x) W + b))
//   trunk:  f = LN(x)
//   heads:  glass = softmax(f Wg + bg), plant = softmax(f Wp + bp)

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hce/common.hpp"
#include "hce/sampling.hpp"

namespace hce {

enum class Activation { ReLU, Sigmoid, Tanh, PReLU, ELU };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::PReLU: return "prelu";
    case Activation::ELU: return "elu";
  }
  return "relu";
}

inline Activation parse_activation(const std::string& text) {
  for (auto a : {Activation::ReLU, Activation::Sigmoid, Activation::Tanh, Activation::PReLU, Activation::ELU}) {
    if (text == to_string(a)) return a;
  }
  throw ConfigError("unknown activation '" + text + "' (relu, sigmoid, tanh, prelu, elu)");
}

struct NetSpec {
  static constexpr std::size_t kReferenceParameterCount = 777792;

  int input_width = 12;
  int hidden_width = 512;
  int blocks = 3;
  double dropout = 0.1;
  Activation activation = Activation::ReLU;
  int n_plants = 7;
  std::uint64_t seed = 0;

  void check() const {
    if (input_width < 1) throw ConfigError("input_width must be >= 1");
    if (hidden_width < 1) throw ConfigError("hidden_width must be >= 1");
    if (blocks < 0) throw ConfigError("blocks must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (n_plants < 1) throw ConfigError("n_plants must be >= 1");
  }
};

struct LossSpec {
  double alpha = 0.5;
  double beta1 = 1.0;
  double beta2 = 1.0;
  bool recompute_fractions = true;  // P_i measured on the rows each epoch trains on

  void check() const {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
    if (!(beta1 >= 0.0) || !(beta2 >= 0.0)) throw ConfigError("beta coefficients must be >= 0");
  }
};

struct TrainPhase {
  std::string name;
  int epochs = 0;
  double learning_rate = 0.0;
  bool sparse = false;
};

struct DsdSchedule {
  int dense1_epochs = 40;
  int sparse_epochs = 20;
  int dense2_epochs = 40;
  double sparsity = 0.8;  // fraction of each layer's weights left trainable in the sparse phase
  double lr_dense1 = 0.01;
  double lr_sparse = 0.001;
  double lr_dense2 = 0.0001;

  void check() const {
    if (!(sparsity > 0.0 && sparsity <= 1.0)) throw ConfigError("sparsity must lie in (0, 1]");
    if (dense1_epochs < 1 || sparse_epochs < 1 || dense2_epochs < 1) throw ConfigError("DSD phases need >= 1 epoch each");
  }

  std::vector<TrainPhase> phases() const {
    return {{"dense1", dense1_epochs, lr_dense1, false},
            {"sparse", sparse_epochs, lr_sparse, true},
            {"dense2", dense2_epochs, lr_dense2, false}};
  }
};

struct TrainOptions {
  int batch_size = 256;
  bool rus_per_epoch = false;
  std::uint64_t seed = 0;
};

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Loss formulas

/// w_i = (1 - P_i)^alpha.
inline std::vector<double> class_weights(std::span<const double> fractions, double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  double total = 0.0;
  for (double p : fractions) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("class fractions must lie in [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("class fractions must sum to 1");
  std::vector<double> w;
  for (double p : fractions) w.push_back(std::pow(1.0 - p, alpha));
  return w;
}

inline std::array<double, 2> class_fractions(std::span<const int> labels, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DataError("class fractions of an empty set");
  double ones = 0.0;
  for (auto r : rows) ones += labels[r];
  const double p1 = ones / static_cast<double>(rows.size());
  return {1.0 - p1, p1};
}

/// Mean over rows of -w_y log(max(q_y, eps)).
inline double weighted_cross_entropy(const Eigen::MatrixXd& probs, std::span<const int> targets,
                                     std::span<const double> weights) {
  if (static_cast<std::size_t>(probs.rows()) != targets.size()) throw DataError("probability/target row mismatch");
  if (probs.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const auto y = static_cast<std::size_t>(targets[static_cast<std::size_t>(r)]);
    const double w = weights.empty() ? 1.0 : weights[y];
    total -= w * std::log(std::max(probs(r, static_cast<Eigen::Index>(y)), kProbClamp));
  }
  return total / static_cast<double>(probs.rows());
}

inline double loss_dual(double glass_loss, double plant_loss, double beta1, double beta2) {
  return beta1 * glass_loss + beta2 * plant_loss;
}

// ---------------------------------------------------------------------------
// Layer primitives

namespace nn {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

inline Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

inline Mat activate(const Mat& z, Activation a, double slope = 0.25) {
  switch (a) {
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::Sigmoid: return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::PReLU: return z.unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
    case Activation::ELU: return z.unaryExpr([](double v) { return v > 0 ? v : std::expm1(v); });
  }
  return z;
}

/// dL/dz from dL/da; for PReLU also accumulates dL/dslope.
inline Mat activation_backward(const Mat& z, const Mat& a, const Mat& da, Activation act, double slope,
                               double* dslope = nullptr) {
  Mat dz(z.rows(), z.cols());
  double ds = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double v = z(i, j);
      double d = 0.0;
      switch (act) {
        case Activation::ReLU: d = v > 0 ? 1.0 : 0.0; break;
        case Activation::Sigmoid: d = a(i, j) * (1.0 - a(i, j)); break;
        case Activation::Tanh: d = 1.0 - a(i, j) * a(i, j); break;
        case Activation::PReLU:
          d = v > 0 ? 1.0 : slope;
          if (v <= 0) ds += da(i, j) * v;
          break;
        case Activation::ELU: d = v > 0 ? 1.0 : a(i, j) + 1.0; break;
      }
      dz(i, j) = da(i, j) * d;
    }
  }
  if (dslope) *dslope += ds;
  return dz;
}

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

inline Mat layer_norm(const Mat& x, const RowVec& gamma, const RowVec& beta, LayerNormCache* cache = nullptr) {
  const Eigen::VectorXd mu = x.rowwise().mean();
  Mat centered = x.colwise() - mu;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt();
  Mat xhat = centered.array().colwise() * inv_std.array();
  Mat y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const RowVec& gamma, RowVec& dgamma,
                               RowVec& dbeta) {
  dgamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const double h = static_cast<double>(dy.cols());
  const Mat dxhat = dy.array().rowwise() * gamma.array();
  const Eigen::VectorXd sum_dxhat = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().sum();
  Mat dx = (h * dxhat.array()).matrix();
  dx.colwise() -= sum_dxhat;
  dx -= (cache.xhat.array().colwise() * sum_dxhat_xhat.array()).matrix();
  return (dx.array().colwise() * (cache.inv_std.array() / h)).matrix();
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Network

struct Tensor {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  bool maskable = false;  // linear weight matrices take part in DSD masking
};

enum class Mode { Eval, Train };

struct ForwardResult {
  Eigen::MatrixXd glass;  // rows x 2
  Eigen::MatrixXd plant;  // rows x n_plants
};

struct LossBreakdown {
  double glass = 0.0;
  double plant = 0.0;
  double total = 0.0;
};

class ResidualNet {
 public:
  ResidualNet() = default;

  explicit ResidualNet(const NetSpec& spec) : spec_(spec) {
    spec.check();
    Rng rng(derive_seed(spec.seed, 0x4e4e));
    const bool rectifier = spec.activation == Activation::ReLU || spec.activation == Activation::PReLU ||
                           spec.activation == Activation::ELU;
    auto linear = [&](const std::string& name, int in, int out, double gain) {
      std::normal_distribution<double> normal(0.0, gain / std::sqrt(static_cast<double>(in)));
      Eigen::MatrixXd w(in, out);
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = normal(rng);
      }
      LinearIdx idx{add(name + ".weight", std::move(w), true), add(name + ".bias", Eigen::MatrixXd::Zero(1, out))};
      return idx;
    };
    auto norm = [&](const std::string& name) {
      return NormIdx{add(name + ".gamma", Eigen::MatrixXd::Ones(1, spec.hidden_width)),
                     add(name + ".beta", Eigen::MatrixXd::Zero(1, spec.hidden_width))};
    };
    auto slope = [&](const std::string& name) {
      return spec.activation == Activation::PReLU ? static_cast<int>(add(name + ".prelu", Eigen::MatrixXd::Constant(1, 1, 0.25)))
                                                  : -1;
    };
    const double gain = rectifier ? std::sqrt(2.0) : 1.0;
    stem_ = linear("stem", spec.input_width, spec.hidden_width, gain);
    stem_slope_ = slope("stem");
    for (int b = 0; b < spec.blocks; ++b) {
      const std::string name = "block" + std::to_string(b);
      BlockIdx block;
      block.norm = norm(name + ".ln");
      block.linear = linear(name + ".linear", spec.hidden_width, spec.hidden_width, gain);
      block.slope = slope(name);
      blocks_.push_back(block);
    }
    final_norm_ = norm("final_ln");
    glass_head_ = linear("glass_head", spec.hidden_width, 2, 1.0);
    plant_head_ = linear("plant_head", spec.hidden_width, spec.n_plants, 1.0);
  }

  const NetSpec& spec() const { return spec_; }
  std::vector<Tensor>& tensors() { return params_; }
  const std::vector<Tensor>& tensors() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  void zero_heads() {
    for (auto idx : {glass_head_, plant_head_}) {
      params_[idx.weight].value.setZero();
      params_[idx.bias].value.setZero();
    }
  }

  void zero_grad() {
    for (auto& t : params_) t.grad.setZero(t.value.rows(), t.value.cols());
  }

  ForwardResult forward(const Eigen::MatrixXd& X, Mode mode = Mode::Eval, Rng* rng = nullptr) const {
    Cache cache;
    return run_forward(X, mode, rng, cache);
  }

  /// Dual loss on one batch; when `grads` is set, writes parameter gradients into each tensor's grad.
  LossBreakdown loss_and_gradients(const Eigen::MatrixXd& X, std::span<const int> glass, std::span<const int> plant,
                                   std::span<const double> glass_weights, double beta1, double beta2, Mode mode,
                                   Rng* rng, bool grads) {
    check_labels(glass, 2, "glass");
    if (beta2 != 0.0) check_labels(plant, spec_.n_plants, "plant");
    if (static_cast<std::size_t>(X.rows()) != glass.size()) throw DataError("batch/label row mismatch");
    Cache cache;
    const auto out = run_forward(X, mode, rng, cache);
    LossBreakdown loss;
    loss.glass = weighted_cross_entropy(out.glass, glass, glass_weights);
    if (beta2 != 0.0) loss.plant = weighted_cross_entropy(out.plant, plant, {});
    loss.total = loss_dual(loss.glass, loss.plant, beta1, beta2);
    if (!grads) return loss;

    const double inv_n = 1.0 / static_cast<double>(X.rows());
    Eigen::MatrixXd dglass = out.glass;
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const auto y = glass[static_cast<std::size_t>(r)];
      dglass(r, y) -= 1.0;
      dglass.row(r) *= beta1 * (glass_weights.empty() ? 1.0 : glass_weights[static_cast<std::size_t>(y)]) * inv_n;
    }
    Eigen::MatrixXd dplant = Eigen::MatrixXd::Zero(out.plant.rows(), out.plant.cols());
    if (beta2 != 0.0) {
      dplant = out.plant;
      for (Eigen::Index r = 0; r < X.rows(); ++r) dplant(r, plant[static_cast<std::size_t>(r)]) -= 1.0;
      dplant *= beta2 * inv_n;
    }
    backward(cache, dglass, dplant);
    return loss;
  }

  std::vector<int> predict_glass(const Eigen::MatrixXd& X) const { return argmax_rows(forward_chunked(X).glass); }
  std::vector<int> predict_plant(const Eigen::MatrixXd& X) const { return argmax_rows(forward_chunked(X).plant); }

  /// Alias used by the generic voting / evaluation code.
  std::vector<int> predict(const Eigen::MatrixXd& X) const { return predict_glass(X); }

  ForwardResult forward_chunked(const Eigen::MatrixXd& X, Eigen::Index chunk = 4096) const {
    ForwardResult all{Eigen::MatrixXd(X.rows(), 2), Eigen::MatrixXd(X.rows(), spec_.n_plants)};
    for (Eigen::Index start = 0; start < X.rows(); start += chunk) {
      const auto len = std::min(chunk, X.rows() - start);
      const auto part = forward(X.middleRows(start, len));
      all.glass.middleRows(start, len) = part.glass;
      all.plant.middleRows(start, len) = part.plant;
    }
    return all;
  }

  nlohmann::json to_json() const {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : params_) {
      std::vector<double> data(t.value.data(), t.value.data() + t.value.size());
      tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"data", data}});
    }
    return {{"kind", "drn"}, {"version", 1}, {"spec", spec_to_json(spec_)}, {"tensors", tensors}};
  }

  static ResidualNet from_json(const nlohmann::json& j) {
    if (j.at("kind") != "drn") throw DataError("model file is not a residual network");
    ResidualNet net(spec_from_json(j.at("spec")));
    const auto& tensors = j.at("tensors");
    if (tensors.size() != net.params_.size()) throw DataError("checkpoint tensor count does not match its spec");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& t = net.params_[i];
      const auto& tj = tensors[i];
      if (tj.at("name") != t.name || tj.at("rows").get<Eigen::Index>() != t.value.rows() ||
          tj.at("cols").get<Eigen::Index>() != t.value.cols()) {
        throw DataError("checkpoint tensor '" + tj.at("name").get<std::string>() + "' has the wrong shape");
      }
      const auto data = tj.at("data").get<std::vector<double>>();
      t.value = Eigen::Map<const Eigen::MatrixXd>(data.data(), t.value.rows(), t.value.cols());
    }
    return net;
  }

  static nlohmann::json spec_to_json(const NetSpec& s) {
    return {{"input_width", s.input_width}, {"hidden_width", s.hidden_width}, {"blocks", s.blocks},
            {"dropout", s.dropout},         {"activation", to_string(s.activation)},
            {"n_plants", s.n_plants},       {"seed", s.seed}};
  }

  static NetSpec spec_from_json(const nlohmann::json& j) {
    NetSpec s;
    s.input_width = j.at("input_width").get<int>();
    s.hidden_width = j.at("hidden_width").get<int>();
    s.blocks = j.at("blocks").get<int>();
    s.dropout = j.at("dropout").get<double>();
    s.activation = parse_activation(j.at("activation").get<std::string>());
    s.n_plants = j.at("n_plants").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  }

 private:
  struct LinearIdx {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };
  struct NormIdx {
    std::size_t gamma = 0;
    std::size_t beta = 0;
  };
  struct BlockIdx {
    NormIdx norm;
    LinearIdx linear;
    int slope = -1;
  };
  struct BlockCache {
    nn::LayerNormCache norm;
    Eigen::MatrixXd normed, z, a, keep;  // keep: dropout scale per unit, empty in eval mode
  };
  struct Cache {
    Eigen::MatrixXd X, stem_z, stem_a;
    std::vector<BlockCache> blocks;
    nn::LayerNormCache final_norm;
    Eigen::MatrixXd trunk;
  };

  std::size_t add(const std::string& name, Eigen::MatrixXd value, bool maskable = false) {
    params_.push_back({name, std::move(value), {}, maskable});
    return params_.size() - 1;
  }

  const Eigen::MatrixXd& val(std::size_t i) const { return params_[i].value; }
  double slope_of(int idx) const { return idx >= 0 ? params_[static_cast<std::size_t>(idx)].value(0, 0) : 0.25; }

  Eigen::MatrixXd affine(const Eigen::MatrixXd& x, LinearIdx idx) const {
    Eigen::MatrixXd y = x * val(idx.weight);
    y.rowwise() += val(idx.bias).row(0);
    return y;
  }

  ForwardResult run_forward(const Eigen::MatrixXd& X, Mode mode, Rng* rng, Cache& cache) const {
    if (X.cols() != spec_.input_width) {
      throw DataError("network expects " + std::to_string(spec_.input_width) + " features, got " +
                      std::to_string(X.cols()));
    }
    if (mode == Mode::Train && spec_.dropout > 0.0 && !rng) throw ConfigError("train-mode forward needs an rng");
    cache.X = X;
    cache.stem_z = affine(X, stem_);
    cache.stem_a = nn::activate(cache.stem_z, spec_.activation, slope_of(stem_slope_));
    Eigen::MatrixXd x = cache.stem_a;
    cache.blocks.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& idx = blocks_[b];
      auto& bc = cache.blocks[b];
      bc.normed = nn::layer_norm(x, val(idx.norm.gamma).row(0), val(idx.norm.beta).row(0), &bc.norm);
      bc.z = affine(bc.normed, idx.linear);
      bc.a = nn::activate(bc.z, spec_.activation, slope_of(idx.slope));
      if (mode == Mode::Train && spec_.dropout > 0.0) {
        std::bernoulli_distribution keep(1.0 - spec_.dropout);
        const double scale = 1.0 / (1.0 - spec_.dropout);
        bc.keep.resize(bc.a.rows(), bc.a.cols());
        for (Eigen::Index j = 0; j < bc.keep.cols(); ++j) {
          for (Eigen::Index i = 0; i < bc.keep.rows(); ++i) bc.keep(i, j) = keep(*rng) ? scale : 0.0;
        }
        x += bc.a.cwiseProduct(bc.keep);
      } else {
        bc.keep.resize(0, 0);
        x += bc.a;
      }
    }
    cache.trunk = nn::layer_norm(x, val(final_norm_.gamma).row(0), val(final_norm_.beta).row(0), &cache.final_norm);
    return {nn::softmax_rows(affine(cache.trunk, glass_head_)), nn::softmax_rows(affine(cache.trunk, plant_head_))};
  }

  void linear_grads(const Eigen::MatrixXd& input, const Eigen::MatrixXd& dy, LinearIdx idx) {
    params_[idx.weight].grad.noalias() += input.transpose() * dy;
    params_[idx.bias].grad += dy.colwise().sum();
  }

  void backward(const Cache& cache, const Eigen::MatrixXd& dglass, const Eigen::MatrixXd& dplant) {
    zero_grad();
    linear_grads(cache.trunk, dglass, glass_head_);
    linear_grads(cache.trunk, dplant, plant_head_);
    Eigen::MatrixXd dtrunk = dglass * val(glass_head_.weight).transpose();
    dtrunk.noalias() += dplant * val(plant_head_.weight).transpose();

    Eigen::RowVectorXd dgamma = params_[final_norm_.gamma].grad.row(0);
    Eigen::RowVectorXd dbeta = params_[final_norm_.beta].grad.row(0);
    Eigen::MatrixXd dx = nn::layer_norm_backward(dtrunk, cache.final_norm, val(final_norm_.gamma).row(0), dgamma, dbeta);
    params_[final_norm_.gamma].grad.row(0) = dgamma;
    params_[final_norm_.beta].grad.row(0) = dbeta;

    for (std::size_t b = blocks_.size(); b-- > 0;) {
      const auto& idx = blocks_[b];
      const auto& bc = cache.blocks[b];
      Eigen::MatrixXd da = bc.keep.size() ? Eigen::MatrixXd(dx.cwiseProduct(bc.keep)) : dx;
      double dslope = 0.0;
      const Eigen::MatrixXd dz = nn::activation_backward(bc.z, bc.a, da, spec_.activation, slope_of(idx.slope), &dslope);
      if (idx.slope >= 0) params_[static_cast<std::size_t>(idx.slope)].grad(0, 0) += dslope;
      linear_grads(bc.normed, dz, idx.linear);
      const Eigen::MatrixXd dnormed = dz * val(idx.linear.weight).transpose();
      Eigen::RowVectorXd g = params_[idx.norm.gamma].grad.row(0);
      Eigen::RowVectorXd be = params_[idx.norm.beta].grad.row(0);
      dx += nn::layer_norm_backward(dnormed, bc.norm, val(idx.norm.gamma).row(0), g, be);
      params_[idx.norm.gamma].grad.row(0) = g;
      params_[idx.norm.beta].grad.row(0) = be;
    }

    double dslope = 0.0;
    const Eigen::MatrixXd dz =
        nn::activation_backward(cache.stem_z, cache.stem_a, dx, spec_.activation, slope_of(stem_slope_), &dslope);
    if (stem_slope_ >= 0) params_[static_cast<std::size_t>(stem_slope_)].grad(0, 0) += dslope;
    linear_grads(cache.X, dz, stem_);
  }

  static void check_labels(std::span<const int> labels, int classes, const char* what) {
    for (int y : labels) {
      if (y < 0 || y >= classes) throw DataError(std::string(what) + " label " + std::to_string(y) + " out of range");
    }
  }

  static std::vector<int> argmax_rows(const Eigen::MatrixXd& probs) {
    std::vector<int> out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < probs.cols(); ++c) {
        if (probs(r, c) > probs(r, best)) best = c;
      }
      out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
  }

  NetSpec spec_;
  std::vector<Tensor> params_;
  LinearIdx stem_;
  int stem_slope_ = -1;
  std::vector<BlockIdx> blocks_;
  NormIdx final_norm_;
  LinearIdx glass_head_;
  LinearIdx plant_head_;
};

// ---------------------------------------------------------------------------
// Adam and DSD masks

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Trainable flags for one weight tensor: the round((1 - s) n) smallest |w|
/// are frozen, ties broken by storage index.
inline BoolArray magnitude_mask(const Eigen::MatrixXd& w, double sparsity) {
  if (!(sparsity > 0.0 && sparsity <= 1.0)) throw ConfigError("sparsity must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(w.size());
  const auto frozen = static_cast<std::size_t>(std::llround((1.0 - sparsity) * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(w.data()[a]) < std::abs(w.data()[b]); });
  BoolArray trainable = BoolArray::Constant(w.rows(), w.cols(), true);
  for (std::size_t k = 0; k < frozen; ++k) trainable.data()[order[k]] = false;
  return trainable;
}

/// Per-tensor trainable flags; tensors without an entry are fully trainable.
struct DsdMask {
  std::vector<std::optional<BoolArray>> trainable;

  static DsdMask build(const ResidualNet& net, double sparsity) {
    DsdMask m;
    for (const auto& t : net.tensors()) {
      if (t.maskable) m.trainable.emplace_back(magnitude_mask(t.value, sparsity));
      else m.trainable.emplace_back(std::nullopt);
    }
    return m;
  }

  std::size_t frozen_count(std::size_t tensor) const {
    const auto& t = trainable[tensor];
    return t ? static_cast<std::size_t>(t->size() - t->count()) : 0;
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  long step = 0;
};

/// One Adam update with bias correction. Frozen coordinates keep their value
/// and moment estimates.
inline void adam_update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, Eigen::MatrixXd& m, Eigen::MatrixXd& v,
                        long step, double lr, const BoolArray* trainable = nullptr, const AdamConfig& cfg = {}) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols()) throw ConfigError("adam: gradient shape mismatch");
  if (m.size() != param.size()) m = Eigen::MatrixXd::Zero(param.rows(), param.cols());
  if (v.size() != param.size()) v = Eigen::MatrixXd::Zero(param.rows(), param.cols());
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    if (trainable && !trainable->data()[i]) continue;
    const double g = grad.data()[i];
    m.data()[i] = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
    v.data()[i] = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
    param.data()[i] -= lr * (m.data()[i] / c1) / (std::sqrt(v.data()[i] / c2) + cfg.eps);
  }
}

inline void adam_step(ResidualNet& net, AdamState& state, double lr, const DsdMask* mask = nullptr,
                      const AdamConfig& cfg = {}) {
  auto& tensors = net.tensors();
  state.m.resize(tensors.size());
  state.v.resize(tensors.size());
  ++state.step;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const BoolArray* trainable = mask && mask->trainable[i] ? &*mask->trainable[i] : nullptr;
    adam_update(tensors[i].value, tensors[i].grad, state.m[i], state.v[i], state.step, lr, trainable, cfg);
  }
}

// ---------------------------------------------------------------------------
// Training

struct TraceRow {
  int epoch = 0;
  std::string phase;
  double glass_loss = 0.0;
  double plant_loss = 0.0;
  double learning_rate = 0.0;
};

inline void write_train_trace(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "epoch,phase,L_g,L_p,lr\n";
  for (const auto& r : trace) {
    out << r.epoch << ',' << r.phase << ',' << detail::format_number(r.glass_loss) << ','
        << detail::format_number(r.plant_loss) << ',' << detail::format_number(r.learning_rate) << '\n';
  }
}

/// Runs the phases in order with one Adam state. A sparse phase builds its mask
/// from weight magnitudes at phase start. `data.X` must already be normalized.
inline std::vector<TraceRow> train_phases(ResidualNet& net, const FeatureTable& data, const std::vector<TrainPhase>& phases,
                                          double sparsity, const LossSpec& loss, const TrainOptions& options) {
  loss.check();
  if (options.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (data.rows() == 0) throw DataError("cannot train on an empty set");
  Rng rng(options.seed);
  AdamState adam;
  std::vector<TraceRow> trace;
  std::vector<std::size_t> all(data.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto fixed_fractions = class_fractions(data.broken, all);
  int epoch = 0;
  for (const auto& phase : phases) {
    std::optional<DsdMask> mask;
    if (phase.sparse) mask = DsdMask::build(net, sparsity);
    for (int e = 0; e < phase.epochs; ++e, ++epoch) {
      auto rows = options.rus_per_epoch ? rus_indices(data.broken, derive_seed(options.seed, 0x5255530000ULL + epoch)) : all;
      const auto fractions = loss.recompute_fractions ? class_fractions(data.broken, rows) : fixed_fractions;
      const auto w = class_weights(fractions, loss.alpha);
      std::shuffle(rows.begin(), rows.end(), rng);
      double sum_g = 0.0, sum_p = 0.0;
      for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(options.batch_size)) {
        const auto end = std::min(rows.size(), start + static_cast<std::size_t>(options.batch_size));
        const std::vector<std::size_t> batch(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                             rows.begin() + static_cast<std::ptrdiff_t>(end));
        const Eigen::MatrixXd Xb = data.X(batch, Eigen::all);
        std::vector<int> yb, pb;
        for (auto r : batch) {
          yb.push_back(data.broken[r]);
          pb.push_back(data.plant[r]);
        }
        const auto l = net.loss_and_gradients(Xb, yb, pb, w, loss.beta1, loss.beta2, Mode::Train, &rng, true);
        adam_step(net, adam, phase.learning_rate, mask ? &*mask : nullptr);
        sum_g += l.glass * static_cast<double>(batch.size());
        sum_p += l.plant * static_cast<double>(batch.size());
      }
      const auto n = static_cast<double>(rows.size());
      trace.push_back({epoch, phase.name, sum_g / n, sum_p / n, phase.learning_rate});
    }
  }
  return trace;
}

inline std::vector<TraceRow> dsd_train(ResidualNet& net, const FeatureTable& data, const DsdSchedule& schedule,
                                       const LossSpec& loss, const TrainOptions& options) {
  schedule.check();
  return train_phases(net, data, schedule.phases(), schedule.sparsity, loss, options);
}

/// Single dense phase at the Adam default rate; 200 epochs for the baseline.
inline std::vector<TraceRow> plain_train(ResidualNet& net, const FeatureTable& data, int epochs, const LossSpec& loss,
                                         const TrainOptions& options, double learning_rate = 0.001) {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  return train_phases(net, data, {{"dense", epochs, learning_rate, false}}, 1.0, loss, options);
}

inline nlohmann::json to_json(const LossSpec& l) {
  return {{"alpha", l.alpha}, {"beta1", l.beta1}, {"beta2", l.beta2}, {"recompute_fractions", l.recompute_fractions}};
}

inline nlohmann::json to_json(const DsdSchedule& s) {
  return {{"dense1_epochs", s.dense1_epochs}, {"sparse_epochs", s.sparse_epochs}, {"dense2_epochs", s.dense2_epochs},
          {"sparsity", s.sparsity},           {"lr_dense1", s.lr_dense1},         {"lr_sparse", s.lr_sparse},
          {"lr_dense2", s.lr_dense2}};
}

}  // namespace hce
