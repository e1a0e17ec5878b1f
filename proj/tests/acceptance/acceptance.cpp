// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "../unit/oracles.hpp"
#include "hce/eval.hpp"
#include "hce/synthgen.hpp"

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed check without stopping the criterion.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail.clear();
    pass = false;
    detail += (detail.empty() ? "" : "; ") + what;
  }
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o.precision(precision);
  o << v;
  return o.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

hce::FeatureTable normalized_table(std::size_t n, std::uint64_t seed) {
  hce::GenConfig g;
  g.n_records = n;
  g.broken_fraction = 0.2;
  g.n_plants = 3;
  g.seed = seed;
  auto t = hce::engineer(hce::generate(g));
  t.X = hce::Normalizer::fit(t.X, t.names).apply(t.X);
  return t;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  Outcome o;
  double worst = 0;
  for (auto act : {hce::Activation::ReLU, hce::Activation::Sigmoid, hce::Activation::Tanh, hce::Activation::PReLU,
                   hce::Activation::ELU}) {
    hce::NetSpec s;
    s.input_width = 5;
    s.hidden_width = 8;
    s.blocks = 2;
    s.n_plants = 3;
    s.activation = act;
    s.seed = 21;
    hce::ResidualNet net(s);
    const auto X = random_matrix(6, 5, 22);
    const std::vector<int> y = {0, 1, 1, 0, 1, 0}, p = {0, 1, 2, 2, 1, 0};
    const auto check = hce::oracle::check_network_gradients(net, X, y, p, {0.4, 0.9}, 1.0, 0.6);
    worst = std::max(worst, check.worst);
    o.require(check.worst <= 1e-4, hce::to_string(act) + " " + check.worst_tensor + " rel err " + fmt(check.worst));
  }
  const double secs = seconds_since(t0);
  o.require(secs < 60, "took " + fmt(secs) + " s");
  if (o.pass) o.detail = "worst relative error " + fmt(worst, 3) + " over 5 activations, " + fmt(secs, 2) + " s";
  return o;
}

Outcome loss_formulas() {
  Outcome o;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u01(0.001, 0.999), ua(0, 3), u5(0, 5);
  double worst = 0;
  for (int i = 0; i < 5000; ++i) {
    const double p = u01(rng), a = ua(rng);
    const auto w = hce::class_weights(std::vector<double>{p, 1 - p}, a);
    worst = std::max({worst, std::abs(w[0] - std::pow(1 - p, a)), std::abs(w[1] - std::pow(p, a))});
    const auto w0 = hce::class_weights(std::vector<double>{p, 1 - p}, 0.0);
    o.require(w0[0] == 1.0 && w0[1] == 1.0, "alpha=0 weights not all ones");
  }
  o.require(worst <= 1e-12, "class_weights error " + fmt(worst));
  double identity = 0;
  for (int i = 0; i < 5000; ++i) {
    const double lg = u5(rng), lp = u5(rng), b1 = u5(rng), b2 = u5(rng), c = u5(rng);
    identity = std::max(identity, std::abs(hce::loss_dual(lg, lp, c * b1, c * b2) - c * hce::loss_dual(lg, lp, b1, b2)));
    identity = std::max(identity, std::abs(hce::loss_dual(lg, lp, b1, 0.0) - b1 * lg));
    identity = std::max(identity, std::abs(hce::loss_dual(lg, lp, 0.0, b2) - b2 * lp));
  }
  o.require(identity <= 1e-12, "loss_dual identity error " + fmt(identity));
  if (o.pass) o.detail = "weights err " + fmt(worst, 2) + ", dual identities err " + fmt(identity, 2);
  return o;
}

Outcome dsd_contract() {
  Outcome o;
  const auto data = normalized_table(400, 3);
  hce::NetSpec spec;
  spec.hidden_width = 16;
  spec.blocks = 2;
  spec.n_plants = 3;
  spec.seed = 5;
  hce::TrainOptions opt;
  opt.batch_size = 64;
  opt.seed = 4;
  hce::DsdSchedule s;
  s.dense1_epochs = 2;
  s.dense2_epochs = 2;
  s.sparsity = 0.8;

  hce::ResidualNet after_dense(spec);
  hce::train_phases(after_dense, data, {s.phases()[0]}, s.sparsity, {}, opt);
  const auto mask = hce::DsdMask::build(after_dense, s.sparsity);
  std::size_t layers = 0;
  for (std::size_t i = 0; i < after_dense.tensors().size(); ++i) {
    const auto& t = after_dense.tensors()[i];
    if (!t.maskable) continue;
    ++layers;
    const double target = 0.2 * static_cast<double>(t.value.size());
    o.require(std::abs(static_cast<double>(mask.frozen_count(i)) - target) <= 1.0, t.name + " frozen count");
    double max_frozen = 0, min_trainable = 1e300;
    for (Eigen::Index k = 0; k < t.value.size(); ++k) {
      const double a = std::abs(t.value.data()[k]);
      if (mask.trainable[i]->data()[k]) min_trainable = std::min(min_trainable, a);
      else max_frozen = std::max(max_frozen, a);
    }
    o.require(max_frozen <= min_trainable, t.name + " froze a larger weight");
  }
  // snapshot after each sparse epoch, replayed from the same seed
  for (int k = 1; k <= 3; ++k) {
    s.sparse_epochs = k;
    hce::ResidualNet net(spec);
    hce::train_phases(net, data, {s.phases()[0], s.phases()[1]}, s.sparsity, {}, opt);
    for (std::size_t i = 0; i < net.tensors().size(); ++i) {
      if (!mask.trainable[i]) continue;
      const auto& now = net.tensors()[i].value;
      const auto& start = after_dense.tensors()[i].value;
      for (Eigen::Index j = 0; j < now.size(); ++j) {
        if (!mask.trainable[i]->data()[j] && now.data()[j] != start.data()[j]) {
          o.require(false, net.tensors()[i].name + " frozen weight moved at sparse epoch " + std::to_string(k));
          break;
        }
      }
    }
  }
  // s = 1 equals plain training with the same learning-rate schedule
  s.sparse_epochs = 2;
  s.sparsity = 1.0;
  hce::ResidualNet dsd(spec), plain(spec);
  hce::dsd_train(dsd, data, s, {}, opt);
  auto phases = s.phases();
  for (auto& p : phases) p.sparse = false;
  hce::train_phases(plain, data, phases, 1.0, {}, opt);
  double diff = 0;
  for (std::size_t i = 0; i < dsd.tensors().size(); ++i) {
    diff = std::max(diff, (dsd.tensors()[i].value - plain.tensors()[i].value).cwiseAbs().maxCoeff());
  }
  o.require(diff <= 1e-12, "s=1 differs from plain schedule by " + fmt(diff));
  if (o.pass) {
    o.detail = std::to_string(layers) + " masked layers at 20% frozen, 3 sparse snapshots bitwise constant, s=1 diff " +
               fmt(diff, 2);
  }
  return o;
}

Outcome sampling_invariants() {
  Outcome o;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t minority = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    const std::size_t majority = std::uniform_int_distribution<std::size_t>(minority, 500)(rng);
    std::vector<int> y(majority, 0);
    y.insert(y.end(), minority, 1);
    std::shuffle(y.begin(), y.end(), rng);
    const auto idx = hce::rus_indices(y, rng());
    std::size_t ones = 0;
    for (auto i : idx) ones += static_cast<std::size_t>(y[i]);
    if (ones != minority || idx.size() != 2 * minority) {
      o.require(false, "rus not balanced");
      break;
    }
  }
  int plans = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t minority = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
    const std::size_t majority = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(minority, 2), 300)(rng);
    const int t = std::uniform_int_distribution<int>(2, static_cast<int>(std::min<std::size_t>(majority, 12)))(rng);
    std::vector<int> y(majority, 0);
    y.insert(y.end(), minority, 1);
    std::shuffle(y.begin(), y.end(), rng);
    const auto plan = hce::partition_oversample(y, t, rng());
    // every minority index in every subset; majority parts disjoint; union exhaustive
    std::multiset<std::size_t> seen;
    bool ok = plan.subsets.size() == static_cast<std::size_t>(t);
    for (const auto& s : plan.subsets) {
      std::size_t mins = 0;
      for (auto i : s) {
        if (y[i]) ++mins;
        else seen.insert(i);
      }
      ok &= mins == minority;
    }
    std::size_t distinct = std::set<std::size_t>(seen.begin(), seen.end()).size();
    ok &= seen.size() == majority && distinct == majority;
    plans += ok;
  }
  o.require(plans == 1000, std::to_string(1000 - plans) + " partition plans broke an invariant");

  hce::GenConfig g;
  g.n_records = 100000;
  g.seed = 11;
  const auto data = hce::generate(g);
  double worst = 0;
  int worst_p = 0;
  for (int p = 2; p <= 50; ++p) {
    const auto out = hce::balance_subsample(data, {p, static_cast<std::uint64_t>(p), 0.8});
    for (const auto* d : {&out.reduced_train, &out.reduced_test}) {
      const double err = std::abs(100.0 * d->broken_fraction() - p);
      if (err > worst) worst = err, worst_p = p;
    }
  }
  o.require(worst <= 1.0, "balance_subsample off by " + fmt(worst) + " points at p=" + std::to_string(worst_p));
  o.require(hce::per_position_quota(72, 50) == 2, "quota(72, 50) != 2");
  if (o.pass) o.detail = "1000/1000 plans valid, worst balance error " + fmt(worst, 3) + " pp (p=" + std::to_string(worst_p) + ")";
  return o;
}

Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(31);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int k = std::uniform_int_distribution<int>(2, 7)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 80)(rng);
    std::uniform_int_distribution<int> label(0, k - 1);
    std::vector<int> pred(n), act(n);
    for (std::size_t i = 0; i < n; ++i) pred[i] = label(rng), act[i] = label(rng);
    const auto r = hce::evaluate("m", pred, act, k);
    double f1_sum = 0;
    bool same = true;
    for (int c = 0; c < k; ++c) {
      const auto b = hce::oracle::brute_counts(pred, act, c);
      const double p = b.tp + b.fp > 0 ? b.tp / (b.tp + b.fp) : 0.0;
      const double rc = b.tp + b.fn > 0 ? b.tp / (b.tp + b.fn) : 0.0;
      const double f = p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
      same &= r.of(c).precision.value == p && r.of(c).recall.value == rc && r.f1_of(c) == f;
      f1_sum += f;
    }
    same &= r.macro_f1 == f1_sum / k;
    mismatches += !same;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " of 10000 pairs disagree");
  if (o.pass) o.detail = "10000/10000 random pairs identical";
  return o;
}

Outcome gini_and_trees() {
  Outcome o;
  std::mt19937_64 rng(4);
  double worst = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int k = std::uniform_int_distribution<int>(1, 8)(rng);
    std::vector<double> p(static_cast<std::size_t>(k));
    double sum = 0;
    for (auto& v : p) sum += v = std::exponential_distribution<double>(1.0)(rng);
    for (auto& v : p) v /= sum;
    double closed = 1;
    for (double v : p) closed -= v * v;
    worst = std::max(worst, std::abs(hce::gini(p) - closed));
  }
  o.require(worst <= 1e-12, "gini error " + fmt(worst));

  auto accuracy = [](const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
    return static_cast<double>(hit) / static_cast<double>(a.size());
  };
  hce::ForestConfig c;
  c.max_depth = 1;
  c.max_features = hce::MaxFeatures::All;
  c.class_weight = hce::ClassWeight::equal();
  Eigen::MatrixXd X(60, 2);
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    X(i, 0) = std::uniform_real_distribution<double>(0, 1)(rng) + (i % 2 ? 2.0 : 0.0);
    X(i, 1) = std::uniform_real_distribution<double>(0, 3)(rng);
    y.push_back(i % 2);
  }
  const double separable = accuracy(hce::fit_tree(X, y, c).predict(X), y);
  o.require(separable == 1.0, "separable accuracy " + fmt(separable));
  Eigen::MatrixXd Z(100, 2);
  std::vector<int> z;
  for (int i = 0; i < 100; ++i) {
    Z(i, 0) = i % 2;
    Z(i, 1) = (i / 2) % 2;
    z.push_back((i % 2) ^ ((i / 2) % 2));
  }
  const double xor_acc = accuracy(hce::fit_tree(Z, z, c).predict(Z), z);
  o.require(xor_acc <= 0.75, "XOR depth-1 accuracy " + fmt(xor_acc));
  if (o.pass) o.detail = "gini err " + fmt(worst, 2) + ", separable 1.0, XOR " + fmt(xor_acc, 3);
  return o;
}

Outcome boosting_monotonicity() {
  Outcome o;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0, 1);
  hce::FeatureTable t;
  t.names = {"a", "b", "c"};
  const std::size_t n = 2000;
  t.X.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const auto r = static_cast<Eigen::Index>(i);
    t.X(r, 0) = noise(rng) + (label ? 3.0 : -3.0);
    t.X(r, 1) = noise(rng) + (label ? 1.0 : -1.0);
    t.X(r, 2) = noise(rng);
    t.broken.push_back(label);
    t.plant.push_back(0);
    t.ids.push_back(i);
  }
  hce::BoostConfig c;
  c.n_iterations = 200;
  c.learning_rate = 0.1;
  std::vector<hce::BoostTraceRow> trace;
  const auto model = hce::fit_boost(t, c, &trace);
  int increases = 0;
  double worst_residual = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    increases += trace[i].train_log_loss > trace[i - 1].train_log_loss;
    worst_residual = std::max(worst_residual, trace[i].histogram_residual);
  }
  o.require(trace.size() == 201, "trace has " + std::to_string(trace.size()) + " rows");
  o.require(increases == 0, std::to_string(increases) + " log-loss increases");
  o.require(worst_residual <= 1e-8, "reported residual " + fmt(worst_residual));

  // independent check: bin every prefix model's gradients and compare with the direct sum
  const auto bins = model.mapper().transform(t.X);
  double worst_oracle = 0;
  for (std::size_t k = 0; k < model.trees().size(); ++k) {
    const hce::BoostModel prefix(c, t.names, model.mapper(), model.base_score(),
                                 std::vector<hce::BoostTree>(model.trees().begin(),
                                                             model.trees().begin() + static_cast<std::ptrdiff_t>(k)));
    const auto p = prefix.predict_proba(t.X);
    double full = 0, scale = 0;
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = p[i] - t.broken[i];
      full += g[i];
      scale += std::abs(g[i]);
    }
    for (std::size_t f = 0; f < 3; ++f) {
      std::vector<double> hist(256, 0.0);
      for (std::size_t i = 0; i < n; ++i) hist[bins[f * n + i]] += g[i];
      double binned = 0;
      for (double h : hist) binned += h;
      worst_oracle = std::max(worst_oracle, std::abs(binned - full) / scale);
    }
  }
  o.require(worst_oracle <= 1e-8, "oracle residual " + fmt(worst_oracle));
  if (o.pass) {
    o.detail = "log-loss " + fmt(trace.front().train_log_loss) + " -> " + fmt(trace.back().train_log_loss) +
               ", worst residual " + fmt(std::max(worst_residual, worst_oracle), 2);
  }
  return o;
}

hce::ForestConfig winner_forest(int trees) {
  hce::ForestConfig f;
  f.n_estimators = trees;
  f.max_features = hce::MaxFeatures::Sqrt;
  f.max_depth = 80;
  f.min_samples_split = 5;
  f.min_samples_leaf = 2;
  f.class_weight = hce::parse_class_weight("0.2:0.5");
  f.seed = 1;
  return f;
}

Outcome balance_trend() {
  const auto t0 = Clock::now();
  Outcome o;
  hce::GenConfig g;
  g.n_records = 50000;
  g.seed = 1;
  g.class_separation = 0.0;
  const auto data = hce::generate(g);
  const auto curve = hce::run_balance_test(data, {}, hce::forest_factory(winner_forest(800)), hce::default_balance_points(), 7);
  const double secs = seconds_since(t0);
  std::map<int, double> recall;
  for (const auto& pt : curve.points) recall[pt.p] = pt.report.recall_of(1);
  o.require(curve.points.size() == 49, std::to_string(curve.skipped.size()) + " balance points skipped");
  o.require(recall.count(2) && recall.count(50), "missing p=2 or p=50");
  const double gain = 100 * (recall[50] - recall[2]);
  o.require(gain >= 15, "recall gain " + fmt(gain) + " pp");
  o.require(curve.spearman_recall >= 0.8, "Spearman " + fmt(curve.spearman_recall));
  o.require(secs < 600, "took " + fmt(secs) + " s");
  if (o.pass) {
    o.detail = "recall p=2 " + fmt(recall[2], 3) + " -> p=50 " + fmt(recall[50], 3) + " (+" + fmt(gain, 3) +
               " pp), Spearman " + fmt(curve.spearman_recall, 3) + ", " + fmt(secs, 3) + " s";
  }
  return o;
}

Outcome mitigation_trend() {
  Outcome o;
  hce::GenConfig g;
  g.n_records = 30000;
  g.seed = 1;
  g.class_separation = 2.25;
  const auto parts = hce::split(hce::generate(g), {0.8, 5, hce::Stratify::Broken});
  const auto train = hce::engineer(parts.train), test = hce::engineer(parts.test);

  hce::ExperimentConfig c;
  c.forest = winner_forest(100);
  c.boost.n_iterations = 100;
  c.drn.net.hidden_width = 64;
  c.drn.net.blocks = 2;
  c.drn.plain_epochs = 80;
  c.dsd.dense1_epochs = 32;
  c.dsd.sparse_epochs = 16;
  c.dsd.dense2_epochs = 32;
  c.voting_boost_members = 50;
  c.seed = 3;
  const std::map<std::string, std::string> pairs = {{"RF+RUS", "RF"}, {"B-HGBC+RUS", "HGBC"}, {"DRN+dual+DSD", "DRN"}};
  std::vector<hce::NamedFactory> models;
  for (auto& m : hce::standard_models(c)) models.push_back(std::move(m));
  for (auto& m : hce::advanced_models(c)) {
    if (pairs.count(m.name)) models.push_back(std::move(m));
  }
  const auto reports = hce::run_models(train, test, models);
  std::string summary;
  for (const auto& [mitigated, base] : pairs) {
    const auto& a = hce::find_report(reports, mitigated)->report;
    const auto& b = hce::find_report(reports, base)->report;
    const double d_recall = 100 * (a.recall_of(1) - b.recall_of(1));
    const double d_macro = 100 * (a.macro_f1 - b.macro_f1);
    o.require(d_recall >= 0, mitigated + " recall " + fmt(d_recall, 3) + " pp vs " + base);
    o.require(d_macro >= -2, mitigated + " macro-F1 " + fmt(d_macro, 3) + " pts vs " + base);
    summary += (summary.empty() ? "" : ", ") + mitigated + " recall " + (d_recall >= 0 ? "+" : "") + fmt(d_recall, 2) +
               " macro " + (d_macro >= 0 ? "+" : "") + fmt(d_macro, 2);
  }
  if (o.pass) o.detail = summary;
  else o.detail += " (" + summary + ")";
  return o;
}

double plant_macro_f1(double strength) {
  hce::GenConfig g;
  g.n_records = 20000;
  g.seed = 8;
  g.plant_signature_strength = strength;
  const auto parts = hce::split(hce::generate(g), {0.8, 5, hce::Stratify::Plant});
  const auto train = hce::engineer(parts.train), test = hce::engineer(parts.test);
  hce::DrnRecipe r;
  r.net.hidden_width = 64;
  r.net.blocks = 2;
  r.plain_epochs = 100;
  r.plain_learning_rate = 0.003;
  return hce::run_dual_eval(hce::train_drn(train, r), test).macro_f1;
}

Outcome plant_ceiling() {
  Outcome o;
  const double strong = plant_macro_f1(4.0);
  const double none = plant_macro_f1(0.0);
  o.require(strong >= 0.99, "strength 4 macro-F1 " + fmt(strong));
  o.require(none <= 0.25, "strength 0 macro-F1 " + fmt(none));
  if (o.pass) o.detail = "strength 4: " + fmt(100 * strong, 4) + "%, strength 0: " + fmt(100 * none, 3) + "%";
  return o;
}

// ---------------------------------------------------------------------------
// Reproducibility through the CLI

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const fs::path& log) {
  const int status = std::system((std::string(HCE_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducibility() {
  Outcome o;
  const fs::path dir = fs::path(HCE_TEST_TMPDIR) / "replay";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto d = dir.string() + "/";
  const auto log = dir / "cli.log";
  const std::string small_drn = " --width 8 --blocks 1 --epochs 2 --dsd-epochs 1-1-1 --batch-size 64";

  struct Command {
    std::string name, args;
    std::vector<std::string> outputs;  // the first one carries the embedded config
  };
  const std::vector<Command> commands = {
      {"generate", "generate --n 3000 --seed 5 --out " + d + "all.csv", {"all.csv"}},
      {"describe", "describe --in " + d + "all.csv --out " + d + "describe.json", {"describe.json"}},
      {"features", "features --in " + d + "all.csv --out " + d + "feat.csv --manifest " + d + "feat.json",
       {"feat.csv", "feat.json"}},
      {"split", "split --in " + d + "all.csv --train-out " + d + "train.csv --test-out " + d + "test.csv --seed 2",
       {"train.csv", "test.csv"}},
      {"train forest", "train forest --trees 5 --train " + d + "train.csv --out " + d + "forest.json", {"forest.json"}},
      {"train voting-forest", "train voting-forest --trees 3 --t 3 --train " + d + "train.csv --out " + d + "vforest.json",
       {"vforest.json"}},
      {"train boost", "train boost --iterations 10 --train " + d + "train.csv --out " + d + "boost.json --trace " + d +
                          "boost.csv",
       {"boost.json", "boost.csv"}},
      {"train voting-boost", "train voting-boost --iterations 5 --members 3 --train " + d + "train.csv --out " + d +
                                 "vboost.json",
       {"vboost.json"}},
      {"train drn", "train drn --dsd" + small_drn + " --train " + d + "train.csv --out " + d + "drn.json --trace " + d +
                        "drn.csv",
       {"drn.json", "drn.csv"}},
      {"eval", "eval --model " + d + "drn.json --test " + d + "test.csv --out " + d + "eval.json --text " + d + "eval.txt",
       {"eval.json", "eval.txt"}},
      {"grid-search", "grid-search --estimators 3,5 --depths 4,8 --n-configs 3 --k 2 --train " + d + "train.csv --out " +
                          d + "grid.json --table " + d + "grid.csv",
       {"grid.json", "grid.csv"}},
      {"balance-test", "balance-test --trees 5 --p-min 10 --p-max 40 --p-step 15 --train " + d + "all.csv --out " + d +
                           "balance.json --curve " + d + "balance.csv",
       {"balance.json", "balance.csv"}},
      {"standard-test", "standard-test --trees 5 --iterations 5" + small_drn + " --train " + d + "train.csv --test " + d +
                            "test.csv --out " + d + "standard.json --text " + d + "standard.txt",
       {"standard.json", "standard.txt"}},
      {"advanced-test", "advanced-test --trees 5 --iterations 5 --members 3 --t 3" + small_drn + " --train " + d +
                            "train.csv --test " + d + "test.csv --out " + d + "advanced.json --text " + d + "advanced.txt",
       {"advanced.json", "advanced.txt"}},
      {"ablation", "ablation" + small_drn + " --train " + d + "test.csv --test " + d + "test.csv --out " + d +
                       "ablation.json --text " + d + "ablation.txt",
       {"ablation.json", "ablation.txt"}},
  };

  int replayed = 0;
  for (const auto& cmd : commands) {
    if (run_cli(cmd.args, log) != 0) {
      o.require(false, cmd.name + " failed: " + read_file(log));
      continue;
    }
    const fs::path first = dir / cmd.outputs.front();
    std::string config;
    if (first.extension() == ".json") {
      config = nlohmann::json::parse(read_file(first)).at("run_config").get<std::string>();
    } else {
      config = read_file(first.string() + ".run.ini");
    }
    const fs::path ini = dir / (cmd.outputs.front() + ".replay.ini");
    std::ofstream(ini, std::ios::binary) << config;
    std::map<std::string, std::string> before;
    for (const auto& out : cmd.outputs) {
      before[out] = read_file(dir / out);
      fs::rename(dir / out, dir / (out + ".first"));
    }
    if (run_cli("--config '" + ini.string() + "'", log) != 0) {
      o.require(false, cmd.name + " replay failed: " + read_file(log));
      continue;
    }
    bool identical = true;
    for (const auto& out : cmd.outputs) identical &= fs::exists(dir / out) && read_file(dir / out) == before[out];
    o.require(identical, cmd.name + " replay differs");
    replayed += identical;
  }
  if (o.pass) o.detail = std::to_string(replayed) + "/" + std::to_string(commands.size()) + " commands replayed bit-identically";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"loss and weight formulas", loss_formulas},
      {"DSD contract", dsd_contract},
      {"sampling invariants", sampling_invariants},
      {"metric oracle", metric_oracle},
      {"gini and tree behavior", gini_and_trees},
      {"boosting monotonicity", boosting_monotonicity},
      {"balance-test trend", balance_trend},
      {"imbalance-mitigation trend", mitigation_trend},
      {"dual-problem ceiling", plant_ceiling},
      {"reproducibility", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << " - " << o.detail << " ["
              << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
