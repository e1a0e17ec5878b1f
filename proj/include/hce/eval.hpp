#pragma once

// Evaluation reports and experiment drivers: balance curve, standard and
// mitigated comparisons, the DRN ablation grid, and plant-head evaluation.

#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hce/dataset.hpp"
#include "hce/features.hpp"
#include "hce/forest.hpp"
#include "hce/gboost.hpp"
#include "hce/metrics.hpp"
#include "hce/neural.hpp"
#include "hce/sampling.hpp"

namespace hce {

struct ClassMetrics {
  int cls = 0;
  ConfusionMatrix cm;
  Metric precision;
  Metric recall;
  Metric f1;
  std::size_t support = 0;
};

/// confusion[actual][predicted]; every other figure is derived from it.
struct EvalReport {
  std::string model;
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0.0;
  std::string model_fingerprint;
  std::string data_fingerprint;
  nlohmann::json config = nlohmann::json::object();

  const ClassMetrics& of(int cls) const { return per_class.at(static_cast<std::size_t>(cls)); }
  double recall_of(int cls) const { return of(cls).recall.value; }
  double f1_of(int cls) const { return of(cls).f1.value; }

  static EvalReport from_confusion(std::string model, std::vector<std::vector<std::size_t>> confusion) {
    EvalReport r;
    r.model = std::move(model);
    r.confusion = std::move(confusion);
    const auto k = r.confusion.size();
    std::vector<double> f1s;
    for (std::size_t c = 0; c < k; ++c) {
      if (r.confusion[c].size() != k) throw DataError("confusion matrix must be square");
      ClassMetrics m;
      m.cls = static_cast<int>(c);
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t p = 0; p < k; ++p) {
          const auto n = r.confusion[a][p];
          if (a == c && p == c) m.cm.tp += n;
          else if (p == c) m.cm.fp += n;
          else if (a == c) m.cm.fn += n;
          else m.cm.tn += n;
        }
      }
      m.support = m.cm.tp + m.cm.fn;
      m.precision = precision(m.cm);
      m.recall = recall(m.cm);
      m.f1 = f1(m.cm);
      f1s.push_back(m.f1.value);
      r.per_class.push_back(m);
    }
    r.macro_f1 = hce::macro_f1(f1s);
    return r;
  }

  nlohmann::json to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& m : per_class) {
      classes.push_back({{"class", m.cls},
                         {"support", m.support},
                         {"tp", m.cm.tp},
                         {"fp", m.cm.fp},
                         {"fn", m.cm.fn},
                         {"tn", m.cm.tn},
                         {"precision", m.precision.value},
                         {"precision_undefined", m.precision.undefined},
                         {"recall", m.recall.value},
                         {"recall_undefined", m.recall.undefined},
                         {"f1", m.f1.value},
                         {"f1_undefined", m.f1.undefined}});
    }
    return {{"model", model},
            {"confusion", confusion},
            {"per_class", classes},
            {"macro_f1", macro_f1},
            {"model_fingerprint", model_fingerprint},
            {"data_fingerprint", data_fingerprint},
            {"config", config}};
  }

  static EvalReport from_json(const nlohmann::json& j) {
    auto r = from_confusion(j.at("model").get<std::string>(),
                            j.at("confusion").get<std::vector<std::vector<std::size_t>>>());
    r.model_fingerprint = j.value("model_fingerprint", "");
    r.data_fingerprint = j.value("data_fingerprint", "");
    r.config = j.value("config", nlohmann::json::object());
    return r;
  }
};

inline EvalReport evaluate(std::string model, std::span<const int> predicted, std::span<const int> actual,
                           int n_classes) {
  if (predicted.size() != actual.size()) throw DataError("prediction/target length mismatch");
  if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
  const auto k = static_cast<std::size_t>(n_classes);
  std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] < 0 || actual[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes) {
      throw DataError("class label outside [0, " + std::to_string(n_classes) + ")");
    }
    ++confusion[static_cast<std::size_t>(actual[i])][static_cast<std::size_t>(predicted[i])];
  }
  return EvalReport::from_confusion(std::move(model), std::move(confusion));
}

/// Structural problems in a report JSON; empty when it conforms.
inline std::vector<std::string> report_schema_problems(const nlohmann::json& j) {
  std::vector<std::string> problems;
  auto need = [&](const char* key, auto check, const char* what) {
    if (!j.contains(key)) problems.push_back(std::string("missing '") + key + "'");
    else if (!check(j.at(key))) problems.push_back(std::string("'") + key + "' must be " + what);
  };
  if (!j.is_object()) return {"report must be an object"};
  need("model", [](const auto& v) { return v.is_string(); }, "a string");
  need("macro_f1", [](const auto& v) { return v.is_number() && v.template get<double>() >= 0 && v.template get<double>() <= 1; }, "a fraction");
  need("model_fingerprint", [](const auto& v) { return v.is_string(); }, "a string");
  need("data_fingerprint", [](const auto& v) { return v.is_string(); }, "a string");
  need("config", [](const auto& v) { return v.is_object(); }, "an object");
  need("confusion", [](const auto& v) {
    if (!v.is_array() || v.empty()) return false;
    for (const auto& row : v) {
      if (!row.is_array() || row.size() != v.size()) return false;
      for (const auto& c : row) {
        if (!c.is_number_unsigned()) return false;
      }
    }
    return true;
  }, "a square matrix of counts");
  need("per_class", [](const auto& v) {
    if (!v.is_array()) return false;
    for (const auto& c : v) {
      for (const char* key : {"class", "support", "tp", "fp", "fn", "tn", "precision", "recall", "f1"}) {
        if (!c.contains(key) || !c.at(key).is_number()) return false;
      }
    }
    return true;
  }, "an array of class metric objects");
  if (problems.empty()) {
    const auto rebuilt = EvalReport::from_json(j);
    if (rebuilt.macro_f1 != j.at("macro_f1").get<double>()) problems.push_back("macro_f1 disagrees with the confusion matrix");
    const auto& classes = j.at("per_class");
    if (classes.size() != rebuilt.per_class.size()) problems.push_back("per_class length differs from the confusion matrix");
    for (std::size_t c = 0; c < std::min(classes.size(), rebuilt.per_class.size()); ++c) {
      const auto& m = rebuilt.per_class[c];
      const auto& given = classes[c];
      const bool same = given.at("tp").get<double>() == static_cast<double>(m.cm.tp) &&
                        given.at("fp").get<double>() == static_cast<double>(m.cm.fp) &&
                        given.at("fn").get<double>() == static_cast<double>(m.cm.fn) &&
                        given.at("precision").get<double>() == m.precision.value &&
                        given.at("recall").get<double>() == m.recall.value && given.at("f1").get<double>() == m.f1.value;
      if (!same) problems.push_back("per_class[" + std::to_string(c) + "] disagrees with the confusion matrix");
    }
  }
  return problems;
}

// ---------------------------------------------------------------------------
// Fingerprints and display

inline std::string fingerprint(const FeatureTable& t) {
  Fnv1a h;
  for (const auto& n : t.names) {
    h.update(n);
    h.update("\x1f");
  }
  h.update(t.X.data(), static_cast<std::size_t>(t.X.size()) * sizeof(double));
  h.update(t.broken.data(), t.broken.size() * sizeof(int));
  h.update(t.plant.data(), t.plant.size() * sizeof(int));
  return h.hex();
}

inline std::string fingerprint(const nlohmann::json& j) {
  Fnv1a h;
  h.update(j.dump());
  return h.hex();
}

inline int percent(double fraction) { return static_cast<int>(std::lround(100.0 * fraction)); }

/// "(+x)" / "(-x)" in integer percent points between displayed values.
inline std::string format_delta(double value, double reference) {
  const int d = percent(value) - percent(reference);
  return std::string("(") + (d >= 0 ? "+" : "-") + std::to_string(std::abs(d)) + ")";
}

struct TableRow {
  std::string model;
  const EvalReport* report = nullptr;
  const EvalReport* baseline = nullptr;
};

/// Precision / recall / F1 of the broken class and macro F1 in integer percent.
inline std::string format_table(const std::vector<TableRow>& rows) {
  std::vector<std::array<std::string, 5>> cells{{"Algorithm", "Precision", "Recall", "F1 Score", "M-AVG F1"}};
  for (const auto& row : rows) {
    const auto& r = *row.report;
    auto cell = [&](double v, double base) {
      std::string s = std::to_string(percent(v));
      if (row.baseline) s += " " + format_delta(v, base);
      return s;
    };
    const auto* b = row.baseline;
    cells.push_back({row.model, cell(r.of(1).precision.value, b ? b->of(1).precision.value : 0.0),
                     cell(r.recall_of(1), b ? b->recall_of(1) : 0.0), cell(r.f1_of(1), b ? b->f1_of(1) : 0.0),
                     cell(r.macro_f1, b ? b->macro_f1 : 0.0)});
  }
  std::array<std::size_t, 5> width{};
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < 5; ++i) width[i] = std::max(width[i], c[i].size());
  }
  std::ostringstream out;
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < 5; ++i) {
      out << std::left << std::setw(static_cast<int>(width[i])) << c[i] << (i + 1 < 5 ? "  " : "\n");
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Classifier factories

struct TrainedClassifier {
  std::function<std::vector<int>(const Eigen::MatrixXd&)> predict;
  std::function<std::vector<int>(const Eigen::MatrixXd&)> predict_plant;  // empty unless the model has a plant head
  std::string fingerprint;
};

using ClassifierFactory = std::function<TrainedClassifier(const FeatureTable& train)>;

inline ClassifierFactory forest_factory(ForestConfig config) {
  return [config](const FeatureTable& train) {
    auto model = std::make_shared<ForestModel>(fit_forest(train, config));
    return TrainedClassifier{[model](const Eigen::MatrixXd& X) { return model->predict(X); }, {},
                             fingerprint(to_json(*model))};
  };
}

inline ClassifierFactory voting_forest_factory(ForestConfig config, int t, std::uint64_t seed) {
  return [=](const FeatureTable& train) {
    auto fitted = fit_voting_forest(train, t, config, seed);
    auto model = std::make_shared<VotingForestModel>(std::move(fitted.model));
    nlohmann::json members = nlohmann::json::array();
    for (const auto& m : model->members()) members.push_back(to_json(m));
    return TrainedClassifier{[model](const Eigen::MatrixXd& X) { return model->predict(X); }, {}, fingerprint(members)};
  };
}

inline ClassifierFactory boost_factory(BoostConfig config) {
  return [config](const FeatureTable& train) {
    auto model = std::make_shared<BoostModel>(fit_boost(train, config));
    return TrainedClassifier{[model](const Eigen::MatrixXd& X) { return model->predict(X); }, {},
                             fingerprint(to_json(*model))};
  };
}

inline ClassifierFactory voting_boost_factory(BoostConfig config, int members, std::uint64_t seed) {
  return [=](const FeatureTable& train) {
    auto model = std::make_shared<VotingBoostModel>(fit_voting_boost(train, members, config, seed));
    nlohmann::json j = nlohmann::json::array();
    for (const auto& m : model->members()) j.push_back(to_json(m));
    return TrainedClassifier{[model](const Eigen::MatrixXd& X) { return model->predict(X); }, {}, fingerprint(j)};
  };
}

struct DrnRecipe {
  NetSpec net;
  LossSpec loss;
  std::optional<DsdSchedule> dsd;  // nullopt: plain training
  int plain_epochs = 200;
  double plain_learning_rate = 0.001;
  TrainOptions options;
};

inline nlohmann::json to_json(const DrnRecipe& r) {
  nlohmann::json j = {{"net", ResidualNet::spec_to_json(r.net)},
                      {"loss", to_json(r.loss)},
                      {"plain_epochs", r.plain_epochs},
                      {"plain_learning_rate", r.plain_learning_rate},
                      {"batch_size", r.options.batch_size},
                      {"rus_per_epoch", r.options.rus_per_epoch},
                      {"train_seed", r.options.seed}};
  j["dsd"] = r.dsd ? to_json(*r.dsd) : nlohmann::json(nullptr);
  return j;
}

struct TrainedNet {
  ResidualNet net;
  Normalizer normalizer;
  std::vector<TraceRow> trace;
};

/// Fits a z-score normalizer on the training table, then trains the network.
inline TrainedNet train_drn(const FeatureTable& train, DrnRecipe recipe) {
  recipe.net.input_width = static_cast<int>(train.cols());
  auto normalizer = Normalizer::fit(train.X, train.names, NormalizerKind::ZScore);
  FeatureTable scaled = train;
  scaled.X = normalizer.apply(train.X);
  ResidualNet net(recipe.net);
  auto trace = recipe.dsd ? dsd_train(net, scaled, *recipe.dsd, recipe.loss, recipe.options)
                          : plain_train(net, scaled, recipe.plain_epochs, recipe.loss, recipe.options,
                                        recipe.plain_learning_rate);
  return {std::move(net), std::move(normalizer), std::move(trace)};
}

inline ClassifierFactory drn_factory(DrnRecipe recipe) {
  return [recipe](const FeatureTable& train) {
    auto trained = std::make_shared<TrainedNet>(train_drn(train, recipe));
    return TrainedClassifier{
        [trained](const Eigen::MatrixXd& X) { return trained->net.predict_glass(trained->normalizer.apply(X)); },
        [trained](const Eigen::MatrixXd& X) { return trained->net.predict_plant(trained->normalizer.apply(X)); },
        fingerprint(trained->net.to_json())};
  };
}

inline EvalReport evaluate_glass(const std::string& name, const TrainedClassifier& clf, const FeatureTable& test,
                                 nlohmann::json config = nlohmann::json::object()) {
  const auto pred = clf.predict(test.X);
  auto report = evaluate(name, pred, test.broken, 2);
  report.model_fingerprint = clf.fingerprint;
  report.data_fingerprint = fingerprint(test);
  report.config = std::move(config);
  return report;
}

// ---------------------------------------------------------------------------
// Balance test

struct BalancePoint {
  int p = 0;
  double achieved_train_fraction = 0.0;
  double achieved_test_fraction = 0.0;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  std::size_t shortfalls = 0;
  EvalReport report;
};

struct BalanceCurve {
  std::vector<BalancePoint> points;
  std::vector<std::pair<int, std::string>> skipped;  // infeasible p with reason
  double spearman_recall = 0.0;
};

/// Average ranks (1-based), ties share their mean rank.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = rank;
    i = j + 1;
  }
  return out;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("spearman needs two equal-length series of >= 2 values");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  return pearson(Eigen::Map<const Eigen::VectorXd>(ra.data(), static_cast<Eigen::Index>(ra.size())),
                 Eigen::Map<const Eigen::VectorXd>(rb.data(), static_cast<Eigen::Index>(rb.size())));
}

inline std::vector<int> default_balance_points() {
  std::vector<int> p(49);
  std::iota(p.begin(), p.end(), 2);
  return p;
}

inline BalanceCurve run_balance_test(const Dataset& train, const FeatureOptions& features, const ClassifierFactory& factory,
                                     const std::vector<int>& p_values, std::uint64_t seed) {
  BalanceCurve curve;
  std::vector<BalancePoint> points(p_values.size());
  std::vector<std::string> errors(p_values.size());
  parallel_for(p_values.size(), [&](std::size_t i) {
    try {
      const auto reduced = balance_subsample(train, {p_values[i], derive_seed(seed, static_cast<std::uint64_t>(p_values[i])), 0.8});
      const auto tr = engineer(reduced.reduced_train, features);
      const auto te = engineer(reduced.reduced_test, features);
      auto& pt = points[i];
      pt.p = p_values[i];
      pt.achieved_train_fraction = reduced.reduced_train.broken_fraction();
      pt.achieved_test_fraction = reduced.reduced_test.broken_fraction();
      pt.train_rows = tr.rows();
      pt.test_rows = te.rows();
      pt.shortfalls = reduced.shortfalls.size();
      pt.report = evaluate_glass("p=" + std::to_string(pt.p), factory(tr), te, {{"p", pt.p}});
    } catch (const DataError& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < p_values.size(); ++i) {
    if (errors[i].empty()) curve.points.push_back(std::move(points[i]));
    else curve.skipped.emplace_back(p_values[i], errors[i]);
  }
  if (curve.points.size() >= 2) {
    std::vector<double> p, r;
    for (const auto& pt : curve.points) {
      p.push_back(pt.p);
      r.push_back(pt.report.recall_of(1));
    }
    curve.spearman_recall = spearman(p, r);
    if (std::isnan(curve.spearman_recall)) curve.spearman_recall = 0.0;
  }
  return curve;
}

inline void write_balance_curve(std::ostream& out, const BalanceCurve& curve) {
  out << "p,train_rows,test_rows,train_broken_fraction,test_broken_fraction,shortfalls,precision,recall,f1,macro_f1\n";
  for (const auto& pt : curve.points) {
    const auto& m = pt.report.of(1);
    out << pt.p << ',' << pt.train_rows << ',' << pt.test_rows << ',' << detail::format_number(pt.achieved_train_fraction)
        << ',' << detail::format_number(pt.achieved_test_fraction) << ',' << pt.shortfalls << ','
        << detail::format_number(m.precision.value) << ',' << detail::format_number(m.recall.value) << ','
        << detail::format_number(m.f1.value) << ',' << detail::format_number(pt.report.macro_f1) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Standard and mitigated comparisons

struct ExperimentConfig {
  ForestConfig forest;
  BoostConfig boost;
  DrnRecipe drn;  // baseline recipe: the glass loss only, plain training
  DsdSchedule dsd;
  double dual_beta1 = 1.0;
  double dual_beta2 = 1.0;
  int voting_forest_t = 8;
  int voting_boost_members = 50;
  std::uint64_t seed = 0;

  DrnRecipe baseline_drn() const {
    auto r = drn;
    r.loss.beta2 = 0.0;
    r.dsd.reset();
    return r;
  }
  DrnRecipe drn_variant(bool dual, bool with_dsd) const {
    auto r = baseline_drn();
    if (dual) {
      r.loss.beta1 = dual_beta1;
      r.loss.beta2 = dual_beta2;
    }
    if (with_dsd) r.dsd = dsd;
    return r;
  }
  ForestConfig rus_forest() const {
    auto c = forest;
    c.sampler = TreeSampler::RusPerTree;
    return c;
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"forest", to_json(c.forest)},   {"boost", to_json(c.boost)},       {"drn", to_json(c.drn)},
          {"dsd", to_json(c.dsd)},         {"dual_beta1", c.dual_beta1},      {"dual_beta2", c.dual_beta2},
          {"voting_forest_t", c.voting_forest_t}, {"voting_boost_members", c.voting_boost_members},
          {"seed", c.seed}};
}

struct NamedReport {
  std::string name;
  std::string baseline;  // empty for baselines
  EvalReport report;
};

struct NamedFactory {
  std::string name;
  std::string baseline;
  ClassifierFactory factory;
  nlohmann::json config;
};

inline std::vector<NamedReport> run_models(const FeatureTable& train, const FeatureTable& test,
                                           const std::vector<NamedFactory>& models) {
  std::vector<NamedReport> out;
  for (const auto& m : models) {
    out.push_back({m.name, m.baseline, evaluate_glass(m.name, m.factory(train), test, m.config)});
  }
  return out;
}

inline std::vector<NamedFactory> standard_models(const ExperimentConfig& c) {
  return {{"DRN", "", drn_factory(c.baseline_drn()), to_json(c.baseline_drn())},
          {"RF", "", forest_factory(c.forest), to_json(c.forest)},
          {"HGBC", "", boost_factory(c.boost), to_json(c.boost)}};
}

inline std::vector<NamedFactory> advanced_models(const ExperimentConfig& c) {
  auto drn = [&](bool dual, bool with_dsd) { return c.drn_variant(dual, with_dsd); };
  return {{"V-RF", "RF", voting_forest_factory(c.forest, c.voting_forest_t, derive_seed(c.seed, 11)),
           {{"forest", to_json(c.forest)}, {"t", c.voting_forest_t}}},
          {"DRN+DSD", "DRN", drn_factory(drn(false, true)), to_json(drn(false, true))},
          {"DRN+dual", "DRN", drn_factory(drn(true, false)), to_json(drn(true, false))},
          {"DRN+dual+DSD", "DRN", drn_factory(drn(true, true)), to_json(drn(true, true))},
          {"RF+RUS", "RF", forest_factory(c.rus_forest()), to_json(c.rus_forest())},
          {"B-HGBC+RUS", "HGBC", voting_boost_factory(c.boost, c.voting_boost_members, derive_seed(c.seed, 13)),
           {{"boost", to_json(c.boost)}, {"members", c.voting_boost_members}}}};
}

inline std::vector<NamedReport> run_standard_test(const FeatureTable& train, const FeatureTable& test,
                                                  const ExperimentConfig& c) {
  return run_models(train, test, standard_models(c));
}

/// Mitigated variants plus the three baselines they are compared against.
inline std::vector<NamedReport> run_advanced_test(const FeatureTable& train, const FeatureTable& test,
                                                  const ExperimentConfig& c) {
  auto models = standard_models(c);
  for (auto& m : advanced_models(c)) models.push_back(std::move(m));
  return run_models(train, test, models);
}

inline const NamedReport* find_report(const std::vector<NamedReport>& reports, const std::string& name) {
  for (const auto& r : reports) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

inline std::string format_reports(const std::vector<NamedReport>& reports) {
  std::vector<TableRow> rows;
  for (const auto& r : reports) {
    const auto* base = r.baseline.empty() ? nullptr : find_report(reports, r.baseline);
    rows.push_back({r.name, &r.report, base ? &base->report : nullptr});
  }
  return format_table(rows);
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationCell {
  std::string parameter;
  std::string value;
  DrnRecipe recipe;
};

struct AblationGrid {
  std::vector<std::array<int, 3>> dsd_epochs = {{20, 40, 20}, {50, 10, 150}, {200, 50, 75}};
  std::vector<double> alphas = {0.0, 0.25, 0.75, 1.0};
  std::vector<Activation> activations = {Activation::Sigmoid, Activation::Tanh, Activation::PReLU, Activation::ELU};
  std::vector<std::pair<double, double>> betas = {{1.0, 0.5}, {0.5, 1.0}};
  std::vector<double> sparsities = {0.3, 0.5, 0.9};

  /// Variations of the reference recipe (dual loss with DSD), one parameter at a time.
  std::vector<AblationCell> cells(const DrnRecipe& reference) const {
    std::vector<AblationCell> out;
    auto fmt = [](double v) { return detail::format_number(v); };
    for (const auto& e : dsd_epochs) {
      auto r = reference;
      r.dsd->dense1_epochs = e[0];
      r.dsd->sparse_epochs = e[1];
      r.dsd->dense2_epochs = e[2];
      out.push_back({"DSD epochs", std::to_string(e[0]) + "-" + std::to_string(e[1]) + "-" + std::to_string(e[2]), r});
    }
    for (double a : alphas) {
      auto r = reference;
      r.loss.alpha = a;
      out.push_back({"alpha", fmt(a), r});
    }
    for (auto act : activations) {
      auto r = reference;
      r.net.activation = act;
      out.push_back({"activation", to_string(act), r});
    }
    for (const auto& [b1, b2] : betas) {
      auto r = reference;
      r.loss.beta1 = b1;
      r.loss.beta2 = b2;
      out.push_back({"beta", "(" + fmt(b1) + ", " + fmt(b2) + ")", r});
    }
    for (double s : sparsities) {
      auto r = reference;
      r.dsd->sparsity = s;
      out.push_back({"sparsity", fmt(s), r});
    }
    return out;
  }
};

struct AblationRow {
  std::string parameter;
  std::string value;
  EvalReport report;
  int recall_delta = 0;  // integer percent points vs reference
  int f1_delta = 0;
};

struct AblationResult {
  EvalReport reference;
  std::vector<AblationRow> rows;
};

inline AblationResult run_ablation(const FeatureTable& train, const FeatureTable& test, const DrnRecipe& reference,
                                   const AblationGrid& grid = {}) {
  if (!reference.dsd) throw ConfigError("ablation reference must use DSD training");
  AblationResult result;
  result.reference = evaluate_glass("reference", drn_factory(reference)(train), test, to_json(reference));
  const auto cells = grid.cells(reference);
  std::vector<AblationRow> rows(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) {
    auto& row = rows[i];
    row.parameter = cells[i].parameter;
    row.value = cells[i].value;
    row.report = evaluate_glass(row.parameter + "=" + row.value, drn_factory(cells[i].recipe)(train), test,
                                to_json(cells[i].recipe));
    row.recall_delta = percent(row.report.recall_of(1)) - percent(result.reference.recall_of(1));
    row.f1_delta = percent(row.report.f1_of(1)) - percent(result.reference.f1_of(1));
  });
  result.rows = std::move(rows);
  return result;
}

inline std::string signed_points(int d) { return (d >= 0 ? "+" : "-") + std::to_string(std::abs(d)); }

inline std::string format_ablation(const AblationResult& r) {
  std::ostringstream out;
  out << "reference recall " << percent(r.reference.recall_of(1)) << ", F1 " << percent(r.reference.f1_of(1)) << '\n';
  std::size_t w = 9;
  for (const auto& row : r.rows) w = std::max(w, row.parameter.size());
  out << std::left << std::setw(static_cast<int>(w)) << "parameter" << "  value       recall  F1\n";
  for (const auto& row : r.rows) {
    out << std::left << std::setw(static_cast<int>(w)) << row.parameter << "  " << std::setw(10) << row.value << "  "
        << std::setw(6) << signed_points(row.recall_delta) << "  " << signed_points(row.f1_delta) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Plant head

inline EvalReport run_dual_eval(const TrainedNet& trained, const FeatureTable& test, const std::string& name = "plant") {
  const auto pred = trained.net.predict_plant(trained.normalizer.apply(test.X));
  auto report = evaluate(name, pred, test.plant, trained.net.spec().n_plants);
  report.model_fingerprint = fingerprint(trained.net.to_json());
  report.data_fingerprint = fingerprint(test);
  return report;
}

}  // namespace hce
