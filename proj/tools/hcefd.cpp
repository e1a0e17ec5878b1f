// hcefd: command-line driver for the broken-glass detection pipeline.
//
// Every option can come from an INI file (--config) and be overridden on the
// command line. Each artifact carries the effective configuration: JSON
// outputs under "run_config", CSV outputs in a sibling "<file>.run.ini".
// Re-running `hcefd --config <that text>` rewrites the same bytes.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 other failure.

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "hce/dataset.hpp"
#include "hce/eval.hpp"
#include "hce/features.hpp"
#include "hce/forest.hpp"
#include "hce/gboost.hpp"
#include "hce/neural.hpp"
#include "hce/sampling.hpp"
#include "hce/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;
constexpr const char* kModelFormat = "hcefd-model/1";

// ---------------------------------------------------------------------------
// Option helpers

CLI::Option* add_double(CLI::App* app, const std::string& name, double& value, const std::string& help) {
  return app->add_option(name, value, help)->default_str(hce::detail::format_number(value));
}

template <typename T>
CLI::Option* add_value(CLI::App* app, const std::string& name, T& value, const std::string& help) {
  return app->add_option(name, value, help)->capture_default_str();
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.emplace_back(hce::detail::trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.emplace_back(hce::detail::trim(cur));
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw hce::ConfigError("cannot parse " + what + " value '" + text + "'");
  return value;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const auto& item : split_list(text, ',')) {
    if (item.empty()) continue;
    const auto range = split_list(item, ':');
    if (range.size() == 1) {
      out.push_back(parse_number<int>(range[0], what));
    } else if (range.size() == 3) {
      // start:stop:step, stop exclusive
      const int start = parse_number<int>(range[0], what);
      const int stop = parse_number<int>(range[1], what);
      const int step = parse_number<int>(range[2], what);
      if (step <= 0) throw hce::ConfigError(what + " range step must be positive");
      for (int v = start; v < stop; v += step) out.push_back(v);
    } else {
      throw hce::ConfigError("cannot parse " + what + " item '" + item + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Option groups

struct FeatureOpts {
  std::string layout = "1,12,24,36";
  std::string tglass_order = "sup-minus-measured";

  void add(CLI::App* app) {
    add_value(app, "--layout", layout, "Support positions (1-36) per stage, comma separated, or 'none'");
    add_value(app, "--tglass-order", tglass_order, "normalized_tglass operand order")
        ->check(CLI::IsMember({"sup-minus-measured", "measured-minus-sup"}));
  }

  hce::FeatureOptions resolve() const {
    hce::FeatureOptions o;
    if (layout == "none") {
      o.layouts = hce::PlantLayouts::none();
    } else {
      hce::PlantLayout l;
      l.support_positions.clear();
      for (int p : parse_int_list(layout, "layout")) {
        if (p < 1 || p > hce::schema::kStageLength) throw hce::ConfigError("layout positions must lie in [1, 36]");
        l.support_positions.insert(p);
      }
      o.layouts.set_default(l);
    }
    o.tglass_order =
        tglass_order == "measured-minus-sup" ? hce::TGlassOrder::MeasuredMinusSup : hce::TGlassOrder::SupMinusMeasured;
    return o;
  }
};

struct ForestOpts {
  int trees = 100;
  std::string max_features = "sqrt";
  int max_depth = 0;
  std::string class_weight = "balanced";
  int min_split = 2;
  int min_leaf = 1;
  std::string sampler = "bootstrap";
  double bootstrap_fraction = 1.0;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    add_value(app, "--trees", trees, "Number of trees");
    add_value(app, "--max-features", max_features, "Features per split: sqrt, half, all")
        ->check(CLI::IsMember({"sqrt", "half", "all"}));
    add_value(app, "--max-depth", max_depth, "Depth limit, 0 for none");
    add_value(app, "--class-weight", class_weight, "balanced, equal, or w0:w1");
    add_value(app, "--min-split", min_split, "Minimum samples to split a node");
    add_value(app, "--min-leaf", min_leaf, "Minimum samples per leaf");
    add_value(app, "--sampler", sampler, "Per-tree sample: bootstrap or rus")->check(CLI::IsMember({"bootstrap", "rus"}));
    add_double(app, "--bootstrap-fraction", bootstrap_fraction, "Bootstrap size relative to the pool");
    add_value(app, "--forest-seed", seed, "Forest seed");
  }

  hce::ForestConfig resolve() const {
    hce::ForestConfig c;
    c.n_estimators = trees;
    c.max_features = hce::parse_max_features(max_features);
    if (max_depth > 0) c.max_depth = max_depth;
    else if (max_depth < 0) throw hce::ConfigError("max-depth must be >= 0");
    c.class_weight = hce::parse_class_weight(class_weight);
    c.min_samples_split = min_split;
    c.min_samples_leaf = min_leaf;
    c.sampler = sampler == "rus" ? hce::TreeSampler::RusPerTree : hce::TreeSampler::Bootstrap;
    c.bootstrap_fraction = bootstrap_fraction;
    c.seed = seed;
    c.check();
    return c;
  }
};

struct BoostOpts {
  double learning_rate = 0.1;
  int iterations = 100;
  int max_leaf_nodes = 31;
  int min_leaf = 20;
  double l2 = 0.0;
  int max_bins = hce::kMaxBins;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    add_double(app, "--boost-lr", learning_rate, "Boosting learning rate");
    add_value(app, "--iterations", iterations, "Boosting iterations");
    add_value(app, "--max-leaf-nodes", max_leaf_nodes, "Leaves per boosting tree");
    add_value(app, "--boost-min-leaf", min_leaf, "Minimum samples per boosting leaf");
    add_double(app, "--l2", l2, "L2 regularization of leaf values");
    add_value(app, "--max-bins", max_bins, "Bins per feature (<= 255)");
    add_value(app, "--boost-seed", seed, "Boosting seed");
  }

  hce::BoostConfig resolve() const {
    hce::BoostConfig c;
    c.learning_rate = learning_rate;
    c.n_iterations = iterations;
    c.max_leaf_nodes = max_leaf_nodes;
    c.min_samples_leaf = min_leaf;
    c.l2_regularization = l2;
    c.max_bins = max_bins;
    c.seed = seed;
    c.check();
    if (max_bins < 2 || max_bins > hce::kMaxBins) throw hce::ConfigError("max-bins must lie in [2, 255]");
    return c;
  }
};

struct DrnOpts {
  int width = 512;
  int blocks = 3;
  double dropout = 0.1;
  std::string activation = "relu";
  int plants = 7;
  double alpha = 0.5;
  double beta1 = 1.0;
  double beta2 = 1.0;
  bool fixed_fractions = false;
  bool dsd = false;
  std::string dsd_epochs = "40-20-40";
  double sparsity = 0.8;
  std::string dsd_lr = "0.01,0.001,0.0001";
  int epochs = 200;
  double learning_rate = 0.001;
  int batch_size = 256;
  bool rus_per_epoch = false;
  std::uint64_t seed = 0;

  void add(CLI::App* app, bool with_dsd_switch) {
    add_value(app, "--width", width, "Hidden width");
    add_value(app, "--blocks", blocks, "Residual blocks");
    add_double(app, "--dropout", dropout, "Dropout rate");
    add_value(app, "--activation", activation, "relu, sigmoid, tanh, prelu, elu")
        ->check(CLI::IsMember({"relu", "sigmoid", "tanh", "prelu", "elu"}));
    add_value(app, "--plants", plants, "Plant head classes");
    add_double(app, "--alpha", alpha, "Class-relevance exponent");
    add_double(app, "--beta1", beta1, "Glass loss coefficient");
    add_double(app, "--beta2", beta2, "Plant loss coefficient");
    app->add_flag("--fixed-fractions", fixed_fractions, "Measure class fractions once on the full training set");
    if (with_dsd_switch) app->add_flag("--dsd", dsd, "Dense-sparse-dense training instead of plain training");
    add_value(app, "--dsd-epochs", dsd_epochs, "Epochs per DSD phase, a-b-c");
    add_double(app, "--sparsity", sparsity, "Fraction of weights trainable in the sparse phase");
    add_value(app, "--dsd-lr", dsd_lr, "Learning rates per DSD phase, comma separated");
    add_value(app, "--epochs", epochs, "Plain-training epochs");
    add_double(app, "--lr", learning_rate, "Plain-training learning rate");
    add_value(app, "--batch-size", batch_size, "Minibatch size");
    app->add_flag("--rus-per-epoch", rus_per_epoch, "Fresh balanced under-sample every epoch");
    add_value(app, "--net-seed", seed, "Network initialization and training seed");
  }

  hce::DsdSchedule schedule() const {
    const auto e = split_list(dsd_epochs, '-');
    const auto lr = split_list(dsd_lr, ',');
    if (e.size() != 3) throw hce::ConfigError("dsd-epochs must look like 40-20-40");
    if (lr.size() != 3) throw hce::ConfigError("dsd-lr needs three comma-separated rates");
    hce::DsdSchedule s;
    s.dense1_epochs = parse_number<int>(e[0], "dsd-epochs");
    s.sparse_epochs = parse_number<int>(e[1], "dsd-epochs");
    s.dense2_epochs = parse_number<int>(e[2], "dsd-epochs");
    s.lr_dense1 = parse_number<double>(lr[0], "dsd-lr");
    s.lr_sparse = parse_number<double>(lr[1], "dsd-lr");
    s.lr_dense2 = parse_number<double>(lr[2], "dsd-lr");
    s.sparsity = sparsity;
    s.check();
    return s;
  }

  hce::DrnRecipe resolve() const {
    hce::DrnRecipe r;
    r.net.hidden_width = width;
    r.net.blocks = blocks;
    r.net.dropout = dropout;
    r.net.activation = hce::parse_activation(activation);
    r.net.n_plants = plants;
    r.net.seed = seed;
    r.net.input_width = static_cast<int>(hce::engineered_feature_names().size());
    r.net.check();
    r.loss.alpha = alpha;
    r.loss.beta1 = beta1;
    r.loss.beta2 = beta2;
    r.loss.recompute_fractions = !fixed_fractions;
    r.loss.check();
    if (dsd) r.dsd = schedule();
    r.plain_epochs = epochs;
    r.plain_learning_rate = learning_rate;
    if (epochs < 1) throw hce::ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw hce::ConfigError("batch-size must be >= 1");
    r.options.batch_size = batch_size;
    r.options.rus_per_epoch = rus_per_epoch;
    r.options.seed = derive_seed(seed, 0x7472);
    return r;
  }

 private:
  static std::uint64_t derive_seed(std::uint64_t s, std::uint64_t stream) { return hce::derive_seed(s, stream); }
};

// ---------------------------------------------------------------------------
// Artifacts

/// INI text for the selected subcommand chain, defaults included.
std::string run_config_text(const CLI::App& app) {
  std::string path;
  const CLI::App* leaf = &app;
  while (!leaf->get_subcommands().empty()) {
    leaf = leaf->get_subcommands().front();
    path += (path.empty() ? "" : ".") + leaf->get_name();
  }
  return "[" + path + "]\n" + leaf->config_to_str(true, false);
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw hce::DataError("cannot write '" + path.string() + "'");
  out << bytes;
  out.flush();
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_bytes(path, j.dump(2) + "\n"); }

void write_sidecar(const fs::path& path, const std::string& config) { write_bytes(path.string() + ".run.ini", config); }

template <typename Writer>
void write_csv_artifact(const fs::path& path, const std::string& config, Writer&& writer) {
  std::ostringstream out;
  writer(out);
  write_bytes(path, out.str());
  write_sidecar(path, config);
}

hce::Dataset load(const std::string& path) {
  auto result = hce::load_csv(path);
  if (!result.rejects.empty()) {
    std::cerr << "hcefd: " << result.rejects.size() << " rejected rows in '" << path << "' (see "
              << hce::rejects_path_for(path).string() << ")\n";
  }
  if (result.dataset.empty()) throw hce::DataError("'" + path + "' contains no valid records");
  return std::move(result.dataset);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw hce::DataError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw hce::DataError("'" + path + "' is not valid JSON: " + e.what());
  }
}

json model_envelope(const std::string& kind, const std::string& config, const hce::FeatureManifest& manifest,
                    json model) {
  return {{"format", kModelFormat}, {"kind", kind},      {"run_config", config},
          {"manifest", manifest.to_json()}, {"model", std::move(model)}};
}

// ---------------------------------------------------------------------------
// Commands

struct GenerateCmd {
  hce::GenConfig gen;
  std::string out;

  void add(CLI::App* app) {
    gen.seed = 1;
    add_value(app, "--n", gen.n_records, "Number of records");
    add_double(app, "--broken-fraction", gen.broken_fraction, "Fraction of broken tubes");
    add_value(app, "--plants", gen.n_plants, "Number of plants (<= 7)");
    add_value(app, "--seed", gen.seed, "Generator seed");
    add_double(app, "--signature-strength", gen.plant_signature_strength, "Per-plant distribution shift");
    add_double(app, "--hard-negative-fraction", gen.hard_negative_fraction, "Intact tubes with glass above 120 C");
    add_double(app, "--class-separation", gen.class_separation, "Distance between class-conditional centers");
    app->add_option("--out", out, "Output CSV")->required();
  }

  void run(const std::string& config) const {
    const auto data = hce::generate(gen);
    write_csv_artifact(out, config, [&](std::ostream& o) { hce::write_csv(o, data); });
    std::cout << "wrote " << data.size() << " records (" << data.class_count(1) << " broken) to " << out << '\n';
  }
};

json quantiles_json(const hce::Quantiles& q) {
  return {{"count", q.count}, {"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}};
}

struct DescribeCmd {
  std::string in, out;

  void add(CLI::App* app) {
    app->add_option("--in", in, "Dataset CSV")->required();
    app->add_option("--out", out, "Summary JSON")->required();
  }

  void run(const std::string& config) const {
    const auto data = load(in);
    const auto summary = hce::describe(data);
    json vars = json::object();
    for (const auto& v : summary.variables) {
      json by_class = json::object(), by_plant = json::object();
      for (const auto& [k, q] : v.by_class) by_class[std::to_string(k)] = quantiles_json(q);
      for (const auto& [k, q] : v.by_plant) by_plant[std::to_string(k)] = quantiles_json(q);
      vars[v.name] = {{"overall", quantiles_json(v.overall)}, {"by_class", by_class}, {"by_plant", by_plant}};
    }
    json counts = {{"records", data.size()}, {"broken", data.class_count(1)}, {"intact", data.class_count(0)}};
    write_json(out, {{"run_config", config}, {"counts", counts}, {"variables", vars}});
    std::cout << "described " << data.size() << " records into " << out << '\n';
  }
};

struct FeaturesCmd {
  std::string in, out, manifest;
  double threshold = 0.98;
  FeatureOpts features;

  void add(CLI::App* app) {
    app->add_option("--in", in, "Dataset CSV")->required();
    app->add_option("--out", out, "Engineered CSV")->required();
    app->add_option("--manifest", manifest, "Feature manifest JSON")->required();
    add_double(app, "--threshold", threshold, "Correlation screen threshold");
    features.add(app);
  }

  void run(const std::string& config) const {
    const auto data = load(in);
    const auto options = features.resolve();
    write_csv_artifact(out, config, [&](std::ostream& o) { hce::write_csv(o, data, hce::engineered_csv_columns(options)); });
    const auto screen = hce::correlation_filter(hce::candidate_table(data, options), threshold);
    json pairs = json::array();
    for (const auto& p : screen.dropped_pairs) pairs.push_back({{"kept", p.kept}, {"dropped", p.dropped}, {"r", p.correlation}});
    hce::FeatureManifest m;
    m.options = options;
    write_json(manifest, {{"run_config", config},
                          {"manifest", m.to_json()},
                          {"correlation_screen",
                           {{"threshold", threshold},
                            {"kept", screen.kept},
                            {"dropped_pairs", pairs},
                            {"constant_features", screen.constant_features}}}});
    std::cout << "engineered " << data.size() << " records; screen flagged " << pairs.size() << " pairs\n";
  }
};

struct SplitCmd {
  std::string in, train_out, test_out, stratify = "broken";
  double fraction = 0.8;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--in", in, "Dataset CSV")->required();
    app->add_option("--train-out", train_out, "Training CSV")->required();
    app->add_option("--test-out", test_out, "Test CSV")->required();
    add_double(app, "--train-fraction", fraction, "Training share");
    add_value(app, "--seed", seed, "Split seed");
    add_value(app, "--stratify", stratify, "none, broken, plant")->check(CLI::IsMember({"none", "broken", "plant"}));
  }

  void run(const std::string& config) const {
    const auto data = load(in);
    hce::SplitSpec spec;
    spec.train_fraction = fraction;
    spec.seed = seed;
    spec.stratify_on = stratify == "none" ? hce::Stratify::None : stratify == "plant" ? hce::Stratify::Plant : hce::Stratify::Broken;
    const auto parts = hce::split(data, spec);
    write_csv_artifact(train_out, config, [&](std::ostream& o) { hce::write_csv(o, parts.train); });
    write_csv_artifact(test_out, config, [&](std::ostream& o) { hce::write_csv(o, parts.test); });
    std::cout << "train " << parts.train.size() << ", test " << parts.test.size() << '\n';
  }
};

struct TrainCommon {
  std::string train, out, trace;
  FeatureOpts features;

  void add(CLI::App* app, bool with_trace) {
    app->add_option("--train", train, "Training CSV")->required();
    app->add_option("--out", out, "Model JSON")->required();
    if (with_trace) app->add_option("--trace", trace, "Training trace CSV");
    features.add(app);
  }

  hce::FeatureManifest manifest() const {
    hce::FeatureManifest m;
    m.options = features.resolve();
    return m;
  }
};

struct TrainForestCmd {
  TrainCommon common;
  ForestOpts forest;

  void add(CLI::App* app) {
    common.add(app, false);
    forest.add(app);
  }

  void run(const std::string& config) const {
    const auto m = common.manifest();
    const auto table = hce::engineer(load(common.train), m.options);
    const auto model = hce::fit_forest(table, forest.resolve());
    write_json(common.out, model_envelope("forest", config, m, hce::to_json(model)));
    std::cout << "trained forest of " << model.trees().size() << " trees\n";
  }
};

struct TrainVotingForestCmd {
  TrainCommon common;
  ForestOpts forest;
  int t = 8;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    common.add(app, false);
    forest.add(app);
    add_value(app, "--t", t, "Number of majority partitions");
    add_value(app, "--seed", seed, "Partition seed");
  }

  void run(const std::string& config) const {
    const auto m = common.manifest();
    const auto table = hce::engineer(load(common.train), m.options);
    const auto fitted = hce::fit_voting_forest(table, t, forest.resolve(), seed);
    json members = json::array();
    for (const auto& member : fitted.model.members()) members.push_back(hce::to_json(member));
    write_json(common.out, model_envelope("voting-forest", config, m,
                                          {{"tie_class", 0}, {"plan", fitted.plan.to_json()}, {"members", members}}));
    std::cout << "trained " << members.size() << " subset forests\n";
  }
};

struct TrainBoostCmd {
  TrainCommon common;
  BoostOpts boost;

  void add(CLI::App* app) {
    common.add(app, true);
    boost.add(app);
  }

  void run(const std::string& config) const {
    const auto m = common.manifest();
    const auto table = hce::engineer(load(common.train), m.options);
    std::vector<hce::BoostTraceRow> trace;
    const auto model = hce::fit_boost(table, boost.resolve(), &trace);
    write_json(common.out, model_envelope("boost", config, m, hce::to_json(model)));
    if (!common.trace.empty()) {
      write_csv_artifact(common.trace, config, [&](std::ostream& o) { hce::write_boost_trace(o, trace); });
    }
    std::cout << "trained " << model.trees().size() << " boosting iterations\n";
  }
};

struct TrainVotingBoostCmd {
  TrainCommon common;
  BoostOpts boost;
  int members = 50;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    common.add(app, false);
    boost.add(app);
    add_value(app, "--members", members, "Ensemble members");
    add_value(app, "--seed", seed, "Under-sampling seed");
  }

  void run(const std::string& config) const {
    const auto m = common.manifest();
    const auto table = hce::engineer(load(common.train), m.options);
    const auto model = hce::fit_voting_boost(table, members, boost.resolve(), seed);
    json js = json::array();
    for (const auto& member : model.members()) js.push_back(hce::to_json(member));
    write_json(common.out, model_envelope("voting-boost", config, m, {{"tie_class", 0}, {"members", js}}));
    std::cout << "trained " << js.size() << " boosting members\n";
  }
};

struct TrainDrnCmd {
  TrainCommon common;
  DrnOpts drn;

  void add(CLI::App* app) {
    common.add(app, true);
    drn.add(app, true);
  }

  void run(const std::string& config) const {
    auto m = common.manifest();
    const auto table = hce::engineer(load(common.train), m.options);
    const auto recipe = drn.resolve();
    auto trained = hce::train_drn(table, recipe);
    for (const auto& w : trained.normalizer.warnings()) std::cerr << "hcefd: " << w << '\n';
    m.normalizer = trained.normalizer;
    json model = trained.net.to_json();
    model["recipe"] = hce::to_json(recipe);
    model["parameter_count"] = trained.net.parameter_count();
    model["reference_parameter_count"] = hce::NetSpec::kReferenceParameterCount;
    write_json(common.out, model_envelope("drn", config, m, model));
    if (!common.trace.empty()) {
      write_csv_artifact(common.trace, config, [&](std::ostream& o) { hce::write_train_trace(o, trained.trace); });
    }
    std::cout << "trained DRN with " << trained.net.parameter_count() << " parameters (reference "
              << hce::NetSpec::kReferenceParameterCount << ")\n";
  }
};

/// A loaded model, ready to score an engineered table.
struct LoadedModel {
  std::string kind;
  hce::FeatureManifest manifest;
  hce::TrainedClassifier classifier;
  std::shared_ptr<hce::TrainedNet> net;
};

LoadedModel load_model_json(const std::string& path, const json& j);

LoadedModel load_model(const std::string& path) {
  const auto j = read_json(path);
  try {
    return load_model_json(path, j);
  } catch (const json::exception& e) {
    throw hce::DataError("'" + path + "' does not match the model schema: " + e.what());
  }
}

LoadedModel load_model_json(const std::string& path, const json& j) {
  if (!j.is_object() || j.value("format", "") != kModelFormat) throw hce::DataError("'" + path + "' is not an hcefd model");
  LoadedModel lm;
  lm.kind = j.at("kind").get<std::string>();
  lm.manifest = hce::FeatureManifest::from_json(j.at("manifest"));
  const auto& mj = j.at("model");
  const auto fp = hce::fingerprint(mj);
  if (lm.kind == "forest") {
    auto model = std::make_shared<hce::ForestModel>(hce::forest_from_json(mj));
    lm.classifier = {[model](const Eigen::MatrixXd& X) { return model->predict(X); }, {}, fp};
  } else if (lm.kind == "boost") {
    auto model = std::make_shared<hce::BoostModel>(hce::boost_from_json(mj));
    lm.classifier = {[model](const Eigen::MatrixXd& X) { return model->predict(X); }, {}, fp};
  } else if (lm.kind == "voting-forest") {
    std::vector<hce::ForestModel> members;
    for (const auto& m : mj.at("members")) members.push_back(hce::forest_from_json(m));
    auto model = std::make_shared<hce::VotingForestModel>(std::move(members), mj.at("tie_class").get<int>());
    lm.classifier = {[model](const Eigen::MatrixXd& X) { return model->predict(X); }, {}, fp};
  } else if (lm.kind == "voting-boost") {
    std::vector<hce::BoostModel> members;
    for (const auto& m : mj.at("members")) members.push_back(hce::boost_from_json(m));
    auto model = std::make_shared<hce::VotingBoostModel>(std::move(members), mj.at("tie_class").get<int>());
    lm.classifier = {[model](const Eigen::MatrixXd& X) { return model->predict(X); }, {}, fp};
  } else if (lm.kind == "drn") {
    if (!lm.manifest.normalizer) throw hce::DataError("DRN model lacks its normalizer");
    lm.net = std::make_shared<hce::TrainedNet>(
        hce::TrainedNet{hce::ResidualNet::from_json(mj), *lm.manifest.normalizer, {}});
    auto net = lm.net;
    lm.classifier = {[net](const Eigen::MatrixXd& X) { return net->net.predict_glass(net->normalizer.apply(X)); },
                     [net](const Eigen::MatrixXd& X) { return net->net.predict_plant(net->normalizer.apply(X)); }, fp};
  } else {
    throw hce::DataError("unknown model kind '" + lm.kind + "'");
  }
  return lm;
}

struct EvalCmd {
  std::string model, test, out, text;

  void add(CLI::App* app) {
    app->add_option("--model", model, "Model JSON")->required();
    app->add_option("--test", test, "Test CSV")->required();
    app->add_option("--out", out, "Report JSON")->required();
    app->add_option("--text", text, "Aligned text table");
  }

  void run(const std::string& config) const {
    const auto lm = load_model(model);
    const auto table = hce::engineer(load(test), lm.manifest.options);
    auto report = hce::evaluate_glass(lm.kind, lm.classifier, table, {{"model_path", model}, {"test_path", test}});
    json j = {{"run_config", config}, {"report", report.to_json()}};
    std::vector<hce::TableRow> rows{{lm.kind, &report, nullptr}};
    std::string table_text = hce::format_table(rows);
    if (lm.net) {
      const auto plant = hce::run_dual_eval(*lm.net, table);
      j["plant_report"] = plant.to_json();
      table_text += "plant head macro F1 " + std::to_string(hce::percent(plant.macro_f1)) + "\n";
    }
    write_json(out, j);
    if (!text.empty()) write_bytes(text, table_text);
    std::cout << table_text;
  }
};

struct GridSearchCmd {
  std::string train, out, table;
  std::string estimators = "50:1000:20";
  std::string depths = "10:100:10";
  int n_configs = 50;
  int k = 3;
  std::uint64_t seed = 0;
  ForestOpts base;
  FeatureOpts features;

  void add(CLI::App* app) {
    app->add_option("--train", train, "Training CSV")->required();
    app->add_option("--out", out, "Result JSON")->required();
    app->add_option("--table", table, "CV table CSV");
    add_value(app, "--estimators", estimators, "Tree counts: list or start:stop:step");
    add_value(app, "--depths", depths, "Depth limits: list or start:stop:step");
    add_value(app, "--n-configs", n_configs, "Configurations sampled");
    add_value(app, "--k", k, "Cross-validation folds");
    add_value(app, "--seed", seed, "Search seed");
    base.add(app);
    features.add(app);
  }

  void run(const std::string& config) const {
    const auto data = hce::engineer(load(train), features.resolve());
    auto grid = hce::ForestGrid::reference();
    grid.n_estimators = parse_int_list(estimators, "estimators");
    grid.max_depth.clear();
    for (int d : parse_int_list(depths, "depths")) grid.max_depth.emplace_back(d);
    if (n_configs < 1) throw hce::ConfigError("n-configs must be >= 1");
    hce::GridSearchOptions o;
    o.n_configs = static_cast<std::size_t>(n_configs);
    o.k = k;
    o.seed = seed;
    o.base = base.resolve();
    const auto result = hce::random_grid_search(data, grid, o);
    std::ostringstream csv;
    hce::write_cv_table(csv, result);
    write_json(out, {{"run_config", config},
                     {"best", hce::to_json(result.best)},
                     {"best_mean_f1_broken", result.table[result.best_row].mean_score},
                     {"cv_table", csv.str()}});
    if (!table.empty()) write_csv_artifact(table, config, [&](std::ostream& o2) { hce::write_cv_table(o2, result); });
    std::cout << "best mean F1 " << result.table[result.best_row].mean_score << '\n';
  }
};

struct BalanceTestCmd {
  std::string train, out, curve;
  int p_min = 2, p_max = 50, p_step = 1;
  std::uint64_t seed = 0;
  ForestOpts forest;
  FeatureOpts features;

  void add(CLI::App* app) {
    app->add_option("--train", train, "Training CSV (the full training split)")->required();
    app->add_option("--out", out, "Curve JSON")->required();
    app->add_option("--curve", curve, "Curve CSV");
    add_value(app, "--p-min", p_min, "Smallest broken percentage");
    add_value(app, "--p-max", p_max, "Largest broken percentage");
    add_value(app, "--p-step", p_step, "Percentage step");
    add_value(app, "--seed", seed, "Subsampling seed");
    forest.add(app);
    features.add(app);
  }

  void run(const std::string& config) const {
    if (p_step < 1) throw hce::ConfigError("p-step must be >= 1");
    std::vector<int> ps;
    for (int p = p_min; p <= p_max; p += p_step) ps.push_back(p);
    for (int p : ps) hce::BalanceSpec{p, 0, 0.8}.check();
    const auto result = hce::run_balance_test(load(train), features.resolve(), hce::forest_factory(forest.resolve()), ps, seed);
    json points = json::array();
    for (const auto& pt : result.points) {
      points.push_back({{"p", pt.p},
                        {"train_rows", pt.train_rows},
                        {"test_rows", pt.test_rows},
                        {"train_broken_fraction", pt.achieved_train_fraction},
                        {"test_broken_fraction", pt.achieved_test_fraction},
                        {"shortfalls", pt.shortfalls},
                        {"report", pt.report.to_json()}});
    }
    json skipped = json::array();
    for (const auto& [p, why] : result.skipped) skipped.push_back({{"p", p}, {"reason", why}});
    write_json(out, {{"run_config", config}, {"points", points}, {"skipped", skipped}, {"spearman_recall", result.spearman_recall}});
    if (!curve.empty()) write_csv_artifact(curve, config, [&](std::ostream& o) { hce::write_balance_curve(o, result); });
    std::cout << result.points.size() << " points, Spearman(recall, p) = " << result.spearman_recall << '\n';
  }
};

struct ComparisonCmd {
  std::string train, test, out, text;
  ForestOpts forest;
  BoostOpts boost;
  DrnOpts drn;
  FeatureOpts features;
  int t = 8;
  int members = 50;
  std::uint64_t seed = 0;
  bool advanced = false;

  void add(CLI::App* app, bool is_advanced) {
    advanced = is_advanced;
    app->add_option("--train", train, "Training CSV")->required();
    app->add_option("--test", test, "Test CSV")->required();
    app->add_option("--out", out, "Report bundle JSON")->required();
    app->add_option("--text", text, "Aligned text table");
    forest.add(app);
    boost.add(app);
    drn.beta2 = 1.0;
    drn.add(app, false);
    features.add(app);
    if (advanced) {
      add_value(app, "--t", t, "V-RF partitions");
      add_value(app, "--members", members, "B-HGBC members");
      add_value(app, "--seed", seed, "Ensemble seed");
    }
  }

  hce::ExperimentConfig experiment() const {
    hce::ExperimentConfig c;
    c.forest = forest.resolve();
    c.boost = boost.resolve();
    c.drn = drn.resolve();
    c.dsd = drn.schedule();
    c.dual_beta1 = drn.beta1;
    c.dual_beta2 = drn.beta2;
    c.voting_forest_t = t;
    c.voting_boost_members = members;
    c.seed = seed;
    return c;
  }

  void run(const std::string& config) const {
    const auto opts = features.resolve();
    const auto tr = hce::engineer(load(train), opts);
    const auto te = hce::engineer(load(test), opts);
    const auto c = experiment();
    const auto reports = advanced ? hce::run_advanced_test(tr, te, c) : hce::run_standard_test(tr, te, c);
    json js = json::array();
    for (const auto& r : reports) js.push_back({{"name", r.name}, {"baseline", r.baseline}, {"report", r.report.to_json()}});
    const auto table = hce::format_reports(reports);
    write_json(out, {{"run_config", config}, {"experiment", hce::to_json(c)}, {"reports", js}, {"table", table}});
    if (!text.empty()) write_bytes(text, table);
    std::cout << table;
  }
};

struct AblationCmd {
  std::string train, test, out, text;
  DrnOpts drn;
  FeatureOpts features;

  void add(CLI::App* app) {
    app->add_option("--train", train, "Training CSV")->required();
    app->add_option("--test", test, "Test CSV")->required();
    app->add_option("--out", out, "Ablation JSON")->required();
    app->add_option("--text", text, "Aligned text table");
    drn.add(app, false);
    features.add(app);
  }

  void run(const std::string& config) const {
    const auto opts = features.resolve();
    const auto tr = hce::engineer(load(train), opts);
    const auto te = hce::engineer(load(test), opts);
    auto reference = drn.resolve();
    reference.dsd = drn.schedule();
    const auto result = hce::run_ablation(tr, te, reference);
    json rows = json::array();
    for (const auto& r : result.rows) {
      rows.push_back({{"parameter", r.parameter},
                      {"value", r.value},
                      {"recall_delta", r.recall_delta},
                      {"f1_delta", r.f1_delta},
                      {"report", r.report.to_json()}});
    }
    const auto table = hce::format_ablation(result);
    write_json(out, {{"run_config", config}, {"reference", result.reference.to_json()}, {"rows", rows}, {"table", table}});
    if (!text.empty()) write_bytes(text, table);
    std::cout << table;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Broken glass-envelope detection: data generation, training, and experiments"};
  app.set_config("--config", "", "INI file with option values; command-line flags override it");
  app.require_subcommand(1);

  GenerateCmd generate;
  DescribeCmd describe;
  FeaturesCmd features;
  SplitCmd split;
  TrainForestCmd train_forest;
  TrainVotingForestCmd train_voting_forest;
  TrainBoostCmd train_boost;
  TrainVotingBoostCmd train_voting_boost;
  TrainDrnCmd train_drn;
  EvalCmd eval;
  GridSearchCmd grid;
  BalanceTestCmd balance;
  ComparisonCmd standard, advanced;
  AblationCmd ablation;

  std::vector<std::pair<CLI::App*, std::function<void(const std::string&)>>> commands;
  auto sub = [&](CLI::App* parent, const std::string& name, const std::string& help, auto& cmd, auto&& add) {
    auto* s = parent->add_subcommand(name, help);
    s->configurable();
    add(s);
    commands.emplace_back(s, [&cmd](const std::string& cfg) { cmd.run(cfg); });
    return s;
  };
  sub(&app, "generate", "Write a synthetic dataset CSV", generate, [&](CLI::App* s) { generate.add(s); });
  sub(&app, "describe", "Per-class and per-plant quartiles", describe, [&](CLI::App* s) { describe.add(s); });
  sub(&app, "features", "Engineered CSV plus feature manifest", features, [&](CLI::App* s) { features.add(s); });
  sub(&app, "split", "Train/test split", split, [&](CLI::App* s) { split.add(s); });
  auto* train = app.add_subcommand("train", "Train a model");
  train->configurable();
  train->require_subcommand(1);
  sub(train, "forest", "Random forest", train_forest, [&](CLI::App* s) { train_forest.add(s); });
  sub(train, "voting-forest", "Forests over partitioned subsets", train_voting_forest,
      [&](CLI::App* s) { train_voting_forest.add(s); });
  sub(train, "boost", "Histogram gradient boosting", train_boost, [&](CLI::App* s) { train_boost.add(s); });
  sub(train, "voting-boost", "Boosting members on under-samples", train_voting_boost,
      [&](CLI::App* s) { train_voting_boost.add(s); });
  sub(train, "drn", "Dual-head residual network", train_drn, [&](CLI::App* s) { train_drn.add(s); });
  sub(&app, "eval", "Evaluate a model on a test CSV", eval, [&](CLI::App* s) { eval.add(s); });
  sub(&app, "grid-search", "Randomized forest grid search", grid, [&](CLI::App* s) { grid.add(s); });
  sub(&app, "balance-test", "Recall versus broken percentage", balance, [&](CLI::App* s) { balance.add(s); });
  sub(&app, "standard-test", "DRN, RF and HGBC on a fixed split", standard, [&](CLI::App* s) { standard.add(s, false); });
  sub(&app, "advanced-test", "Imbalance-mitigated variants against baselines", advanced,
      [&](CLI::App* s) { advanced.add(s, true); });
  sub(&app, "ablation", "DRN parameter ablation", ablation, [&](CLI::App* s) { ablation.add(s); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const auto config = run_config_text(app);
    for (const auto& [s, run] : commands) {
      if (s->parsed()) {
        run(config);
        return kExitOk;
      }
    }
    std::cerr << "hcefd: no command selected\n";
    return kExitConfig;
  } catch (const hce::ConfigError& e) {
    std::cerr << "hcefd: configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const hce::DataError& e) {
    std::cerr << "hcefd: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "hcefd: failure: " << e.what() << '\n';
    return kExitRuntime;
  }
}
