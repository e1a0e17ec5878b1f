#pragma once

// Engineered feature set, categorical codes, correlation screening and
// per-feature normalization.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hce/dataset.hpp"

namespace hce {

namespace feature_names {
inline constexpr const char* kTHtf = "T_HTF[C]";
inline constexpr const char* kTGlass = "T_glass[C]";
inline constexpr const char* kLoc = "hce_LocInLoop";
inline constexpr const char* kPh2 = "PH2[mBar]";
inline constexpr const char* kLoss = "Loss[W/m]";
inline constexpr const char* kEffRef = "Eff_ref";
inline constexpr const char* kTGlassSup = "T_glass Sup_Limit";
inline constexpr const char* kPos36 = "pos_36";
inline constexpr const char* kNormalizedTGlass = "normalized_tglass";
inline constexpr const char* kColumn = "hce_column";
inline constexpr const char* kSubfieldCode = "hce_number_code";
inline constexpr const char* kStructureIn = "structure_in";
inline constexpr const char* kEff = "Eff";
inline constexpr const char* kTGlassInf = "T_glass Inf_Limit";
}  // namespace feature_names

/// The twelve model inputs, in canonical order.
inline const std::vector<std::string>& engineered_feature_names() {
  using namespace feature_names;
  static const std::vector<std::string> names = {kTHtf, kTGlass, kLoc, kPh2, kLoss, kEffRef,
                                                 kTGlassSup, kPos36, kNormalizedTGlass, kColumn,
                                                 kSubfieldCode, kStructureIn};
  return names;
}

/// Engineered set plus the two variables the correlation screen removes.
inline const std::vector<std::string>& candidate_feature_names() {
  static const std::vector<std::string> names = [] {
    auto n = engineered_feature_names();
    n.push_back(feature_names::kEff);
    n.push_back(feature_names::kTGlassInf);
    return n;
  }();
  return names;
}

/// Position within a 36-tube stage: loc mod 36, with 0 mapped to 36.
inline int pos36(int hce_loc) {
  if (hce_loc < schema::kLocMin || hce_loc > schema::kLocMax) {
    throw DataError("hce_loc " + std::to_string(hce_loc) + " outside [1, 144]");
  }
  const int r = hce_loc % schema::kStageLength;
  return r == 0 ? schema::kStageLength : r;
}

enum class TGlassOrder { SupMinusMeasured, MeasuredMinusSup };

inline double normalized_tglass(double t_glass_sup, double t_glass, TGlassOrder order = TGlassOrder::SupMinusMeasured) {
  return order == TGlassOrder::SupMinusMeasured ? t_glass_sup - t_glass : t_glass - t_glass_sup;
}

/// Subfield letters A..H map to codes 0..7; anything else is rejected.
class CategoryEncoder {
 public:
  static constexpr char kFirst = schema::kSubfieldMin;
  static constexpr char kLast = schema::kSubfieldMax;

  int encode(char category) const {
    if (category < kFirst || category > kLast) {
      throw DataError(std::string("unseen subfield category '") + category + "'");
    }
    return category - kFirst;
  }
  char decode(int code) const {
    if (code < 0 || code > kLast - kFirst) throw DataError("subfield code " + std::to_string(code) + " out of range");
    return static_cast<char>(kFirst + code);
  }

  nlohmann::json to_json() const {
    nlohmann::json map = nlohmann::json::object();
    for (char c = kFirst; c <= kLast; ++c) map[std::string(1, c)] = c - kFirst;
    return map;
  }
};

/// Stage positions (1..36) carrying a support or rotation structure.
struct PlantLayout {
  std::set<int> support_positions = {1, 12, 24, 36};

  bool has_support(int position) const { return support_positions.count(position) > 0; }
};

/// Layout registry: per-plant layouts with an optional fallback.
class PlantLayouts {
 public:
  PlantLayouts() : fallback_(PlantLayout{}) {}
  static PlantLayouts none() {
    PlantLayouts l;
    l.fallback_.reset();
    return l;
  }

  void set_default(PlantLayout layout) { fallback_ = std::move(layout); }
  void set(int plant, PlantLayout layout) { per_plant_[plant] = std::move(layout); }

  const PlantLayout& for_plant(int plant) const {
    if (auto it = per_plant_.find(plant); it != per_plant_.end()) return it->second;
    if (fallback_) return *fallback_;
    throw ConfigError("no plant layout for plant " + std::to_string(plant));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["default"] = fallback_ ? nlohmann::json(fallback_->support_positions) : nlohmann::json(nullptr);
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [p, l] : per_plant_) per[std::to_string(p)] = l.support_positions;
    j["per_plant"] = per;
    return j;
  }

 private:
  std::optional<PlantLayout> fallback_;
  std::map<int, PlantLayout> per_plant_;
};

inline int structure_in(const HceRecord& record, const PlantLayouts& layouts) {
  return layouts.for_plant(record.plant).has_support(pos36(record.hce_loc)) ? 1 : 0;
}

struct FeatureOptions {
  PlantLayouts layouts;
  TGlassOrder tglass_order = TGlassOrder::SupMinusMeasured;
};

/// Values of the candidate features for one record, in candidate order.
inline std::vector<double> candidate_values(const HceRecord& r, const FeatureOptions& options = {}) {
  static const CategoryEncoder encoder;
  return {r.t_htf,
          r.t_glass,
          static_cast<double>(r.hce_loc),
          r.ph2,
          r.loss,
          r.eff_ref,
          static_cast<double>(r.t_glass_sup),
          static_cast<double>(pos36(r.hce_loc)),
          normalized_tglass(r.t_glass_sup, r.t_glass, options.tglass_order),
          static_cast<double>(r.hce_column),
          static_cast<double>(encoder.encode(r.hce_subfield)),
          static_cast<double>(structure_in(r, options.layouts)),
          r.eff,
          static_cast<double>(r.t_glass_inf)};
}

/// Trailing CSV columns for an engineered export (see schema::kEngineeredColumns).
inline ExtraColumns engineered_csv_columns(FeatureOptions options = {}) {
  ExtraColumns extra;
  for (auto name : schema::kEngineeredColumns) extra.names.emplace_back(name);
  extra.values = [options = std::move(options)](const HceRecord& r) {
    static const CategoryEncoder encoder;
    return std::vector<double>{static_cast<double>(pos36(r.hce_loc)),
                               normalized_tglass(r.t_glass_sup, r.t_glass, options.tglass_order),
                               static_cast<double>(encoder.encode(r.hce_subfield)),
                               static_cast<double>(structure_in(r, options.layouts))};
  };
  return extra;
}

namespace detail {
inline FeatureTable build_table(const Dataset& data, const FeatureOptions& options, std::size_t width) {
  FeatureTable t;
  const auto& names = candidate_feature_names();
  t.names.assign(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(width));
  t.X.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(width));
  t.broken.reserve(data.size());
  t.plant.reserve(data.size());
  t.ids.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data[i];
    const auto values = candidate_values(r, options);
    for (std::size_t c = 0; c < width; ++c) t.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = values[c];
    t.broken.push_back(r.broken);
    t.plant.push_back(r.plant);
    t.ids.push_back(r.id);
  }
  return t;
}
}  // namespace detail

/// The twelve-column model input table.
inline FeatureTable engineer(const Dataset& data, const FeatureOptions& options = {}) {
  return detail::build_table(data, options, engineered_feature_names().size());
}

/// Engineered table plus Eff and T_glass Inf_Limit, for correlation screening.
inline FeatureTable candidate_table(const Dataset& data, const FeatureOptions& options = {}) {
  return detail::build_table(data, options, candidate_feature_names().size());
}

// ---------------------------------------------------------------------------
// Correlation screen

struct CorrelatedPair {
  std::string kept;
  std::string dropped;
  double correlation = 0;
};

struct CorrelationResult {
  std::vector<std::string> kept;
  std::vector<CorrelatedPair> dropped_pairs;
  std::vector<std::string> constant_features;
  Eigen::MatrixXd correlation;  // NaN rows/cols for constant features
};

/// Pearson correlation of two equally sized columns; NaN when either is constant.
inline double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  const double ma = a.mean();
  const double mb = b.mean();
  const Eigen::ArrayXd da = a.array() - ma;
  const Eigen::ArrayXd db = b.array() - mb;
  const double saa = (da * da).sum();
  const double sbb = (db * db).sum();
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp((da * db).sum() / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Flags pairs with |r| > threshold and drops the later member in column order.
/// Constant columns are reported and kept out of the screen.
inline CorrelationResult correlation_filter(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                                            double threshold = 0.98) {
  const auto d = static_cast<std::size_t>(X.cols());
  if (names.size() != d) throw ConfigError("feature names do not match column count");
  if (d < 2) throw DataError("correlation screen needs at least 2 features");
  if (X.rows() < 3) throw DataError("correlation screen needs at least 3 records");

  CorrelationResult out;
  out.correlation = Eigen::MatrixXd::Constant(X.cols(), X.cols(), std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> constant(d, false);
  for (std::size_t i = 0; i < d; ++i) {
    const auto col = X.col(static_cast<Eigen::Index>(i));
    constant[i] = (col.array() == col(0)).all();
    if (constant[i]) out.constant_features.push_back(names[i]);
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (constant[i]) continue;
    for (std::size_t j = i; j < d; ++j) {
      if (constant[j]) continue;
      const double r = i == j ? 1.0 : pearson(X.col(static_cast<Eigen::Index>(i)), X.col(static_cast<Eigen::Index>(j)));
      out.correlation(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r;
      out.correlation(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = r;
    }
  }
  std::vector<bool> dropped(d, false);
  for (std::size_t i = 0; i < d; ++i) {
    if (constant[i] || dropped[i]) continue;
    for (std::size_t j = i + 1; j < d; ++j) {
      if (constant[j] || dropped[j]) continue;
      const double r = out.correlation(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (std::abs(r) > threshold) {
        dropped[j] = true;
        out.dropped_pairs.push_back({names[i], names[j], r});
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (!dropped[i]) out.kept.push_back(names[i]);
  }
  return out;
}

inline CorrelationResult correlation_filter(const FeatureTable& table, double threshold = 0.98) {
  return correlation_filter(table.X, table.names, threshold);
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormalizerKind { ZScore, MinMax };

/// Per-feature affine transform x' = (x - center) / scale. Only `fit` produces
/// one from data, so test statistics never leak into the transform.
class Normalizer {
 public:
  static Normalizer fit(const Eigen::MatrixXd& train, const std::vector<std::string>& names,
                        NormalizerKind kind = NormalizerKind::ZScore) {
    if (train.rows() == 0) throw DataError("cannot fit a normalizer on an empty training set");
    Normalizer n;
    n.kind_ = kind;
    n.names_ = names;
    n.center_.resize(train.cols());
    n.scale_.resize(train.cols());
    for (Eigen::Index c = 0; c < train.cols(); ++c) {
      const auto col = train.col(c);
      double center, scale;
      if (kind == NormalizerKind::ZScore) {
        center = col.mean();
        scale = std::sqrt((col.array() - center).square().mean());
      } else {
        center = col.minCoeff();
        scale = col.maxCoeff() - center;
      }
      if (!(scale > 0.0)) {
        n.warnings_.push_back("feature '" + (static_cast<std::size_t>(c) < names.size() ? names[static_cast<std::size_t>(c)] : std::to_string(c)) +
                              "' is constant on the training set; scale set to 1");
        scale = 1.0;
      }
      n.center_(c) = center;
      n.scale_(c) = scale;
    }
    return n;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    check_width(X);
    return (X.rowwise() - center_.transpose()).array().rowwise() / scale_.transpose().array();
  }
  Eigen::MatrixXd invert(const Eigen::MatrixXd& Z) const {
    check_width(Z);
    return (Z.array().rowwise() * scale_.transpose().array()).matrix().rowwise() + center_.transpose();
  }

  const Eigen::VectorXd& center() const { return center_; }
  const Eigen::VectorXd& scale() const { return scale_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  NormalizerKind kind() const { return kind_; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = kind_ == NormalizerKind::ZScore ? "zscore" : "minmax";
    j["names"] = names_;
    j["center"] = std::vector<double>(center_.data(), center_.data() + center_.size());
    j["scale"] = std::vector<double>(scale_.data(), scale_.data() + scale_.size());
    return j;
  }
  static Normalizer from_json(const nlohmann::json& j) {
    Normalizer n;
    n.kind_ = j.at("kind").get<std::string>() == "minmax" ? NormalizerKind::MinMax : NormalizerKind::ZScore;
    n.names_ = j.at("names").get<std::vector<std::string>>();
    const auto c = j.at("center").get<std::vector<double>>();
    const auto s = j.at("scale").get<std::vector<double>>();
    if (c.size() != s.size()) throw DataError("normalizer center/scale length mismatch");
    n.center_ = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    n.scale_ = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    return n;
  }

 private:
  Normalizer() = default;
  void check_width(const Eigen::MatrixXd& X) const {
    if (X.cols() != center_.size()) {
      throw DataError("normalizer fitted on " + std::to_string(center_.size()) + " features, got " +
                      std::to_string(X.cols()));
    }
  }

  NormalizerKind kind_ = NormalizerKind::ZScore;
  std::vector<std::string> names_;
  Eigen::VectorXd center_;
  Eigen::VectorXd scale_;
  std::vector<std::string> warnings_;
};

/// Everything needed to rebuild model inputs at inference time.
struct FeatureManifest {
  std::vector<std::string> names = engineered_feature_names();
  FeatureOptions options;
  std::optional<Normalizer> normalizer;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["names"] = names;
    j["subfield_codes"] = CategoryEncoder{}.to_json();
    j["layouts"] = options.layouts.to_json();
    j["tglass_order"] = options.tglass_order == TGlassOrder::SupMinusMeasured ? "sup_minus_measured" : "measured_minus_sup";
    j["normalizer"] = normalizer ? normalizer->to_json() : nlohmann::json(nullptr);
    return j;
  }

  static FeatureManifest from_json(const nlohmann::json& j) {
    FeatureManifest m;
    m.names = j.at("names").get<std::vector<std::string>>();
    if (m.names != engineered_feature_names()) throw DataError("feature manifest names do not match this build");
    const auto& layouts = j.at("layouts");
    if (layouts.at("default").is_null()) {
      m.options.layouts = PlantLayouts::none();
    } else {
      m.options.layouts.set_default(PlantLayout{layouts.at("default").get<std::set<int>>()});
    }
    for (const auto& [plant, positions] : layouts.at("per_plant").items()) {
      m.options.layouts.set(std::stoi(plant), PlantLayout{positions.get<std::set<int>>()});
    }
    m.options.tglass_order = j.at("tglass_order").get<std::string>() == "measured_minus_sup"
                                 ? TGlassOrder::MeasuredMinusSup
                                 : TGlassOrder::SupMinusMeasured;
    if (!j.at("normalizer").is_null()) m.normalizer = Normalizer::from_json(j.at("normalizer"));
    return m;
  }
};

}  // namespace hce
