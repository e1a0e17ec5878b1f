#pragma once

// Synthetic ATSet-shaped data. Class-conditional truncated normals tuned to the
// published marginal facts: fluid near 340 C, broken glass 60-120 C while
// intact glass sits under 60 C (with a few hot intact tubes), saturated H2
// pressure reported as 1000 mbar, and lower efficiency for broken tubes.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hce/dataset.hpp"

namespace hce {

struct GenConfig {
  std::size_t n_records = 10000;
  double broken_fraction = 3676.0 / 155509.0;  // ~0.0236
  int n_plants = 7;
  std::uint64_t seed = 0;
  /// 0: plants share every marginal; >= 1: plants are identifiable.
  double plant_signature_strength = 1.0;
  /// Fraction of intact tubes drawn with glass hotter than 120 C.
  double hard_negative_fraction = 0.01;
  /// 0: broken centers at the edge of the intact ranges; 1: default geometry.
  double class_separation = 1.0;

  void check() const {
    if (n_records == 0) throw ConfigError("n_records must be positive");
    if (!(broken_fraction > 0.0 && broken_fraction < 1.0)) throw ConfigError("broken_fraction must lie in (0, 1)");
    if (n_plants < 1 || n_plants > schema::kMaxPlants) {
      throw ConfigError("n_plants must lie in [1, " + std::to_string(schema::kMaxPlants) + "]");
    }
    if (plant_signature_strength < 0.0) throw ConfigError("plant_signature_strength must be nonnegative");
    if (!(hard_negative_fraction >= 0.0 && hard_negative_fraction < 1.0)) {
      throw ConfigError("hard_negative_fraction must lie in [0, 1)");
    }
    if (!(class_separation >= 0.0 && class_separation <= 4.0)) throw ConfigError("class_separation must lie in [0, 4]");
  }

  std::size_t broken_count() const {
    return static_cast<std::size_t>(std::llround(broken_fraction * static_cast<double>(n_records)));
  }
};

namespace detail {

inline double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
  std::normal_distribution<double> dist(mean, sd);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double x = dist(rng);
    if (x >= lo && x <= hi) return x;
  }
  return std::clamp(mean, lo, hi);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Centered plant offset in [-0.5, 0.5] * (n_plants - 1).
inline double plant_offset(int plant, int n_plants) { return plant - 0.5 * (n_plants - 1); }

}  // namespace detail

/// Draws a dataset; a pure function of the config.
inline Dataset generate(const GenConfig& config) {
  config.check();
  using namespace schema;
  const std::size_t n_broken = config.broken_count();
  if (n_broken == 0) {
    throw ConfigError("broken_fraction " + std::to_string(config.broken_fraction) + " at n=" +
                      std::to_string(config.n_records) + " yields zero broken records");
  }
  if (n_broken >= config.n_records) throw ConfigError("broken_fraction leaves no intact records");

  Rng rng(config.seed);

  // Exact class counts; plants dealt round-robin within each class so every
  // plant carries both classes in near-equal shares.
  struct Slot {
    int broken;
    int plant;
  };
  std::vector<Slot> slots;
  slots.reserve(config.n_records);
  for (std::size_t i = 0; i < n_broken; ++i) slots.push_back({1, static_cast<int>(i % config.n_plants)});
  for (std::size_t i = 0; i < config.n_records - n_broken; ++i) {
    slots.push_back({0, static_cast<int>(i % config.n_plants)});
  }
  std::shuffle(slots.begin(), slots.end(), rng);

  const double strength = config.plant_signature_strength;
  const double band_probability = std::min(strength, 1.0);
  const double sep = config.class_separation;
  const int band_width = (kColumnMax - kColumnMin + 1) / config.n_plants;

  std::vector<HceRecord> records;
  records.reserve(config.n_records);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto [broken, plant] = slots[i];
    const double offset = detail::plant_offset(plant, config.n_plants);
    HceRecord r;
    r.id = i;
    r.plant = plant;
    r.broken = broken;

    r.hce_loc = detail::uniform_int(rng, kLocMin, kLocMax);
    r.hce_subfield = static_cast<char>('A' + detail::uniform_int(rng, 0, 7));
    if (band_width >= 1 && detail::uniform(rng, 0.0, 1.0) < band_probability) {
      const int first = kColumnMin + plant * band_width;
      r.hce_column = detail::uniform_int(rng, first, first + band_width - 1);
    } else {
      r.hce_column = detail::uniform_int(rng, kColumnMin, kColumnMax);
    }

    r.t_htf = detail::truncated_normal(rng, 340.0 + 6.0 * strength * offset, 18.0, kTHtfMin, kTHtfMax);
    r.eff_ref = std::clamp(0.97 - 0.0011 * (r.t_htf - kTHtfMin) + 0.002 * strength * offset +
                               std::normal_distribution<double>(0.0, 0.0015)(rng),
                           0.0, 1.0);

    // Expected glass temperature with air in the annulus; the two integer
    // limits sit a fixed 20 C apart around it.
    const double air_glass = 48.0 + 0.3 * (r.t_htf - kTHtfMin) + std::normal_distribution<double>(0.0, 6.0)(rng);
    r.t_glass_inf = std::clamp(static_cast<int>(std::lround(air_glass - 10.0)), kTGlassInfMin, kTGlassInfMax);
    r.t_glass_sup = r.t_glass_inf + kGlassLimitOffset;

    double degradation;
    double log_ph2;
    if (broken) {
      // sep = 0 puts the broken centers at the edge of the intact ranges; sep = 1 is the default geometry
      const double hot = 0.5 * (r.t_glass_inf + r.t_glass_sup) + 6.0;
      r.t_glass = detail::truncated_normal(rng, 60.0 + sep * (hot - 60.0), 14.0, 60.0, 120.0);
      degradation = detail::truncated_normal(rng, 0.012 + 0.058 * sep, 0.03, 0.0, 0.25);
      log_ph2 = detail::uniform(rng, -3.0 + 2.0 * sep, 2.2 + 0.8 * sep);
    } else {
      if (detail::uniform(rng, 0.0, 1.0) < config.hard_negative_fraction) {
        r.t_glass = detail::uniform(rng, 120.5, kTGlassMax);
      } else {
        r.t_glass = detail::truncated_normal(rng, 44.0, 9.0, kTGlassMin, 120.0);
      }
      degradation = detail::truncated_normal(rng, 0.012, 0.012, 0.0, 0.25);
      log_ph2 = detail::uniform(rng, -3.0, 2.2);
    }
    r.eff = std::clamp(r.eff_ref - degradation, 0.0, 1.0);
    r.loss = std::clamp(130.0 + (0.98 - r.eff) * 5000.0 + std::normal_distribution<double>(0.0, 20.0)(rng),
                        kLossMin, kLossMax);
    const double ph2 = std::pow(10.0, log_ph2);
    r.ph2 = ph2 > 100.0 ? kPh2Saturated : std::max(ph2, kPh2Min);

    records.push_back(r);
  }
  return Dataset(std::move(records));
}

// ---------------------------------------------------------------------------
// Distribution summary

struct Quantiles {
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Linear-interpolated quantile over a sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline Quantiles summarize(std::vector<double> values) {
  Quantiles q;
  if (values.empty()) return q;
  std::sort(values.begin(), values.end());
  q.count = values.size();
  q.min = values.front();
  q.max = values.back();
  q.q1 = quantile_sorted(values, 0.25);
  q.median = quantile_sorted(values, 0.5);
  q.q3 = quantile_sorted(values, 0.75);
  return q;
}

struct VariableSummary {
  std::string name;
  Quantiles overall;
  std::map<int, Quantiles> by_class;
  std::map<int, Quantiles> by_plant;
};

struct DistributionSummary {
  std::vector<VariableSummary> variables;

  const VariableSummary& at(const std::string& name) const {
    for (const auto& v : variables) {
      if (v.name == name) return v;
    }
    throw ConfigError("no variable '" + name + "' in summary");
  }
};

/// Numeric variables as (name, accessor) pairs, in CSV column order.
inline const std::vector<std::pair<std::string, double (*)(const HceRecord&)>>& numeric_variables() {
  static const std::vector<std::pair<std::string, double (*)(const HceRecord&)>> vars = {
      {"t_glass", [](const HceRecord& r) { return r.t_glass; }},
      {"loss", [](const HceRecord& r) { return r.loss; }},
      {"eff", [](const HceRecord& r) { return r.eff; }},
      {"eff_ref", [](const HceRecord& r) { return r.eff_ref; }},
      {"ph2", [](const HceRecord& r) { return r.ph2; }},
      {"t_glass_inf", [](const HceRecord& r) { return static_cast<double>(r.t_glass_inf); }},
      {"t_glass_sup", [](const HceRecord& r) { return static_cast<double>(r.t_glass_sup); }},
      {"t_htf", [](const HceRecord& r) { return r.t_htf; }},
      {"hce_loc", [](const HceRecord& r) { return static_cast<double>(r.hce_loc); }},
      {"hce_column", [](const HceRecord& r) { return static_cast<double>(r.hce_column); }},
  };
  return vars;
}

/// Per-variable quartiles overall, per class and per plant.
inline DistributionSummary describe(const Dataset& data) {
  if (data.empty()) throw DataError("cannot describe an empty dataset");
  DistributionSummary out;
  for (const auto& [name, get] : numeric_variables()) {
    std::vector<double> all;
    std::map<int, std::vector<double>> by_class, by_plant;
    all.reserve(data.size());
    for (const auto& r : data.records()) {
      const double v = get(r);
      all.push_back(v);
      by_class[r.broken].push_back(v);
      by_plant[r.plant].push_back(v);
    }
    VariableSummary s;
    s.name = name;
    s.overall = summarize(std::move(all));
    for (auto& [k, v] : by_class) s.by_class[k] = summarize(std::move(v));
    for (auto& [k, v] : by_plant) s.by_plant[k] = summarize(std::move(v));
    out.variables.push_back(std::move(s));
  }
  return out;
}

}  // namespace hce
