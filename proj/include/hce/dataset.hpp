#pragma once

// Absorber-tube (HCE) record schema, validation, CSV ingestion and splitting.

#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hce/common.hpp"

namespace hce {

inline constexpr std::string_view kSchemaVersion = "atset-csv/1";

/// One absorber tube observation. Field ranges follow the published variable table.
struct HceRecord {
  std::size_t id = 0;  // row index at load time; record identity for partition checks
  double t_glass = 0;
  double loss = 0;
  double eff = 0;
  double eff_ref = 0;
  double ph2 = 0;
  int t_glass_inf = 0;
  int t_glass_sup = 0;
  double t_htf = 0;
  int hce_loc = 1;
  char hce_subfield = 'A';
  int hce_column = 1;
  int plant = 0;
  int broken = 0;

  bool operator==(const HceRecord&) const = default;
};

namespace schema {
inline constexpr double kTGlassMin = 13, kTGlassMax = 196;
inline constexpr double kLossMin = 72, kLossMax = 2068;
inline constexpr double kPh2Min = 1e-3, kPh2Max = 1e3;
inline constexpr double kPh2Saturated = 1000;
inline constexpr int kTGlassInfMin = 38, kTGlassInfMax = 102;
inline constexpr int kTGlassSupMin = 58, kTGlassSupMax = 122;
inline constexpr int kGlassLimitOffset = kTGlassSupMin - kTGlassInfMin;  // 20
inline constexpr double kTHtfMin = 269, kTHtfMax = 411;
inline constexpr int kLocMin = 1, kLocMax = 144;
inline constexpr char kSubfieldMin = 'A', kSubfieldMax = 'H';
inline constexpr int kColumnMin = 1, kColumnMax = 94;
inline constexpr int kPlantMin = 0, kPlantMax = 6;
inline constexpr int kMaxPlants = kPlantMax - kPlantMin + 1;
inline constexpr int kStageLength = 36;

inline constexpr std::array<std::string_view, 13> kColumns = {
    "T_glass[C]",        "Loss[W/m]",         "Eff",
    "Eff_ref",           "PH2[mBar]",         "T_glass Inf_Limit",
    "T_glass Sup_Limit", "T_HTF[C]",          "hce_LocInLoop",
    "hce_number",        "hce_column",        "plant_name",
    "broken"};

/// Derived columns that may trail the base columns in an engineered export.
inline constexpr std::array<std::string_view, 4> kEngineeredColumns = {
    "pos_36", "normalized_tglass", "hce_number_code", "structure_in"};
}  // namespace schema

enum class Severity { Error, Warning };

struct Violation {
  std::string field;
  std::string reason;
  Severity severity = Severity::Error;
};

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool has_errors() const {
    return std::any_of(violations.begin(), violations.end(),
                       [](const Violation& v) { return v.severity == Severity::Error; });
  }
  std::string summary() const {
    std::string out;
    for (const auto& v : violations) {
      if (!out.empty()) out += "; ";
      out += v.field + ": " + v.reason;
    }
    return out;
  }
};

namespace detail {
inline std::string format_number(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

template <typename T>
void check_range(ValidationResult& result, std::string_view field, T value, T lo, T hi) {
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) {
      result.violations.push_back({std::string(field), "not a finite number", Severity::Error});
      return;
    }
  }
  if (value < lo || value > hi) {
    std::ostringstream msg;
    msg << "value " << value << " outside [" << lo << ", " << hi << "]";
    result.violations.push_back({std::string(field), msg.str(), Severity::Error});
  }
}
}  // namespace detail

/// Checks ranges and categories. The glass-limit offset is reported as a warning.
inline ValidationResult validate(const HceRecord& r) {
  using namespace schema;
  ValidationResult result;
  detail::check_range(result, "t_glass", r.t_glass, kTGlassMin, kTGlassMax);
  detail::check_range(result, "loss", r.loss, kLossMin, kLossMax);
  detail::check_range(result, "eff", r.eff, 0.0, 1.0);
  detail::check_range(result, "eff_ref", r.eff_ref, 0.0, 1.0);
  detail::check_range(result, "ph2", r.ph2, kPh2Min, kPh2Max);
  detail::check_range(result, "t_glass_inf", r.t_glass_inf, kTGlassInfMin, kTGlassInfMax);
  detail::check_range(result, "t_glass_sup", r.t_glass_sup, kTGlassSupMin, kTGlassSupMax);
  detail::check_range(result, "t_htf", r.t_htf, kTHtfMin, kTHtfMax);
  detail::check_range(result, "hce_loc", r.hce_loc, kLocMin, kLocMax);
  if (r.hce_subfield < kSubfieldMin || r.hce_subfield > kSubfieldMax) {
    result.violations.push_back(
        {"hce_subfield", std::string("category '") + r.hce_subfield + "' not in A-H", Severity::Error});
  }
  detail::check_range(result, "hce_column", r.hce_column, kColumnMin, kColumnMax);
  detail::check_range(result, "plant", r.plant, kPlantMin, kPlantMax);
  if (r.broken != 0 && r.broken != 1) {
    result.violations.push_back(
        {"broken", "target " + std::to_string(r.broken) + " not in {0,1}", Severity::Error});
  }
  if (r.t_glass_sup - r.t_glass_inf != kGlassLimitOffset) {
    result.violations.push_back({"t_glass_sup",
                                 "sup - inf = " + std::to_string(r.t_glass_sup - r.t_glass_inf) +
                                     ", expected " + std::to_string(kGlassLimitOffset),
                                 Severity::Warning});
  }
  return result;
}

/// Immutable ordered collection of records with cached class and plant tallies.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<HceRecord> records, std::string schema_version = std::string(kSchemaVersion))
      : records_(std::move(records)), schema_version_(std::move(schema_version)) {
    for (const auto& r : records_) {
      ++class_counts_[r.broken];
      ++plant_counts_[r.plant];
    }
  }

  const std::vector<HceRecord>& records() const { return records_; }
  const HceRecord& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::string& schema_version() const { return schema_version_; }
  const std::map<int, std::size_t>& class_counts() const { return class_counts_; }
  const std::map<int, std::size_t>& plant_counts() const { return plant_counts_; }

  std::size_t class_count(int cls) const {
    auto it = class_counts_.find(cls);
    return it == class_counts_.end() ? 0 : it->second;
  }
  double broken_fraction() const {
    return empty() ? 0.0 : static_cast<double>(class_count(1)) / static_cast<double>(size());
  }

  /// Records at the given positions, in the given order; ids are preserved.
  Dataset subset(const std::vector<std::size_t>& positions) const {
    std::vector<HceRecord> out;
    out.reserve(positions.size());
    for (auto p : positions) out.push_back(records_.at(p));
    return Dataset(std::move(out), schema_version_);
  }

 private:
  std::vector<HceRecord> records_;
  std::string schema_version_ = std::string(kSchemaVersion);
  std::map<int, std::size_t> class_counts_;
  std::map<int, std::size_t> plant_counts_;
};

// ---------------------------------------------------------------------------
// CSV

struct RejectedRow {
  std::size_t row = 0;  // 1-based data row number (header excluded)
  std::string reason;
};

struct LoadResult {
  Dataset dataset;
  std::vector<RejectedRow> rejects;
  std::vector<RejectedRow> warnings;
};

struct LoadOptions {
  bool write_rejects_report = true;
};

inline std::filesystem::path rejects_path_for(const std::filesystem::path& input) {
  return input.string() + ".rejects.csv";
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
std::optional<T> parse_cell(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

inline std::string quote_csv(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// Parses one data row. Returns the reason on failure.
inline std::variant<HceRecord, std::string> parse_record(const std::vector<std::string>& cells) {
  using detail::parse_cell;
  if (cells.size() < schema::kColumns.size()) {
    return "expected " + std::to_string(schema::kColumns.size()) + " cells, got " +
           std::to_string(cells.size());
  }
  HceRecord r;
  auto bad = [&](std::size_t col) {
    return std::string("unparseable ") + std::string(schema::kColumns[col]) + " '" + cells[col] + "'";
  };
  auto real = [&](std::size_t col, double& out) -> bool {
    auto v = parse_cell<double>(cells[col]);
    if (!v) return false;
    out = *v;
    return true;
  };
  auto integer = [&](std::size_t col, int& out) -> bool {
    auto v = parse_cell<int>(cells[col]);
    if (!v) return false;
    out = *v;
    return true;
  };
  if (!real(0, r.t_glass)) return bad(0);
  if (!real(1, r.loss)) return bad(1);
  if (!real(2, r.eff)) return bad(2);
  if (!real(3, r.eff_ref)) return bad(3);
  if (!real(4, r.ph2)) return bad(4);
  if (!integer(5, r.t_glass_inf)) return bad(5);
  if (!integer(6, r.t_glass_sup)) return bad(6);
  if (!real(7, r.t_htf)) return bad(7);
  if (!integer(8, r.hce_loc)) return bad(8);
  const auto subfield = detail::trim(cells[9]);
  if (subfield.size() != 1) return bad(9);
  r.hce_subfield = subfield.front();
  if (!integer(10, r.hce_column)) return bad(10);
  if (!integer(11, r.plant)) return bad(11);
  if (!integer(12, r.broken)) return bad(12);
  return r;
}

/// Loads an ATSet-shaped CSV. Rows that fail to parse or validate go to
/// `rejects` (and `<input>.rejects.csv`); offset-only warnings are kept.
inline LoadResult load_csv(const std::filesystem::path& path, const LoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty; header row required");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  if (header.size() < schema::kColumns.size()) throw DataError("header mismatch: too few columns");
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = detail::trim(header[c]);
    if (c < schema::kColumns.size()) {
      if (name != schema::kColumns[c]) {
        throw DataError("header mismatch at column " + std::to_string(c + 1) + ": expected '" +
                        std::string(schema::kColumns[c]) + "', got '" + std::string(name) + "'");
      }
    } else if (std::find(schema::kEngineeredColumns.begin(), schema::kEngineeredColumns.end(), name) ==
               schema::kEngineeredColumns.end()) {
      throw DataError("header mismatch: unknown column '" + std::string(name) + "'");
    }
  }

  LoadResult result;
  std::vector<HceRecord> records;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      result.rejects.push_back({row, "expected " + std::to_string(header.size()) + " cells, got " +
                                         std::to_string(cells.size())});
      continue;
    }
    auto parsed = parse_record(cells);
    if (auto* reason = std::get_if<std::string>(&parsed)) {
      result.rejects.push_back({row, *reason});
      continue;
    }
    auto record = std::get<HceRecord>(parsed);
    auto check = validate(record);
    if (check.has_errors()) {
      result.rejects.push_back({row, check.summary()});
      continue;
    }
    if (!check.ok()) result.warnings.push_back({row, check.summary()});
    record.id = row - 1;
    records.push_back(record);
  }
  result.dataset = Dataset(std::move(records));

  if (options.write_rejects_report && !result.rejects.empty()) {
    std::ofstream report(rejects_path_for(path));
    if (!report) throw DataError("cannot write rejects report next to '" + path.string() + "'");
    report << "row,reason\n";
    for (const auto& r : result.rejects) report << r.row << ',' << detail::quote_csv(r.reason) << '\n';
  }
  return result;
}

/// Optional trailing columns appended after the base schema (e.g. engineered features).
struct ExtraColumns {
  std::vector<std::string> names;
  std::function<std::vector<double>(const HceRecord&)> values;
};

/// Writes the dataset with the canonical header. Doubles use shortest round-trip form.
inline void write_csv(std::ostream& out, const Dataset& data, const ExtraColumns& extra = {}) {
  for (std::size_t c = 0; c < schema::kColumns.size(); ++c) {
    if (c) out << ',';
    out << schema::kColumns[c];
  }
  for (const auto& name : extra.names) out << ',' << name;
  out << '\n';
  using detail::format_number;
  for (const auto& r : data.records()) {
    out << format_number(r.t_glass) << ',' << format_number(r.loss) << ',' << format_number(r.eff) << ','
        << format_number(r.eff_ref) << ',' << format_number(r.ph2) << ',' << r.t_glass_inf << ','
        << r.t_glass_sup << ',' << format_number(r.t_htf) << ',' << r.hce_loc << ',' << r.hce_subfield
        << ',' << r.hce_column << ',' << r.plant << ',' << r.broken;
    if (!extra.names.empty()) {
      for (double v : extra.values(r)) out << ',' << format_number(v);
    }
    out << '\n';
  }
}

inline void save_csv(const std::filesystem::path& path, const Dataset& data, const ExtraColumns& extra = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_csv(out, data, extra);
}

// ---------------------------------------------------------------------------
// Splitting

enum class Stratify { None, Broken, Plant };

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  Stratify stratify_on = Stratify::Broken;
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

namespace detail {
inline int stratum_key(const HceRecord& r, Stratify s) {
  switch (s) {
    case Stratify::Broken: return r.broken;
    case Stratify::Plant: return r.plant;
    case Stratify::None: break;
  }
  return 0;
}
}  // namespace detail

/// Disjoint train/test cover. Each stratum is shuffled and cut at
/// round(fraction * size), clamped so both sides get one member.
inline TrainTest split(const Dataset& data, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  if (data.empty()) throw DataError("cannot split an empty dataset");
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < data.size(); ++i) strata[detail::stratum_key(data[i], spec.stratify_on)].push_back(i);
  if (spec.stratify_on != Stratify::None) {
    for (const auto& [key, members] : strata) {
      if (members.size() < 2) {
        throw DataError("stratum " + std::to_string(key) + " has " + std::to_string(members.size()) +
                        " record(s); at least 2 are needed to place one on each side");
      }
    }
  }
  Rng rng(spec.seed);
  std::vector<std::size_t> train_idx, test_idx;
  for (auto& [key, members] : strata) {
    std::shuffle(members.begin(), members.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(members.size())));
    if (members.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {data.subset(train_idx), data.subset(test_idx)};
}

/// k near-equal folds of positions, dealt round-robin per label so that every
/// fold sees each class; fold sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> kfold_indices(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold requires k >= 2");
  if (labels.size() < static_cast<std::size_t>(k)) {
    throw DataError("k-fold: k=" + std::to_string(k) + " exceeds dataset size " + std::to_string(labels.size()));
  }
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t cursor = 0;
  for (auto& [label, members] : by_label) {
    std::shuffle(members.begin(), members.end(), rng);
    for (auto m : members) folds[cursor++ % folds.size()].push_back(m);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

/// Complement of fold `held_out` among all folds, sorted.
inline std::vector<std::size_t> fold_complement(const std::vector<std::vector<std::size_t>>& folds, std::size_t held_out) {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != held_out) out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Fold {
  Dataset train;
  Dataset validation;
};

inline std::vector<Fold> kfold(const Dataset& data, int k, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& r : data.records()) labels.push_back(r.broken);
  const auto folds = kfold_indices(labels, k, seed);
  std::vector<Fold> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    out.push_back({data.subset(fold_complement(folds, f)), data.subset(folds[f])});
  }
  return out;
}

}  // namespace hce
