#pragma once

// Imbalance handling: random under-sampling, the partitioned over-sampling
// plan behind the voting forest, majority voting, and the per-plant,
// per-position subsampler used by the balance test.

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hce/common.hpp"
#include "hce/dataset.hpp"
#include "hce/features.hpp"

namespace hce {

namespace detail {
inline void split_by_class(std::span<const int> labels, std::vector<std::size_t>& minority,
                           std::vector<std::size_t>& majority, int& minority_label) {
  std::array<std::size_t, 2> counts{0, 0};
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("binary labels required");
    ++counts[static_cast<std::size_t>(y)];
  }
  minority_label = counts[1] <= counts[0] ? 1 : 0;
  minority.clear();
  majority.clear();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] == minority_label ? minority : majority).push_back(i);
  }
}
}  // namespace detail

/// Random under-sampling: every minority index plus an equal-size draw
/// (without replacement) of majority indices. Result is sorted.
inline std::vector<std::size_t> rus_indices(std::span<const int> labels, std::uint64_t seed) {
  std::vector<std::size_t> minority, majority;
  int minority_label = 1;
  detail::split_by_class(labels, minority, majority, minority_label);
  if (minority.empty()) throw DataError("random under-sampling needs both classes present");
  Rng rng(seed);
  std::vector<std::size_t> out = minority;
  std::sample(majority.begin(), majority.end(), std::back_inserter(out), minority.size(), rng);
  std::sort(out.begin(), out.end());
  return out;
}

inline Dataset rus(const Dataset& train, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(train.size());
  for (const auto& r : train.records()) labels.push_back(r.broken);
  return train.subset(rus_indices(labels, seed));
}

// ---------------------------------------------------------------------------
// Partitioned over-sampling

/// t subsets that each hold every minority index plus one block of a random
/// partition of the majority indices.
struct PartitionPlan {
  int t = 0;
  std::vector<std::size_t> minority;
  std::vector<std::vector<std::size_t>> majority_parts;
  std::vector<std::vector<std::size_t>> subsets;

  nlohmann::json to_json() const {
    return {{"t", t}, {"minority", minority}, {"majority_parts", majority_parts}};
  }
  static PartitionPlan from_json(const nlohmann::json& j);
};

namespace detail {
inline void assemble_subsets(PartitionPlan& plan) {
  plan.subsets.clear();
  for (const auto& part : plan.majority_parts) {
    std::vector<std::size_t> s = plan.minority;
    s.insert(s.end(), part.begin(), part.end());
    std::sort(s.begin(), s.end());
    plan.subsets.push_back(std::move(s));
  }
}
}  // namespace detail

inline PartitionPlan PartitionPlan::from_json(const nlohmann::json& j) {
  PartitionPlan p;
  p.t = j.at("t").get<int>();
  p.minority = j.at("minority").get<std::vector<std::size_t>>();
  p.majority_parts = j.at("majority_parts").get<std::vector<std::vector<std::size_t>>>();
  detail::assemble_subsets(p);
  return p;
}

inline PartitionPlan partition_oversample(std::span<const int> labels, int t, std::uint64_t seed) {
  if (t < 2) throw ConfigError("partitioned over-sampling needs t >= 2");
  PartitionPlan plan;
  plan.t = t;
  std::vector<std::size_t> majority;
  int minority_label = 1;
  detail::split_by_class(labels, plan.minority, majority, minority_label);
  if (majority.size() < static_cast<std::size_t>(t)) {
    throw DataError("t=" + std::to_string(t) + " exceeds the majority count " + std::to_string(majority.size()));
  }
  Rng rng(seed);
  std::shuffle(majority.begin(), majority.end(), rng);
  plan.majority_parts.resize(static_cast<std::size_t>(t));
  for (std::size_t i = 0; i < majority.size(); ++i) plan.majority_parts[i % plan.majority_parts.size()].push_back(majority[i]);
  for (auto& part : plan.majority_parts) std::sort(part.begin(), part.end());
  detail::assemble_subsets(plan);
  return plan;
}

/// Minority share of each subset: B / (B + M/t).
inline double partition_minority_fraction(std::size_t minority, std::size_t majority, int t) {
  const double b = static_cast<double>(minority);
  return b / (b + static_cast<double>(majority) / static_cast<double>(t));
}

// ---------------------------------------------------------------------------
// Voting

/// Modal class; when several classes share the top count, tie_class wins if it
/// is among them, otherwise the smallest tied class.
inline int vote(std::span<const int> votes, int tie_class = 0) {
  if (votes.empty()) throw ConfigError("vote needs at least one model");
  std::map<int, std::size_t> tally;
  for (int v : votes) ++tally[v];
  std::size_t top = 0;
  for (const auto& [cls, n] : tally) top = std::max(top, n);
  std::vector<int> leaders;
  for (const auto& [cls, n] : tally) {
    if (n == top) leaders.push_back(cls);
  }
  if (leaders.size() == 1) return leaders.front();
  if (std::find(leaders.begin(), leaders.end(), tie_class) != leaders.end()) return tie_class;
  return leaders.front();
}

/// Majority-vote ensemble over any model exposing predict(X) -> vector<int>.
template <typename Model>
class VotingEnsemble {
 public:
  VotingEnsemble() = default;
  explicit VotingEnsemble(std::vector<Model> members, int tie_class = 0)
      : members_(std::move(members)), tie_class_(tie_class) {}

  std::vector<int> predict(const Eigen::MatrixXd& X) const {
    if (members_.empty()) throw ConfigError("voting ensemble is empty");
    std::vector<std::vector<int>> member_votes;
    member_votes.reserve(members_.size());
    for (const auto& m : members_) member_votes.push_back(m.predict(X));
    std::vector<int> out(static_cast<std::size_t>(X.rows()));
    std::vector<int> column(members_.size());
    for (std::size_t r = 0; r < out.size(); ++r) {
      for (std::size_t m = 0; m < members_.size(); ++m) column[m] = member_votes[m][r];
      out[r] = vote(column, tie_class_);
    }
    return out;
  }

  const std::vector<Model>& members() const { return members_; }
  int tie_class() const { return tie_class_; }

 private:
  std::vector<Model> members_;
  int tie_class_ = 0;
};

// ---------------------------------------------------------------------------
// Balance-test subsampler

struct BalanceSpec {
  int p = 50;  // target broken percentage
  std::uint64_t seed = 0;
  double train_fraction = 0.8;  // share of the reduced set used for training

  void check() const {
    if (p < 2 || p > 50) throw ConfigError("balance p must be an integer in [2, 50]");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("balance train_fraction must lie in (0, 1)");
  }
};

/// Intact tubes drawn per stage position for b broken tubes at target p:
/// floor(b (1 - p') / (36 p')), p' = p / 100.
inline std::size_t per_position_quota(std::size_t b, int p) {
  const double pp = p / 100.0;
  return static_cast<std::size_t>(std::floor(static_cast<double>(b) * (1.0 - pp) / (schema::kStageLength * pp)));
}

struct Shortfall {
  int plant = 0;
  int position = 0;
  std::size_t requested = 0;
  std::size_t available = 0;
};

struct BalanceResult {
  Dataset reduced_train;
  Dataset reduced_test;
  std::map<int, std::size_t> per_position_quota;  // by plant
  std::vector<Shortfall> shortfalls;
};

/// Per plant: keeps all b broken tubes and draws intact tubes per stage
/// position. The floored per-position quota is topped up by one at randomly
/// chosen positions until the plant total reaches round(b (1 - p') / p'), so
/// the achieved fraction tracks p to within one record per plant. The reduced
/// set is then split per (plant, class) into train and test.
inline BalanceResult balance_subsample(const Dataset& train, const BalanceSpec& spec) {
  spec.check();
  const double pp = spec.p / 100.0;
  struct PlantPool {
    std::vector<std::size_t> broken;
    std::array<std::vector<std::size_t>, schema::kStageLength> intact_by_position;
  };
  std::map<int, PlantPool> pools;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& r = train[i];
    auto& pool = pools[r.plant];
    if (r.broken) {
      pool.broken.push_back(i);
    } else {
      pool.intact_by_position[static_cast<std::size_t>(pos36(r.hce_loc) - 1)].push_back(i);
    }
  }

  BalanceResult result;
  Rng rng(spec.seed);
  std::vector<std::size_t> train_idx, test_idx;
  auto deal = [&](std::vector<std::size_t> members) {
    std::shuffle(members.begin(), members.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(members.size())));
    if (members.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  };

  for (auto& [plant, pool] : pools) {
    const std::size_t b = pool.broken.size();
    if (b == 0) throw DataError("plant " + std::to_string(plant) + " has no broken samples");
    const std::size_t quota = per_position_quota(b, spec.p);
    result.per_position_quota[plant] = quota;
    const auto target_total =
        static_cast<std::size_t>(std::llround(static_cast<double>(b) * (1.0 - pp) / pp));
    std::array<std::size_t, schema::kStageLength> requested;
    requested.fill(quota);
    std::size_t extra = target_total > quota * schema::kStageLength ? target_total - quota * schema::kStageLength : 0;
    std::array<std::size_t, schema::kStageLength> positions;
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::shuffle(positions.begin(), positions.end(), rng);
    for (std::size_t k = 0; k < extra && k < positions.size(); ++k) ++requested[positions[k]];

    std::vector<std::size_t> intact;
    for (std::size_t pos = 0; pos < schema::kStageLength; ++pos) {
      const auto& available = pool.intact_by_position[pos];
      if (available.size() < requested[pos]) {
        result.shortfalls.push_back({plant, static_cast<int>(pos + 1), requested[pos], available.size()});
        intact.insert(intact.end(), available.begin(), available.end());
      } else {
        std::sample(available.begin(), available.end(), std::back_inserter(intact), requested[pos], rng);
      }
    }
    deal(pool.broken);
    deal(std::move(intact));
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  result.reduced_train = train.subset(train_idx);
  result.reduced_test = train.subset(test_idx);
  return result;
}

}  // namespace hce
