#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace hce {

/// Bad configuration or contract violation on caller-supplied parameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, missing, or schema-incompatible data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// splitmix64 finalizer; maps (seed, stream) to a decorrelated child seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stable 64-bit FNV-1a, used for data and model fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view text) { update(text.data(), text.size()); }
  template <typename T>
  void update_value(const T& value) { update(&value, sizeof(T)); }

  std::uint64_t digest() const { return hash_; }
  std::string hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t h = hash_;
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kDigits[h & 0xf];
    return out;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

/// Worker count: hardware concurrency capped by HCE_MAX_THREADS when set.
inline unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("HCE_MAX_THREADS")) {
    const long value = std::strtol(cap, nullptr, 10);
    if (value >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(value));
  }
  return n;
}

/// Runs fn(i) for i in [0, count). Results must be written to per-index slots;
/// scheduling order is unspecified. The first exception thrown is rethrown.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex mutex;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto body = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mutex);
        if (next >= count || failure) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Design matrix with named columns and per-row labels.
/// X is samples x features; `broken` is the glass target, `plant` the auxiliary one.
struct FeatureTable {
  std::vector<std::string> names;
  Eigen::MatrixXd X;
  std::vector<int> broken;
  std::vector<int> plant;
  std::vector<std::size_t> ids;

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(X.cols()); }

  FeatureTable select_rows(const std::vector<std::size_t>& positions) const {
    FeatureTable out;
    out.names = names;
    out.X.resize(static_cast<Eigen::Index>(positions.size()), X.cols());
    out.broken.reserve(positions.size());
    out.plant.reserve(positions.size());
    out.ids.reserve(positions.size());
    for (std::size_t r = 0; r < positions.size(); ++r) {
      const auto p = positions[r];
      out.X.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(p));
      out.broken.push_back(broken[p]);
      out.plant.push_back(plant[p]);
      out.ids.push_back(ids[p]);
    }
    return out;
  }
};

}  // namespace hce
