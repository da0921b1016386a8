#pragma once

// Seeded randomness with named sub-streams. Every subsystem (population
// sampling, delays, churn, choking, ...) pulls from its own stream derived
// from the master seed, so toggling one subsystem never shifts the draws of
// another and runs stay reproducible bit-for-bit. Draw transforms are spelled
// out here instead of using <random> distributions to keep the byte stream
// independent of standard library internals.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace helpersim {

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class RngBank {
 public:
  explicit RngBank(std::uint64_t master_seed) : master_(master_seed) {}

  std::mt19937_64& stream(std::string_view name) {
    auto it = streams_.find(std::string(name));
    if (it == streams_.end()) {
      const std::uint64_t s = splitmix64(master_ ^ splitmix64(fnv1a64(name)));
      it = streams_.emplace(std::string(name), std::mt19937_64(s)).first;
    }
    return it->second;
  }

  std::uint64_t master_seed() const { return master_; }

 private:
  std::uint64_t master_;
  std::map<std::string, std::mt19937_64, std::less<>> streams_;
};

/// Uniform draw in [0, 1).
inline double draw_u01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double draw_uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * draw_u01(g);
}

/// Uniform integer in [lo, hi] inclusive.
inline long draw_uniform_int(std::mt19937_64& g, long lo, long hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<long>(g() % span);
}

inline double draw_exponential(std::mt19937_64& g, double mean) {
  return -mean * std::log1p(-draw_u01(g));
}

/// Index draw proportional to non-negative weights (weights need not sum
/// to 1). The last positive weight absorbs rounding slack.
inline std::size_t draw_categorical(std::mt19937_64& g, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = draw_u01(g) * total;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) last_positive = i;
    u -= weights[i];
    if (u < 0.0 && weights[i] > 0.0) return i;
  }
  return last_positive;
}

}  // namespace helpersim
