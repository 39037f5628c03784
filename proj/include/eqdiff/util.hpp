#pragma once

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

namespace eqdiff {

// 64-bit FNV-1a; fixed across platforms so hashed embeddings and seeds
// are reproducible everywhere.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic Gaussian stream (xoshiro-free: splitmix64 + Box-Muller).
// std::normal_distribution is implementation-defined, which would break
// bit-identical reproducibility claims across toolchains.
class GaussianRng {
 public:
  explicit GaussianRng(std::uint64_t seed) : state_(seed) {}

  double uniform() {  // in (0,1)
    std::uint64_t r = splitmix64(state_);
    return (static_cast<double>(r >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double m = std::sqrt(-2.0 * std::log(u1));
    spare_ = m * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return m * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Seed for a named parameter slot: stable under insertion-order changes.
inline std::uint64_t named_seed(std::uint64_t base, std::string_view name) {
  std::uint64_t s = base ^ (0x517cc1b727220a95ull + fnv1a64(name));
  return splitmix64(s);
}

}  // namespace eqdiff
