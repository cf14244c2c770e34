#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "fedga/types.hpp"

namespace fedga {

/// SplitMix64 finalizer. Used to derive independent substream seeds from a
/// master seed and a path of integer tags, e.g. (seed, replication, client).
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(base);
  for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream tags keep data noise, multipliers and Gaussian chains disjoint.
namespace stream {
inline constexpr std::uint64_t kClient = 0x636c69656e74ULL;
inline constexpr std::uint64_t kMultiplier = 0x6d756c7469ULL;
inline constexpr std::uint64_t kGaussian = 0x6761757373ULL;
inline constexpr std::uint64_t kPopulation = 0x706f70ULL;
inline constexpr std::uint64_t kReplication = 0x726570ULL;
}  // namespace stream

/// One independent pseudo-random stream. Not thread-safe; each Monte-Carlo
/// chain owns its own instance.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next_u64() { return engine_(); }

  /// Index uniform on [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  void fill_normal(Eigen::Ref<Vector> out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal();
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace fedga
