#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace xdiff {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named sub-stream of a root seed ("data", "init", "train", "eval", "mptd").
inline std::uint64_t stream_seed(std::uint64_t root, std::string_view name) {
  return mix_seed(root, fnv1a64(name));
}

template <typename Derived>
void fill_standard_normal(Rng& rng, Eigen::DenseBase<Derived>& out) {
  std::normal_distribution<typename Derived::Scalar> normal(0, 1);
  // Row-major traversal keeps draws independent of the storage order.
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = normal(rng);
}

}  // namespace xdiff
