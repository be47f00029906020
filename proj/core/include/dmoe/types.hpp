#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace dmoe {

// Zero-based index of an atomic class in 0..n-1.
using ClassId = int;

using Rng = std::mt19937_64;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Per-class sample matrices: element c holds class c's samples as rows.
using ClassFeatures = std::vector<Matrix>;

// splitmix64 finaliser; derives independent seeds for sub-streams.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace dmoe
