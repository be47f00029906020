#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "dmoe/types.hpp"

namespace dmoe {

// Gaussian radial kernel exp(-|x-y|^2 / (2 sigma^2)). When no bandwidth is
// given it is the median pairwise distance over a seeded sample of pairs.
struct KernelConfig {
  std::optional<double> bandwidth;
  std::size_t max_bandwidth_pairs = 4096;
  std::uint64_t seed = 0;
};

double gaussian_kernel(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                       double bandwidth);

// Median heuristic. Rows of each class are put in lexicographic order before
// pooling so the result does not depend on the order samples were supplied in.
// Falls back to 1.0 when every sampled distance is zero.
double median_bandwidth(const ClassFeatures& features, const KernelConfig& cfg);

double resolve_bandwidth(const ClassFeatures& features, const KernelConfig& cfg);

// S[a][b] = 1/(R_a R_b) * sum_l sum_m k(x_a^l, x_b^m). Exactly symmetric.
// Throws InvalidDataset when a class has no samples.
Matrix mean_kernel_matrix(const ClassFeatures& features, double bandwidth);

}  // namespace dmoe
