#include "dmoe/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dmoe/error.hpp"

namespace dmoe {

namespace {

void require_nonempty(const ClassFeatures& features) {
  for (std::size_t c = 0; c < features.size(); ++c) {
    if (features[c].rows() == 0) {
      throw InvalidDataset("class " + std::to_string(c) + " has no samples");
    }
  }
}

std::vector<Vector> canonical_pool(const ClassFeatures& features) {
  std::vector<Vector> pool;
  for (const Matrix& m : features) {
    std::vector<Vector> rows;
    rows.reserve(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.emplace_back(m.row(r).transpose());
    std::sort(rows.begin(), rows.end(), [](const Vector& a, const Vector& b) {
      return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    });
    for (auto& r : rows) pool.push_back(std::move(r));
  }
  return pool;
}

}  // namespace

double gaussian_kernel(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                       double bandwidth) {
  return std::exp(-(x - y).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

double median_bandwidth(const ClassFeatures& features, const KernelConfig& cfg) {
  require_nonempty(features);
  const std::vector<Vector> pool = canonical_pool(features);
  const std::size_t n = pool.size();
  if (n < 2) return 1.0;

  std::vector<double> dists;
  const std::size_t all_pairs = n * (n - 1) / 2;
  if (all_pairs <= cfg.max_bandwidth_pairs) {
    dists.reserve(all_pairs);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) dists.push_back((pool[i] - pool[j]).norm());
  } else {
    Rng rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    dists.reserve(cfg.max_bandwidth_pairs);
    while (dists.size() < cfg.max_bandwidth_pairs) {
      const std::size_t i = pick(rng);
      const std::size_t j = pick(rng);
      if (i == j) continue;
      dists.push_back((pool[i] - pool[j]).norm());
    }
  }

  std::sort(dists.begin(), dists.end());
  const std::size_t mid = dists.size() / 2;
  const double median =
      dists.size() % 2 == 1 ? dists[mid] : 0.5 * (dists[mid - 1] + dists[mid]);
  return median > 0.0 ? median : 1.0;
}

double resolve_bandwidth(const ClassFeatures& features, const KernelConfig& cfg) {
  if (cfg.bandwidth) {
    if (!(*cfg.bandwidth > 0.0) || !std::isfinite(*cfg.bandwidth)) {
      throw InvalidArgument("kernel bandwidth must be positive and finite");
    }
    return *cfg.bandwidth;
  }
  return median_bandwidth(features, cfg);
}

Matrix mean_kernel_matrix(const ClassFeatures& features, double bandwidth) {
  require_nonempty(features);
  const auto n = static_cast<Eigen::Index>(features.size());
  // Samples as contiguous columns.
  std::vector<Matrix> cols;
  cols.reserve(features.size());
  for (const Matrix& m : features) cols.emplace_back(m.transpose());

  const double inv_two_sigma2 = 1.0 / (2.0 * bandwidth * bandwidth);
  Matrix s(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const Matrix& xa = cols[static_cast<std::size_t>(a)];
    for (Eigen::Index b = a; b < n; ++b) {
      const Matrix& xb = cols[static_cast<std::size_t>(b)];
      double sum = 0.0;
      for (Eigen::Index l = 0; l < xa.cols(); ++l)
        for (Eigen::Index m = 0; m < xb.cols(); ++m)
          sum += std::exp(-(xa.col(l) - xb.col(m)).squaredNorm() * inv_two_sigma2);
      const double v = sum / (static_cast<double>(xa.cols()) * static_cast<double>(xb.cols()));
      s(a, b) = v;
      s(b, a) = v;
    }
  }
  return s;
}

}  // namespace dmoe
