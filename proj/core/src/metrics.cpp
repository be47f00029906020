#include "dmoe/metrics.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "dmoe/error.hpp"

namespace dmoe {

namespace {

void check_sizes(const std::vector<Ranking>& rankings, const std::vector<ClassId>& labels) {
  if (rankings.size() != labels.size()) throw InvalidArgument("rankings and labels differ in length");
}

}  // namespace

double topk_accuracy(const std::vector<Ranking>& rankings, const std::vector<ClassId>& labels, int k) {
  check_sizes(rankings, labels);
  if (k < 1) throw InvalidArgument("k must be at least 1");
  if (rankings.empty()) throw InvalidArgument("no samples to score");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& r = rankings[i];
    if (static_cast<int>(r.size()) < k) {
      throw InvalidArgument("k = " + std::to_string(k) + " exceeds ranking length " + std::to_string(r.size()));
    }
    if (std::find(r.begin(), r.begin() + k, labels[i]) != r.begin() + k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

PerClassAccuracy per_class_accuracy(const std::vector<Ranking>& rankings, const std::vector<ClassId>& labels,
                                    int num_classes) {
  check_sizes(rankings, labels);
  std::vector<int> total(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> correct(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const ClassId y = labels[i];
    if (y < 0 || y >= num_classes) throw InvalidLabel("label " + std::to_string(y) + " out of range");
    if (rankings[i].empty()) throw InvalidArgument("empty ranking");
    ++total[static_cast<std::size_t>(y)];
    if (rankings[i].front() == y) ++correct[static_cast<std::size_t>(y)];
  }
  PerClassAccuracy out;
  out.accuracy.resize(static_cast<std::size_t>(num_classes));
  for (std::size_t c = 0; c < total.size(); ++c) {
    if (total[c] == 0) throw InvalidDataset("class " + std::to_string(c) + " has no evaluation samples");
    out.accuracy[c] = static_cast<double>(correct[c]) / total[c];
  }
  out.sorted_curve = out.accuracy;
  std::sort(out.sorted_curve.begin(), out.sorted_curve.end(), std::greater<>());
  return out;
}

std::vector<Ranking> rank_columns(const Matrix& scores) {
  std::vector<Ranking> out(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    Ranking& r = out[static_cast<std::size_t>(c)];
    r.resize(static_cast<std::size_t>(scores.rows()));
    std::iota(r.begin(), r.end(), ClassId{0});
    std::stable_sort(r.begin(), r.end(), [&](ClassId a, ClassId b) { return scores(a, c) > scores(b, c); });
  }
  return out;
}

}  // namespace dmoe
