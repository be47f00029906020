#pragma once

#include <vector>

#include "dmoe/types.hpp"

namespace dmoe {

// One ranked class list per sample, best first.
using Ranking = std::vector<ClassId>;

// Fraction of samples whose label is among the first k entries of its
// ranking. Throws InvalidArgument when k < 1 or a ranking is shorter than k.
double topk_accuracy(const std::vector<Ranking>& rankings, const std::vector<ClassId>& labels, int k);

struct PerClassAccuracy {
  std::vector<double> accuracy;      // indexed by class id
  std::vector<double> sorted_curve;  // same values, descending
};

// Top-1 accuracy per class. Throws InvalidDataset when some class in
// 0..num_classes-1 has no samples.
PerClassAccuracy per_class_accuracy(const std::vector<Ranking>& rankings, const std::vector<ClassId>& labels,
                                    int num_classes);

// Full descending ranking of every column of a probability matrix.
std::vector<Ranking> rank_columns(const Matrix& scores);

}  // namespace dmoe
